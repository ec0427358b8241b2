"""Graph-attention scheduling policy evaluated forward-only.

Pipeline for one decision:

1. two GAT layers over the ready task's workflow DAG give the ready-task
   embedding and the mean-pooled embedding of all tasks;
2. two GAT layers over the ready-task/VM star give a second ready-task
   embedding and one embedding per VM;
3. a small transformer encoder refines the raw VM features jointly;
4. each VM's refined features, the state embedding and an embedding of the
   workflow features are scored by an MLP; a softmax over the scores gives
   the action distribution.

All weights live in one flat float64 vector described by a layout map so the
evolution strategy can perturb them directly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import CheckpointMismatch, DimensionMismatch
from .features import Dhg, build_dhg
from .tensor import as_matrix, concat_cols, layer_norm, linear, matmul, mean_rows, relu, softmax_rows


@dataclass(frozen=True)
class PolicyArch:
    task_in: int = 6
    star_in: int = 7  # 3 workflow columns + 4 VM columns, disjoint blocks
    vm_in: int = 4
    wf_in: int = 3
    hidden: int = 16
    gat_heads: tuple = (2, 1)
    encoder_layers: int = 2
    encoder_heads: int = 2
    ff_dim: int = 128
    mlp_hidden: int = 128
    mlp_layers: int = 4
    workflow_mlp: bool = True
    leaky_slope: float = 0.2
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "gat_heads", tuple(self.gat_heads))
        for h in self.gat_heads:
            if self.hidden % h:
                raise ValueError(f"hidden size {self.hidden} not divisible by {h} heads")
        if self.hidden % self.encoder_heads:
            raise ValueError("hidden size must be divisible by the encoder head count")

    @property
    def score_in(self) -> int:
        return self.hidden * (5 + (1 if self.workflow_mlp else 0))

    def layout(self) -> list:
        """Ordered ``(name, offset, shape, fan_in)`` entries covering every weight."""
        H = self.hidden
        specs = []

        def add(name, shape, fan_in):
            specs.append((name, tuple(shape), fan_in))

        for stage, d_in in (("task_gat", self.task_in), ("star_gat", self.star_in)):
            for layer, heads in enumerate(self.gat_heads):
                d = d_in if layer == 0 else H
                hd = H // heads
                add(f"{stage}.{layer}.W", (d, H), d)
                add(f"{stage}.{layer}.a", (heads, 2 * hd), 2 * hd)
        add("encoder.in.W", (self.vm_in, H), self.vm_in)
        add("encoder.in.b", (H,), self.vm_in)
        for layer in range(self.encoder_layers):
            p = f"encoder.{layer}"
            for proj in ("q", "k", "v", "o"):
                add(f"{p}.W{proj}", (H, H), H)
                add(f"{p}.b{proj}", (H,), H)
            add(f"{p}.ln1.gain", (H,), 0)
            add(f"{p}.ln1.bias", (H,), 0)
            add(f"{p}.ff1.W", (H, self.ff_dim), H)
            add(f"{p}.ff1.b", (self.ff_dim,), H)
            add(f"{p}.ff2.W", (self.ff_dim, H), self.ff_dim)
            add(f"{p}.ff2.b", (H,), self.ff_dim)
            add(f"{p}.ln2.gain", (H,), 0)
            add(f"{p}.ln2.bias", (H,), 0)
        if self.workflow_mlp:
            add("wf_mlp.0.W", (self.wf_in, H), self.wf_in)
            add("wf_mlp.0.b", (H,), self.wf_in)
            add("wf_mlp.1.W", (H, H), H)
            add("wf_mlp.1.b", (H,), H)
        dims = [self.score_in] + [self.mlp_hidden] * (self.mlp_layers - 1) + [1]
        for i in range(self.mlp_layers):
            add(f"score.{i}.W", (dims[i], dims[i + 1]), dims[i])
            add(f"score.{i}.b", (dims[i + 1],), dims[i])

        out, offset = [], 0
        for name, shape, fan_in in specs:
            out.append((name, offset, shape, fan_in))
            offset += math.prod(shape)
        return out

    @property
    def n_params(self) -> int:
        name, offset, shape, _ = self.layout()[-1]
        return offset + math.prod(shape)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gat_heads"] = list(self.gat_heads)
        return d

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def layout_hash(self) -> str:
        rows = [[n, o, list(s)] for n, o, s, _ in self.layout()]
        return hashlib.sha256(json.dumps(rows).encode()).hexdigest()


class PolicyParams:
    """Flat parameter vector plus named views into it."""

    def __init__(self, arch: PolicyArch, vector):
        vector = np.ascontiguousarray(vector, dtype=np.float64)
        if vector.shape != (arch.n_params,):
            raise DimensionMismatch(f"expected {arch.n_params} parameters, got {vector.shape}")
        self.arch = arch
        self.vector = vector
        self._views = None

    def unflatten(self) -> dict:
        if self._views is None:
            views = {}
            for name, offset, shape, _ in self.arch.layout():
                v = self.vector[offset : offset + math.prod(shape)].reshape(shape)
                v.flags.writeable = False
                views[name] = v
            self._views = views
        return self._views

    def __getitem__(self, name):
        return self.unflatten()[name]

    def __len__(self):
        return self.vector.shape[0]


def flatten(arch: PolicyArch, named: dict) -> np.ndarray:
    out = np.empty(arch.n_params)
    for name, offset, shape, _ in arch.layout():
        arr = np.asarray(named[name], dtype=np.float64)
        if arr.shape != shape:
            raise DimensionMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
        out[offset : offset + arr.size] = arr.ravel()
    return out


def unflatten(arch: PolicyArch, vector) -> dict:
    return PolicyParams(arch, vector).unflatten()


def init_params(arch: PolicyArch = PolicyArch(), seed: int = 0) -> PolicyParams:
    """Uniform in +-sqrt(1/fan_in) per tensor; layer-norm gains 1 and biases 0."""
    rng = np.random.default_rng(seed)
    vec = np.empty(arch.n_params)
    for name, offset, shape, fan_in in arch.layout():
        size = math.prod(shape)
        if name.endswith(".gain"):
            vec[offset : offset + size] = 1.0
        elif name.endswith(".bias") and ".ln" in name:
            vec[offset : offset + size] = 0.0
        else:
            bound = math.sqrt(1.0 / fan_in)
            vec[offset : offset + size] = rng.uniform(-bound, bound, size)
    return PolicyParams(arch, vec)


# ---------------------------------------------------------------------------
# Forward pass


def gat_layer(x, csr, W, a, slope=0.2, return_attention=False):
    """Multi-head GAT layer with ReLU; heads are concatenated.

    ``csr = (indptr, nbr)`` lists the in-neighbours of every node. ``W`` is
    ``d_in x (heads * head_dim)`` with head ``h`` owning column block ``h``;
    row ``h`` of ``a`` is that head's attention vector (target half first).
    """
    x = as_matrix(x)
    W, a = as_matrix(W), as_matrix(a)
    if x.shape[1] != W.shape[0]:
        raise DimensionMismatch(f"features have {x.shape[1]} columns, weights expect {W.shape[0]}")
    heads, two_hd = a.shape
    hd = two_hd // 2
    if hd * heads != W.shape[1]:
        raise DimensionMismatch("attention vectors do not match the weight layout")
    indptr, nbr = csr
    if indptr.shape[0] != x.shape[0] + 1:
        raise DimensionMismatch("adjacency does not match the node count")
    wh_all = matmul(x, W)
    outs, alphas = [], []
    for h in range(heads):
        wh = np.ascontiguousarray(wh_all[:, h * hd : (h + 1) * hd])
        s_dst = matmul(wh, a[h, :hd].reshape(-1, 1)).ravel()
        s_src = matmul(wh, a[h, hd:].reshape(-1, 1)).ravel()
        agg, alpha = kernels.gat_aggregate(wh, s_dst, s_src, indptr, nbr, float(slope))
        outs.append(relu(agg))
        alphas.append(alpha)
    out = outs[0] if heads == 1 else concat_cols(outs)
    return (out, alphas) if return_attention else out


def _gat_stack(x, csr, P, stage, arch, trace):
    for layer in range(len(arch.gat_heads)):
        x, alphas = gat_layer(x, csr, P[f"{stage}.{layer}.W"], P[f"{stage}.{layer}.a"], arch.leaky_slope, True)
        if trace is not None:
            trace.setdefault("attention", []).append((stage, layer, csr, alphas))
    return x


def hgat_forward(dhg: Dhg, params: PolicyParams, normalized=None, trace=None) -> np.ndarray:
    """State embedding, one row per VM candidate: ``n x 4H``."""
    arch, P = params.arch, params.unflatten()
    task_x, star_x, _ = normalized if normalized is not None else dhg.normalized()
    h_tasks = _gat_stack(task_x, dhg.task_csr, P, "task_gat", arch, trace)
    ready1 = h_tasks[dhg.ready_index : dhg.ready_index + 1]
    pooled = mean_rows(h_tasks)
    h_star = _gat_stack(star_x, dhg.star_csr, P, "star_gat", arch, trace)
    ready2 = h_star[0:1]
    vms = h_star[1:]
    n = vms.shape[0]
    head = np.repeat(concat_cols([ready1, pooled, ready2]), n, axis=0)
    if trace is not None:
        trace.update(ready1=ready1, pooled=pooled, ready2=ready2, vm_embed=vms, task_embed=h_tasks)
    return concat_cols([head, vms])


def mhsa_forward(vm_x, params: PolicyParams) -> np.ndarray:
    """Input projection then post-norm transformer encoder layers; ``n x H``."""
    arch, P = params.arch, params.unflatten()
    x = as_matrix(vm_x)
    if x.shape[1] != arch.vm_in:
        raise DimensionMismatch(f"VM features have {x.shape[1]} columns, expected {arch.vm_in}")
    x = linear(x, P["encoder.in.W"], P["encoder.in.b"])
    H, heads = arch.hidden, arch.encoder_heads
    hd = H // heads
    scale = 1.0 / math.sqrt(hd)
    for layer in range(arch.encoder_layers):
        p = f"encoder.{layer}"
        q = linear(x, P[f"{p}.Wq"], P[f"{p}.bq"])
        k = linear(x, P[f"{p}.Wk"], P[f"{p}.bk"])
        v = linear(x, P[f"{p}.Wv"], P[f"{p}.bv"])
        parts = []
        for h in range(heads):
            sl = slice(h * hd, (h + 1) * hd)
            qh, kh, vh = (np.ascontiguousarray(m[:, sl]) for m in (q, k, v))
            att = softmax_rows(matmul(qh, np.ascontiguousarray(kh.T)) * scale)
            parts.append(matmul(att, vh))
        attn = linear(concat_cols(parts), P[f"{p}.Wo"], P[f"{p}.bo"])
        x = layer_norm(x + attn, P[f"{p}.ln1.gain"], P[f"{p}.ln1.bias"], arch.ln_eps)
        ff = linear(relu(linear(x, P[f"{p}.ff1.W"], P[f"{p}.ff1.b"])), P[f"{p}.ff2.W"], P[f"{p}.ff2.b"])
        x = layer_norm(x + ff, P[f"{p}.ln2.gain"], P[f"{p}.ln2.bias"], arch.ln_eps)
    return x


def action_scores(dhg: Dhg, params: PolicyParams, trace=None) -> np.ndarray:
    arch, P = params.arch, params.unflatten()
    normalized = dhg.normalized()
    _, _, vm_x = normalized
    state = hgat_forward(dhg, params, normalized, trace)
    refined = mhsa_forward(vm_x, params)
    parts = [refined, state]
    if arch.workflow_mlp:
        wf = normalized[1][0:1, : arch.wf_in]
        h = relu(linear(wf, P["wf_mlp.0.W"], P["wf_mlp.0.b"]))
        h = linear(h, P["wf_mlp.1.W"], P["wf_mlp.1.b"])
        parts.append(np.repeat(h, dhg.n_vms, axis=0))
    x = concat_cols(parts)
    for i in range(arch.mlp_layers):
        x = linear(x, P[f"score.{i}.W"], P[f"score.{i}.b"])
        if i < arch.mlp_layers - 1:
            x = relu(x)
    if trace is not None:
        trace["refined"] = refined
        trace["state"] = state
    return x.ravel()


def decision_forward(dhg: Dhg, params: PolicyParams, trace=None) -> np.ndarray:
    """Action probabilities over the VM candidates of ``dhg``."""
    scores = action_scores(dhg, params, trace)
    if trace is not None:
        trace["scores"] = scores
    return softmax_rows(scores.reshape(1, -1)).ravel()


def select_action(p, mode="greedy", rng=None) -> int:
    p = np.asarray(p, dtype=np.float64)
    if mode == "greedy":
        return int(np.argmax(p))  # first maximum wins ties
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling needs an rng")
        u = rng.random()
        c = np.cumsum(p)
        return int(min(np.searchsorted(c, u, side="right"), len(p) - 1))
    raise ValueError(f"unknown selection mode {mode!r}")


class GraphPolicy:
    """Scheduling callback ``(state, candidates) -> index`` backed by the network."""

    def __init__(self, params: PolicyParams, mode="greedy", rng=None):
        self.params = params
        self.mode = mode
        self.rng = rng

    def __call__(self, state, candidates) -> int:
        dhg = build_dhg(state, state.ready, candidates)
        p = decision_forward(dhg, self.params)
        rng = self.rng if self.rng is not None else state.rng
        return select_action(p, self.mode, rng)


# ---------------------------------------------------------------------------
# Checkpoints: one magic line, one JSON header line, then raw little-endian float64.

_MAGIC = b"CADWS-PARAMS 1\n"


def save_checkpoint(path, params: PolicyParams, extra=None) -> None:
    arch = params.arch
    header = {
        "arch_fingerprint": arch.fingerprint(),
        "layout_hash": arch.layout_hash(),
        "n_params": arch.n_params,
        "arch": arch.to_dict(),
    }
    if extra:
        header["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(params.vector.astype("<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path, arch: PolicyArch = None) -> PolicyParams:
    """Read a checkpoint; refuse it if it does not match ``arch``."""
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise CheckpointMismatch(f"{path}: not a parameter checkpoint")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise CheckpointMismatch(f"{path}: corrupt header") from exc
        raw = fh.read()
    stored = PolicyArch(**header["arch"])
    arch = stored if arch is None else arch
    if header["arch_fingerprint"] != arch.fingerprint() or header["layout_hash"] != arch.layout_hash():
        raise CheckpointMismatch(f"{path}: architecture fingerprint does not match")
    if header["n_params"] != arch.n_params or len(raw) != 8 * arch.n_params:
        raise CheckpointMismatch(f"{path}: parameter count mismatch")
    return PolicyParams(arch, np.frombuffer(raw, dtype="<f8").astype(np.float64))
