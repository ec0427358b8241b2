"""Workflow DAGs, synthetic topology generators, arrivals and deadlines."""

from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import CycleDetected, DanglingEdge, InfeasibleSpan, ParseError, UnsupportedCount

DEFAULT_WORKLOAD_RANGE = (10.0, 1000.0)


class Pattern(str, enum.Enum):
    CYBERSHAKE = "CyberShake"
    MONTAGE = "Montage"
    INSPIRAL = "Inspiral"
    SIPHT = "SIPHT"
    CUSTOM = "Custom"


class Scale(str, enum.Enum):
    SMALL = "Small"
    MEDIUM = "Medium"
    LARGE = "Large"

    @classmethod
    def parse(cls, value) -> "Scale":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == key or member.value[0].lower() == key:
                return member
        raise ValueError(f"unknown scale {value!r}")


# Task counts per pattern for each workflow set.
SCALE_TASK_COUNTS = {
    Scale.SMALL: {Pattern.CYBERSHAKE: 30, Pattern.MONTAGE: 25, Pattern.INSPIRAL: 30, Pattern.SIPHT: 30},
    Scale.MEDIUM: {Pattern.CYBERSHAKE: 50, Pattern.MONTAGE: 50, Pattern.INSPIRAL: 50, Pattern.SIPHT: 60},
    Scale.LARGE: {Pattern.CYBERSHAKE: 100, Pattern.MONTAGE: 100, Pattern.INSPIRAL: 100, Pattern.SIPHT: 100},
}

GENERATED_PATTERNS = (Pattern.CYBERSHAKE, Pattern.MONTAGE, Pattern.INSPIRAL, Pattern.SIPHT)


@dataclass(frozen=True)
class Task:
    id: int
    workload: float
    predecessors: frozenset = frozenset()
    successors: frozenset = frozenset()


@dataclass(frozen=True, eq=False)
class WorkflowDag:
    """Validated, immutable task graph. Build through :func:`build_dag`."""

    pattern: Pattern
    tasks: tuple
    edges: tuple
    topo_order: tuple

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @cached_property
    def workloads(self) -> np.ndarray:
        w = np.array([t.workload for t in self.tasks], dtype=np.float64)
        w.setflags(write=False)
        return w

    @cached_property
    def pred_counts(self) -> np.ndarray:
        return np.array([len(t.predecessors) for t in self.tasks], dtype=np.float64)

    @cached_property
    def succ_counts(self) -> np.ndarray:
        return np.array([len(t.successors) for t in self.tasks], dtype=np.float64)

    @cached_property
    def sources(self) -> tuple:
        return tuple(t.id for t in self.tasks if not t.predecessors)

    @cached_property
    def sinks(self) -> tuple:
        return tuple(t.id for t in self.tasks if not t.successors)

    @cached_property
    def descendant_counts(self) -> np.ndarray:
        # Bitset closure in reverse topological order.
        reach = [0] * self.n_tasks
        for tid in reversed(self.topo_order):
            bits = 0
            for s in self.tasks[tid].successors:
                bits |= reach[s] | (1 << s)
            reach[tid] = bits
        return np.array([bin(b).count("1") for b in reach], dtype=np.int64)

    @cached_property
    def attention_csr(self):
        """In-neighbour lists (self first, then predecessors) as CSR arrays."""
        indptr = np.zeros(self.n_tasks + 1, dtype=np.int64)
        nbr = []
        for t in self.tasks:
            nbr.append(t.id)
            nbr.extend(sorted(t.predecessors))
            indptr[t.id + 1] = len(nbr)
        return indptr, np.array(nbr, dtype=np.int64)

    def structurally_equal(self, other: "WorkflowDag") -> bool:
        return (
            self.pattern == other.pattern
            and [(t.id, t.workload) for t in self.tasks] == [(t.id, t.workload) for t in other.tasks]
            and sorted(self.edges) == sorted(other.edges)
        )

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern.value,
            "tasks": [{"id": t.id, "workload": t.workload} for t in self.tasks],
            "edges": [list(e) for e in self.edges],
        }


def _topological_order(n: int, edges) -> tuple:
    indeg = [0] * n
    succ = [[] for _ in range(n)]
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1
    # Kahn's algorithm with a sorted frontier so the order is canonical.
    frontier = sorted(i for i in range(n) if indeg[i] == 0)
    order = []
    heapq.heapify(frontier)
    while frontier:
        u = heapq.heappop(frontier)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(frontier, v)
    if len(order) != n:
        stuck = sorted(i for i in range(n) if indeg[i] > 0)
        raise CycleDetected(f"graph has a cycle through tasks {stuck[:10]}")
    return tuple(order)


def build_dag(tasks, edges, pattern=Pattern.CUSTOM) -> WorkflowDag:
    """Validate ``tasks`` and ``edges`` and return an immutable DAG.

    ``tasks`` is a sequence of ``Task`` objects, ``(id, workload)`` pairs or
    dicts with ``id``/``workload`` keys. Ids must be exactly ``0..n-1``.
    """
    parsed = []
    for t in tasks:
        if isinstance(t, Task):
            parsed.append((int(t.id), float(t.workload)))
        elif isinstance(t, dict):
            parsed.append((int(t["id"]), float(t["workload"])))
        else:
            tid, wl = t
            parsed.append((int(tid), float(wl)))
    parsed.sort()
    n = len(parsed)
    if n == 0:
        raise ValueError("a workflow needs at least one task")
    if [tid for tid, _ in parsed] != list(range(n)):
        raise ValueError("task ids must be unique and cover 0..n-1")
    for tid, wl in parsed:
        if not (wl > 0 and math.isfinite(wl)):
            raise ValueError(f"task {tid}: workload must be positive and finite, got {wl}")

    norm_edges = []
    seen = set()
    for e in edges:
        u, v = int(e[0]), int(e[1])
        if not (0 <= u < n) or not (0 <= v < n):
            raise DanglingEdge(f"edge ({u}, {v}) references a missing task")
        if u == v:
            raise CycleDetected(f"self-loop on task {u}")
        if (u, v) not in seen:
            seen.add((u, v))
            norm_edges.append((u, v))

    order = _topological_order(n, norm_edges)
    preds = [set() for _ in range(n)]
    succs = [set() for _ in range(n)]
    for u, v in norm_edges:
        succs[u].add(v)
        preds[v].add(u)
    task_objs = tuple(
        Task(tid, wl, frozenset(preds[tid]), frozenset(succs[tid])) for tid, wl in parsed
    )
    return WorkflowDag(Pattern(pattern), task_objs, tuple(norm_edges), order)


# ---------------------------------------------------------------------------
# Topology generators


def _log_uniform(rng, n, workload_range):
    lo, hi = workload_range
    if not (0 < lo <= hi):
        raise ValueError(f"bad workload range {workload_range}")
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size=n))


def _cybershake_edges(n, rng):
    roots = max(1, n // 15)
    sinks = 2 if n >= 6 else 1
    middle = n - roots - sinks
    edges = []
    synth, peak = [], []
    nxt = roots
    pairs, extra = divmod(middle, 2)
    for i in range(pairs + extra):
        s = nxt
        nxt += 1
        synth.append(s)
        root = i % roots if i < roots else int(rng.integers(roots))
        edges.append((root, s))
        if i < pairs:
            p = nxt
            nxt += 1
            peak.append(p)
            edges.append((s, p))
    if sinks == 2:
        zip_seis, zip_psa = nxt, nxt + 1
        edges += [(s, zip_seis) for s in synth]
        edges += [(p, zip_psa) for p in peak] or [(synth[0], zip_psa)]
    else:
        edges += [(s, nxt) for s in synth]
    return edges


def _montage_edges(n, rng):
    if n < 11:
        # Too small for the full shape: parallel stripes into a chain.
        width = max(1, (n - 1) // 2)
        edges = [(i, width) for i in range(width)]
        edges += [(i, i + 1) for i in range(width, n - 1)]
        return edges
    k = (n - 5) // 3
    diffs = n - 2 * k - 6
    project = list(range(k))
    diff = list(range(k, k + diffs))
    concat, bgmodel = k + diffs, k + diffs + 1
    background = list(range(bgmodel + 1, bgmodel + 1 + k))
    imgtbl = background[-1] + 1
    tail = [imgtbl, imgtbl + 1, imgtbl + 2, imgtbl + 3]
    edges = []
    for j, d in enumerate(diff):
        if j < k - 1:
            a, b = j, j + 1
        else:
            a, b = sorted(int(x) for x in rng.choice(k, size=2, replace=False)) if k > 1 else (0, 0)
        edges.append((project[a], d))
        if b != a:
            edges.append((project[b], d))
    edges += [(d, concat) for d in diff]
    edges.append((concat, bgmodel))
    for p, bg in zip(project, background):
        edges += [(bgmodel, bg), (p, bg)]
    edges += [(bg, imgtbl) for bg in background]
    edges += list(zip(tail[:-1], tail[1:]))
    return edges


def _layer_chains(first, count, target, edges):
    """Chains of length two feeding ``target``; returns the next free id."""
    nxt = first
    end = first + count
    while nxt < end:
        if nxt + 1 < end:
            edges.append((nxt, nxt + 1))
            edges.append((nxt + 1, target))
            nxt += 2
        else:
            edges.append((nxt, target))
            nxt += 1
    return nxt


def _inspiral_group(start, m, edges):
    """Two pipelined layers with a join after each; returns the group's exit."""
    if m < 4:
        for i in range(start, start + m - 1):
            edges.append((i, i + 1))
        return start + m - 1
    rest = m - 2
    first = (rest + 1) // 2
    join1 = start + first
    _layer_chains(start, first, join1, edges)
    second = rest - first
    join2 = join1 + 1 + second
    if second:
        # second-layer chains start after join1 and depend on it
        nxt = join1 + 1
        while nxt < join2:
            edges.append((join1, nxt))
            if nxt + 1 < join2:
                edges.append((nxt, nxt + 1))
                edges.append((nxt + 1, join2))
                nxt += 2
            else:
                edges.append((nxt, join2))
                nxt += 1
    else:
        edges.append((join1, join2))
    return join2


def _inspiral_edges(n, rng):
    groups = max(1, round(n / 15))
    edges = []
    if groups == 1:
        _inspiral_group(0, n, edges)
        return edges
    body = n - 1
    sizes = [body // groups + (1 if i < body % groups else 0) for i in range(groups)]
    start = 0
    exits = []
    for m in sizes:
        exits.append(_inspiral_group(start, m, edges))
        start += m
    edges += [(e, n - 1) for e in exits]
    return edges


def _sipht_edges(n, rng):
    trees = max(2, n // 12) if n >= 5 else 1
    body = n - 1
    sizes = [body // trees + (1 if i < body % trees else 0) for i in range(trees)]
    edges = []
    start = 0
    sink = n - 1
    for m in sizes:
        root = start
        for i in range(1, m):
            parent = start + int(rng.integers(0, max(1, i // 3 + 1)))
            edges.append((start + i, parent))
        edges.append((root, sink))
        start += m
    return edges


_GENERATORS = {
    Pattern.CYBERSHAKE: _cybershake_edges,
    Pattern.MONTAGE: _montage_edges,
    Pattern.INSPIRAL: _inspiral_edges,
    Pattern.SIPHT: _sipht_edges,
}


def generate_pattern(pattern, n_tasks: int, seed: int, workload_range=DEFAULT_WORKLOAD_RANGE) -> WorkflowDag:
    """Synthetic DAG approximating one of the four scientific workflow families.

    Workloads are log-uniform over ``workload_range``. Output depends only on
    the arguments.
    """
    pattern = Pattern(pattern)
    if n_tasks < 3:
        raise UnsupportedCount(f"need at least 3 tasks, got {n_tasks}")
    if pattern not in _GENERATORS:
        raise ValueError(f"no generator for pattern {pattern.value}")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, n_tasks, GENERATED_PATTERNS.index(pattern)])
    edges = _GENERATORS[pattern](n_tasks, rng)
    workloads = _log_uniform(rng, n_tasks, workload_range)
    return build_dag(list(enumerate(workloads.tolist())), edges, pattern)


# ---------------------------------------------------------------------------
# File I/O


def _read_structured(path: Path):
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        try:
            return yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ParseError(str(exc), path=path, line=mark.line + 1 if mark else None) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from exc


def dag_from_dict(doc, path=None) -> WorkflowDag:
    if not isinstance(doc, dict):
        raise ParseError("top level must be a mapping", path=path)
    for key in ("tasks", "edges"):
        if key not in doc:
            raise ParseError("missing required field", path=path, field=key)
    try:
        pattern = Pattern(doc.get("pattern", "Custom"))
    except ValueError:
        raise ParseError(f"unknown pattern {doc.get('pattern')!r}", path=path, field="pattern") from None
    tasks = []
    seen = set()
    for i, entry in enumerate(doc["tasks"]):
        fld = f"tasks[{i}]"
        if not isinstance(entry, dict) or "id" not in entry or "workload" not in entry:
            raise ParseError("task entries need 'id' and 'workload'", path=path, field=fld)
        tid, wl = entry["id"], entry["workload"]
        if isinstance(tid, bool) or not isinstance(tid, int):
            raise ParseError(f"id must be an integer, got {tid!r}", path=path, field=f"{fld}.id")
        if tid in seen:
            raise ParseError(f"duplicate task id {tid}", path=path, field=f"{fld}.id")
        seen.add(tid)
        if isinstance(wl, bool) or not isinstance(wl, (int, float)) or not wl > 0 or not math.isfinite(wl):
            raise ParseError(f"workload must be a positive number, got {wl!r}", path=path, field=f"{fld}.workload")
        tasks.append((tid, float(wl)))
    if sorted(seen) != list(range(len(seen))):
        raise ParseError("task ids must cover 0..n-1", path=path, field="tasks")
    edges = []
    for i, e in enumerate(doc["edges"]):
        if not isinstance(e, (list, tuple)) or len(e) != 2 or not all(isinstance(x, int) for x in e):
            raise ParseError(f"edge must be [from, to], got {e!r}", path=path, field=f"edges[{i}]")
        edges.append((e[0], e[1]))
    try:
        return build_dag(tasks, edges, pattern)
    except DanglingEdge as exc:
        raise ParseError(str(exc), path=path, field="edges") from exc


def load_dag(path) -> WorkflowDag:
    """Load a DAG from a JSON or YAML file (schema: pattern, tasks, edges)."""
    path = Path(path)
    return dag_from_dict(_read_structured(path), path=path)


def save_dag(dag: WorkflowDag, path) -> None:
    path = Path(path)
    doc = dag.to_dict()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        path.write_text(yaml.safe_dump(doc, sort_keys=False))
    else:
        path.write_text(json.dumps(doc, indent=1) + "\n")


# ---------------------------------------------------------------------------
# Arrivals, makespan, deadlines


def sample_arrivals(n: int, rate: float, seed: int) -> list:
    """Poisson-process arrival times; the first arrival is one gap after t=0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not rate > 0:
        raise ValueError("arrival rate must be positive")
    rng = np.random.default_rng(seed)
    return np.cumsum(rng.exponential(1.0 / rate, size=n)).tolist()


def longest_paths(dag: WorkflowDag):
    """Workload-weighted longest path into and out of every task (both inclusive)."""
    w = dag.workloads
    into = np.zeros(dag.n_tasks)
    for tid in dag.topo_order:
        preds = dag.tasks[tid].predecessors
        into[tid] = w[tid] + (max(into[p] for p in preds) if preds else 0.0)
    out = np.zeros(dag.n_tasks)
    for tid in reversed(dag.topo_order):
        succs = dag.tasks[tid].successors
        out[tid] = w[tid] + (max(out[s] for s in succs) if succs else 0.0)
    return into, out


def min_makespan(dag: WorkflowDag, fastest_speed: float) -> float:
    """Critical-path length with every task on its own fastest-speed VM."""
    if not fastest_speed > 0:
        raise ValueError("speed must be positive")
    times = dag.workloads / fastest_speed
    finish = np.zeros(dag.n_tasks)
    for tid in dag.topo_order:
        preds = dag.tasks[tid].predecessors
        start = max(finish[p] for p in preds) if preds else 0.0
        finish[tid] = start + times[tid]
    return float(finish.max())


def task_deadlines(dag: WorkflowDag, workflow_deadline_span: float, fastest_speed: float) -> np.ndarray:
    """Per-task deadline offsets from the workflow arrival.

    Each task receives the share of the span equal to the fraction of its
    critical path (by workload) that is done once the task finishes, so
    bigger tasks receive more slack and sinks receive the whole span.
    """
    mm = min_makespan(dag, fastest_speed)
    if workflow_deadline_span < mm:
        raise InfeasibleSpan(f"span {workflow_deadline_span} is below the minimum makespan {mm}")
    into, out = longest_paths(dag)
    through = into + out - dag.workloads
    offsets = workflow_deadline_span * into / through
    for tid in dag.sinks:
        offsets[tid] = workflow_deadline_span
    return offsets


# ---------------------------------------------------------------------------
# Instances and scenarios


@dataclass(frozen=True, eq=False)
class WorkflowInstance:
    dag: WorkflowDag
    arrival_time: float
    deadline: float
    min_makespan: float
    gamma: float = 1.0
    wf_id: int = 0


def make_instance(dag, arrival_time, gamma, fastest_speed, wf_id=0) -> WorkflowInstance:
    mm = min_makespan(dag, fastest_speed)
    return WorkflowInstance(dag, float(arrival_time), float(arrival_time) + gamma * mm, mm, float(gamma), wf_id)


@dataclass(frozen=True)
class ScenarioConfig:
    workflow_count: int = 30
    scale: Scale = Scale.SMALL
    gamma: float = 5.0
    beta: float = 0.24
    lambda_: float = 0.01
    seed: int = 0
    workload_range: tuple = DEFAULT_WORKLOAD_RANGE
    lateness_unit: float = 3600.0

    def __post_init__(self):
        object.__setattr__(self, "scale", Scale.parse(self.scale))
        object.__setattr__(self, "workload_range", tuple(float(x) for x in self.workload_range))
        if self.workflow_count < 1:
            raise ValueError("workflow_count must be positive")
        for name in ("gamma", "beta", "lambda_", "lateness_unit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name.rstrip('_')} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "workflow_count": self.workflow_count,
            "scale": self.scale.value,
            "gamma": self.gamma,
            "beta": self.beta,
            "lambda": self.lambda_,
            "seed": self.seed,
            "workload_range": list(self.workload_range),
            "lateness_unit": self.lateness_unit,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lambda_"] = doc.pop("lambda")
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**doc)


def generate_workflows(scenario: ScenarioConfig, fastest_speed: float) -> list:
    """Draw the workflow instances of one scenario (patterns, DAGs, arrivals)."""
    rng = np.random.default_rng([scenario.seed, 0xC0FFEE])
    arrivals = sample_arrivals(scenario.workflow_count, scenario.lambda_, int(rng.integers(2**63)))
    counts = SCALE_TASK_COUNTS[scenario.scale]
    out = []
    for i, at in enumerate(arrivals):
        pattern = GENERATED_PATTERNS[int(rng.integers(len(GENERATED_PATTERNS)))]
        dag = generate_pattern(pattern, counts[pattern], int(rng.integers(2**63)), scenario.workload_range)
        out.append(make_instance(dag, at, scenario.gamma, fastest_speed, wf_id=i))
    return out
