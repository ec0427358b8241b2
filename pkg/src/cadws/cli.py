"""Command-line entry point: ``cadws train | eval | bench``.

Exit codes: 0 success, 2 bad configuration or arguments, 3 training aborted,
4 checkpoint cannot be used (missing, corrupt or built for another network).

Worker count comes from ``--workers`` or the ``CADWS_WORKERS`` environment
variable (default 1). Every CSV is written in a fixed (cell, seed) order, so
the output does not depend on the worker count.

CSV schemas
-----------
training log:  generation, mean_fitness, best_fitness, worst_fitness, theta_norm, instance_id
eval:          gamma, scale, instance_seed, vm_fee, sla_penalty, total
bench summary: policy, gamma, scale, runs, vm_fee_mean, vm_fee_std,
               sla_penalty_mean, sla_penalty_std, total_mean, total_std
bench bars:    policy, gamma, scale, component, value   (component is vm_fee or sla_penalty)
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .baselines import BaselineKind, BaselinePolicy
from .errors import CheckpointMismatch, TrainingAborted
from .es import EsConfig, train, write_log_csv
from .policy import GraphPolicy, PolicyArch, PolicyParams, init_params, load_checkpoint, save_checkpoint
from .sim import run_episode
from .workflow import ScenarioConfig, Scale

log = logging.getLogger("cadws")

DEFAULT_GAMMAS = (1.00, 1.25, 1.50, 1.75, 2.00, 2.25)
LEARNED = "GATES"
EVAL_COLUMNS = ("gamma", "scale", "instance_seed", "vm_fee", "sla_penalty", "total")
BENCH_COLUMNS = (
    "policy", "gamma", "scale", "runs",
    "vm_fee_mean", "vm_fee_std", "sla_penalty_mean", "sla_penalty_std", "total_mean", "total_std",
)
BAR_COLUMNS = ("policy", "gamma", "scale", "component", "value")

PROFILES = {
    "desk": {
        "es": {"population": 8, "generations": 100},
        "scenario": {"workflow_count": 4, "scale": "S", "gamma": 5.0},
        "suite": {"instances_per_cell": 5},
    },
    "paper": {
        "es": {"population": 40, "generations": 2000},
        "scenario": {"workflow_count": 30, "scale": "S", "gamma": 5.0},
        "suite": {"instances_per_cell": 30},
    },
}


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class EvalSuite:
    """Grid of test conditions; every cell reuses the same instance seeds."""

    gamma_grid: tuple = DEFAULT_GAMMAS
    scales: tuple = (Scale.SMALL,)
    instances_per_cell: int = 30
    seed: int = 10_000
    workflow_count: int = 30
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __post_init__(self):
        if not self.gamma_grid or not self.scales:
            raise ValueError("gamma grid and scale list must be nonempty")
        if self.instances_per_cell < 1:
            raise ValueError("instances_per_cell must be positive")
        object.__setattr__(self, "scales", tuple(Scale.parse(s) for s in self.scales))
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))

    @property
    def instance_seeds(self):
        return [self.seed + k for k in range(self.instances_per_cell)]

    def cells(self):
        return [(g, s) for g in self.gamma_grid for s in self.scales]

    def scenario_for(self, gamma, scale, seed) -> ScenarioConfig:
        return replace(self.scenario, gamma=gamma, scale=scale, seed=seed, workflow_count=self.workflow_count)


# ---------------------------------------------------------------------------
# Config loading


def _read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(doc) - {"profile", "es", "scenario", "arch", "output"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return doc


def _merged(profile: str, doc: dict, section: str) -> dict:
    out = dict(PROFILES[profile].get(section, {}))
    extra = doc.get(section) or {}
    if not isinstance(extra, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    out.update(extra)
    return out


def load_train_config(path, profile=None, workers=None):
    """(EsConfig, ScenarioConfig, PolicyArch, output dict) from a YAML/JSON file."""
    doc = _read_config(path)
    profile = profile or doc.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    try:
        es_doc = _merged(profile, doc, "es")
        if workers is not None:
            es_doc["parallel_workers"] = workers
        es = EsConfig.from_dict(es_doc)
        scenario = ScenarioConfig.from_dict(_merged(profile, doc, "scenario"))
        arch = PolicyArch(**(doc.get("arch") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    output = doc.get("output") or {}
    return es, scenario, arch, output


def _worker_count(flag):
    if flag is not None:
        return flag
    raw = os.environ.get("CADWS_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CADWS_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("CADWS_WORKERS must be at least 1")
    return n


def _csv_list(text, convert):
    return tuple(convert(x) for x in str(text).split(",") if x.strip())


# ---------------------------------------------------------------------------
# Episode evaluation


def _make_policy(name, params, seed):
    if name == LEARNED:
        return GraphPolicy(params, mode="greedy")
    return BaselinePolicy(name, seed=seed)


def _run_job(job):
    name, params, scenario = job
    rep = run_episode(scenario, _make_policy(name, params, scenario.seed))
    return rep.vm_fee, rep.sla_penalty, rep.total


def _run_jobs(jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def evaluate_suite(params, suite: EvalSuite, policy=LEARNED, workers=1):
    """Rows ``(gamma, scale, instance_seed, vm_fee, sla_penalty, total)`` in cell, seed order."""
    keys = [(g, s, seed) for g, s in suite.cells() for seed in suite.instance_seeds]
    jobs = [(policy, params, suite.scenario_for(g, s, seed)) for g, s, seed in keys]
    return [(*k, *res) for k, res in zip(keys, _run_jobs(jobs, workers))]


def summarize(rows):
    """Mean and sample std (0 for a single run) of fee, penalty and total."""
    a = np.array([r[3:6] for r in rows], dtype=np.float64)
    std = a.std(axis=0, ddof=1) if len(a) > 1 else np.zeros(3)
    mean = a.mean(axis=0)
    return [mean[0], std[0], mean[1], std[1], mean[2], std[2]]


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _fmt_row(row):
    g, s, seed, *vals = row
    return [float(g), s.value if isinstance(s, Scale) else s, seed, *map(float, vals)]


# ---------------------------------------------------------------------------
# Commands


def cmd_train(args) -> int:
    workers = _worker_count(args.workers)
    es, scenario, arch, output = load_train_config(args.config, args.profile, workers)
    out_dir = Path(args.out_dir or output.get("dir", "runs/train"))
    ckpt_path = out_dir / output.get("checkpoint", "policy.ckpt")
    csv_path = out_dir / output.get("log", "training.csv")
    log.info("training N=%d Gen=%d on %d-workflow %s instances, gamma=%s", es.population,
             es.generations, scenario.workflow_count, scenario.scale.value, scenario.gamma)
    theta0 = init_params(arch, es.init_seed)
    ckpt_dir = out_dir / "checkpoints" if es.checkpoint_every else None
    try:
        theta, records = train(es, scenario, arch, theta0=theta0, checkpoint_dir=ckpt_dir)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    save_checkpoint(ckpt_path, PolicyParams(arch, theta), extra={"es": es.__dict__, "scenario": scenario.to_dict()})
    write_log_csv(records, csv_path)
    print(f"checkpoint: {ckpt_path}\ntraining log: {csv_path}")
    return 0


def _suite_from_args(args) -> EvalSuite:
    profile = PROFILES[args.profile]
    runs = args.runs if args.runs is not None else profile["suite"]["instances_per_cell"]
    wf = args.workflows if args.workflows is not None else profile["scenario"]["workflow_count"]
    try:
        return EvalSuite(
            gamma_grid=_csv_list(args.gammas, float),
            scales=_csv_list(args.scales, Scale.parse),
            instances_per_cell=runs,
            seed=args.seed,
            workflow_count=wf,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_params(path):
    if not Path(path).is_file():
        raise CheckpointMismatch(f"checkpoint not found: {path}")
    return load_checkpoint(path, PolicyArch())


def cmd_eval(args) -> int:
    workers = _worker_count(args.workers)
    suite = _suite_from_args(args)
    params = _load_params(args.checkpoint)
    rows = evaluate_suite(params, suite, LEARNED, workers)
    _write_csv(args.out, EVAL_COLUMNS, [_fmt_row(r) for r in rows])
    print(f"{len(rows)} runs written to {args.out}")
    return 0


def cmd_bench(args) -> int:
    workers = _worker_count(args.workers)
    suite = _suite_from_args(args)
    names = []
    for raw in _csv_list(args.policies, str):
        if raw.strip().upper() == LEARNED:
            names.append(LEARNED)
        else:
            try:
                names.append(BaselineKind.parse(raw).value)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
    params = None
    if LEARNED in names:
        if not args.checkpoint:
            raise ConfigError(f"policy {LEARNED} needs --checkpoint")
        params = _load_params(args.checkpoint)
    summary, bars = [], []
    for name in names:
        rows = evaluate_suite(params if name == LEARNED else None, suite, name, workers)
        for g, s in suite.cells():
            cell = [r for r in rows if r[0] == g and r[1] == s]
            stats = summarize(cell)
            summary.append([name, g, s.value, len(cell), *map(float, stats)])
            bars.append([name, g, s.value, "vm_fee", float(stats[0])])
            bars.append([name, g, s.value, "sla_penalty", float(stats[2])])
    _write_csv(args.out, BENCH_COLUMNS, summary)
    if args.breakdown:
        _write_csv(args.breakdown, BAR_COLUMNS, bars)
    for row in summary:
        print(f"{row[0]:>16} gamma={row[1]:.2f} {row[2]:<6} fee {row[4]:9.4f}  penalty {row[6]:9.4f}  total {row[8]:9.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cadws", description="Cost-aware dynamic workflow scheduling")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the graph policy with evolution strategies")
    t.add_argument("--config", required=True, help="YAML or JSON config file")
    t.add_argument("--profile", choices=sorted(PROFILES), default=None)
    t.add_argument("--out-dir", default=None)
    t.add_argument("--workers", type=int, default=None)
    t.set_defaults(func=cmd_train)

    def suite_args(sp):
        sp.add_argument("--gammas", default=",".join(f"{g:.2f}" for g in DEFAULT_GAMMAS))
        sp.add_argument("--scales", default="S")
        sp.add_argument("--runs", type=int, default=None, help="instances per (gamma, scale) cell")
        sp.add_argument("--workflows", type=int, default=None, help="workflows per instance")
        sp.add_argument("--seed", type=int, default=10_000, help="first instance seed")
        sp.add_argument("--profile", choices=sorted(PROFILES), default="desk")
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint over a gamma x scale grid")
    e.add_argument("--checkpoint", required=True)
    suite_args(e)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="compare policies over a gamma x scale grid")
    b.add_argument("--policies", default="Random,CheapestFeasible,FastestVm")
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--breakdown", default=None, help="fee/penalty table for stacked bars")
    suite_args(b)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointMismatch as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
