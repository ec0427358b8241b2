"""Raw scheduling features and the per-decision heterogeneous graph.

Three feature groups are extracted at every decision:

* task features, one row per task of the ready task's workflow:
  predecessor count, successor count, mean execution time over VM types,
  workload, absolute task deadline, status (0 unscheduled, 1 scheduled,
  2 ready);
* workflow features of the ready task: transitive descendant count,
  completion ratio, recent arrival rate;
* VM features, one row per candidate: deadline feasibility, incurred cost,
  rental time left after the task, fittest flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .sim import HOUR, SimState, TaskRef, billed_hours, exec_time

ARRIVAL_WINDOW = 1000.0

TASK_FEATURES = ("predecessors", "successors", "avg_processing_time", "task_size", "task_deadline", "task_status")
WORKFLOW_FEATURES = ("forthcoming_successors", "completion_ratio", "estimated_arrival_rate")
VM_FEATURES = ("deadline_feasible", "incurred_cost", "remaining_rental_time", "fittest")


def minmax_columns(m: np.ndarray) -> np.ndarray:
    """Scale each column to [0, 1]; constant columns become 0."""
    lo = m.min(axis=0)
    span = m.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (m - lo) / safe, 0.0)


def _static_task_block(state: SimState, run) -> np.ndarray:
    block = getattr(run, "_static_features", None)
    if block is None:
        dag = run.dag
        mean_inv_speed = np.mean([1.0 / t.speed for t in state.vm_types])
        block = np.column_stack(
            [dag.pred_counts, dag.succ_counts, dag.workloads * mean_inv_speed, dag.workloads, run.task_deadline_abs]
        )
        run._static_features = block
    return block


def extract_task_features(state: SimState, wf: int) -> np.ndarray:
    """``n_tasks x 6`` raw task feature matrix for workflow ``wf``."""
    run = state.workflows[wf]
    return np.column_stack([_static_task_block(state, run), run.status.astype(np.float64)])


def extract_workflow_features(state: SimState, ready: TaskRef, window: float = ARRIVAL_WINDOW) -> np.ndarray:
    run = state.workflows[ready.wf]
    recent = sum(1 for t in state.arrival_log if t > state.clock - window)
    return np.array(
        [float(run.dag.descendant_counts[ready.task]), run.n_done / run.dag.n_tasks, recent / window]
    )


def extract_vm_features(state: SimState, ready: TaskRef, candidates) -> np.ndarray:
    """``n_candidates x 4`` raw VM feature matrix for placing ``ready``."""
    run = state.workflows[ready.wf]
    workload = run.dag.workloads[ready.task]
    deadline = run.task_deadline_abs[ready.task]
    beta, unit = state.scenario.beta, state.scenario.lateness_unit
    clock = state.clock
    out = np.zeros((len(candidates), 4))
    for i, (vm_type, vm) in enumerate(candidates):
        et = exec_time(workload, vm_type)
        if vm is None:
            finish = clock + et
            hours = billed_hours(et)
            fee = vm_type.price_per_hour * hours
            left = HOUR * hours - et
        else:
            finish = max(clock, vm.busy_until) + et
            hours = billed_hours(finish - vm.rent_start)
            fee = vm_type.price_per_hour * (hours - billed_hours(vm.busy_until - vm.rent_start))
            left = vm.rent_start + HOUR * hours - finish
        late = finish - deadline
        out[i, 0] = 1.0 if late <= 0 else 0.0
        out[i, 1] = fee + (beta * late / unit if late > 0 else 0.0)
        out[i, 2] = min(max(left, 0.0), np.nextafter(HOUR, 0.0))
    feasible = out[:, 0] == 1.0
    pool = np.flatnonzero(feasible) if feasible.any() else np.arange(len(candidates))
    best = pool[np.argmin(out[pool, 1])]
    out[best, 3] = 1.0
    return out


def fittest_index(vm_features: np.ndarray) -> int:
    return int(np.flatnonzero(vm_features[:, 3] == 1.0)[0])


def normalize_workflow_features(wf_raw: np.ndarray, n_tasks: int, window: float = ARRIVAL_WINDOW) -> np.ndarray:
    """Fixed bounded transforms; min-max is meaningless for a single row."""
    count = wf_raw[2] * window
    return np.array([wf_raw[0] / max(n_tasks - 1, 1), wf_raw[1], count / (1.0 + count)])


def star_csr(n_vms: int):
    """Attention neighbourhoods of the ready-task/VM star (node 0 is the task)."""
    indptr = np.empty(n_vms + 2, dtype=np.int64)
    indptr[0] = 0
    indptr[1] = n_vms + 1
    indptr[2:] = n_vms + 1 + 2 * np.arange(1, n_vms + 1)
    nbr = np.empty(3 * n_vms + 1, dtype=np.int64)
    nbr[: n_vms + 1] = np.arange(n_vms + 1)
    nbr[n_vms + 1 :: 2] = 0
    nbr[n_vms + 2 :: 2] = np.arange(1, n_vms + 1)
    return indptr, nbr


def csr_to_edges(indptr, nbr):
    """(src, dst) pairs from in-neighbour CSR arrays."""
    counts = np.diff(indptr)
    dst = np.repeat(np.arange(len(counts)), counts)
    return list(zip(nbr.tolist(), dst.tolist()))


@dataclass
class Dhg:
    """Graph for a single decision: task DAG plus VM star, with raw features."""

    task_x: np.ndarray
    task_csr: tuple
    ready_index: int
    wf_x: np.ndarray
    vm_x: np.ndarray
    star_csr: tuple
    n_tasks_in_workflow: int

    @property
    def n_vms(self) -> int:
        return self.vm_x.shape[0]

    @property
    def task_edges(self):
        return csr_to_edges(*self.task_csr)

    @property
    def vm_edges(self):
        return csr_to_edges(*self.star_csr)

    def normalized(self):
        """(task features, star node features, VM features), all in [0, 1].

        Star node features place the workflow block and the VM block in
        disjoint columns, so one projection acts per node type.
        """
        task = minmax_columns(self.task_x)
        vm = minmax_columns(self.vm_x)
        wf = normalize_workflow_features(self.wf_x, self.n_tasks_in_workflow)
        n = self.n_vms
        star = np.zeros((n + 1, 3 + 4))
        star[0, :3] = wf
        star[1:, 3:] = vm
        return task, star, vm

    def to_dict(self) -> dict:
        return {
            "ready_index": self.ready_index,
            "task_features": {"columns": list(TASK_FEATURES), "rows": self.task_x.tolist()},
            "task_edges": [list(e) for e in self.task_edges],
            "workflow_features": dict(zip(WORKFLOW_FEATURES, self.wf_x.tolist())),
            "vm_features": {"columns": list(VM_FEATURES), "rows": self.vm_x.tolist()},
            "vm_edges": [list(e) for e in self.vm_edges],
        }

    def dump(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def build_dhg(state: SimState, ready: TaskRef = None, candidates=None) -> Dhg:
    ready = ready if ready is not None else state.ready
    candidates = candidates if candidates is not None else state.candidates()
    run = state.workflows[ready.wf]
    return Dhg(
        task_x=extract_task_features(state, ready.wf),
        task_csr=run.dag.attention_csr,
        ready_index=ready.task,
        wf_x=extract_workflow_features(state, ready),
        vm_x=extract_vm_features(state, ready, candidates),
        star_csr=star_csr(len(candidates)),
        n_tasks_in_workflow=run.dag.n_tasks,
    )
