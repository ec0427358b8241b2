"""Discrete-event cloud simulator with hourly VM billing and SLA penalties.

One decision is taken per ready task, in the order they become ready (ties by
workflow arrival, then task id). A task is dispatched the moment it becomes
ready: it joins the FIFO queue of the chosen VM and starts once both the
clock and the VM allow it. An idle VM is released at the end of its current
paid hour if nothing was queued on it in the meantime.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import InvalidAction, NoReadyTask
from .workflow import ScenarioConfig, WorkflowInstance, generate_workflows, task_deadlines

HOUR = 3600.0

UNSCHEDULED, SCHEDULED, READY = 0, 1, 2


@dataclass(frozen=True)
class VmType:
    name: str
    vcpu: int
    memory_gb: int
    price_per_hour: float
    speed: float

    def __post_init__(self):
        if not (self.price_per_hour > 0 and self.speed > 0):
            raise ValueError(f"{self.name}: price and speed must be positive")


# EC2 m5 family; speed defaults to the vCPU count.
VM_TYPES = (
    VmType("m5.large", 2, 8, 0.096, 2.0),
    VmType("m5.xlarge", 4, 16, 0.192, 4.0),
    VmType("m5.2xlarge", 8, 32, 0.384, 8.0),
    VmType("m5.4xlarge", 16, 64, 0.768, 16.0),
    VmType("m5.8xlarge", 32, 128, 1.536, 32.0),
    VmType("m5.12xlarge", 48, 192, 2.304, 48.0),
)


def exec_time(workload: float, vm_type: VmType) -> float:
    if not workload > 0:
        raise ValueError("workload must be positive")
    return workload / vm_type.speed


def billed_hours(duration: float) -> int:
    """Whole hours charged for a rental of ``duration`` seconds (at least one)."""
    # divmod on floats is exact, unlike duration / 3600 which can round down
    # a duration just over a boundary.
    q, r = divmod(max(duration, 0.0), HOUR)
    return max(1, int(q) + (1 if r > 0 else 0))


@dataclass(eq=False)
class VmInstance:
    uid: int
    vm_type: VmType
    rent_start: float
    busy_until: float
    queue: list = field(default_factory=list)
    released_at: Optional[float] = None

    @property
    def paid_until(self) -> float:
        return self.rent_start + HOUR * billed_hours(self.busy_until - self.rent_start)

    def rental_end(self, end_of_horizon=None) -> float:
        end = self.released_at if self.released_at is not None else self.busy_until
        if end_of_horizon is not None:
            end = min(end, max(end_of_horizon, self.busy_until))
        return end


def vm_fee(instances, end_of_horizon=None) -> float:
    """Sum of price x billed hours; unreleased instances run to ``busy_until``."""
    total = 0.0
    for vm in instances:
        total += vm.vm_type.price_per_hour * billed_hours(vm.rental_end(end_of_horizon) - vm.rent_start)
    return total


def sla_penalty(instance: WorkflowInstance, finish_time: float, beta: float, lateness_unit: float = HOUR) -> float:
    """``beta`` per ``lateness_unit`` (default one hour) past the deadline."""
    if finish_time < instance.arrival_time:
        raise ValueError("finish time precedes arrival")
    late = finish_time - instance.deadline
    return beta * late / lateness_unit if late > 0 else 0.0


class Candidate(NamedTuple):
    vm_type: VmType
    vm: Optional[VmInstance]

    @property
    def is_fresh(self) -> bool:
        return self.vm is None


class WorkflowRun:
    """Runtime record of one workflow inside an episode."""

    def __init__(self, index: int, instance: WorkflowInstance, fastest_speed: float):
        self.index = index
        self.instance = instance
        self.fastest_speed = fastest_speed
        n = instance.dag.n_tasks
        self.arrived = False
        self.status = np.zeros(n, dtype=np.int8)
        self.done = np.zeros(n, dtype=bool)
        self.start = np.full(n, np.nan)
        self.finish = np.full(n, np.nan)
        self.vm_uid = np.full(n, -1, dtype=np.int64)
        self.unmet = np.array(instance.dag.pred_counts, dtype=np.int64)
        self.n_done = 0
        self.finish_time: Optional[float] = None
        self.penalty = 0.0

    @property
    def dag(self):
        return self.instance.dag

    @property
    def complete(self) -> bool:
        return self.finish_time is not None

    @cached_property
    def task_deadline_abs(self) -> np.ndarray:
        span = self.instance.gamma * self.instance.min_makespan
        return self.instance.arrival_time + task_deadlines(self.dag, span, self.fastest_speed)


class TaskRef(NamedTuple):
    wf: int
    task: int


@dataclass
class CostReport:
    vm_fee: float
    sla_penalty: float
    total: float
    per_workflow: list  # (wf_id, arrival, deadline, finish_time, process_time, penalty)
    per_vm: list  # (uid, type name, rent_start, rental_end, hours, fee)

    WORKFLOW_COLUMNS = ("wf_id", "arrival_time", "deadline", "finish_time", "process_time", "penalty")
    VM_COLUMNS = ("uid", "vm_type", "rent_start", "rental_end", "hours", "fee")

    def to_csv(self) -> str:
        """Sectioned CSV; the first column names the section of each row."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "vm_fee", "sla_penalty", "total"])
        w.writerow(["summary", repr(self.vm_fee), repr(self.sla_penalty), repr(self.total)])
        w.writerow(["section", *self.WORKFLOW_COLUMNS])
        for row in self.per_workflow:
            w.writerow(["workflow", row[0], *map(repr, row[1:])])
        w.writerow(["section", *self.VM_COLUMNS])
        for uid, name, start, end, hours, fee in self.per_vm:
            w.writerow(["vm", uid, name, repr(start), repr(end), hours, repr(fee)])
        return buf.getvalue()


# Event kinds; the value is also the processing priority within one instant.
_COMPLETE, _ARRIVE, _RELEASE = 0, 1, 2


class SimState:
    """Full simulator snapshot for one episode (mutated in place by :meth:`step`)."""

    def __init__(self, scenario: ScenarioConfig, vm_types=VM_TYPES, workflows=None, episode_index: int = 0):
        self.scenario = scenario
        self.vm_types = tuple(vm_types)
        self.fresh_order = tuple(sorted(self.vm_types, key=lambda t: (t.price_per_hour, t.speed, t.name)))
        self.fastest_speed = max(t.speed for t in self.vm_types)
        if workflows is None:
            workflows = generate_workflows(scenario, self.fastest_speed)
        self.workflows = [WorkflowRun(i, inst, self.fastest_speed) for i, inst in enumerate(workflows)]
        self.rng = np.random.default_rng([scenario.seed, episode_index])
        self.clock = 0.0
        self.active_vms: list = []
        self.all_vms: list = []
        self.arrival_log: list = []
        self.accrued_penalty = 0.0
        self.n_complete = 0
        self.decisions = 0
        self._next_uid = 0
        self._seq = 0
        self._events: list = []
        self._pending: list = []
        self._candidates = None
        for run in self.workflows:
            self._push(run.instance.arrival_time, _ARRIVE, run.index)
        self._advance()

    # -- queries -----------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.n_complete == len(self.workflows)

    @property
    def ready(self) -> Optional[TaskRef]:
        if not self._pending:
            return None
        _, _, wf, task = self._pending[0]
        return TaskRef(wf, task)

    @property
    def pending_ready(self) -> list:
        return [TaskRef(wf, t) for _, _, wf, t in sorted(self._pending)]

    def candidates(self) -> list:
        if self.ready is None:
            raise NoReadyTask("no task is waiting for a decision")
        if self._candidates is None:
            self._candidates = [Candidate(vm.vm_type, vm) for vm in self.active_vms] + [
                Candidate(t, None) for t in self.fresh_order
            ]
        return self._candidates

    # -- transitions -------------------------------------------------------

    def step(self, action: int) -> "SimState":
        cands = self.candidates()
        if not (0 <= action < len(cands)):
            raise InvalidAction(f"action {action} outside 0..{len(cands) - 1}")
        _, _, wf, tid = heapq.heappop(self._pending)
        self._candidates = None
        run = self.workflows[wf]
        cand = cands[action]
        vm = cand.vm
        if vm is None:
            vm = VmInstance(self._next_uid, cand.vm_type, self.clock, self.clock)
            self._next_uid += 1
            self.active_vms.append(vm)
            self.all_vms.append(vm)
        start = max(self.clock, vm.busy_until)
        finish = start + exec_time(float(run.dag.workloads[tid]), vm.vm_type)
        vm.busy_until = finish
        vm.queue.append(TaskRef(wf, tid))
        run.status[tid] = SCHEDULED
        run.start[tid] = start
        run.finish[tid] = finish
        run.vm_uid[tid] = vm.uid
        self._push(finish, _COMPLETE, (wf, tid, vm))
        self.decisions += 1
        self._advance()
        return self

    def _push(self, time, kind, payload):
        heapq.heappush(self._events, (time, kind, self._seq, payload))
        self._seq += 1

    def _advance(self):
        while not self._pending and not self.done:
            if not self._events:
                raise AssertionError("deadlock: unfinished tasks but no pending events")
            now = self._events[0][0]
            assert now >= self.clock, "clock moved backwards"
            self.clock = now
            while self._events and self._events[0][0] == now:
                _, kind, _, payload = heapq.heappop(self._events)
                if kind == _COMPLETE:
                    self._on_complete(*payload)
                elif kind == _ARRIVE:
                    self._on_arrival(payload)
                else:
                    self._on_release(*payload)

    def _make_ready(self, run, tid):
        run.status[tid] = READY
        heapq.heappush(self._pending, (self.clock, run.instance.arrival_time, run.index, tid))

    def _on_arrival(self, wf):
        run = self.workflows[wf]
        run.arrived = True
        self.arrival_log.append(self.clock)
        for tid in run.dag.sources:
            self._make_ready(run, tid)

    def _on_complete(self, wf, tid, vm):
        run = self.workflows[wf]
        head = vm.queue.pop(0)
        assert head == (wf, tid), "VM queue is not FIFO"
        run.done[tid] = True
        run.n_done += 1
        for s in run.dag.tasks[tid].successors:
            run.unmet[s] -= 1
            if run.unmet[s] == 0:
                self._make_ready(run, s)
        if not vm.queue:
            self._push(vm.paid_until, _RELEASE, (vm, vm.busy_until))
        if run.n_done == run.dag.n_tasks:
            run.finish_time = self.clock
            run.penalty = sla_penalty(run.instance, self.clock, self.scenario.beta, self.scenario.lateness_unit)
            self.accrued_penalty += run.penalty
            self.n_complete += 1

    def _on_release(self, vm, idle_since):
        if vm.released_at is None and not vm.queue and vm.busy_until == idle_since:
            vm.released_at = self.clock
            self.active_vms.remove(vm)

    # -- accounting --------------------------------------------------------

    def cost_report(self) -> CostReport:
        horizon = self.clock
        per_vm = []
        for vm in self.all_vms:
            end = vm.rental_end(horizon)
            hours = billed_hours(end - vm.rent_start)
            per_vm.append((vm.uid, vm.vm_type.name, vm.rent_start, end, hours, vm.vm_type.price_per_hour * hours))
        fee = vm_fee(self.all_vms, horizon)
        per_wf = []
        penalty = 0.0
        for run in self.workflows:
            inst = run.instance
            ft = run.finish_time if run.finish_time is not None else math.nan
            per_wf.append((inst.wf_id, inst.arrival_time, inst.deadline, ft, ft - inst.arrival_time, run.penalty))
            penalty += run.penalty
        return CostReport(fee, penalty, fee + penalty, per_wf, per_vm)


Policy = Callable[[SimState, list], int]


def new_episode(scenario: ScenarioConfig, vm_types=VM_TYPES, workflows=None, episode_index=0) -> SimState:
    return SimState(scenario, vm_types, workflows, episode_index)


def candidate_actions(state: SimState) -> list:
    return state.candidates()


def step(state: SimState, action: int) -> SimState:
    return state.step(action)


def run_episode(scenario: ScenarioConfig, policy: Policy, vm_types=VM_TYPES, workflows=None, episode_index=0) -> CostReport:
    """Drive one episode to completion under ``policy(state, candidates) -> index``."""
    state = SimState(scenario, vm_types, workflows, episode_index)
    while not state.done:
        cands = state.candidates()
        state.step(int(policy(state, cands)))
    return state.cost_report()
