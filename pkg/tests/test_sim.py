import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadws.baselines import BaselinePolicy
from cadws.errors import InvalidAction, NoReadyTask
from cadws.sim import (
    HOUR,
    VM_TYPES,
    VmInstance,
    billed_hours,
    exec_time,
    run_episode,
    sla_penalty,
    vm_fee,
)
from cadws.workflow import ScenarioConfig, build_dag, make_instance

from conftest import FASTEST, oracle_hours, random_dag, single_state

LARGE, XLARGE = VM_TYPES[0], VM_TYPES[1]


def cheapest_fresh(state, cands):
    return next(i for i, c in enumerate(cands) if c.vm is None)


# -- VM types and timing -----------------------------------------------------


def test_vm_table():
    assert [t.name for t in VM_TYPES] == [
        "m5.large", "m5.xlarge", "m5.2xlarge", "m5.4xlarge", "m5.8xlarge", "m5.12xlarge"]
    assert [t.vcpu for t in VM_TYPES] == [2, 4, 8, 16, 32, 48]
    assert [t.memory_gb for t in VM_TYPES] == [8, 16, 32, 64, 128, 192]
    assert [t.price_per_hour for t in VM_TYPES] == [0.096, 0.192, 0.384, 0.768, 1.536, 2.304]


def test_exec_time():
    assert exec_time(100, LARGE) == 50.0
    assert exec_time(100, XLARGE) * 2 == exec_time(100, LARGE)


def test_exec_time_unit_speed():
    from cadws.sim import VmType

    assert exec_time(37.5, VmType("unit", 1, 1, 1.0, 1.0)) == 37.5


# -- billing -----------------------------------------------------------------


def _vm(vm_type, start, end):
    return VmInstance(0, vm_type, start, end, released_at=end)


def test_fee_examples():
    assert vm_fee([_vm(LARGE, 0.0, 1800.0)]) == 0.096
    assert vm_fee([_vm(LARGE, 0.0, 3601.0)]) == 0.192
    assert vm_fee([_vm(XLARGE, 0.0, 3600.0), _vm(LARGE, 0.0, 7200.0)]) == 0.192 + 0.192


def test_zero_length_rental_bills_an_hour():
    assert billed_hours(0.0) == 1
    assert vm_fee([_vm(LARGE, 5.0, 5.0)]) == 0.096


def test_billing_boundaries():
    assert billed_hours(HOUR) == 1
    assert billed_hours(np.nextafter(HOUR, np.inf)) == 2
    assert billed_hours(3 * HOUR) == 3


@settings(max_examples=300)
@given(st.integers(0, 8 * 3600 * 8), st.integers(0, 10**6))
def test_billed_hours_vs_second_walk(eighths, start8):
    start = start8 / 8
    end = start + eighths / 8
    assert billed_hours(end - start) == oracle_hours(start, end)


def test_unreleased_vm_billed_to_busy_until():
    vm = VmInstance(0, LARGE, 0.0, 4000.0)
    assert vm_fee([vm]) == 2 * 0.096


# -- SLA penalty -------------------------------------------------------------


def _inst(deadline_gamma=1.0):
    dag = build_dag([(0, 480.0)], [])
    return make_instance(dag, 0.0, deadline_gamma, FASTEST)


def test_penalty_at_deadline_is_zero():
    inst = _inst()
    assert sla_penalty(inst, inst.deadline, 0.24) == 0.0


def test_penalty_two_hours_late():
    inst = _inst()
    assert sla_penalty(inst, inst.deadline + 7200.0, 0.24) == pytest.approx(0.48, abs=1e-15)


def test_penalty_early_is_zero():
    inst = _inst()
    assert sla_penalty(inst, inst.deadline - 1.0, 0.24) == 0.0


# -- candidates and stepping -------------------------------------------------


def test_initial_candidates():
    state = single_state([(build_dag([(0, 100.0)], []), 0.0)])
    cands = state.candidates()
    assert len(cands) == 6 and all(c.is_fresh for c in cands)
    assert [c.vm_type.price_per_hour for c in cands] == sorted(t.price_per_hour for t in VM_TYPES)


def test_candidates_with_three_active():
    dag = build_dag([(i, 10000.0) for i in range(4)], [])
    state = single_state([(dag, 0.0)])
    for _ in range(3):
        state.step(5)  # a fresh m5.12xlarge each time
    assert len(state.candidates()) == 9
    assert [c.vm.uid for c in state.candidates()[:3]] == [0, 1, 2]


def test_candidate_order_deterministic():
    def order():
        s = single_state([(build_dag([(0, 1.0), (1, 1.0)], []), 0.0)])
        s.step(0)
        return [(c.vm_type.name, None if c.vm is None else c.vm.uid) for c in s.candidates()]

    assert order() == order()


def test_single_task_trace():
    state = single_state([(build_dag([(0, 100.0)], []), 42.0)])
    assert state.clock == 42.0 and state.ready == (0, 0)
    state.step(0)
    run = state.workflows[0]
    assert run.start[0] == 42.0 and run.finish[0] == 92.0
    assert state.done


def test_chain_successor_ready_at_predecessor_finish():
    state = single_state([(build_dag([(0, 100.0), (1, 60.0)], [(0, 1)]), 0.0)])
    state.step(0)
    assert state.ready == (0, 1) and state.clock == 50.0
    state.step(state.candidates().index(next(c for c in state.candidates() if c.vm is None)))
    assert state.workflows[0].start[1] == 50.0


def test_diamond_on_one_vm(diamond):
    state = single_state([(diamond, 0.0)])
    order = []
    while not state.done:
        order.append(state.ready.task)
        state.step(0)  # the first candidate is always the single rented m5.large
    run = state.workflows[0]
    # hand trace at speed 2: each task 5 s, serial FIFO 0, 1, 2, 3
    assert order == [0, 1, 2, 3]
    assert run.start.tolist() == [0.0, 5.0, 10.0, 15.0]
    assert run.finish.tolist() == [5.0, 10.0, 15.0, 20.0]
    assert len(state.all_vms) == 1


def test_invalid_action():
    state = single_state([(build_dag([(0, 1.0)], []), 0.0)])
    with pytest.raises(InvalidAction):
        state.step(6)
    with pytest.raises(InvalidAction):
        state.step(-1)


def test_no_ready_task_after_done():
    state = single_state([(build_dag([(0, 1.0)], []), 0.0)])
    state.step(0)
    with pytest.raises(NoReadyTask):
        state.candidates()


def test_idle_vm_released_at_paid_hour():
    state = single_state([(build_dag([(0, 100.0)], []), 10.0), (build_dag([(0, 100.0)], []), 9000.0)])
    state.step(0)
    state.step(0)
    first = state.all_vms[0]
    assert first.released_at == 10.0 + HOUR
    assert len(state.all_vms) == 2


def test_vm_reused_within_paid_hour():
    state = single_state([(build_dag([(0, 100.0)], []), 0.0), (build_dag([(0, 100.0)], []), 1000.0)])
    state.step(0)
    assert state.candidates()[0].vm is state.all_vms[0]
    state.step(0)
    rep = state.cost_report()
    assert rep.vm_fee == 0.096 and len(rep.per_vm) == 1


# -- episodes ----------------------------------------------------------------


def test_single_task_cheapest_episode():
    dag = build_dag([(0, 100.0)], [])
    inst = make_instance(dag, 0.0, 100.0, FASTEST)
    rep = run_episode(ScenarioConfig(workflow_count=1, gamma=100.0), cheapest_fresh, workflows=[inst])
    assert rep.vm_fee == 0.096 and rep.sla_penalty == 0.0 and rep.total == 0.096


def _episode_log(scenario, policy):
    from cadws.sim import SimState

    state = SimState(scenario)
    actions = []
    while not state.done:
        a = policy(state, state.candidates())
        actions.append(a)
        state.step(a)
    return state, actions


@pytest.mark.parametrize("seed", range(12))
def test_episode_invariants(seed):
    sc = ScenarioConfig(workflow_count=3, seed=seed, gamma=1.0 + seed % 3)
    state, _ = _episode_log(sc, BaselinePolicy("Random", seed))
    rep = state.cost_report()
    for run, row in zip(state.workflows, rep.per_workflow):
        for u, v in run.dag.edges:
            assert run.start[v] >= run.finish[u]
        assert row[3] == run.finish.max()
        assert row[4] == row[3] - row[1]
        assert run.status.tolist() == [1] * run.dag.n_tasks
    assert rep.total == rep.vm_fee + rep.sla_penalty
    assert rep.vm_fee >= 0 and rep.sla_penalty >= 0
    by_vm = {}
    for run in state.workflows:
        for t in range(run.dag.n_tasks):
            by_vm.setdefault(int(run.vm_uid[t]), []).append((run.start[t], run.finish[t]))
    for spans in by_vm.values():
        spans.sort()
        finishes = [f for _, f in spans]
        assert all(a < b for a, b in zip(finishes, finishes[1:]))
        assert all(s2 >= f1 for (_, f1), (s2, _) in zip(spans, spans[1:]))


def test_episode_deterministic():
    sc = ScenarioConfig(workflow_count=4, seed=5)
    a = run_episode(sc, BaselinePolicy("Random", 1))
    b = run_episode(sc, BaselinePolicy("Random", 1))
    assert a.to_csv() == b.to_csv()


def test_larger_gamma_never_costs_more():
    sc = ScenarioConfig(workflow_count=4, seed=8, gamma=1.0)
    _, actions = _episode_log(sc, BaselinePolicy("Random", 3))
    reports = []
    for gamma in (1.0, 1.5, 3.0):
        replay = iter(actions)
        reports.append(run_episode(ScenarioConfig(workflow_count=4, seed=8, gamma=gamma), lambda s, c: next(replay)))
    fees = {r.vm_fee for r in reports}
    assert len(fees) == 1
    totals = [r.total for r in reports]
    assert totals[0] >= totals[1] >= totals[2]


def test_random_arrival_scenarios_have_six_plus_candidates(rng):
    dag = random_dag(rng, 6)
    state = single_state([(dag, 0.0), (dag, 5.0)])
    while not state.done:
        assert len(state.candidates()) >= 6
        state.step(int(rng.integers(len(state.candidates()))))


def test_cost_report_csv():
    rep = run_episode(ScenarioConfig(workflow_count=2, seed=1), BaselinePolicy("CheapestFeasible"))
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["section", "vm_fee", "sla_penalty", "total"]
    assert rows[1][0] == "summary" and float(rows[1][3]) == rep.total
    assert sum(r[0] == "workflow" for r in rows) == 2
    assert sum(r[0] == "vm" for r in rows) == len(rep.per_vm)
