import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from cadws.sim import SimState, VM_TYPES
from cadws.workflow import ScenarioConfig, build_dag, make_instance

FASTEST = max(t.speed for t in VM_TYPES)


def random_dag(rng, n, p=0.4, workload_range=(1.0, 1000.0)):
    """Random DAG on n tasks; ids are shuffled so id order is not a topological order."""
    perm = rng.permutation(n)
    edges = [(int(perm[i]), int(perm[j])) for i, j in itertools.combinations(range(n), 2) if rng.random() < p]
    workloads = rng.uniform(*workload_range, size=n)
    return build_dag([(i, float(workloads[i])) for i in range(n)], edges)


@st.composite
def dags(draw, min_tasks=1, max_tasks=8):
    n = draw(st.integers(min_tasks, max_tasks))
    pairs = list(itertools.combinations(range(n), 2))
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    perm = draw(st.permutations(range(n)))
    loads = draw(st.lists(st.floats(1.0, 1000.0), min_size=n, max_size=n))
    edges = [(perm[i], perm[j]) for (i, j), k in zip(pairs, keep) if k]
    return build_dag(list(enumerate(loads)), edges)


def all_paths(dag):
    """Every source-to-sink path, by depth-first enumeration."""
    out = []

    def walk(path):
        succ = sorted(dag.tasks[path[-1]].successors)
        if not succ:
            out.append(path)
        for s in succ:
            walk(path + [s])

    for s in dag.sources:
        walk([s])
    return out


def path_makespan(dag, speed):
    best = 0.0
    for path in all_paths(dag):
        t = 0.0
        for tid in path:
            t = t + dag.tasks[tid].workload / speed
        best = max(best, t)
    return best


def oracle_hours(start, end):
    """Hours touched when walking the rental one second at a time (minimum one)."""
    k = np.arange(int(np.ceil(end - start)) + 2, dtype=np.float64)
    touched = k[start + k < end]
    return max(1, len(np.unique(touched // 3600)))


def single_state(dags_and_arrivals, gamma=5.0, beta=0.24, seed=0):
    """SimState over hand-built workflows given as (dag, arrival_time) pairs."""
    insts = [make_instance(d, at, gamma, FASTEST, wf_id=i) for i, (d, at) in enumerate(dags_and_arrivals)]
    sc = ScenarioConfig(workflow_count=len(insts), gamma=gamma, beta=beta, seed=seed)
    return SimState(sc, workflows=insts)


@pytest.fixture
def diamond():
    return build_dag([(0, 10.0), (1, 10.0), (2, 10.0), (3, 10.0)], [(0, 1), (0, 2), (1, 3), (2, 3)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
