"""Reference policies sharing the candidate list and features of the learned policy."""

import enum

import numpy as np

from .features import extract_vm_features, fittest_index


class BaselineKind(str, enum.Enum):
    RANDOM = "Random"
    CHEAPEST_FEASIBLE = "CheapestFeasible"
    FASTEST_VM = "FastestVm"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "").replace("-", "")
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown baseline {name!r}; choose from {[m.value for m in cls]}")


def fastest_index(candidates, clock=0.0) -> int:
    """Highest speed, then lowest price, then earliest start, then lowest index.

    The start-time key keeps several same-type VMs from all queueing on the
    first one rented: a busy VM loses to an idle or fresh one of its type.
    """

    def key(i):
        t, vm = candidates[i]
        start = clock if vm is None else max(clock, vm.busy_until)
        return (-t.speed, t.price_per_hour, start, i)

    return min(range(len(candidates)), key=key)


class BaselinePolicy:
    """Callable ``(state, candidates) -> index``. Build a new one per episode."""

    def __init__(self, kind, seed=0):
        self.kind = BaselineKind.parse(kind)
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def __call__(self, state, candidates) -> int:
        return decide(self.kind, state, candidates, self.rng)


def decide(kind, state, candidates, rng=None) -> int:
    kind = BaselineKind.parse(kind)
    if not candidates:
        raise ValueError("no candidates to choose from")
    if kind is BaselineKind.RANDOM:
        if rng is None:
            raise ValueError("Random baseline needs an rng")
        return int(rng.integers(len(candidates)))
    if kind is BaselineKind.CHEAPEST_FEASIBLE:
        return fittest_index(extract_vm_features(state, state.ready, candidates))
    return fastest_index(candidates, state.clock)
