"""Evolution-strategy training of the scheduling policy.

Each generation samples one training instance, evaluates ``N`` Gaussian
perturbations of the current parameters on it, and ascends the score-function
estimate ``1/(N sigma) * sum_i F(theta + sigma eps_i) eps_i``. Noise vectors
are regenerated from integer seeds, so only seeds cross process boundaries and
the reduction always runs in seed order.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import LengthMismatch, TrainingAborted
from .policy import GraphPolicy, PolicyArch, PolicyParams, init_params, save_checkpoint
from .sim import run_episode
from .workflow import ScenarioConfig

log = logging.getLogger(__name__)

SHAPINGS = ("raw", "centered_rank")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class EsConfig:
    population: int = 40
    generations: int = 2000
    learning_rate: float = 0.01
    noise_sigma: float = 0.05
    seed: int = 0
    fitness_shaping: str = "centered_rank"
    mirrored: bool = False
    parallel_workers: int = 1
    episodes_per_eval: int = 1
    optimizer: str = "sgd"
    checkpoint_every: int = 0
    init_seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if self.mirrored and self.population % 2:
            raise ValueError("mirrored sampling needs an even population")
        if not self.noise_sigma > 0 or not self.learning_rate > 0:
            raise ValueError("noise_sigma and learning_rate must be positive")
        if self.generations < 0 or self.parallel_workers < 1 or self.episodes_per_eval < 1:
            raise ValueError("generations >= 0, parallel_workers >= 1, episodes_per_eval >= 1")
        if self.fitness_shaping not in SHAPINGS:
            raise ValueError(f"fitness_shaping must be one of {SHAPINGS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    @classmethod
    def from_dict(cls, doc: dict) -> "EsConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown ES fields: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class GenerationRecord:
    generation: int
    mean_fitness: float
    best_fitness: float
    worst_fitness: float
    theta_norm: float
    instance_id: int
    wall_time: float = 0.0

    # wall_time stays out of the CSV so logs are byte-reproducible.
    CSV_COLUMNS = ("generation", "mean_fitness", "best_fitness", "worst_fitness", "theta_norm", "instance_id")

    def csv_row(self):
        return [self.generation, repr(self.mean_fitness), repr(self.best_fitness), repr(self.worst_fitness),
                repr(self.theta_norm), self.instance_id]


def write_log_csv(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GenerationRecord.CSV_COLUMNS)
        for r in records:
            w.writerow(r.csv_row())


# ---------------------------------------------------------------------------
# Noise, estimator, update


def derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0] >> 1)


def noise(dim: int, noise_seed: int) -> np.ndarray:
    return np.random.default_rng(noise_seed).standard_normal(dim)


def perturb(theta_hat, sigma: float, noise_seed: int, sign: float = 1.0):
    """``(theta_hat + sigma * eps, eps)`` with ``eps`` regenerated from ``noise_seed``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    eps = noise(theta_hat.shape[0], noise_seed)
    if sign < 0:
        eps = -eps
    return theta_hat + sigma * eps, eps


def centered_ranks(values) -> np.ndarray:
    """Ranks mapped linearly onto [-0.5, 0.5]; ties keep list order."""
    x = np.asarray(values, dtype=np.float64)
    ranks = np.empty(len(x))
    ranks[np.argsort(x, kind="stable")] = np.arange(len(x))
    return ranks / (len(x) - 1) - 0.5


def estimate_gradient(epsilons, fitnesses, sigma: float, shaping: str = "raw") -> np.ndarray:
    if len(epsilons) != len(fitnesses):
        raise LengthMismatch(f"{len(epsilons)} noise vectors but {len(fitnesses)} fitness values")
    n = len(fitnesses)
    if n < 2:
        raise LengthMismatch("need at least two samples")
    weights = centered_ranks(fitnesses) if shaping == "centered_rank" else np.asarray(fitnesses, dtype=np.float64)
    grad = np.zeros(np.asarray(epsilons[0]).shape[0])
    for w, eps in zip(weights, epsilons):
        grad += w * np.asarray(eps)
    return grad / (n * sigma)


def update(theta_hat, gradient, alpha: float) -> np.ndarray:
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if theta_hat.shape != gradient.shape:
        raise LengthMismatch(f"parameter shape {theta_hat.shape} vs gradient {gradient.shape}")
    return theta_hat + alpha * gradient


class Adam:
    """Adam ascent step, available through ``EsConfig.optimizer='adam'``."""

    def __init__(self, dim, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, theta, grad, alpha):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        a = alpha * math.sqrt(1 - self.beta2**self.t) / (1 - self.beta1**self.t)
        return theta + a * self.m / (np.sqrt(self.v) + self.eps)


# ---------------------------------------------------------------------------
# Fitness


def evaluate_fitness(theta, scenario: ScenarioConfig, arch: PolicyArch = PolicyArch(), workflows=None) -> float:
    """Negative total cost of the greedy policy on one scenario.

    ``workflows`` optionally replaces the scenario's generated instances.
    """
    params = theta if isinstance(theta, PolicyParams) else PolicyParams(arch, theta)
    return -run_episode(scenario, GraphPolicy(params, mode="greedy"), workflows=workflows).total


def _as_sampler(scenario_sampler):
    if scenario_sampler is None:
        return int
    if isinstance(scenario_sampler, ScenarioConfig):
        return scenario_sampler.with_seed
    return scenario_sampler


def _individual_plan(config: EsConfig, generation: int):
    """(noise_seed, sign) per individual, in reduction order."""
    if config.mirrored:
        seeds = [derive_seed(config.seed, 1, generation, k) for k in range(config.population // 2)]
        return [(s, sign) for s in seeds for sign in (1.0, -1.0)]
    return [(derive_seed(config.seed, 1, generation, i), 1.0) for i in range(config.population)]


def _simulator_fitness(theta, scenarios, arch):
    return float(np.mean([evaluate_fitness(theta, sc, arch) for sc in scenarios]))


def _eval_chunk(theta_hat, sigma, plan, scenarios, arch, fitness_fn):
    out = []
    for noise_seed, sign in plan:
        theta, _ = perturb(theta_hat, sigma, noise_seed, sign)
        if fitness_fn is None:
            out.append(_simulator_fitness(theta, scenarios, arch))
        else:
            out.append(float(np.mean([fitness_fn(theta, sc) for sc in scenarios])))
    return out


def _chunks(seq, k):
    size, extra = divmod(len(seq), k)
    out, start = [], 0
    for i in range(k):
        end = start + size + (1 if i < extra else 0)
        if end > start:
            out.append(seq[start:end])
        start = end
    return out


def train(
    config: EsConfig,
    scenario_sampler,
    arch: PolicyArch = PolicyArch(),
    theta0=None,
    fitness_fn: Optional[Callable] = None,
    checkpoint_dir=None,
    on_generation: Optional[Callable] = None,
):
    """Run the ES loop; returns ``(theta_hat, records)``.

    ``scenario_sampler`` is a ``ScenarioConfig`` template (its seed is
    replaced per generation), a callable ``seed -> scenario``, or ``None``
    to hand the bare instance seed to ``fitness_fn``.
    ``fitness_fn(theta, scenario) -> float`` replaces the simulator, e.g.
    for analytic test problems; ``theta0`` then fixes the dimension.
    """
    sample = _as_sampler(scenario_sampler)
    if theta0 is None:
        theta = init_params(arch, config.init_seed).vector.copy()
    else:
        theta = np.array(theta0.vector if isinstance(theta0, PolicyParams) else theta0, dtype=np.float64)
    records = []
    if config.generations == 0:
        return theta, records

    optimizer = Adam(theta.shape[0]) if config.optimizer == "adam" else None
    pool = ProcessPoolExecutor(config.parallel_workers) if config.parallel_workers > 1 else None
    try:
        for gen in range(config.generations):
            t0 = time.perf_counter()
            instance_seeds = [derive_seed(config.seed, 2, gen, e) for e in range(config.episodes_per_eval)]
            scenarios = [sample(s) for s in instance_seeds]
            plan = _individual_plan(config, gen)
            if pool is None:
                fitness = _eval_chunk(theta, config.noise_sigma, plan, scenarios, arch, fitness_fn)
            else:
                futures = [
                    pool.submit(_eval_chunk, theta, config.noise_sigma, chunk, scenarios, arch, fitness_fn)
                    for chunk in _chunks(plan, config.parallel_workers)
                ]
                fitness = [f for fut in futures for f in fut.result()]
            fitness = np.array(fitness)
            if not np.isfinite(fitness).all():
                bad = [i for i, f in enumerate(fitness) if not math.isfinite(f)]
                raise TrainingAborted(f"generation {gen}: non-finite fitness for individuals {bad}")
            eps = [-noise(theta.shape[0], s) if sign < 0 else noise(theta.shape[0], s) for s, sign in plan]
            grad = estimate_gradient(eps, fitness, config.noise_sigma, config.fitness_shaping)
            if optimizer is None:
                theta = update(theta, grad, config.learning_rate)
            else:
                theta = optimizer.step(theta, grad, config.learning_rate)
            rec = GenerationRecord(
                gen, float(fitness.mean()), float(fitness.max()), float(fitness.min()),
                float(np.linalg.norm(theta)), instance_seeds[0], time.perf_counter() - t0,
            )
            records.append(rec)
            log.info("gen %d mean %.4f best %.4f worst %.4f (%.2fs)", gen, rec.mean_fitness,
                     rec.best_fitness, rec.worst_fitness, rec.wall_time)
            if on_generation is not None:
                on_generation(rec, theta)
            if checkpoint_dir is not None and config.checkpoint_every and (gen + 1) % config.checkpoint_every == 0:
                save_checkpoint(Path(checkpoint_dir) / f"gen{gen + 1:05d}.ckpt", PolicyParams(arch, theta))
    finally:
        if pool is not None:
            pool.shutdown()
    return theta, records
