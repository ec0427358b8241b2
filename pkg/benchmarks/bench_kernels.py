"""Compare the numba kernels with the pure-numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Kernel timings call both
backends directly at shapes the policy network actually sees; the episode
timing runs one simulated episode per backend in a subprocess, since the
backend is fixed at import time by ``CADWS_DISABLE_NUMBA``.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cadws.kernels import _jit, _numpy
from cadws.workflow import generate_pattern, Pattern


def time_call(fn, *args, repeat=200):
    fn(*args)  # warm-up, includes JIT compilation on first use
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def kernel_cases(rng):
    dag = generate_pattern(Pattern.MONTAGE, 50, seed=1)
    indptr, nbr = dag.attention_csr
    n = dag.n_tasks
    wh = rng.standard_normal((n, 8))
    yield "matmul 50x6 @ 6x16", _jit.matmul, _numpy.matmul, (rng.standard_normal((50, 6)), rng.standard_normal((6, 16)))
    yield "matmul 40x96 @ 96x128", _jit.matmul, _numpy.matmul, (rng.standard_normal((40, 96)), rng.standard_normal((96, 128)))
    yield "softmax_rows 40x40", _jit.softmax_rows, _numpy.softmax_rows, (rng.standard_normal((40, 40)),)
    yield "layer_norm 40x16", _jit.layer_norm, _numpy.layer_norm, (
        rng.standard_normal((40, 16)), np.ones(16), np.zeros(16), 1e-5)
    yield "gat_aggregate Montage-50", _jit.gat_aggregate, _numpy.gat_aggregate, (
        wh, rng.standard_normal(n), rng.standard_normal(n), indptr, nbr, 0.2)


EPISODE_SNIPPET = """
import time
from cadws import kernels
from cadws.policy import GraphPolicy, init_params, PolicyArch
from cadws.sim import run_episode
from cadws.workflow import ScenarioConfig
pol = GraphPolicy(init_params(PolicyArch(), 0))
run_episode(ScenarioConfig(workflow_count=1, seed=99), pol)
t0 = time.perf_counter()
rep = run_episode(ScenarioConfig(workflow_count={wf}, seed=1), pol)
print(kernels.BACKEND, time.perf_counter() - t0, repr(rep.total))
"""


def episode_times(workflows):
    out = {}
    for disable in ("0", "1"):
        env = dict(os.environ, CADWS_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", EPISODE_SNIPPET.format(wf=workflows)],
                             env=env, capture_output=True, text=True, check=True)
        backend, secs, total = res.stdout.split()
        out[backend] = (float(secs), total)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--workflows", type=int, default=4)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numba (us)':>12}{'numpy (us)':>12}{'speedup':>10}{'max |diff|':>12}")
    for name, fast, slow, case in kernel_cases(rng):
        a, b = fast(*case), slow(*case)
        pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
        dev = max(float(np.max(np.abs(x - y))) for x, y in pairs)
        tj = time_call(fast, *case, repeat=args.repeat)
        tn = time_call(slow, *case, repeat=args.repeat)
        print(f"{name:<28}{tj * 1e6:12.2f}{tn * 1e6:12.2f}{tn / tj:10.1f}x{dev:12.1e}")

    print(f"\none {args.workflows}-workflow episode with the untrained policy:")
    res = episode_times(args.workflows)
    for backend, (secs, total) in res.items():
        print(f"  {backend:<6} {secs:8.3f} s   total cost {total}")
    if len({t for _, t in res.values()}) == 1:
        print("  both backends produced the same total cost")


if __name__ == "__main__":
    main()
