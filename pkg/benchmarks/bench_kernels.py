"""Compare the compiled and pure-Python objective kernels.

Times ``value_grad`` on the crescent problem at several horizons, plus one
warm-started MPC step, for every available backend::

    python3 benchmarks/bench_kernels.py [--repeat 200]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from penaltynav.dynamics import rk4_step
from penaltynav.kernels import available_backends, kernel_class
from penaltynav.penalty import penalty_solve, shift_warm_start
from penaltynav.scenario import load_scenario


def time_value_grad(spec, cls, repeat: int) -> float:
    kern = spec.make_kernel(cls)
    rng = np.random.default_rng(0)
    mu = np.full((spec.n_obstacles, spec.N), 100.0)
    us = [rng.uniform(-1, 1, spec.n_vars) for _ in range(8)]
    grad = np.empty(spec.n_vars)
    kern.value_grad(mu, us[0], grad)
    t0 = time.perf_counter()
    for i in range(repeat):
        kern.value_grad(mu, us[i % len(us)], grad)
    return (time.perf_counter() - t0) / repeat


def time_mpc_step(spec, cls, cfg) -> float:
    """Wall time of the warm-started penalty solve one MPC step after the start."""
    spec.__dict__["kernel"] = spec.make_kernel(cls)  # route the cached kernel to this backend
    first = penalty_solve(spec, None, np.zeros(spec.n_vars), cfg)
    nxt = spec.at_state(rk4_step(spec.model, spec.q0, first.controls[:2], spec.ts))
    nxt.__dict__["kernel"] = nxt.make_kernel(cls)
    u, mu = shift_warm_start(first.controls, first.mu)
    t0 = time.perf_counter()
    penalty_solve(nxt, mu, u, cfg)
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    sc = load_scenario("crescent")
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'N':>4} " + " ".join(f"{b + ' [us]':>16}" for b in backends) + "   speedup")
    for N in (10, 25, 50, 100):
        base = sc.problem()
        spec = type(base)(base.model, base.ts, N, base.weights, base.obstacles, base.input_box, base.q0)
        times = [time_value_grad(spec, kernel_class(b), args.repeat if b == "compiled" else max(5, args.repeat // 20))
                 for b in backends]
        speed = f"{times[-1] / times[0]:9.1f}x" if len(times) > 1 and backends[0] == "compiled" else ""
        print(f"{N:4d} " + " ".join(f"{1e6 * t:16.1f}" for t in times) + f"  {speed}")
    cfg = sc.penalty_config()
    print("warm-started MPC step (crescent, N = 50):")
    for b in backends:
        samples = [time_mpc_step(sc.problem(), kernel_class(b), cfg) for _ in range(3 if b == "compiled" else 1)]
        print(f"  {b:>9}: {1e3 * statistics.median(samples):8.1f} ms")


if __name__ == "__main__":
    main()
