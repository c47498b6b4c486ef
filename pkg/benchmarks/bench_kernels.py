"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--agents 100] [--steps 200]

Reports the per-step cost of the batch velocity solve and of one parameter
fit objective evaluation for each backend, and checks the backends agree.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from lcrowd import _kernels_py

try:
    from lcrowd import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def make_scene(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    side = np.sqrt(n / 0.5)
    pos = rng.uniform(0, side, size=(n, 2))
    vel = rng.normal(0, 0.5, size=(n, 2))
    goal = rng.uniform(0, side, size=(n, 2))
    d = goal - pos
    pref = d / np.linalg.norm(d, axis=1, keepdims=True) * 1.4
    params = np.tile([15.0, 10.0, 30.0, 0.3, 1.4], (n, 1))
    angles = (np.arange(n) % 7 - 3) * 0.002
    verts = np.array([[side / 2 - 1, side / 2 - 1], [side / 2 + 1, side / 2 - 1],
                      [side / 2 + 1, side / 2 + 1], [side / 2 - 1, side / 2 + 1]])
    starts = np.array([0, 4], dtype=np.int64)
    return pos, vel, pref, params, angles, verts, starts


def time_steps(mod, scene, steps: int, dt: float = 0.1):
    pos, vel, pref, params, angles, verts, starts = (a.copy() for a in scene)
    costs = []
    for _ in range(steps):
        t0 = time.perf_counter()
        vel = mod.compute_velocities(pos, vel, pref, params, angles, verts, starts, dt)
        costs.append((time.perf_counter() - t0) * 1e3)
        pos = pos + vel * dt
    return costs, pos


def time_fit(mod, n: int, frames: int):
    rng = np.random.default_rng(1)
    P = np.cumsum(rng.normal(0, 0.1, size=(frames, n, 2)), axis=0) + rng.uniform(0, 20, (n, 2))
    V = np.vstack([np.zeros((1, n, 2)), np.diff(P, axis=0) / 0.1])
    M = np.ones((frames, n), dtype=np.uint8)
    G = np.tile(P[-1, 0], (frames, 1))
    t0 = time.perf_counter()
    out = mod.fit_residual(P, V, M, G, 0, (15.0, 10.0, 30.0, 0.3, 1.4), 0.0, 0.1, 5,
                           np.zeros((0, 2)), np.zeros(1, dtype=np.int64))
    return (time.perf_counter() - t0) * 1e3, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=int, default=100)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--py-steps", type=int, default=20, help="steps for the slow backend")
    args = ap.parse_args()

    scene = make_scene(args.agents)
    backends = [("python", _kernels_py, args.py_steps)]
    if _kernels_c is not None:
        backends.insert(0, ("cython", _kernels_c, args.steps))
    else:
        print("compiled backend not available; timing python only")

    results = {}
    for name, mod, steps in backends:
        costs, final = time_steps(mod, scene, steps)
        fit_ms, fit_out = time_fit(mod, 20, 300)
        results[name] = (final, fit_out)
        print(f"{name:7s} step median {statistics.median(costs):9.3f} ms "
              f"({args.agents} agents, {steps} steps)   fit objective {fit_ms:9.2f} ms")

    if len(results) == 2:
        # compare on the common prefix of steps
        n = min(args.steps, args.py_steps)
        a = time_steps(_kernels_c, scene, n)[1]
        b = time_steps(_kernels_py, scene, n)[1]
        print(f"max position difference after {n} steps: {np.abs(a - b).max():.3e}")
        print(f"fit objective: cython {results['cython'][1]}  python {results['python'][1]}")


if __name__ == "__main__":
    main()
