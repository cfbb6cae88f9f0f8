#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the four hot kernels on workloads shaped like the acceptance suite
(Monte Carlo filter batches, thinning sweeps, closed-loop simulation) and
prints the speedup.  Run after building the extension in place:

    python setup.py build_ext --inplace
    python benchmarks/bench_backends.py
"""

import time

import numpy as np

from pocmc import _kernels_py

try:
    from pocmc import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def timeit(fn, *args, repeat=3):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def workload():
    rng = np.random.default_rng(0)
    n_ctrl, n, d, kn = 11, 2, 1, 1
    q = np.zeros((n_ctrl, kn, n, n))
    h = np.zeros((n_ctrl, kn, n, d))
    f = np.zeros((n_ctrl, kn, n))
    for ai, a in enumerate(np.linspace(0.0, 1.0, n_ctrl)):
        q[ai, 0] = [[-a, a], [a, -a]]
        h[ai, 0, :, 0] = (1.0, -1.0)
        f[ai, 0] = -0.5 * a * a
    m, t_steps = 4000, 1000
    dt = 1.0 / t_steps
    dw = rng.standard_normal((m, t_steps, d)) * np.sqrt(dt)
    rho0 = np.ascontiguousarray(np.full((m, n), 0.5))
    a_idx = rng.integers(0, n_ctrl, size=(m, t_steps))
    knots = np.zeros(t_steps, dtype=np.int64)
    n_cand = 200_000
    times = np.sort(rng.uniform(0.0, 10.0, n_cand))
    marks = rng.integers(0, n, n_cand)
    unifs = rng.random(n_cand)
    ci = rng.integers(0, n_ctrl, n_cand)
    ki = np.zeros(n_cand, dtype=np.int64)
    n_axis = 21
    table = rng.integers(0, n_ctrl, size=(t_steps, n_axis * n_axis))
    layers = np.arange(t_steps, dtype=np.int64)
    strides = np.array([n_axis, 1], dtype=np.int64)
    disc = np.ones(t_steps)
    return {
        "accept_candidates": (times, marks, unifs, 0, ci, ki, q, 2.4, n),
        "filter_em_batch": (rho0, dw, dt, a_idx, knots, q, h),
        "filter_robust_batch": (rho0, dw, dt, a_idx, knots, q, h),
        "closed_loop_batch": (rho0, dw, dt, table, layers, n_axis, 10.0,
                              strides, knots, q, h, f, disc, False),
    }


def main():
    cases = workload()
    print(f"{'kernel':<24}{'numpy':>12}{'cython':>12}{'speedup':>10}")
    for name, args in cases.items():
        t_py, out_py = timeit(getattr(_kernels_py, name), *args)
        if _kernels_cy is None:
            print(f"{name:<24}{t_py * 1e3:>10.1f}ms{'n/a':>12}{'n/a':>10}")
            continue
        t_cy, out_cy = timeit(getattr(_kernels_cy, name), *args)
        ref = out_py[0] if isinstance(out_py, tuple) else out_py
        got = out_cy[0] if isinstance(out_cy, tuple) else out_cy
        assert np.allclose(ref, got, rtol=1e-12, atol=1e-14)
        print(f"{name:<24}{t_py * 1e3:>10.1f}ms{t_cy * 1e3:>10.1f}ms"
              f"{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
