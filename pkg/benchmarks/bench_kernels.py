"""Benchmark the compiled kernel backend against the numpy fallback.

Times the three hot kernels (topic EM accumulation, D-optimal gain
scoring, MNIR coordinate sweep) on synthetic workloads sized like a real
pool, checks that both backends agree, and prints a speedup table.

Usage: python benchmarks/bench_kernels.py [--n 2000] [--p 500] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np
import scipy.sparse as sp

from annodesign._kernels import available_backends


def best_of(repeats, fn):
    """Best wall time of ``repeats`` calls, in seconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def topic_workload(rng, n, p, K, m):
    theta = rng.dirichlet(np.ones(p) * 0.3, size=K)
    omega = rng.dirichlet(np.ones(K) * 0.6, size=n)
    X = sp.csr_matrix(
        np.vstack([rng.multinomial(m, omega[i] @ theta) for i in range(n)]),
        dtype=np.float64,
    )
    indptr = X.indptr.astype(np.int64)
    indices = X.indices.astype(np.int64)
    data = np.ascontiguousarray(X.data)

    def run(backend):
        theta_stat = np.zeros_like(theta)
        omega_stat = np.zeros_like(omega)
        loglik = backend.topic_em_stats(
            indptr, indices, data, omega, theta, theta_stat, omega_stat
        )
        return loglik, theta_stat, omega_stat

    def agree(a, b):
        assert abs(a[0] - b[0]) <= 1e-9 * abs(b[0])
        np.testing.assert_allclose(a[1], b[1], rtol=1e-9)
        np.testing.assert_allclose(a[2], b[2], rtol=1e-9)

    return run, agree


def gains_workload(rng, n, K):
    weights = rng.dirichlet(np.ones(K), size=n)
    R = rng.normal(size=(K, K))
    a_inv = np.linalg.inv(R.T @ R + np.eye(K))

    def run(backend):
        out = np.empty(n)
        backend.quad_form_gains(weights, a_inv, out)
        return (out,)

    def agree(a, b):
        np.testing.assert_allclose(a[0], b[0], rtol=1e-9)

    return run, agree


def sweep_workload(rng, p, cells, m_y, sweeps):
    alpha0 = rng.normal(0.0, 0.5, size=p)
    phi0 = np.zeros(p)
    phi0[rng.choice(p, size=p // 10, replace=False)] = rng.normal(0.0, 1.0, size=p // 10)
    y = np.linspace(-1.0, 1.0, cells)
    x = np.empty((cells, p))
    for c in range(cells):
        eta = alpha0 + y[c] * phi0
        q = np.exp(eta - eta.max())
        x[c] = rng.multinomial(m_y, q / q.sum())
    m = x.sum(axis=1)
    subj = np.zeros(cells, dtype=np.int64)

    def run(backend):
        alpha = np.zeros((1, p))
        phi = np.zeros((1, p))
        exp_eta = np.ones((cells, p))
        z = np.full(cells, float(p))
        steps = [
            backend.mnir_sweep(x, m, y, subj, alpha, phi, exp_eta, z,
                               1.0, 0.5, 1e-6, 5.0)
            for _ in range(sweeps)
        ]
        return alpha, phi, np.array(steps)

    def agree(a, b):
        np.testing.assert_allclose(a[0], b[0], rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-8, atol=1e-12)
        np.testing.assert_array_equal(a[1] == 0.0, b[1] == 0.0)

    return run, agree


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=2000, help="pool size")
    parser.add_argument("--p", type=int, default=500, help="vocabulary size")
    parser.add_argument("--k", type=int, default=5, help="number of factors")
    parser.add_argument("--m", type=int, default=60, help="tokens per document")
    parser.add_argument("--sweeps", type=int, default=5, help="MNIR sweeps per call")
    parser.add_argument("--repeats", type=int, default=5, help="best-of repeats")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend unavailable; timing the numpy fallback only")

    rng = np.random.default_rng(args.seed)
    workloads = [
        ("topic_em_stats", *topic_workload(rng, args.n, args.p, args.k, args.m)),
        ("quad_form_gains", *gains_workload(rng, args.n, args.k)),
        (f"mnir_sweep x{args.sweeps}",
         *sweep_workload(rng, args.p, 3, 10_000, args.sweeps)),
    ]

    print(f"{'kernel':<18} " + " ".join(f"{name:>12}" for name in backends)
          + ("   speedup" if len(backends) > 1 else ""))
    for name, run, agree in workloads:
        results = {b: run(mod) for b, mod in backends.items()}
        if "cython" in results:
            agree(results["cython"], results["pure"])
        times = {b: best_of(args.repeats, lambda mod=mod: run(mod))
                 for b, mod in backends.items()}
        row = f"{name:<18} " + " ".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) > 1:
            row += f"   {times['pure'] / times['cython']:>6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
