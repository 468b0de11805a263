#!/usr/bin/env python3
"""Benchmark the numba kernel against the pure-numpy fallback.

The workload mirrors the hot path of the estimation pipeline: nodewise
Lasso solves on a q x q Gram matrix at the penalty levels cross-validation
visits. Run directly:

    python benchmarks/bench_backends.py [--dim 200] [--nodes 40] [--repeat 3]

Backend selection in the library itself is controlled by HDIV_BACKEND;
this script calls both kernels explicitly and checks they agree.
"""

import argparse
import time

import numpy as np

from hdiv import _kernels


def build_problem(dim, seed):
    rng = np.random.default_rng(seed)
    sigma = 0.5 ** np.abs(np.subtract.outer(np.arange(dim), np.arange(dim)))
    Z = rng.standard_normal((dim // 2, dim)) @ np.linalg.cholesky(sigma).T
    return np.ascontiguousarray(Z.T @ Z / Z.shape[0])


def run_nodewise(kernel, gram, nodes, lam):
    d = gram.shape[0]
    idx = np.arange(d)
    out = np.empty(nodes)
    for j in range(nodes):
        keep = idx != j
        Q = np.ascontiguousarray(gram[np.ix_(keep, keep)])
        c = gram[keep, j].copy()
        beta = np.zeros(d - 1)
        g = -c.copy()
        free = np.ascontiguousarray(np.diagonal(Q) > 0)
        kernel(Q, c, np.full(d - 1, lam), beta, g, free, 1e-10, 5000)
        out[j] = beta @ beta
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dim", type=int, default=200)
    parser.add_argument("--nodes", type=int, default=40)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    from numba import njit

    numba_kernel = njit(cache=True, nogil=True)(_kernels._cd_plain)
    gram = build_problem(args.dim, seed=0)
    lam = 0.1

    # warm-up triggers jit compilation outside the timed region
    run_nodewise(numba_kernel, gram, 2, lam)
    run_nodewise(_kernels._cd_numpy, gram, 2, lam)

    check_nb = run_nodewise(numba_kernel, gram, args.nodes, lam)
    check_np = run_nodewise(_kernels._cd_numpy, gram, args.nodes, lam)
    agree = np.max(np.abs(check_nb - check_np))

    results = {}
    for name, kernel in (("numba", numba_kernel), ("numpy", _kernels._cd_numpy)):
        times = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            run_nodewise(kernel, gram, args.nodes, lam)
            times.append(time.perf_counter() - t0)
        results[name] = min(times)

    print(f"workload: {args.nodes} nodewise solves on a {args.dim}x{args.dim} Gram")
    for name, best in results.items():
        print(f"  {name:6s} {best * 1e3:9.1f} ms")
    print(f"  speedup numba vs numpy: {results['numpy'] / results['numba']:.1f}x")
    print(f"  max |solution difference|: {agree:.2e}")


if __name__ == "__main__":
    main()
