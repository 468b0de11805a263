"""Cyclic coordinate-descent kernels for the l1-penalized quadratic problem.

Two interchangeable implementations of the same sweep arithmetic: a numba
@njit kernel (hot path) and a pure-numpy fallback. The backend is selected
once at import time from the HDIV_BACKEND environment variable:

    HDIV_BACKEND=numba   force the jitted kernel (error if numba missing)
    HDIV_BACKEND=numpy   force the numpy fallback
    unset / auto         numba when importable, numpy otherwise

Both paths perform identical floating-point operations per coordinate
update (the gradient refresh is elementwise), so they agree to the last
bit for a zero warm start. benchmarks/bench_backends.py compares them.

The problem solved is

    min_b  b' Q b - 2 c' b + 2 * sum_j lam_w[j] * |b[j]|

with Q symmetric PSD. A coordinate update replaces b[j] by
soft_threshold(Q[j,j]*b[j] - g[j], lam_w[j]) / Q[j,j] where g = Q b - c is
maintained incrementally. Coordinates with Q[j,j] == 0 are pinned outside
the kernel. Sweeps visit coordinates in fixed ascending order; convergence
requires max coordinate change < tol and the subgradient residual (from
the incremental gradient) < 10*tol.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "HDIV_BACKEND"


def _cd_numpy(Q, c, lam_w, beta, g, free, tol, max_sweeps):
    """Numpy fallback sweep loop. Mutates beta and g in place.

    Returns (sweeps, kkt_residual, converged).
    """
    d = beta.shape[0]
    sweeps = 0
    kkt = np.inf
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        for j in range(d):
            if not free[j]:
                continue
            qjj = Q[j, j]
            r = qjj * beta[j] - g[j]
            t = lam_w[j]
            if r > t:
                bnew = (r - t) / qjj
            elif r < -t:
                bnew = (r + t) / qjj
            else:
                bnew = 0.0
            delta = bnew - beta[j]
            if delta != 0.0:
                beta[j] = bnew
                g += delta * Q[j]
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        kkt = float(
            np.max(
                np.where(
                    beta != 0.0,
                    np.abs(g + np.sign(beta) * lam_w),
                    np.maximum(np.abs(g) - lam_w, 0.0),
                )
            )
        )
        if max_delta < tol and kkt < 10.0 * tol:
            converged = True
            break
    return sweeps, kkt, converged


def _cd_plain(Q, c, lam_w, beta, g, free, tol, max_sweeps):
    # Same arithmetic as _cd_numpy with scalar loops; this is the function
    # handed to numba. Kept separate so the fallback keeps vectorized
    # gradient updates while the jitted version compiles tight loops.
    d = beta.shape[0]
    sweeps = 0
    kkt = np.inf
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        for j in range(d):
            if not free[j]:
                continue
            qjj = Q[j, j]
            r = qjj * beta[j] - g[j]
            t = lam_w[j]
            if r > t:
                bnew = (r - t) / qjj
            elif r < -t:
                bnew = (r + t) / qjj
            else:
                bnew = 0.0
            delta = bnew - beta[j]
            if delta != 0.0:
                beta[j] = bnew
                for k in range(d):
                    g[k] += delta * Q[j, k]
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        kkt = 0.0
        for j in range(d):
            bj = beta[j]
            if bj != 0.0:
                s = 1.0 if bj > 0.0 else -1.0
                v = abs(g[j] + s * lam_w[j])
            else:
                v = abs(g[j]) - lam_w[j]
                if v < 0.0:
                    v = 0.0
            if v > kkt:
                kkt = v
        if max_delta < tol and kkt < 10.0 * tol:
            converged = True
            break
    return sweeps, kkt, converged


def _pick_backend():
    flag = os.environ.get(_ENV_FLAG, "auto").strip().lower()
    if flag not in ("auto", "numba", "numpy", ""):
        raise ValueError(
            f"{_ENV_FLAG} must be 'numba', 'numpy' or 'auto', got {flag!r}"
        )
    if flag == "numpy":
        return "numpy", _cd_numpy
    try:
        from numba import njit
    except ImportError:
        if flag == "numba":
            raise
        return "numpy", _cd_numpy
    jitted = njit(cache=True, nogil=True)(_cd_plain)
    return "numba", jitted


_BACKEND_NAME, _CD_KERNEL = _pick_backend()


def active_backend() -> str:
    """Name of the coordinate-descent backend selected at import time."""
    return _BACKEND_NAME


def cd_solve(Q, c, lam_w, beta0, tol, max_sweeps):
    """Run coordinate descent on the symmetrized Gram problem.

    Q must already be exactly symmetric and float64 C-contiguous. beta0 is
    copied. Coordinates with Q[j,j] == 0 are held at zero (the caller has
    verified they are feasible). Returns (beta, g, sweeps, kkt, converged)
    where g = Q beta - c from the incremental updates.
    """
    d = Q.shape[0]
    beta = np.array(beta0, dtype=np.float64, copy=True).reshape(-1)
    free = np.ascontiguousarray(np.diagonal(Q) > 0.0)
    beta[~free] = 0.0
    if np.any(beta != 0.0):
        g = Q @ beta - c
    else:
        g = -c.copy()
    sweeps, kkt, converged = _CD_KERNEL(
        Q, c, lam_w, beta, g, free, float(tol), int(max_sweeps)
    )
    return beta, g, int(sweeps), float(kkt), bool(converged)


def kkt_violations(g, beta, lam_w):
    """Coordinate-wise subgradient violations for gradient g = Q beta - c."""
    return np.where(
        beta != 0.0,
        np.abs(g + np.sign(beta) * lam_w),
        np.maximum(np.abs(g) - lam_w, 0.0),
    )
