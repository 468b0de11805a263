"""Generic l1-penalized quadratic solver with exact KKT certificates.

Every Lasso in the estimation pipeline reduces to

    min_b  b' Q b - 2 c' b + 2 * lam * sum_j w[j] * |b[j]|

for a symmetric PSD Gram matrix Q. A regression Lasso with design A and
response b maps onto this form with Q = A'A/n and c = A'b/n. The penalty
carries an explicit factor 2; any cross-validated lam absorbs the
constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import NumericalError, TuningConfig, ValidationError

_SYM_RTOL = 1e-12


def soft_threshold(z: float, t: float) -> float:
    """sign(z) * max(|z| - t, 0); ties at the kink resolve to 0."""
    if t < 0:
        raise ValidationError(f"threshold must be nonnegative, got {t}")
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@dataclass(frozen=True)
class QuadraticLassoProblem:
    """Gram-form l1 problem: Q symmetric PSD, linear term c, penalty lam.

    weights are optional per-coordinate penalty multipliers (default 1).
    The asymmetric part of Q is invisible to the quadratic form, so Q is
    required to be symmetric within 1e-12 relative and is symmetrized
    exactly before solving.
    """

    Q: np.ndarray
    c: np.ndarray
    lam: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValidationError(f"Q must be square, got shape {Q.shape}")
        if c.shape[0] != Q.shape[0]:
            raise ValidationError(
                f"c has length {c.shape[0]}, expected {Q.shape[0]}"
            )
        scale = max(1.0, float(np.max(np.abs(Q)))) if Q.size else 1.0
        if Q.size and float(np.max(np.abs(Q - Q.T))) > _SYM_RTOL * scale:
            raise ValidationError("Q is not symmetric within 1e-12 relative")
        if Q.size and float(np.min(np.diagonal(Q))) < 0.0:
            raise ValidationError("Q has a negative diagonal entry")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValidationError(f"lam must be a finite nonnegative real, got {self.lam}")
        w = self.weights
        if w is not None:
            w = np.asarray(w, dtype=np.float64).reshape(-1)
            if w.shape[0] != Q.shape[0]:
                raise ValidationError("weights length does not match Q")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValidationError("weights must be finite and nonnegative")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    def lam_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.dim, float(self.lam))
        return self.lam * self.weights

    def sym_gram(self) -> np.ndarray:
        # exact symmetrization; the solver and certificates share it
        return np.ascontiguousarray(0.5 * (self.Q + self.Q.T))


@dataclass(frozen=True)
class LassoFit:
    """Solution with its subgradient certificate.

    kkt_residual is the max coordinate-wise KKT violation recomputed from
    a fresh gradient after the final sweep; when converged is True it is
    below 10x the solve tolerance.
    """

    coefficients: np.ndarray
    objective: float
    kkt_residual: float
    sweeps_used: int
    converged: bool


def _objective(Qs, c, lam_w, beta, g):
    # f = b'Qb - 2c'b + 2*sum(lam_w |b|), using g = Qs b - c
    return float(beta @ g - beta @ c + 2.0 * np.sum(lam_w * np.abs(beta)))


def solve_quadratic_lasso(
    prob: QuadraticLassoProblem,
    warm_start: np.ndarray | None = None,
    config: TuningConfig | None = None,
) -> LassoFit:
    """Cyclic coordinate descent in fixed ascending coordinate order.

    Coordinates with Q[j,j] = 0 are pinned to 0 when |c_j| <= lam*w_j and
    rejected as unbounded otherwise. Non-convergence within max_sweeps
    returns the best iterate with converged=False. The objective is
    non-increasing across sweeps by construction of the coordinate update.
    """
    if config is None:
        config = TuningConfig()
    lam_w = prob.lam_weights()
    Qs = prob.sym_gram()
    diag = np.diagonal(Qs)
    pinned = diag == 0.0
    if np.any(pinned):
        bad = np.abs(prob.c[pinned]) > lam_w[pinned]
        if np.any(bad):
            j = int(np.flatnonzero(pinned)[np.argmax(bad)])
            raise NumericalError(
                f"unbounded coordinate {j}: Q[{j},{j}]=0 with |c[{j}]| > penalty"
            )
    if warm_start is not None:
        warm_start = np.asarray(warm_start, dtype=np.float64).reshape(-1)
        if warm_start.shape[0] != prob.dim:
            raise ValidationError("warm_start length does not match problem")
    beta, _, sweeps, _, converged = _kernels.cd_solve(
        Qs, prob.c, lam_w,
        warm_start if warm_start is not None else np.zeros(prob.dim),
        config.tol, config.max_sweeps,
    )
    g_fresh = Qs @ beta - prob.c
    kkt = float(np.max(_kernels.kkt_violations(g_fresh, beta, lam_w))) if prob.dim else 0.0
    return LassoFit(
        coefficients=beta,
        objective=_objective(Qs, prob.c, lam_w, beta, g_fresh),
        kkt_residual=kkt,
        sweeps_used=sweeps,
        converged=converged,
    )


def check_kkt(prob: QuadraticLassoProblem, beta: np.ndarray) -> float:
    """Max coordinate-wise KKT violation of beta; 0 iff beta is optimal."""
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape[0] != prob.dim:
        raise ValidationError(
            f"beta has length {beta.shape[0]}, expected {prob.dim}"
        )
    g = prob.sym_gram() @ beta - prob.c
    return float(np.max(_kernels.kkt_violations(g, beta, prob.lam_weights())))
