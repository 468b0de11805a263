"""IV Lasso fit, desparsification, and the key error decomposition.

The initial estimator minimizes the penalized moment-space objective

    (Z'Y/n - M_hat b)' Theta_hat (Z'Y/n - M_hat b) + 2*lam*||b||_1,

a quadratic form that only sees the symmetric part of Theta_hat. The
desparsified estimator corrects the regularized 2SLS first term by the
regularization-bias factor applied to the initial fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lasso_core import LassoFit, QuadraticLassoProblem, solve_quadratic_lasso
from .model import (
    DegenerateIdentificationError,
    IVDataset,
    NumericalError,
    TuningConfig,
    ValidationError,
)
from .regularized_matrices import (
    CrossMomentEstimate,
    PrecisionEstimate,
    StructuralInverseEstimate,
    symmetric_psd_sqrt,
)

_EIG_CLAMP = 1e-10


@dataclass(frozen=True)
class EstimateBundle:
    """Initial and desparsified estimates with the pieces inference needs.

    correction is the p x p regularization-bias factor
    Theta_m M_hat' Theta_hat Z'X/n - I; beta_hat reproduces
    first_term - correction @ beta_tilde by construction. residuals_hat
    are Y - X beta_tilde (the initial fit defines the residuals used by
    the covariance estimators). moment_map is the p x q matrix
    Theta_m M_hat' Theta_hat shared by the estimator and the sandwich.
    """

    beta_tilde: np.ndarray
    beta_hat: np.ndarray
    first_term: np.ndarray
    correction: np.ndarray
    residuals_hat: np.ndarray
    moment_map: np.ndarray
    theta: PrecisionEstimate
    m: CrossMomentEstimate
    theta_m: StructuralInverseEstimate
    data: IVDataset


@dataclass(frozen=True)
class DecompositionDiag:
    """Simulation-only split of sqrt(n)(beta_hat - beta_true).

    delta is the bias term, noise_term the moment-noise term; the
    identity sqrt(n)(beta_hat - beta_true) = noise_term - delta holds
    algebraically, so identity_residual is floating-point noise whenever
    beta_true and U_true are the exact simulation truth.
    """

    delta: np.ndarray
    noise_term: np.ndarray
    identity_residual: float


def iv_lasso_gram(
    data: IVDataset, theta: PrecisionEstimate, m: CrossMomentEstimate
) -> tuple[np.ndarray, np.ndarray]:
    """Gram form (Q, c) of the IV Lasso objective.

    Built from the PSD-floored symmetrization of Theta_hat as
    Q = B'B, c = B'(S Z'Y/n) with B = S M_hat, which coincides with
    (M_hat' Theta_sym M_hat, M_hat' Theta_sym Z'Y/n) whenever the
    symmetric part is already PSD and keeps the solver convex otherwise.
    """
    s = symmetric_psd_sqrt(theta.theta_hat)
    b = s @ m.m_hat
    zy = data.Z.T @ data.Y / data.n
    return b.T @ b, b.T @ (s @ zy)


def fit_iv_lasso(
    data: IVDataset,
    theta: PrecisionEstimate,
    m: CrossMomentEstimate,
    lam: float,
    config: TuningConfig | None = None,
    warm_start: np.ndarray | None = None,
    return_fit: bool = False,
):
    """Solve the IV Lasso and return the coefficient vector.

    Non-convergence of the coordinate-descent solver is an error here
    (the downstream certificates assume a converged fit). With
    return_fit=True the full LassoFit is returned instead.
    """
    Q, c = iv_lasso_gram(data, theta, m)
    fit = solve_quadratic_lasso(
        QuadraticLassoProblem(Q=Q, c=c, lam=float(lam)),
        warm_start=warm_start,
        config=config,
    )
    if not fit.converged:
        raise NumericalError(
            f"IV Lasso did not converge (kkt residual {fit.kkt_residual:.3e})"
        )
    return fit if return_fit else fit.coefficients


def desparsify(
    data: IVDataset,
    beta_tilde: np.ndarray,
    theta: PrecisionEstimate,
    m: CrossMomentEstimate,
    theta_m: StructuralInverseEstimate,
) -> EstimateBundle:
    """Desparsified estimator: regularized 2SLS term minus bias correction.

    beta_hat = Theta_m M_hat' Theta_hat Z'Y/n
               - (Theta_m M_hat' Theta_hat Z'X/n - I) beta_tilde
    """
    beta_tilde = np.asarray(beta_tilde, dtype=np.float64).reshape(-1)
    p = data.p
    if beta_tilde.shape[0] != p:
        raise ValidationError(
            f"beta_tilde has length {beta_tilde.shape[0]}, expected p={p}"
        )
    if theta.q != data.q or m.m_hat.shape != (data.q, p) or theta_m.p != p:
        raise ValidationError("matrix estimates do not match the dataset dimensions")
    moment_map = theta_m.theta_m_hat @ (m.m_hat.T @ theta.theta_hat)
    zy = data.Z.T @ data.Y / data.n
    zx = data.Z.T @ data.X / data.n
    first_term = moment_map @ zy
    correction = moment_map @ zx - np.eye(p)
    beta_hat = first_term - correction @ beta_tilde
    residuals = data.Y - data.X @ beta_tilde
    return EstimateBundle(
        beta_tilde=beta_tilde,
        beta_hat=beta_hat,
        first_term=first_term,
        correction=correction,
        residuals_hat=residuals,
        moment_map=moment_map,
        theta=theta,
        m=m,
        theta_m=theta_m,
        data=data,
    )


def decompose(
    bundle: EstimateBundle, beta_true: np.ndarray, U_true: np.ndarray
) -> DecompositionDiag:
    """Split the scaled estimation error into bias and noise terms.

    delta = sqrt(n) * correction @ (beta_tilde - beta_true);
    noise_term = moment_map @ Z'U / sqrt(n).
    """
    beta_true = np.asarray(beta_true, dtype=np.float64).reshape(-1)
    U_true = np.asarray(U_true, dtype=np.float64).reshape(-1)
    n = bundle.data.n
    if beta_true.shape[0] != bundle.data.p:
        raise ValidationError("beta_true length does not match p")
    if U_true.shape[0] != n:
        raise ValidationError("U_true length does not match n")
    root_n = np.sqrt(n)
    delta = root_n * (bundle.correction @ (bundle.beta_tilde - beta_true))
    noise = bundle.moment_map @ (bundle.data.Z.T @ U_true) / root_n
    resid = root_n * (bundle.beta_hat - beta_true) - noise + delta
    return DecompositionDiag(
        delta=delta,
        noise_term=noise,
        identity_residual=float(np.max(np.abs(resid))),
    )


def _inverse_min_eigenvalue(gram: np.ndarray, what: str) -> float:
    gram = 0.5 * (gram + gram.T)
    try:
        lam_min = float(np.linalg.eigvalsh(gram)[0])
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed on {what}: {exc}") from exc
    if lam_min <= _EIG_CLAMP:
        raise DegenerateIdentificationError(
            f"minimal eigenvalue of {what} is {lam_min:.3e}; identification lost"
        )
    return 1.0 / lam_min


def omega2_hat(theta: PrecisionEstimate, m: CrossMomentEstimate) -> float:
    """Identification-strength diagnostic 1/lambda_min(M_hat' Theta_sym M_hat)."""
    theta_sym = 0.5 * (theta.theta_hat + theta.theta_hat.T)
    return _inverse_min_eigenvalue(
        m.m_hat.T @ theta_sym @ m.m_hat, "M_hat' Theta_hat M_hat"
    )


def omega2_population(M: np.ndarray, Sigma: np.ndarray) -> float:
    """Population variant 1/lambda_min(M' Sigma^-1 M) from exact (M, Sigma)."""
    M = np.asarray(M, dtype=np.float64)
    Sigma = np.asarray(Sigma, dtype=np.float64)
    return _inverse_min_eigenvalue(M.T @ np.linalg.solve(Sigma, M), "M' Sigma^-1 M")
