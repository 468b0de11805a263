"""K-fold cross-validation for the three penalty levels.

Matrices are refit on the training rows of every fold (honest CV; a
fit-once variant is available through refit_per_fold=False on the IV
Lasso tuner). The IV Lasso held-out loss evaluates the moment objective
on held-out moment vectors against training-fitted matrices: the loss
validates exactly what the estimator minimizes. A single shared penalty
is chosen per nodewise family, summing the held-out prediction error
over all node regressions. Ties within 1e-12 resolve to the larger
penalty (sparser model).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .lasso_core import QuadraticLassoProblem, solve_quadratic_lasso
from .model import IVDataset, TuningConfig, ValidationError
from .regularized_matrices import (
    estimate_precision_nodewise,
    threshold_cross_moment,
)

_TIE_TOL = 1e-12
_GRID_POINTS = 30
_GRID_SPAN = 1000.0
# Per-solve sweep budget for CV path evaluations. Candidates at the
# bottom of the grid sit on singular training Grams where full
# convergence costs thousands of sweeps yet never wins the loss
# comparison; the cap is deterministic and leaves competitive candidates
# (which converge in far fewer sweeps) untouched.
CV_MAX_SWEEPS = 300


@dataclass(frozen=True)
class CVConfig:
    """Fold count, candidate grid (auto-built when None), and shuffle seed."""

    folds: int = 10
    grid: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValidationError(f"folds must be >= 2, got {self.folds}")
        if self.grid is not None:
            grid = np.asarray(self.grid, dtype=np.float64).reshape(-1)
            if grid.size == 0 or np.any(grid <= 0) or np.any(~np.isfinite(grid)):
                raise ValidationError("grid must be strictly positive and finite")
            if np.any(np.diff(grid) < 0):
                raise ValidationError("grid must be sorted ascending")
            object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class CVResult:
    """chosen_lambda attains the minimum of cv_curve (ties to the larger
    penalty); fold_curves, when present, holds the per-fold loss rows
    behind cv_curve so callers can apply dispersion-aware selection
    rules."""

    chosen_lambda: float
    cv_curve: np.ndarray
    fold_assignment: np.ndarray
    grid: np.ndarray
    fold_curves: np.ndarray | None = None


def one_se_lambda(result: CVResult) -> float:
    """Largest penalty whose mean CV loss is within one standard error of
    the minimum (the classical conservative CV choice). Requires
    fold_curves."""
    if result.fold_curves is None:
        raise ValidationError("one_se_lambda needs a CVResult with fold_curves")
    folds = result.fold_curves.shape[0]
    i_min = int(np.argmin(result.cv_curve))
    se = float(np.std(result.fold_curves[:, i_min], ddof=1) / np.sqrt(folds))
    cutoff = result.cv_curve[i_min] + se
    return float(np.max(result.grid[result.cv_curve <= cutoff]))


def default_grid(lam_max: float) -> np.ndarray:
    """30 log-spaced candidates spanning [lam_max/1000, lam_max]."""
    if not np.isfinite(lam_max) or lam_max <= 0:
        raise ValidationError(f"lam_max must be positive, got {lam_max}")
    return np.geomspace(lam_max / _GRID_SPAN, lam_max, _GRID_POINTS)


def fold_partition(n: int, folds: int, seed: int) -> np.ndarray:
    """Shuffled round-robin fold labels: every row lands in exactly one fold."""
    if folds > n:
        raise ValidationError(f"folds={folds} exceeds the number of rows n={n}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    assignment[rng.permutation(n)] = np.arange(n) % folds
    return assignment


def _pick(grid, curve):
    # minimal mean loss; ties within 1e-12 go to the larger penalty
    best = np.min(curve)
    return float(np.max(grid[curve <= best + _TIE_TOL]))


def _lasso_path(gram, c, grid, config):
    """Solve the Gram-form Lasso along the descending penalty path.

    The Gram is validated and symmetrized once; solves are warm-started
    from the previous (larger) penalty and capped at CV_MAX_SWEEPS.
    """
    from . import _kernels

    config = replace(config, max_sweeps=min(config.max_sweeps, CV_MAX_SWEEPS))
    prob = QuadraticLassoProblem(Q=gram, c=c, lam=float(grid[-1]))
    Qs = prob.sym_gram()
    fits = {}
    warm = np.zeros(prob.dim)
    for lam in grid[::-1]:
        lam_w = np.full(prob.dim, float(lam))
        warm, _, _, _, _ = _kernels.cd_solve(
            Qs, prob.c, lam_w, warm, config.tol, config.max_sweeps
        )
        fits[float(lam)] = warm
    return fits


def cv_nodewise_lambda(
    Z_or_B: np.ndarray,
    config: CVConfig,
    scale_rows: bool = True,
    solver_config: TuningConfig | None = None,
) -> CVResult:
    """Shared nodewise penalty by K-fold CV over the matrix rows.

    For each fold and candidate, every column is Lasso-regressed on the
    others using training rows only; the held-out squared prediction
    error, normalized per held-out row and summed over nodes, is averaged
    over folds. scale_rows=True uses the /n Gram convention of the
    instrument nodewise problem; scale_rows=False matches the structural
    problem where the design already carries its scale.
    """
    A = np.asarray(Z_or_B, dtype=np.float64)
    n, d = A.shape
    if d < 2:
        raise ValidationError(f"need at least 2 columns, got {d}")
    if solver_config is None:
        solver_config = TuningConfig()
    assignment = fold_partition(n, config.folds, config.seed)
    if config.grid is None:
        gram_full = A.T @ A / (n if scale_rows else 1.0)
        off = gram_full - np.diag(np.diagonal(gram_full))
        grid = default_grid(float(np.max(np.abs(off))))
    else:
        grid = config.grid
    curve = np.zeros(grid.size)
    idx = np.arange(d)
    for k in range(config.folds):
        test = assignment == k
        if not test.any():
            raise ValidationError(f"fold {k} has no held-out rows")
        A_tr, A_te = A[~test], A[test]
        scale = A_tr.shape[0] if scale_rows else 1.0
        gram = A_tr.T @ A_tr / scale
        n_te = A_te.shape[0]
        for j in range(d):
            keep = idx != j
            sub = np.ascontiguousarray(gram[np.ix_(keep, keep)])
            c = gram[keep, j].copy()
            fits = _lasso_path(sub, c, grid, solver_config)
            for gi, lam in enumerate(grid):
                resid = A_te[:, j] - A_te[:, keep] @ fits[float(lam)]
                curve[gi] += float(resid @ resid) / n_te
    curve /= config.folds
    return CVResult(
        chosen_lambda=_pick(grid, curve),
        cv_curve=curve,
        fold_assignment=assignment,
        grid=grid,
    )


def _iv_loss_pieces(data, rows, lam_node, c0, solver_config):
    sub_z = data.Z[rows]
    sub_x = data.X[rows]
    theta = estimate_precision_nodewise(sub_z, lam_node, solver_config)
    m = threshold_cross_moment(sub_z, sub_x, c0)
    return theta, m


def cv_iv_lasso_lambda(
    data: IVDataset,
    config: CVConfig,
    tuning: TuningConfig,
    refit_per_fold: bool = True,
) -> CVResult:
    """IV Lasso penalty by K-fold CV on the moment-space objective.

    Per fold, the precision and cross-moment estimates are built on the
    training rows (at tuning.lam_node and tuning.c0) and the held-out
    loss is (Z_te'Y_te/n_te - M_tr b)' Theta_tr (Z_te'Y_te/n_te - M_tr b).
    refit_per_fold=False reuses full-sample matrices across folds (cheap
    variant; the default is the honest refit).
    """
    from .estimator import iv_lasso_gram  # local import avoids a cycle

    n = data.n
    assignment = fold_partition(n, config.folds, config.seed)
    theta_full = m_full = None
    if config.grid is None or not refit_per_fold:
        theta_full, m_full = _iv_loss_pieces(
            data, np.ones(n, dtype=bool), tuning.lam_node, tuning.c0, tuning
        )
    if config.grid is None:
        _, c_full = iv_lasso_gram(data, theta_full, m_full)
        grid = default_grid(float(np.max(np.abs(c_full))))
    else:
        grid = config.grid
    fold_curves = np.zeros((config.folds, grid.size))
    for k in range(config.folds):
        test = assignment == k
        if not test.any():
            raise ValidationError(f"fold {k} has no held-out rows")
        train = ~test
        if refit_per_fold:
            theta, m = _iv_loss_pieces(
                data, train, tuning.lam_node, tuning.c0, tuning
            )
        else:
            theta, m = theta_full, m_full
        train_data = IVDataset(Y=data.Y[train], X=data.X[train], Z=data.Z[train])
        gram, c = iv_lasso_gram(train_data, theta, m)
        fits = _lasso_path(gram, c, grid, tuning)
        zy_te = data.Z[test].T @ data.Y[test] / int(test.sum())
        theta_sym = 0.5 * (theta.theta_hat + theta.theta_hat.T)
        for gi, lam in enumerate(grid):
            r = zy_te - m.m_hat @ fits[float(lam)]
            fold_curves[k, gi] = float(r @ theta_sym @ r)
    curve = fold_curves.mean(axis=0)
    return CVResult(
        chosen_lambda=_pick(grid, curve),
        cv_curve=curve,
        fold_assignment=assignment,
        grid=grid,
        fold_curves=fold_curves,
    )
