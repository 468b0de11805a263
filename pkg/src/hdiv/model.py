"""Core observed-data and configuration types shared by the estimation modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HdivError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HdivError):
    """Malformed input: shape mismatch, non-finite entry, bad configuration."""


class NumericalError(HdivError):
    """Numerical failure: degenerate fit, singular matrix, non-convergence."""


class DegenerateIdentificationError(NumericalError):
    """Minimal eigenvalue of the identification Gram is not positive."""


def _as_float_matrix(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-d array, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class IVDataset:
    """Observed sample for the instrumental-variable model.

    Y is the outcome (length n), X the n x p matrix of endogenous and
    exogenous covariates, Z the n x q matrix of instruments and exogenous
    covariates. Exogenous covariates shared between X and Z appear as
    duplicated columns. Treated as immutable after validation.
    """

    Y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "X", _as_float_matrix(self.X, "X"))
        object.__setattr__(self, "Z", _as_float_matrix(self.Z, "Z"))

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]


def _first_nonfinite(arr):
    bad = ~np.isfinite(arr)
    if not bad.any():
        return None
    idx = np.argwhere(bad)[0]
    return tuple(int(i) for i in idx)


def validate_dataset(data: IVDataset) -> IVDataset:
    """Check the dataset invariants and return the dataset unchanged.

    Raises ValidationError on row-count mismatch, under-identification
    (q < p), too few rows, or non-finite entries (reported with their
    row/column location). Idempotent: a validated dataset validates again
    to the identical value.
    """
    n = data.Y.shape[0]
    if data.X.shape[0] != n:
        raise ValidationError(
            f"row count mismatch: Y has {n} rows, X has {data.X.shape[0]}"
        )
    if data.Z.shape[0] != n:
        raise ValidationError(
            f"row count mismatch: Y has {n} rows, Z has {data.Z.shape[0]}"
        )
    if n < 2:
        raise ValidationError(f"need at least 2 observations, got n={n}")
    if data.p < 1:
        raise ValidationError("X must have at least one column")
    if data.q < data.p:
        raise ValidationError(
            f"under-identified: q < p (q={data.q} instruments, p={data.p} covariates)"
        )
    loc = _first_nonfinite(data.Y)
    if loc is not None:
        raise ValidationError(f"non-finite entry in Y at row {loc[0]}")
    for name, arr in (("X", data.X), ("Z", data.Z)):
        loc = _first_nonfinite(arr)
        if loc is not None:
            raise ValidationError(
                f"non-finite entry in {name} at row {loc[0]}, column {loc[1]}"
            )
    return data


@dataclass(frozen=True)
class TuningConfig:
    """Penalty levels and solver controls.

    lam is the IV Lasso penalty, lam_node the shared nodewise penalty for
    the instrument precision matrix, lam_node_m the shared penalty for the
    structural inverse, c0 the cross-moment thresholding constant. The
    Lasso objective carries the factor-2 penalty convention 2*lam*||b||_1
    throughout. c0 defaults to 0.5 (user-facing tuning, not dictated by
    theory). tol = 1e-8 and max_sweeps = 10000 keep the KKT certificates
    far below the lam/tau^2 bounds they are checked against.
    """

    lam: float = 0.0
    lam_node: float = 0.0
    lam_node_m: float = 0.0
    c0: float = 0.5
    max_sweeps: int = 10000
    tol: float = 1e-8

    def __post_init__(self):
        for name in ("lam", "lam_node", "lam_node_m", "c0"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be a finite nonnegative real, got {v}")
        if self.max_sweeps < 1:
            raise ValidationError(f"max_sweeps must be positive, got {self.max_sweeps}")
        if not (self.tol > 0):
            raise ValidationError(f"tol must be positive, got {self.tol}")
