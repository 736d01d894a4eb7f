"""Observed data and its first two sample moments."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import SmmError, NON_FINITE_VALUES, TOO_FEW_ROWS, DIMENSION_MISMATCH

# All sample covariances in this package divide by n - 1.
COV_DENOMINATOR = "n-1"


@dataclass(frozen=True)
class Dataset:
    """An n x p matrix of observations with column names."""

    values: np.ndarray
    variable_names: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise SmmError(DIMENSION_MISMATCH, "data must be a 2-d array")
        if values.shape[0] < 1:
            raise SmmError(TOO_FEW_ROWS, "data must contain at least one row")
        if not np.all(np.isfinite(values)):
            bad = int(np.argwhere(~np.isfinite(values))[0][0])
            raise SmmError(NON_FINITE_VALUES, f"non-finite value in data row {bad + 1}")
        names = tuple(self.variable_names)
        if len(names) != values.shape[1]:
            raise SmmError(
                DIMENSION_MISMATCH,
                f"{len(names)} column names for {values.shape[1]} columns",
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variable_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SampleMoments:
    """Sample mean vector and covariance matrix with their sample size.

    ``denominator`` records the covariance convention so serialized moments
    are self-describing; this package always writes "n-1".
    """

    n: int
    mean: np.ndarray
    cov: np.ndarray
    denominator: str = COV_DENOMINATOR

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise SmmError(DIMENSION_MISMATCH, "covariance shape does not match mean length")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def p(self) -> int:
        return self.mean.shape[0]


def compute_moments(data: Dataset) -> SampleMoments:
    """Sample mean and covariance (denominator n - 1).

    The covariance is computed from the lower triangle of the centered
    crossproduct and mirrored, so the result is exactly symmetric rather
    than symmetric up to rounding. A zero-variance column is legal input
    (the moments exist) but poisons any downstream fit, so it warns here.
    """
    if data.n < 2:
        raise SmmError(TOO_FEW_ROWS, f"need at least 2 rows for a covariance, got {data.n}")
    mean = data.values.mean(axis=0)
    centered = data.values - mean
    cross = centered.T @ centered / (data.n - 1)
    lower = np.tril(cross)
    cov = lower + np.tril(cross, -1).T
    for j in range(data.p):
        if cov[j, j] == 0.0:
            warnings.warn(
                f"column {data.variable_names[j]} has zero sample variance",
                stacklevel=2,
            )
    return SampleMoments(n=data.n, mean=mean, cov=cov)
