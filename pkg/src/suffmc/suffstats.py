"""Datasets and one-pass sufficient-statistic builders.

Statistics are built eagerly, once, and are immutable afterwards (the moral
equivalent of a transformed-data block): after that, evaluating a suffstat
log-likelihood costs nothing that scales with n, except the Poisson model's
irreducible sum of exponentials.

CSV schema: header row; response column ``y``; predictors ``x1..xp``;
optional ``group`` column of 1-based integers. Multivariate factor data use
columns ``y1..yp`` and no ``y``.
"""

import csv
from dataclasses import dataclass, field
import warnings

import numpy as np

from .errors import BadGroupIndex, EmptyData, NegativeCount

__all__ = [
    "Dataset",
    "RegressionStats",
    "MixedStats",
    "FactorStats",
    "PoissonStats",
    "build_regression_stats",
    "build_mixed_stats",
    "build_factor_stats",
    "build_poisson_stats",
    "read_dataset_csv",
    "write_dataset_csv",
    "read_factor_csv",
    "write_factor_csv",
]


@dataclass(frozen=True)
class Dataset:
    """Response vector, design matrix and optional 1-based group labels."""

    y: np.ndarray
    X: np.ndarray
    group: np.ndarray | None = None
    n_groups: int | None = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-d")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("y length must equal the X row count")
        if y.shape[0] == 0:
            raise EmptyData("dataset has no observations")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if self.group is not None:
            g = np.ascontiguousarray(self.group, dtype=np.int64)
            if g.shape != y.shape:
                raise ValueError("group length must equal y length")
            nj = int(self.n_groups) if self.n_groups is not None else int(g.max())
            if g.min() < 1 or g.max() > nj:
                raise BadGroupIndex(f"group labels must lie in 1..{nj}")
            counts = np.bincount(g - 1, minlength=nj)
            if (counts == 0).any():
                empty = np.flatnonzero(counts == 0) + 1
                warnings.warn(f"empty groups {empty.tolist()}; their sums are zero rows")
            object.__setattr__(self, "group", g)
            object.__setattr__(self, "n_groups", nj)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class RegressionStats:
    """Syy = y'y, Syx = y'X, Sxx = X'X."""

    n: int
    Syy: float
    Syx: np.ndarray
    Sxx: np.ndarray


@dataclass(frozen=True)
class MixedStats:
    """Regression statistics plus per-group counts and sums."""

    n: int
    Syy: float
    Syx: np.ndarray
    Sxx: np.ndarray
    n_groups: int
    u_count: np.ndarray
    u_sumY: np.ndarray
    u_sumX: np.ndarray


@dataclass(frozen=True)
class FactorStats:
    """Sbar = Y'Y / n; the factor likelihood multiplies by n itself."""

    n: int
    p: int
    Sbar: np.ndarray


@dataclass(frozen=True)
class PoissonStats:
    """Partial statistics: Syx = X'y, with X retained for the exp-sum term."""

    n: int
    Syx: np.ndarray
    X: np.ndarray
    y: np.ndarray = field(repr=False, default=None)


def build_regression_stats(d: Dataset) -> RegressionStats:
    """One O(n p^2) pass producing the Gaussian regression statistics."""
    return RegressionStats(
        n=d.n,
        Syy=float(d.y @ d.y),
        Syx=d.y @ d.X,
        Sxx=d.X.T @ d.X,
    )


def build_mixed_stats(d: Dataset) -> MixedStats:
    """Regression statistics plus the per-group aggregates of the mixed model."""
    if d.group is None:
        raise BadGroupIndex("mixed statistics need a group vector")
    nj = d.n_groups
    g0 = d.group - 1
    u_count = np.bincount(g0, minlength=nj).astype(np.float64)
    u_sumY = np.bincount(g0, weights=d.y, minlength=nj)
    u_sumX = np.zeros((nj, d.p))
    np.add.at(u_sumX, g0, d.X)
    reg = build_regression_stats(d)
    return MixedStats(
        n=d.n, Syy=reg.Syy, Syx=reg.Syx, Sxx=reg.Sxx,
        n_groups=nj, u_count=u_count, u_sumY=u_sumY, u_sumX=u_sumX,
    )


def build_factor_stats(Y) -> FactorStats:
    """Sbar = Y'Y / n for an n x p data matrix."""
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise EmptyData("factor data must be a nonempty n x p matrix")
    n = Y.shape[0]
    return FactorStats(n=n, p=Y.shape[1], Sbar=(Y.T @ Y) / n)


def build_poisson_stats(d: Dataset) -> PoissonStats:
    """Partial statistics for the Poisson GLM.

    The design matrix is kept because sum_i exp(x_i'b) cannot be precomputed.
    """
    if (d.y < 0).any():
        raise NegativeCount("count responses must be nonnegative")
    if np.abs(d.y - np.round(d.y)).max() > 1e-9:
        raise NegativeCount("count responses must be integers")
    return PoissonStats(n=d.n, Syx=d.X.T @ d.y, X=d.X, y=d.y)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def write_dataset_csv(path, d: Dataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["y"] + [f"x{j + 1}" for j in range(d.p)]
        if d.group is not None:
            header.append("group")
        w.writerow(header)
        for i in range(d.n):
            row = [repr(float(d.y[i]))] + [repr(float(v)) for v in d.X[i]]
            if d.group is not None:
                row.append(str(int(d.group[i])))
            w.writerow(row)


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None:
            raise EmptyData(f"{path} is empty")
        rows = list(r)
    if not rows:
        raise EmptyData(f"{path} has a header but no rows")
    cols = {name: i for i, name in enumerate(header)}
    if "y" not in cols:
        raise ValueError(f"{path} has no 'y' column; factor data uses read_factor_csv")
    xnames = []
    j = 1
    while f"x{j}" in cols:
        xnames.append(f"x{j}")
        j += 1
    if not xnames:
        raise ValueError(f"{path} has no x1..xp columns")
    data = np.array([[float(row[cols[c]]) for c in ["y"] + xnames] for row in rows])
    group = None
    if "group" in cols:
        group = np.array([int(row[cols["group"]]) for row in rows], dtype=np.int64)
    return Dataset(y=data[:, 0], X=data[:, 1:], group=group)


def write_factor_csv(path, Y):
    Y = np.asarray(Y, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{j + 1}" for j in range(Y.shape[1])])
        for row in Y:
            w.writerow([repr(float(v)) for v in row])


def read_factor_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None:
            raise EmptyData(f"{path} is empty")
        rows = list(r)
    if not rows:
        raise EmptyData(f"{path} has a header but no rows")
    names = [f"y{j + 1}" for j in range(len(header))]
    if header != names:
        raise ValueError(f"{path}: factor data needs columns y1..yp, got {header}")
    return np.array([[float(v) for v in row] for row in rows])
