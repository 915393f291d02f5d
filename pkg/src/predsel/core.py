"""Shared domain types: datasets, submodel indicators, posterior draws and
predictive mixtures.

All containers are immutable after construction; arrays are copied and
flagged read-only so they can be shared between workers.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ConstantColumn, DimensionMismatch, InfiniteVariance

LOG_2PI = float(np.log(2.0 * np.pi))


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Predictor matrix ``X`` (n x p), response ``y`` and standardization record.

    ``column_means``/``column_sds`` hold the moments that were removed from
    the raw predictors (zeros/ones when the data were never standardized).
    """

    X: np.ndarray
    y: np.ndarray
    column_means: Optional[np.ndarray] = None
    column_sds: Optional[np.ndarray] = None
    standardized: bool = False
    names: Optional[tuple] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(len(y), 0)
        if X.ndim != 2:
            raise DimensionMismatch("X must be a 2-d array")
        n, p = X.shape
        if n < 1:
            raise ValueError("a dataset needs at least one observation")
        if y.shape[0] != n:
            raise DimensionMismatch(f"X has {n} rows but y has {y.shape[0]} entries")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("X and y must be finite")
        means = np.zeros(p) if self.column_means is None else np.asarray(self.column_means, float)
        sds = np.ones(p) if self.column_sds is None else np.asarray(self.column_sds, float)
        if means.shape != (p,) or sds.shape != (p,):
            raise DimensionMismatch("standardization metadata must have length p")
        if self.standardized and p > 0:
            if n < 2:
                raise ValueError("standardized data need n >= 2")
            if np.max(np.abs(X.mean(axis=0))) > 1e-10 or np.max(np.abs(X.std(axis=0, ddof=1) - 1.0)) > 1e-10:
                raise ValueError("dataset flagged standardized but columns are not mean 0 / sd 1")
        names = tuple(self.names) if self.names is not None else tuple(f"x{j}" for j in range(1, p + 1))
        if len(names) != p:
            raise DimensionMismatch("need one name per predictor column")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "column_means", _frozen(means))
        object.__setattr__(self, "column_sds", _frozen(sds))
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def design(self, subset: Optional["SubmodelIndicator"] = None) -> np.ndarray:
        """Design matrix with a leading column of ones, restricted to ``subset``."""
        full = np.hstack([np.ones((self.n, 1)), self.X])
        if subset is None:
            return full
        return full[:, subset.columns]

    def take(self, rows) -> "Dataset":
        """Row subset that keeps the standardization record."""
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], self.column_means, self.column_sds,
                       standardized=False, names=self.names)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.standardized == other.standardized and self.names == other.names
                and np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)
                and np.array_equal(self.column_means, other.column_means)
                and np.array_equal(self.column_sds, other.column_sds))

    __hash__ = None


def standardize(dataset: Dataset) -> Dataset:
    """Center and scale every predictor column to mean 0, sd 1 (divisor n-1).

    Already-standardized input is returned unchanged.
    """
    if dataset.standardized:
        return dataset
    X = dataset.X
    if dataset.p == 0:
        return Dataset(X, dataset.y, standardized=True, names=dataset.names)
    mu = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1) if dataset.n > 1 else np.zeros(dataset.p)
    for j in range(dataset.p):
        if not sd[j] > 0 or not np.isfinite(sd[j]):
            raise ConstantColumn(j + 1)
    Z = (X - mu) / sd
    # re-center/re-scale once more to push round-off below 1e-10 for
    # badly scaled raw columns
    Z = Z - Z.mean(axis=0)
    Z = Z / Z.std(axis=0, ddof=1)
    return Dataset(Z, dataset.y, mu, sd, standardized=True, names=dataset.names)


def apply_standardization(dataset: Dataset, reference: Dataset) -> Dataset:
    """Transform ``dataset`` with the moments recorded on ``reference``.

    Used to put test data on the scale of the training data; the result is
    not flagged standardized since its own moments are not 0/1.
    """
    if dataset.p != reference.p:
        raise DimensionMismatch("datasets have different numbers of predictors")
    X = (dataset.X - reference.column_means) / reference.column_sds
    return Dataset(X, dataset.y, reference.column_means, reference.column_sds,
                   standardized=False, names=dataset.names)


def read_csv(path: Union[str, Path], standardize_data: bool = True) -> Dataset:
    """Read the dataset CSV format: header row, response column ``y``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "y" not in header:
        raise ValueError(f"{path}: no response column named 'y'")
    iy = header.index("y")
    cols = [j for j in range(len(header)) if j != iy]
    body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if body.size == 0:
        raise ValueError(f"{path}: no data rows")
    ds = Dataset(body[:, cols], body[:, iy], names=tuple(header[j] for j in cols))
    return standardize(ds) if standardize_data else ds


def write_csv(dataset: Dataset, path: Union[str, Path]) -> None:
    """Write predictors and ``y`` (raw scale if the dataset was standardized)."""
    X = dataset.X * dataset.column_sds + dataset.column_means if dataset.standardized else dataset.X
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(dataset.names) + ["y"])
        for xi, yi in zip(X, dataset.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


# ---------------------------------------------------------------------------
# Submodel indicators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubmodelIndicator:
    """Inclusion vector over ``(intercept, x1, ..., xp)``; ``gamma[0]`` is always 1."""

    gamma: tuple

    def __post_init__(self):
        g = tuple(int(v) for v in self.gamma)
        if len(g) < 1 or g[0] != 1:
            raise ValueError("gamma[0] (intercept) must be 1")
        if any(v not in (0, 1) for v in g):
            raise ValueError("gamma entries must be 0 or 1")
        object.__setattr__(self, "gamma", g)

    @classmethod
    def from_variables(cls, p: int, variables: Iterable[int]) -> "SubmodelIndicator":
        """Build from 1-based variable indices."""
        g = [1] + [0] * p
        for j in variables:
            if not 1 <= j <= p:
                raise ValueError(f"variable index {j} outside 1..{p}")
            g[j] = 1
        return cls(tuple(g))

    @classmethod
    def empty(cls, p: int) -> "SubmodelIndicator":
        return cls((1,) + (0,) * p)

    @classmethod
    def full(cls, p: int) -> "SubmodelIndicator":
        return cls((1,) * (p + 1))

    @classmethod
    def from_bitstring(cls, bits: str) -> "SubmodelIndicator":
        return cls(tuple(int(c) for c in bits))

    @classmethod
    def from_mask(cls, p: int, mask: int) -> "SubmodelIndicator":
        """Variable j (1-based) is included when bit j-1 of ``mask`` is set."""
        return cls((1,) + tuple((mask >> (j - 1)) & 1 for j in range(1, p + 1)))

    @property
    def p(self) -> int:
        return len(self.gamma) - 1

    @property
    def size(self) -> int:
        return sum(self.gamma) - 1

    @property
    def variables(self) -> tuple:
        return tuple(j for j in range(1, len(self.gamma)) if self.gamma[j])

    @property
    def columns(self) -> np.ndarray:
        """Design-matrix columns (0 = intercept)."""
        return np.flatnonzero(np.array(self.gamma))

    @property
    def mask(self) -> int:
        m = 0
        for j in self.variables:
            m |= 1 << (j - 1)
        return m

    @property
    def bitstring(self) -> str:
        return "".join(str(v) for v in self.gamma)

    def with_variable(self, j: int) -> "SubmodelIndicator":
        g = list(self.gamma)
        g[j] = 1
        return SubmodelIndicator(tuple(g))

    def __str__(self):
        return "{" + ", ".join(str(j) for j in self.variables) + "}"


# ---------------------------------------------------------------------------
# Posterior draws
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """S posterior draws of ``(w, sigma2)`` for one variable subset.

    ``w`` has shape (S, size + 1) with the intercept in column 0.
    """

    subset: SubmodelIndicator
    w: np.ndarray
    sigma2: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        s2 = np.asarray(self.sigma2, dtype=float).ravel()
        if w.shape[0] < 1 or s2.shape[0] != w.shape[0]:
            raise ValueError("need at least one draw and one sigma2 per draw")
        if w.shape[1] != self.subset.size + 1:
            raise DimensionMismatch(f"weight draws have {w.shape[1]} entries, subset needs {self.subset.size + 1}")
        if not np.all(s2 > 0):
            raise ValueError("sigma2 draws must be positive")
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "sigma2", _frozen(s2))

    def __len__(self):
        return self.w.shape[0]

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.subset.bitstring.encode())
        h.update(np.ascontiguousarray(self.w).tobytes())
        h.update(np.ascontiguousarray(self.sigma2).tobytes())
        return h.hexdigest()[:16]

    def log_lik(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Pointwise Gaussian log densities, shape (S, n). ``X`` is the subset design."""
        mu = self.w @ X.T
        s2 = self.sigma2[:, None]
        return -0.5 * (LOG_2PI + np.log(s2) + (y[None, :] - mu) ** 2 / s2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["sigma2"] + [f"w{j}" for j in self.subset.columns])
            for s2, w in zip(self.sigma2, self.w):
                wr.writerow([repr(float(s2))] + [repr(float(v)) for v in w])

    @classmethod
    def from_csv(cls, path, subset: Optional[SubmodelIndicator] = None, p: Optional[int] = None) -> "PosteriorDraws":
        """Import externally produced draws: one row per draw, sigma2 first.

        A header row is optional. Without ``subset`` the draws are taken to
        cover the full model with ``p`` inferred from the column count.
        """
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
        arr = np.array([[float(v) for v in r] for r in rows], dtype=float)
        if subset is None:
            p = arr.shape[1] - 2 if p is None else p
            subset = SubmodelIndicator.full(p)
        return cls(subset, arr[:, 1:], arr[:, 0])


# ---------------------------------------------------------------------------
# Predictive mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PredictiveMixture:
    """Finite mixture of Gaussian / Student-t densities on the real line.

    A component with ``dof = inf`` is Gaussian.
    """

    log_weights: np.ndarray
    loc: np.ndarray
    scale: np.ndarray
    dof: np.ndarray = field(default=None)

    def __post_init__(self):
        lw = np.atleast_1d(np.asarray(self.log_weights, float))
        loc = np.atleast_1d(np.asarray(self.loc, float))
        scale = np.atleast_1d(np.asarray(self.scale, float))
        dof = np.full(lw.shape, np.inf) if self.dof is None else np.atleast_1d(np.asarray(self.dof, float))
        if not (lw.shape == loc.shape == scale.shape == dof.shape) or lw.ndim != 1 or lw.size == 0:
            raise DimensionMismatch("mixture component arrays must share one length >= 1")
        if not np.all(scale > 0) or not np.all(dof > 0):
            raise ValueError("scales and degrees of freedom must be positive")
        if abs(logsumexp(lw)) > 1e-8:
            raise ValueError("mixture log weights do not normalize")
        for name, arr in (("log_weights", lw), ("loc", loc), ("scale", scale), ("dof", dof)):
            object.__setattr__(self, name, _frozen(arr))

    @classmethod
    def gaussian(cls, loc: float, scale: float) -> "PredictiveMixture":
        return cls(np.zeros(1), [loc], [scale])

    @classmethod
    def combine(cls, mixtures: Sequence["PredictiveMixture"], log_probs) -> "PredictiveMixture":
        """Probability-weighted mixture of mixtures."""
        log_probs = np.asarray(log_probs, float)
        log_probs = log_probs - logsumexp(log_probs)
        return cls(np.concatenate([m.log_weights + lp for m, lp in zip(mixtures, log_probs)]),
                   np.concatenate([m.loc for m in mixtures]),
                   np.concatenate([m.scale for m in mixtures]),
                   np.concatenate([m.dof for m in mixtures]))

    @property
    def family(self) -> tuple:
        return tuple("gaussian" if np.isinf(d) else "student_t" for d in self.dof)

    def __len__(self):
        return self.loc.size

    def logpdf(self, y) -> np.ndarray:
        """Vectorized log density at the points ``y``."""
        y = np.asarray(y, float)
        comp = component_logpdf(y[..., None], self.loc, self.scale, self.dof)
        return logsumexp(comp + self.log_weights, axis=-1)

    def mean_var(self) -> tuple:
        """Exact mixture mean and variance (law of total variance)."""
        if np.any(self.dof <= 2):
            raise InfiniteVariance("a Student-t component has dof <= 2")
        w = np.exp(self.log_weights)
        cv = np.where(np.isinf(self.dof), 1.0, self.dof / np.where(np.isinf(self.dof), 1.0, self.dof - 2.0))
        comp_var = self.scale ** 2 * cv
        mean = float(np.sum(w * self.loc))
        var = float(np.sum(w * (comp_var + (self.loc - mean) ** 2)))
        return mean, var


def component_logpdf(y, loc, scale, dof) -> np.ndarray:
    """Elementwise Gaussian (dof = inf) or Student-t log density, broadcasting."""
    z = (np.asarray(y, float) - loc) / scale
    dof = np.broadcast_to(np.asarray(dof, float), np.broadcast(z, dof).shape)
    z = np.broadcast_to(z, dof.shape)
    scale = np.broadcast_to(scale, dof.shape)
    out = np.empty(dof.shape)
    g = np.isinf(dof)
    out[g] = -0.5 * (LOG_2PI + z[g] ** 2) - np.log(scale[g])
    t = ~g
    if np.any(t):
        nu = dof[t]
        out[t] = (gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi)
                  - np.log(scale[t]) - 0.5 * (nu + 1) * np.log1p(z[t] ** 2 / nu))
    return out


def mixture_log_density(m: PredictiveMixture, y: float) -> float:
    """Log density of mixture ``m`` at scalar ``y``."""
    return float(m.logpdf(np.asarray(y, float)))
