"""Utility estimates for a single submodel: K-fold CV, WAIC, DIC, the L2
family, and test-set MLPD.

Utilities are on the mean log predictive density scale (nats per
observation, larger is better). The L2 criteria are losses (smaller is
better) and are returned as plain sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .core import Dataset, PosteriorDraws, PredictiveMixture, SubmodelIndicator, _frozen
from .errors import BadFoldCount, DimensionMismatch, LengthMismatch
from .gauss import FittedModel, GaussPrior, SuffStats, _fit_from_stats


@dataclass(frozen=True, eq=False)
class UtilityEstimate:
    value: float
    pointwise: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        pw = np.atleast_1d(np.asarray(self.pointwise, float))
        if pw.ndim != 1 or pw.size == 0:
            raise ValueError("pointwise utilities must be a nonempty vector")
        object.__setattr__(self, "pointwise", _frozen(pw))
        object.__setattr__(self, "value", float(self.value))
        if not abs(self.value - pw.mean()) <= 1e-12 * max(1.0, abs(self.value)):
            raise ValueError("value must equal the mean of the pointwise utilities")

    @classmethod
    def from_pointwise(cls, pointwise, **diagnostics) -> "UtilityEstimate":
        pw = np.asarray(pointwise, float)
        return cls(float(pw.mean()), pw, dict(diagnostics))

    @property
    def n(self) -> int:
        return self.pointwise.size

    @property
    def se(self) -> float:
        """Standard error of the mean of the pointwise values."""
        if self.n < 2:
            return float("nan")
        return float(self.pointwise.std(ddof=1) / np.sqrt(self.n))


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    K: int

    def __post_init__(self):
        f = np.asarray(self.fold_of, dtype=int)
        if f.ndim != 1 or np.any(f < 0) or np.any(f >= self.K):
            raise ValueError("fold labels must lie in [0, K)")
        sizes = np.bincount(f, minlength=self.K)
        if sizes.max() - sizes.min() > 1:
            raise ValueError("fold sizes must differ by at most one")
        object.__setattr__(self, "fold_of", _frozen(f, int))

    def heldout(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def __iter__(self):
        return (self.heldout(k) for k in range(self.K))


def make_folds(n: int, K: int, seed) -> FoldAssignment:
    """Seeded shuffle of ``0..n-1`` split into K contiguous blocks."""
    if not 2 <= K <= n:
        raise BadFoldCount(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=int)
    for k, block in enumerate(np.array_split(perm, K)):
        fold_of[block] = k
    return FoldAssignment(fold_of, K)


class CVPlan:
    """Per-fold training statistics for repeated CV of many submodels.

    Each training fit uses the full-data sufficient statistics minus those
    of the held-out block, so evaluating a new submodel never touches the
    raw rows except to predict the held-out points.
    """

    def __init__(self, dataset: Dataset, K: int, seed, prior: GaussPrior):
        self.dataset = dataset
        self.prior = prior
        self.folds = make_folds(dataset.n, K, seed)
        self.D = dataset.design()
        self.y = dataset.y
        full = SuffStats.from_arrays(self.D, self.y)
        self.blocks = list(self.folds)
        self.train = [full - SuffStats.from_arrays(self.D[idx], self.y[idx]) for idx in self.blocks]

    def fits(self, subset: SubmodelIndicator):
        for idx, stats in zip(self.blocks, self.train):
            yield idx, _fit_from_stats(stats, subset, self.prior)

    def log_density(self, subset: SubmodelIndicator) -> np.ndarray:
        out = np.empty(self.dataset.n)
        cols = subset.columns
        for idx, f in self.fits(subset):
            out[idx] = f.logpdf(self.D[np.ix_(idx, cols)], self.y[idx])
        return out

    def mean_var(self, subset: SubmodelIndicator):
        m = np.empty(self.dataset.n)
        v = np.empty(self.dataset.n)
        cols = subset.columns
        for idx, f in self.fits(subset):
            m[idx], v[idx] = f.mean_var(self.D[np.ix_(idx, cols)])
        return m, v


def _check_subset(dataset: Dataset, subset: SubmodelIndicator):
    if subset.p != dataset.p:
        raise DimensionMismatch(f"indicator covers {subset.p} variables, dataset has {dataset.p}")


def kfold_cv(dataset: Dataset, subset: SubmodelIndicator, prior: GaussPrior, K: int = 10,
             seed=0) -> UtilityEstimate:
    """K-fold cross-validated log predictive density; ``K = n`` is exact LOO."""
    _check_subset(dataset, subset)
    return UtilityEstimate.from_pointwise(CVPlan(dataset, K, seed, prior).log_density(subset), K=K)


# ---------------------------------------------------------------------------
# draw-based criteria
# ---------------------------------------------------------------------------


def _draw_loglik(dataset: Dataset, subset: SubmodelIndicator, draws: PosteriorDraws) -> np.ndarray:
    _check_subset(dataset, subset)
    if draws.subset != subset:
        raise DimensionMismatch(f"draws are for {draws.subset}, not {subset}")
    return draws.log_lik(dataset.design(subset), dataset.y)


def waic_from_loglik(ll: np.ndarray) -> UtilityEstimate:
    """WAIC from an (S, n) matrix of pointwise log likelihoods."""
    S = ll.shape[0]
    lppd = logsumexp(ll, axis=0) - np.log(S)
    V = ll.var(axis=0, ddof=1) if S > 1 else np.zeros(ll.shape[1])
    return UtilityEstimate.from_pointwise(lppd - V, V=float(V.sum()), training=float(lppd.mean()))


def waic(dataset: Dataset, subset: SubmodelIndicator, draws: PosteriorDraws) -> UtilityEstimate:
    """Training utility penalized by the functional variance, per point."""
    return waic_from_loglik(_draw_loglik(dataset, subset, draws))


def dic_from_draws(ll: np.ndarray, ll_at_mean: np.ndarray) -> UtilityEstimate:
    # pointwise: log p(y_i | mean) - 2 (log p(y_i | mean) - E log p(y_i | theta))
    mean_ll = ll.mean(axis=0)
    pointwise = 2.0 * mean_ll - ll_at_mean
    p_eff = 2.0 * float(np.sum(ll_at_mean - mean_ll))
    return UtilityEstimate.from_pointwise(pointwise, p_eff=p_eff, training=float(ll_at_mean.mean()))


def dic(dataset: Dataset, subset: SubmodelIndicator, draws: PosteriorDraws) -> UtilityEstimate:
    """Plug-in fit at the componentwise posterior mean of ``(w, sigma2)``."""
    ll = _draw_loglik(dataset, subset, draws)
    mean_draw = PosteriorDraws(subset, draws.w.mean(axis=0)[None, :], [draws.sigma2.mean()])
    return dic_from_draws(ll, mean_draw.log_lik(dataset.design(subset), dataset.y)[0])


# ---------------------------------------------------------------------------
# L2 family (losses)
# ---------------------------------------------------------------------------


def _sq_err_and_var(dataset: Dataset, fitted: FittedModel):
    _check_subset(dataset, fitted.subset)
    m, v = fitted.mean_var(dataset.design(fitted.subset))
    return float(np.sum((dataset.y - m) ** 2)), float(np.sum(v))


def l2(dataset: Dataset, fitted: FittedModel) -> float:
    sse, var = _sq_err_and_var(dataset, fitted)
    return sse + var


def l2_k(dataset: Dataset, fitted: FittedModel, k: float = 1.0) -> float:
    if not k >= 0:
        raise ValueError("k must be nonnegative")
    sse, var = _sq_err_and_var(dataset, fitted)
    return k / (k + 1.0) * sse + var


def l2_cv(dataset: Dataset, subset: SubmodelIndicator, prior: GaussPrior, K: int = 10, seed=0) -> float:
    """L2 loss with means and variances from the fold-deleted fits."""
    _check_subset(dataset, subset)
    m, v = CVPlan(dataset, K, seed, prior).mean_var(subset)
    return float(np.sum((dataset.y - m) ** 2) + np.sum(v))


# ---------------------------------------------------------------------------
# test-set metrics
# ---------------------------------------------------------------------------

Predictor = Union[Callable[[np.ndarray, np.ndarray], np.ndarray], Sequence[PredictiveMixture]]


def mlpd(predictor: Predictor, test: Dataset) -> UtilityEstimate:
    """Mean log predictive density over the test points.

    ``predictor`` is either a callable ``(X, y) -> pointwise log densities``
    taking raw predictor rows, or one PredictiveMixture per test point.
    """
    if callable(predictor):
        lp = np.asarray(predictor(test.X, test.y), float)
    else:
        if len(predictor) != test.n:
            raise LengthMismatch(f"{len(predictor)} predictives for {test.n} test points")
        lp = np.array([float(m.logpdf(y)) for m, y in zip(predictor, test.y)])
    return UtilityEstimate.from_pointwise(lp)


def delta_mlpd(model_utility: UtilityEstimate, reference_utility: UtilityEstimate) -> UtilityEstimate:
    """Pointwise difference to the reference; negative values are worse."""
    if model_utility.n != reference_utility.n:
        raise LengthMismatch(f"{model_utility.n} vs {reference_utility.n} pointwise values")
    return UtilityEstimate.from_pointwise(model_utility.pointwise - reference_utility.pointwise)


def fitted_predictor(fitted: FittedModel) -> Callable:
    """Adapter so a FittedModel can be scored with :func:`mlpd`."""
    cols = fitted.subset.columns

    def predict(X, y):
        D = np.column_stack([np.ones(len(y)), np.asarray(X, float)])
        return fitted.logpdf(D[:, cols], y)

    return predict
