"""Forward search over variable subsets, final-model rules, and the
cross-validated choice of model size along a search path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import criteria
from .core import LOG_2PI, Dataset, SubmodelIndicator, _frozen, component_logpdf
from .errors import LengthMismatch
from .gauss import FittedModel, GaussPrior, fit, sample_posterior
from .model_space import BMA, FitCache, ModelSpacePrior, fit_reference, inclusion_order, map_model, median_model
from .projection import explanatory_power, forward_projection_path, project_draws
from .reference import QuadratureSpec, ReferenceGrid

METHODS = ("cv10", "waic", "dic", "l2", "l2cv", "l2k", "map", "mpp_median", "bma_ref", "bma_proj")
PATH_METHODS = ("cv10", "waic", "dic", "l2", "l2cv", "l2k", "bma_ref", "bma_proj")
TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SearchPath:
    """Variables in inclusion order and the criterion value at each size.

    ``criterion_values[m]`` belongs to the first m variables of ``order``.
    Discrepancy-based paths also carry ``discrepancies`` (smaller is better).
    """

    p: int
    order: tuple
    criterion_values: np.ndarray
    method: str = "custom"
    discrepancies: Optional[np.ndarray] = None

    def __post_init__(self):
        order = tuple(int(j) for j in self.order)
        if len(set(order)) != len(order) or any(not 1 <= j <= self.p for j in order):
            raise ValueError("order must list distinct variables in 1..p")
        vals = np.asarray(self.criterion_values, float)
        if vals.size != len(order) + 1:
            raise ValueError("need one criterion value per size 0..len(order)")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "criterion_values", _frozen(vals))
        if self.discrepancies is not None:
            object.__setattr__(self, "discrepancies", _frozen(np.asarray(self.discrepancies, float)))

    @property
    def max_size(self) -> int:
        return len(self.order)

    def submodel(self, m: int) -> SubmodelIndicator:
        return SubmodelIndicator.from_variables(self.p, self.order[:m])

    def explanatory_power(self) -> np.ndarray:
        d = self.discrepancies
        if d is None:
            raise ValueError("path has no discrepancies")
        return np.array([explanatory_power(v, d[0]) for v in d])

    def to_dict(self) -> dict:
        d = {"method": self.method, "p": self.p, "order": list(self.order),
             "values": [float(v) for v in self.criterion_values]}
        if self.discrepancies is not None:
            d["discrepancies"] = [float(v) for v in self.discrepancies]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SearchPath":
        return cls(d["p"], d["order"], d["values"], d.get("method", "custom"), d.get("discrepancies"))


def forward_search(dataset, criterion: Callable[[SubmodelIndicator], float], max_size: Optional[int] = None,
                   tie_tol: float = TIE_TOL, method: str = "custom",
                   stop: Optional[Callable[[int, float], bool]] = None) -> SearchPath:
    """Greedy forward selection maximizing ``criterion``.

    ``dataset`` may be a Dataset or just the number of variables. Ties
    within ``tie_tol`` go to the smallest variable index. ``stop(m, value)``
    may end the search early once size m has been reached.
    """
    p = dataset if isinstance(dataset, (int, np.integer)) else dataset.p
    max_size = p if max_size is None else min(int(max_size), p)
    current = SubmodelIndicator.empty(p)
    order: List[int] = []
    values = [float(criterion(current))]
    while len(order) < max_size and not (stop and stop(len(order), values[-1])):
        cand = [j for j in range(1, p + 1) if j not in order]
        scores = np.array([criterion(current.with_variable(j)) for j in cand], float)
        best = np.nanmax(scores)
        j = next(c for c, s in zip(cand, scores) if s >= best - tie_tol)
        order.append(j)
        current = current.with_variable(j)
        values.append(float(scores[cand.index(j)]))
    return SearchPath(p, order, values, method)


def select_by_criterion(path: SearchPath) -> SubmodelIndicator:
    """Prefix with the largest criterion value; ties go to the smaller size."""
    return path.submodel(int(np.argmax(path.criterion_values)))


def select_by_explanatory_power(path: SearchPath, threshold: float = 0.95) -> SubmodelIndicator:
    phi = path.explanatory_power()
    hits = np.flatnonzero(phi >= threshold)
    return path.submodel(int(hits[0]) if hits.size else path.max_size)


# ---------------------------------------------------------------------------
# per-method criteria
# ---------------------------------------------------------------------------


@dataclass
class MethodSettings:
    """Knobs shared by all selection methods."""

    gprior: GaussPrior = field(default_factory=GaussPrior)
    mprior: ModelSpacePrior = field(default_factory=ModelSpacePrior)
    folds: int = 10
    draws: int = 1000
    iters: int = 50_000  # per chain, warm-up included
    chains: int = 4
    l2k_k: float = 1.0
    max_size: Optional[int] = None
    threshold: float = 0.95
    exact: Optional[bool] = None
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)


def _fit_criterion(dataset: Dataset, settings: MethodSettings, method: str, seed):
    D, y = dataset.design(), dataset.y
    cache = FitCache(dataset, settings.gprior)

    if method == "cv10":
        plan = criteria.CVPlan(dataset, settings.folds, seed, settings.gprior)
        return lambda sub: float(plan.log_density(sub).mean())
    if method == "l2cv":
        plan = criteria.CVPlan(dataset, settings.folds, seed, settings.gprior)

        def l2cv(sub):
            m, v = plan.mean_var(sub)
            return -float(np.sum((y - m) ** 2) + np.sum(v))
        return l2cv
    if method in ("l2", "l2k"):
        k = np.inf if method == "l2" else settings.l2k_k

        def l2fam(sub):
            m, v = cache(sub).mean_var(D[:, sub.columns])
            sse = float(np.sum((y - m) ** 2))
            return -((sse if np.isinf(k) else k / (k + 1.0) * sse) + float(np.sum(v)))
        return l2fam
    if method in ("waic", "dic"):
        def drawcrit(sub):
            draws = sample_posterior(cache(sub), settings.draws, _subseed(seed, sub.mask))
            ll = draws.log_lik(D[:, sub.columns], y)
            if method == "waic":
                return criteria.waic_from_loglik(ll).value
            wbar = draws.w.mean(axis=0)
            s2bar = draws.sigma2.mean()
            ll_bar = -0.5 * (LOG_2PI + np.log(s2bar) + (y - D[:, sub.columns] @ wbar) ** 2 / s2bar)
            return criteria.dic_from_draws(ll, ll_bar).value
        return drawcrit
    raise ValueError(f"no data-fit criterion for method {method!r}")


def _subseed(seed, *keys) -> int:
    """Independent child seed for the task identified by ``keys``."""
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return int(np.random.SeedSequence(base + [int(k) for k in keys]).generate_state(1, np.uint64)[0])


def fitted_log_density_on_grid(fitted: FittedModel, D: np.ndarray, grid: ReferenceGrid) -> np.ndarray:
    """Candidate log densities at the reference quadrature points (n x Q)."""
    Q = grid.points.shape[1]
    rows = np.repeat(D[:, fitted.subset.columns], Q, axis=0)
    return fitted.logpdf(rows, grid.points.ravel()).reshape(grid.points.shape)


def bma_reference_grid(bma: BMA, dataset: Dataset, quad: QuadratureSpec, S: int = 1000, seed=0,
                       chunk: int = 250) -> ReferenceGrid:
    """BMA predictive at the training inputs, tabulated on quadrature grids.

    The BMA is represented by S sampled (model, tau2 node) Student-t
    components; evaluating every visited model on every grid point would
    cost models x n x points x nodes.
    """
    loc, scale, dof = bma.sampled_components(dataset.X, S, seed)
    ratio = np.where(dof > 2, dof / np.where(dof > 2, dof - 2.0, 1.0), 1.0)
    centre = loc.mean(axis=1)
    var = np.mean(scale ** 2 * ratio + (loc - centre[:, None]) ** 2, axis=1)

    def logdens(points):
        acc = np.full(points.shape, -np.inf)
        for lo in range(0, S, chunk):
            sl = slice(lo, lo + chunk)
            comp = component_logpdf(points[:, :, None], loc[:, None, sl], scale[:, None, sl], dof[sl])
            acc = np.logaddexp(acc, logsumexp(comp, axis=2))
        return acc - np.log(S)

    return ReferenceGrid(centre, np.sqrt(var), logdens, quad)


@dataclass(frozen=True, eq=False)
class Reference:
    """Posterior over submodels, its BMA, and draws from it, for one training set."""

    dataset: Dataset
    bma: BMA
    draws: object

    @property
    def post(self):
        return self.bma.post


def build_reference(dataset: Dataset, settings: MethodSettings, seed) -> Reference:
    post, bma = fit_reference(dataset, settings.gprior, settings.mprior, exact=settings.exact,
                              iters=settings.iters, chains=settings.chains, seed=_subseed(seed, 1))
    return Reference(dataset, bma, bma.sample(settings.draws, _subseed(seed, 2)))


@dataclass(frozen=True, eq=False)
class Selection:
    method: str
    selected: SubmodelIndicator
    path: Optional[SearchPath]
    diagnostics: dict = field(default_factory=dict)


def run_method(method: str, dataset: Dataset, settings: MethodSettings, seed=0,
               reference: Optional[Reference] = None, full_path: bool = False) -> Selection:
    """Search path and final model for one method on one training set.

    The reference-predictive search normally stops once the explanatory
    power threshold is met; ``full_path`` continues it to ``max_size``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    p = dataset.p
    max_size = p if settings.max_size is None else min(settings.max_size, p)
    if method in ("map", "mpp_median", "bma_ref", "bma_proj") and reference is None:
        reference = build_reference(dataset, settings, seed)

    if method == "map":
        return Selection(method, map_model(reference.post), None)
    if method == "mpp_median":
        incl = reference.post.inclusion
        order = inclusion_order(incl)[:max_size]
        path = SearchPath(p, order, [1.0] + [float(incl[j - 1]) for j in order], method)
        return Selection(method, median_model(incl), path, {"inclusion": incl.tolist()})
    if method == "bma_proj":
        order, disc = forward_projection_path(reference.draws, dataset.design(), max_size)
        path = SearchPath(p, order, -np.asarray(disc), method, disc)
        return Selection(method, select_by_explanatory_power(path, settings.threshold), path)
    if method == "bma_ref":
        grid = bma_reference_grid(reference.bma, dataset, settings.quad, settings.draws, _subseed(seed, 3))
        D = dataset.design()
        cache = FitCache(dataset, settings.gprior)
        null = grid.discrepancy(fitted_log_density_on_grid(cache(SubmodelIndicator.empty(p)), D, grid))

        def neg_disc(sub):
            return -grid.discrepancy(fitted_log_density_on_grid(cache(sub), D, grid))

        def reached(m, value):
            return not full_path and null > 0 and 1.0 + value / null >= settings.threshold

        path = forward_search(p, neg_disc, max_size, method=method, stop=reached)
        path = SearchPath(p, path.order, path.criterion_values, method, -path.criterion_values)
        return Selection(method, select_by_explanatory_power(path, settings.threshold), path)
    crit = _fit_criterion(dataset, settings, method, seed)
    path = forward_search(p, crit, max_size, method=method)
    return Selection(method, select_by_criterion(path), path)


# ---------------------------------------------------------------------------
# cross-validation outside the search
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SizeSelectionInput:
    """Held-out log densities per size (sizes x n) and of the reference (n)."""

    size_pointwise: np.ndarray
    reference_pointwise: np.ndarray
    fold_of: Optional[np.ndarray] = None
    paths: tuple = ()

    def __post_init__(self):
        sp = np.atleast_2d(np.asarray(self.size_pointwise, float))
        ref = np.asarray(self.reference_pointwise, float).ravel()
        if sp.shape[1] != ref.size:
            raise LengthMismatch(f"{sp.shape[1]} held-out points per size, {ref.size} for the reference")
        object.__setattr__(self, "size_pointwise", _frozen(sp))
        object.__setattr__(self, "reference_pointwise", _frozen(ref))

    @property
    def sizes(self) -> int:
        return self.size_pointwise.shape[0]

    def delta(self) -> np.ndarray:
        """Per-size pointwise difference to the reference."""
        return self.size_pointwise - self.reference_pointwise[None, :]

    def utility_gap(self) -> float:
        """Reference minus empty-model mean held-out utility."""
        return float(self.reference_pointwise.mean() - self.size_pointwise[0].mean())


def submodel_predictor(method: str, path: SearchPath, reference: Optional[Reference],
                       dataset: Dataset, settings: MethodSettings, m: int):
    """Callable ``(X, y) -> log densities`` for the size-m model of a path."""
    sub = path.submodel(m)
    if method == "bma_proj":
        proj, _ = project_draws(reference.draws, dataset.design(), sub)
        return proj.predictor()
    return criteria.fitted_predictor(fit(dataset, sub, settings.gprior))


def cv_search(dataset: Dataset, method: str, settings: MethodSettings, K_outer: int = 10,
              seed=0) -> SizeSelectionInput:
    """Repeat the search on K training splits and score every size on the held-out part.

    The reference (BMA) is refitted on every training split and scored on
    the same held-out points.
    """
    if method not in PATH_METHODS:
        raise ValueError(f"size selection needs a path method, got {method!r}")
    folds = criteria.make_folds(dataset.n, K_outer, _subseed(seed, 7))
    max_size = dataset.p if settings.max_size is None else min(settings.max_size, dataset.p)
    sizes = np.full((max_size + 1, dataset.n), np.nan)
    ref_pw = np.empty(dataset.n)
    paths = []
    for k, idx in enumerate(folds):
        try:
            train = dataset.take(np.setdiff1d(np.arange(dataset.n), idx))
            test = dataset.take(idx)
            fseed = _subseed(seed, 100 + k)
            ref = build_reference(train, settings, fseed)
            ref_pw[idx] = ref.bma.logpdf(test.X, test.y)
            path = run_method(method, train, settings, fseed, reference=ref, full_path=True).path
            paths.append(path)
            for m in range(path.max_size + 1):
                sizes[m, idx] = submodel_predictor(method, path, ref, train, settings, m)(test.X, test.y)
        except Exception as exc:
            raise type(exc)(f"outer fold {k}: {exc}") from exc
    short = min(p.max_size for p in paths)
    return SizeSelectionInput(sizes[:short + 1], ref_pw, folds.fold_of, tuple(paths))


# ---------------------------------------------------------------------------
# bootstrap and the size rule
# ---------------------------------------------------------------------------

DEFAULT_B = 4000


def bootstrap_weights(n: int, B: int, seed) -> np.ndarray:
    """B x n uniform Dirichlet weights."""
    return np.random.default_rng(seed).dirichlet(np.ones(n), size=B)


def bayesian_bootstrap_prob(pointwise_diff, U: float = 0.0, B: int = DEFAULT_B, seed=0) -> float:
    """Bayesian-bootstrap probability that the mean pointwise difference is at least U."""
    diff = np.asarray(pointwise_diff, float).ravel()
    if diff.size == 0 or B < 1:
        raise ValueError("need a nonempty difference vector and B >= 1")
    return float(np.mean(bootstrap_weights(diff.size, B, seed) @ diff >= U))


@dataclass(frozen=True, eq=False)
class SizeDecision:
    m: int
    probabilities: np.ndarray
    U: float
    alpha: float
    satisfied: bool

    def to_dict(self) -> dict:
        return {"m": self.m, "U": self.U, "alpha": self.alpha, "satisfied": self.satisfied,
                "probabilities": [float(v) for v in self.probabilities]}


def size_probabilities(inp: SizeSelectionInput, U: float, B: int = DEFAULT_B, seed=0) -> np.ndarray:
    """Pr(delta MLPD(m) >= U) for every size, with common bootstrap weights."""
    W = bootstrap_weights(inp.size_pointwise.shape[1], B, seed)
    return np.mean(W @ inp.delta().T >= U, axis=0)


def select_size(inp: SizeSelectionInput, U: float, alpha: float = 0.95, B: int = DEFAULT_B, seed=0,
                probabilities: Optional[np.ndarray] = None) -> SizeDecision:
    """Smallest size whose bootstrap probability reaches ``alpha``; else the largest size."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    probs = size_probabilities(inp, U, B, seed) if probabilities is None else np.asarray(probabilities)
    hits = np.flatnonzero(probs >= alpha)
    if hits.size:
        return SizeDecision(int(hits[0]), probs, float(U), float(alpha), True)
    return SizeDecision(inp.sizes - 1, probs, float(U), float(alpha), False)


def bias_gap(path_cv, pointwise_test) -> np.ndarray:
    """Per-size in-selection estimate minus out-of-sample estimate."""
    a = np.asarray(path_cv, float)
    b = np.asarray(pointwise_test, float)
    if b.ndim == 2:
        b = b.mean(axis=1)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} in-selection values vs {b.size} out-of-sample values")
    return a - b
