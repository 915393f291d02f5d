"""Posterior over variable subsets: beta-binomial model prior, exact
enumeration, a collapsed Metropolis sampler over inclusion indicators, and
the summaries built from them (inclusion probabilities, MAP and median
models, model-averaged predictions and draws).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import betaln, logsumexp

from .core import Dataset, PosteriorDraws, PredictiveMixture, SubmodelIndicator, _frozen
from .errors import TooManyVariables
from .gauss import FittedModel, GaussPrior, SuffStats, _fit_from_stats, predictive, quick_log_ml, sample_posterior

ENUMERATION_LIMIT = 20


@dataclass(frozen=True)
class ModelSpacePrior:
    """Beta(a, b) prior on the common inclusion probability."""

    a: float = 1.0
    b: float = 10.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("a and b must be positive")


def log_prior_size(k, p: int, prior: ModelSpacePrior):
    """Log prior probability of one particular indicator with k variables."""
    return betaln(prior.a + k, prior.b + p - k) - betaln(prior.a, prior.b)


def log_prior_indicator(gamma: SubmodelIndicator, prior: ModelSpacePrior) -> float:
    return float(log_prior_size(gamma.size, gamma.p, prior))


class FitCache:
    """Fits of submodels on one dataset, memoized by inclusion bitmask."""

    def __init__(self, dataset: Dataset, prior: GaussPrior):
        self.dataset = dataset
        self.prior = prior
        self.p = dataset.p
        self.stats = SuffStats.from_dataset(dataset)
        self._fits: Dict[int, FittedModel] = {}
        self._log_ml: Dict[int, float] = {}

    def __len__(self):
        return len(self._fits)

    def __call__(self, subset: SubmodelIndicator) -> FittedModel:
        return self.get(subset.mask)

    def get(self, mask: int) -> FittedModel:
        f = self._fits.get(mask)
        if f is None:
            f = _fit_from_stats(self.stats, SubmodelIndicator.from_mask(self.p, mask), self.prior)
            self._fits[mask] = f
        return f

    def log_ml(self, mask: int) -> float:
        """Log marginal likelihood without keeping a full fit."""
        v = self._log_ml.get(mask)
        if v is None:
            v = quick_log_ml(self.stats, mask_columns(mask), self.prior)
            self._log_ml[mask] = v
        return v


def mask_columns(mask: int) -> np.ndarray:
    """Design columns (intercept first) of the submodel with inclusion bitmask ``mask``."""
    bits = np.frombuffer(bin(mask)[:1:-1].encode(), np.uint8) == 49 if mask else np.zeros(0, bool)
    return np.concatenate([[0], 1 + np.flatnonzero(bits)])


# ---------------------------------------------------------------------------
# posterior container
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelPosterior:
    """Probabilities over a list of submodels.

    ``chain_counts`` (chains x models) is present for sampled posteriors and
    holds post-warm-up visit counts per chain.
    """

    source: str
    p: int
    masks: tuple
    log_probs: np.ndarray
    chain_counts: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        lp = np.asarray(self.log_probs, float)
        if lp.size != len(self.masks) or lp.size == 0:
            raise ValueError("need one log probability per model")
        if abs(logsumexp(lp)) > 1e-10:
            raise ValueError("model probabilities must sum to one")
        object.__setattr__(self, "log_probs", _frozen(lp))
        object.__setattr__(self, "masks", tuple(int(m) for m in self.masks))

    def __len__(self):
        return len(self.masks)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def models(self) -> List[SubmodelIndicator]:
        return [SubmodelIndicator.from_mask(self.p, m) for m in self.masks]

    def _membership(self) -> np.ndarray:
        """Models x variables 0/1 matrix, cached."""
        cached = self.__dict__.get("_member")
        if cached is None:
            cached = mask_bits(self.masks, self.p).astype(float)
            object.__setattr__(self, "_member", cached)
        return cached

    @property
    def inclusion(self) -> np.ndarray:
        return np.clip(self.probs @ self._membership(), 0.0, 1.0)

    def chain_inclusion(self) -> np.ndarray:
        """Inclusion probabilities computed separately for each chain."""
        if self.chain_counts is None:
            raise ValueError("inclusion spread needs a sampled posterior")
        freq = self.chain_counts / self.chain_counts.sum(axis=1, keepdims=True)
        return freq @ self._membership()

    def chain_spread(self) -> dict:
        """Between-chain spread of inclusion probabilities (min/max and 2.5/97.5 percentiles)."""
        ci = self.chain_inclusion()
        return {"chains": int(ci.shape[0]),
                "min": ci.min(axis=0).tolist(), "max": ci.max(axis=0).tolist(),
                "q025": np.percentile(ci, 2.5, axis=0).tolist(),
                "q975": np.percentile(ci, 97.5, axis=0).tolist()}

    def top(self, k: int = 10):
        k = min(k, len(self))
        cut = np.sort(self.log_probs)[::-1][k - 1]
        pool = np.flatnonzero(self.log_probs >= cut)
        order = sorted(pool, key=lambda i: _rank_key(self.p, self.masks[i], self.log_probs[i]))
        return [(SubmodelIndicator.from_mask(self.p, self.masks[i]), float(self.probs[i])) for i in order[:k]]

    def to_json(self, top: Optional[int] = None) -> str:
        """JSON with bitstrings, probabilities and the inclusion vector."""
        k = len(self) if top is None else top
        rec = {"source": self.source, "p": self.p,
               "models": [{"bitstring": m.bitstring, "probability": pr} for m, pr in self.top(k)],
               "inclusion": self.inclusion.tolist(), "diagnostics": self.diagnostics}
        if self.chain_counts is not None:
            rec["inclusion_chain_spread"] = self.chain_spread()
        return json.dumps(rec, sort_keys=True)


def mask_bits(masks, p: int) -> np.ndarray:
    """Unpack bitmasks (bit j-1 = variable j) into a len(masks) x p uint8 matrix."""
    nbytes = max((p + 7) // 8, 1)
    raw = b"".join(int(m).to_bytes(nbytes, "little") for m in masks)
    bits = np.unpackbits(np.frombuffer(raw, np.uint8).reshape(len(masks), nbytes), axis=1, bitorder="little")
    return bits[:, :p]


def _rank_key(p, mask, log_prob):
    variables = tuple(j + 1 for j in range(p) if (mask >> j) & 1)
    return (-log_prob, len(variables), variables)


# ---------------------------------------------------------------------------
# enumeration and sampling
# ---------------------------------------------------------------------------


def enumerate_posterior(dataset: Dataset, gprior: GaussPrior, mprior: ModelSpacePrior,
                        max_p: int = ENUMERATION_LIMIT, cache: Optional[FitCache] = None) -> ModelPosterior:
    """Exact posterior over all 2^p indicators."""
    p = dataset.p
    if max_p > ENUMERATION_LIMIT or p > max_p:
        raise TooManyVariables(f"enumeration needs p <= max_p <= {ENUMERATION_LIMIT}; p={p}, max_p={max_p}")
    cache = cache or FitCache(dataset, gprior)
    masks = range(1 << p)
    sizes = np.array([bin(m).count("1") for m in masks])
    lp = np.array([cache.log_ml(m) for m in masks]) + log_prior_size(sizes, p, mprior)
    return ModelPosterior("enumeration", p, tuple(masks), lp - logsumexp(lp))


ADD_REMOVE = 0.9


def _run_chain(log_post, p: int, iters: int, rng: np.random.Generator, start: int = 0):
    """One Metropolis chain over bitmasks; returns post-warm-up visit counts."""
    warm = iters // 2
    move = rng.random(iters)
    flip = rng.integers(0, p, size=iters) if p else np.zeros(iters, int)
    pick = rng.random((iters, 2))
    log_u = np.log(rng.random(iters))
    state, lp = start, log_post(start)
    included = [j for j in range(p) if (state >> j) & 1]
    counts: Dict[int, int] = {}
    accepted = 0
    for t in range(iters):
        if p == 0:
            prop = state
        elif move[t] < ADD_REMOVE:
            prop = state ^ (1 << int(flip[t]))
        else:
            k = len(included)
            if k == 0 or k == p:
                prop = state
            else:
                out_j = included[int(pick[t, 0] * k)]
                excluded = [j for j in range(p) if not (state >> j) & 1]
                in_j = excluded[int(pick[t, 1] * (p - k))]
                prop = state ^ (1 << out_j) ^ (1 << in_j)
        if prop != state:
            lp_new = log_post(prop)
            if log_u[t] < lp_new - lp:
                state, lp = prop, lp_new
                included = [j for j in range(p) if (state >> j) & 1]
                accepted += 1
        if t >= warm:
            counts[state] = counts.get(state, 0) + 1
    return counts, accepted / max(iters, 1)


def sample_model_space(dataset: Dataset, gprior: GaussPrior, mprior: ModelSpacePrior,
                       iters: int, chains: int = 4, seed=0, cache: Optional[FitCache] = None) -> ModelPosterior:
    """Collapsed Metropolis sampler over inclusion indicators.

    ``iters`` is the length of each chain; its first half is warm-up.
    Probabilities are post-warm-up visit frequencies pooled over chains.
    """
    if iters < 2:
        raise ValueError("iters must be >= 2 so that a post-warm-up sample exists")
    if chains < 1:
        raise ValueError("chains must be >= 1")
    p = dataset.p
    cache = cache or FitCache(dataset, gprior)
    memo: Dict[int, float] = {}

    def log_post(mask):
        v = memo.get(mask)
        if v is None:
            v = cache.log_ml(mask) + float(log_prior_size(bin(mask).count("1"), p, mprior))
            memo[mask] = v
        return v

    seqs = np.random.SeedSequence(_entropy(seed)).spawn(chains)
    per_chain, rates = [], []
    for ss in seqs:
        counts, rate = _run_chain(log_post, p, iters, np.random.default_rng(ss))
        per_chain.append(counts)
        rates.append(rate)
    masks = sorted(set().union(*per_chain))
    cc = np.array([[c.get(m, 0) for m in masks] for c in per_chain], dtype=float)
    total = cc.sum(axis=0)
    return ModelPosterior("chain", p, tuple(masks), np.log(total / total.sum()), cc,
                          {"acceptance_rate": float(np.mean(rates)), "chains": chains,
                           "iters_per_chain": iters, "distinct_models": len(masks)})


def _entropy(seed):
    return [int(s) for s in seed] if isinstance(seed, (tuple, list)) else int(seed)


def total_variation(a: ModelPosterior, b: ModelPosterior) -> float:
    pa = dict(zip(a.masks, a.probs))
    pb = dict(zip(b.masks, b.probs))
    return 0.5 * sum(abs(pa.get(m, 0.0) - pb.get(m, 0.0)) for m in set(pa) | set(pb))


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def map_model(post: ModelPosterior) -> SubmodelIndicator:
    """Most probable model; ties go to the smaller, then lexicographically first."""
    return post.top(1)[0][0]


def median_model(inclusion) -> SubmodelIndicator:
    pi = np.asarray(inclusion, float)
    if np.any(pi < 0) or np.any(pi > 1):
        raise ValueError("inclusion probabilities must lie in [0, 1]")
    return SubmodelIndicator.from_variables(pi.size, [j + 1 for j in np.flatnonzero(pi >= 0.5)])


def inclusion_order(inclusion) -> List[int]:
    """Variables sorted by decreasing inclusion probability (ties: smaller index)."""
    pi = np.asarray(inclusion, float)
    return [int(j) + 1 for j in sorted(range(pi.size), key=lambda j: (-pi[j], j))]


def bma_predictive(post: ModelPosterior, fits, x) -> PredictiveMixture:
    """Probability-weighted mixture of the per-model predictives at ``x``."""
    mixtures = [predictive(fits(m), x) for m in post.models]
    return PredictiveMixture.combine(mixtures, post.log_probs)


class BMA:
    """Model-averaged predictions over a ModelPosterior.

    ``fits`` maps a SubmodelIndicator to its FittedModel (e.g. a FitCache).
    """

    def __init__(self, post: ModelPosterior, fits):
        self.post = post
        self.fits = fits

    def logpdf(self, X, y) -> np.ndarray:
        """Pointwise log predictive density at raw predictor rows ``X``."""
        y = np.asarray(y, float)
        D = np.column_stack([np.ones(y.size), np.asarray(X, float).reshape(y.size, -1)])
        acc = np.full(y.size, -np.inf)
        for model, lp in zip(self.post.models, self.post.log_probs):
            acc = np.logaddexp(acc, lp + self.fits(model).logpdf(D[:, model.columns], y))
        return acc

    __call__ = logpdf

    def mean(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        D = np.column_stack([np.ones(X.shape[0]), X])
        out = np.zeros(X.shape[0])
        for model, pr in zip(self.post.models, self.post.probs):
            f = self.fits(model)
            out += pr * (D[:, model.columns] @ f.posterior_mean())
        return out

    def predictive(self, x) -> PredictiveMixture:
        return bma_predictive(self.post, self.fits, x)

    def sampled_components(self, X, S: int, seed):
        """Monte Carlo version of the BMA predictive at raw rows ``X``.

        Draws S (model, tau2 node) pairs from the posterior and returns the
        exact Student-t predictive of each pair: ``loc`` and ``scale`` of
        shape (rows, S) and ``dof`` of length S. Averaging these components
        with equal weights approximates the BMA predictive while integrating
        ``w`` and ``sigma2`` analytically.
        """
        rng = np.random.default_rng(_entropy(seed))
        X = np.atleast_2d(np.asarray(X, float))
        D = np.column_stack([np.ones(X.shape[0]), X])
        which = rng.choice(len(self.post), size=S, p=self.post.probs / self.post.probs.sum())
        loc = np.empty((X.shape[0], S))
        scale = np.empty((X.shape[0], S))
        dof = np.empty(S)
        for i in np.unique(which):
            cols = np.flatnonzero(which == i)
            model = SubmodelIndicator.from_mask(self.post.p, self.post.masks[i])
            f = self.fits(model)
            pw = np.exp(f.log_w)
            g = rng.choice(pw.size, size=cols.size, p=pw / pw.sum())
            _, m, s2 = f._t_params(D[:, model.columns], g)
            loc[:, cols] = m
            scale[:, cols] = np.sqrt(s2)
            dof[cols] = 2.0 * f.a_n
        return loc, scale, dof

    def sample(self, S: int, seed) -> PosteriorDraws:
        """S draws of full-length ``(w, sigma2)``; excluded weights are zero."""
        rng = np.random.default_rng(_entropy(seed))
        p = self.post.p
        which = rng.choice(len(self.post), size=S, p=self.post.probs / self.post.probs.sum())
        w = np.zeros((S, p + 1))
        sigma2 = np.empty(S)
        for i in np.unique(which):
            rows = np.flatnonzero(which == i)
            model = SubmodelIndicator.from_mask(p, self.post.masks[i])
            d = sample_posterior(self.fits(model), rows.size, int(rng.integers(2 ** 63)))
            w[np.ix_(rows, model.columns)] = d.w
            sigma2[rows] = d.sigma2
        return PosteriorDraws(SubmodelIndicator.full(p), w, sigma2, None)


def fit_reference(dataset: Dataset, gprior: GaussPrior, mprior: ModelSpacePrior, *, exact: Optional[bool] = None,
                  iters: int = 50_000, chains: int = 4, seed=0):
    """Model-space posterior and BMA on ``dataset``.

    Enumerates when ``exact`` (default: p <= 12), otherwise samples.
    """
    cache = FitCache(dataset, gprior)
    if exact is None:
        exact = dataset.p <= 12
    if exact:
        post = enumerate_posterior(dataset, gprior, mprior, cache=cache)
    else:
        post = sample_model_space(dataset, gprior, mprior, iters, chains, seed, cache=cache)
    return post, BMA(post, cache)
