"""Conjugate Gaussian linear regression with the weight-scale hyperparameter
integrated out by one-dimensional quadrature.

Model, for the columns of a submodel (intercept included)::

    y | X, w, s2      ~ N(X w, s2 I)
    w | s2, tau2      ~ N(0, tau2 s2 I)
    s2                ~ Inv-Gamma(alpha_sigma, beta_sigma)
    tau2              ~ Inv-Gamma(alpha_tau, beta_tau)

Given ``tau2`` everything is normal-inverse-gamma, so each quadrature node
has a closed-form posterior and marginal likelihood; a fit is a finite
mixture over nodes. The precision matrix
``A(tau2) = X'X + I / tau2`` shares its eigenvectors with ``X'X``, so one
symmetric eigendecomposition per submodel serves every grid point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from .core import LOG_2PI, Dataset, PosteriorDraws, PredictiveMixture, SubmodelIndicator
from .errors import DimensionMismatch, InfiniteVariance, SingularDesign

# grid components below exp(-40) of the largest weight are skipped when
# evaluating densities; their total contribution is < 1e-15 relative
_PRUNE = 40.0


@dataclass(frozen=True, eq=False)
class GaussPrior:
    """Inverse-gamma hyperpriors and the rule for integrating over ``tau2``.

    Without an explicit ``tau2_grid`` every fit places ``n_grid`` nodes,
    evenly spaced in ``log tau2``, over the region that holds its own
    posterior mass (see :func:`adaptive_nodes`). An explicit grid with log
    prior weights is used as a fixed discrete prior instead.
    """

    alpha_tau: float = 0.5
    beta_tau: float = 0.5
    alpha_sigma: float = 0.5
    beta_sigma: float = 0.5
    tau2_grid: Optional[np.ndarray] = None
    tau2_log_weights: Optional[np.ndarray] = None
    n_grid: int = 64

    def __post_init__(self):
        for name in ("alpha_tau", "beta_tau", "alpha_sigma", "beta_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tau2_grid is None:
            if self.n_grid < 2:
                raise ValueError("n_grid must be >= 2")
            scan = _scan_grid(self.alpha_tau, self.beta_tau)
            object.__setattr__(self, "_scan", scan)
            object.__setattr__(self, "_scan_prior", self.log_density_log_tau2(scan))
            return
        grid = np.atleast_1d(np.asarray(self.tau2_grid, float))
        logw = (np.full(grid.size, -np.log(grid.size)) if self.tau2_log_weights is None
                else np.atleast_1d(np.asarray(self.tau2_log_weights, float)))
        if grid.size < 1 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("tau2 grid must be positive and strictly increasing")
        if logw.shape != grid.shape or abs(logsumexp(logw)) > 1e-8:
            raise ValueError("tau2 grid log weights must normalize")
        grid.setflags(write=False)
        logw.setflags(write=False)
        object.__setattr__(self, "tau2_grid", grid)
        object.__setattr__(self, "tau2_log_weights", logw)
        object.__setattr__(self, "n_grid", grid.size)

    @property
    def adaptive(self) -> bool:
        return self.tau2_grid is None

    @classmethod
    def fixed_tau2(cls, tau2: float, alpha_sigma: float = 0.5, beta_sigma: float = 0.5) -> "GaussPrior":
        """Degenerate prior with ``tau2`` known."""
        return cls(alpha_sigma=alpha_sigma, beta_sigma=beta_sigma,
                   tau2_grid=np.array([float(tau2)]), tau2_log_weights=np.zeros(1))

    def log_density_log_tau2(self, s: np.ndarray) -> np.ndarray:
        """Prior log density of ``s = log tau2``."""
        a, b = self.alpha_tau, self.beta_tau
        return a * np.log(b) - gammaln(a) - a * s - b * np.exp(-s)

    def to_dict(self) -> dict:
        d = {"alpha_tau": self.alpha_tau, "beta_tau": self.beta_tau,
             "alpha_sigma": self.alpha_sigma, "beta_sigma": self.beta_sigma, "n_grid": self.n_grid}
        if not self.adaptive:
            d["tau2_grid"] = self.tau2_grid.tolist()
        return d


def tau2_quadrature(alpha: float, beta: float, n_points: int = 64,
                    lo: float = 0.001, hi: float = 0.999):
    """Fixed grid at equally spaced prior quantiles, weights prior density x spacing.

    Kept for explicit-grid priors; its accuracy is poor when the posterior of
    ``tau2`` sits in a prior tail, which is why fits default to adaptive nodes.
    """
    dist = stats.invgamma(alpha, scale=beta)
    if n_points == 1:
        return np.array([dist.median()]), np.zeros(1)
    grid = dist.ppf(np.linspace(lo, hi, n_points))
    spacing = np.empty(n_points)
    spacing[1:-1] = 0.5 * (grid[2:] - grid[:-2])
    spacing[0] = 0.5 * (grid[1] - grid[0])
    spacing[-1] = 0.5 * (grid[-1] - grid[-2])
    logw = dist.logpdf(grid) + np.log(spacing)
    return grid, logw - logsumexp(logw)


_SCAN_POINTS = 160
# relative log-density below which the posterior of log tau2 is treated as zero
_SCAN_DROP = 45.0
# scan-trapezoid log ML needs this many grid spacings of posterior sd
_QUICK_MIN_SD = 1.25


def _scan_grid(alpha: float, beta: float):
    """Coarse log-tau2 grid spanning prior quantiles 1e-300 .. 1 - 1e-12."""
    lo = np.log(beta / stats.gamma.isf(1e-300, alpha))
    hi = np.log(beta / stats.gamma.ppf(1e-12, alpha))
    s = np.linspace(lo, hi, _SCAN_POINTS)
    s.setflags(write=False)
    return s


def adaptive_nodes(log_lik, prior: GaussPrior):
    """Quadrature nodes for ``s = log tau2`` adapted to one posterior.

    ``log_lik(s)`` returns the log marginal likelihood given ``s``. A coarse
    scan bounds the region where it is within ``_SCAN_DROP`` of its maximum,
    a uniform pass over that region gives the mode and spread, and the final
    ``n_grid`` nodes are uniform in ``v`` under ``s = mode + spread * sinh(v)``.
    The map clusters nodes at the peak and spreads them geometrically into
    the tails, so the trapezoid rule in ``v`` converges quickly for both
    sharp and prior-dominated posteriors.

    Returns ``(tau2 nodes, log quadrature weights incl. prior density)``.
    """
    s = prior._scan
    lp = log_lik(s) + prior._scan_prior
    keep = np.flatnonzero(lp > lp.max() - _SCAN_DROP)
    lo, hi = s[max(keep[0] - 1, 0)], s[min(keep[-1] + 1, s.size - 1)]

    u = np.linspace(lo, hi, prior.n_grid)
    lpu = log_lik(u) + prior.log_density_log_tau2(u)
    wu = np.exp(lpu - lpu.max())
    wu /= wu.sum()
    centre = u[np.argmax(lpu)]
    spread = max(np.sqrt(np.sum(wu * (u - np.sum(wu * u)) ** 2)), 2.0 * (u[1] - u[0]) / prior.n_grid)

    v = np.linspace(np.arcsinh((lo - centre) / spread), np.arcsinh((hi - centre) / spread), prior.n_grid)
    nodes = centre + spread * np.sinh(v)
    logw = (prior.log_density_log_tau2(nodes) + np.log(spread * np.cosh(v)) + np.log(v[1] - v[0]))
    logw[[0, -1]] -= np.log(2.0)
    return np.exp(nodes), logw


# ---------------------------------------------------------------------------
# sufficient statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SuffStats:
    """Gram matrix, cross products and sum of squares of the full design."""

    n: int
    gram: np.ndarray
    xty: np.ndarray
    yty: float

    @classmethod
    def from_arrays(cls, D: np.ndarray, y: np.ndarray) -> "SuffStats":
        D = np.asarray(D, float)
        y = np.asarray(y, float)
        return cls(D.shape[0], D.T @ D, D.T @ y, float(y @ y))

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "SuffStats":
        return cls.from_arrays(ds.design(), ds.y)

    def __sub__(self, other: "SuffStats") -> "SuffStats":
        return SuffStats(self.n - other.n, self.gram - other.gram, self.xty - other.xty, self.yty - other.yty)


# ---------------------------------------------------------------------------
# fitted model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Grid of normal-inverse-gamma conditional posteriors for one submodel.

    For grid point g the conditional posterior is ``w | s2 ~ N(mu[g],
    s2 A_g^-1)`` and ``s2 ~ Inv-Gamma(a_n, b_n[g])`` with
    ``A_g^-1 = V diag(1 / prec[g]) V'``.
    """

    subset: SubmodelIndicator
    n: int
    tau2: np.ndarray
    log_w: np.ndarray
    mu: np.ndarray          # (G, q)
    prec: np.ndarray        # (G, q) eigenvalues of A_g
    eigvecs: np.ndarray     # (q, q)
    a_n: float
    b_n: np.ndarray         # (G,)
    log_ml: float

    @property
    def q(self) -> int:
        return self.mu.shape[1]

    def scale_factor(self, g: int) -> np.ndarray:
        """``L`` with ``L L' = A_g^-1``."""
        return self.eigvecs / np.sqrt(self.prec[g])

    def posterior_mean(self) -> np.ndarray:
        return np.exp(self.log_w) @ self.mu

    def _active(self):
        return np.flatnonzero(self.log_w > self.log_w.max() - _PRUNE)

    def _t_params(self, Xs: np.ndarray, active=None):
        g = self._active() if active is None else active
        loc = Xs @ self.mu[g].T
        Z = Xs @ self.eigvecs
        h = (Z * Z) @ (1.0 / self.prec[g]).T
        s2 = (self.b_n[g] / self.a_n) * (1.0 + h)
        return g, loc, s2

    def logpdf(self, Xs: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Pointwise log predictive density of ``y`` at subset-design rows ``Xs``."""
        Xs = np.atleast_2d(np.asarray(Xs, float))
        if Xs.shape[1] != self.q:
            raise DimensionMismatch(f"design rows have {Xs.shape[1]} columns, model has {self.q}")
        g, loc, s2 = self._t_params(Xs)
        nu = 2.0 * self.a_n
        r2 = np.asarray(y, float)[:, None] - loc
        r2 *= r2
        r2 /= s2
        const = gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi)
        comp = np.log1p(r2 / nu)
        comp *= -0.5 * (nu + 1)
        comp -= 0.5 * np.log(s2)
        comp += self.log_w[g] + const
        top = comp.max(axis=1)
        return top + np.log(np.exp(comp - top[:, None]).sum(axis=1))

    def mean_var(self, Xs: np.ndarray):
        """Exact predictive means and variances at subset-design rows."""
        if not self.a_n > 1:
            raise InfiniteVariance(f"predictive dof {2 * self.a_n:g} <= 2")
        Xs = np.atleast_2d(np.asarray(Xs, float))
        g, loc, s2 = self._t_params(Xs)
        w = np.exp(self.log_w[g])
        w = w / w.sum()
        nu = 2.0 * self.a_n
        mean = loc @ w
        var = (s2 * nu / (nu - 2.0)) @ w + ((loc - mean[:, None]) ** 2) @ w
        return mean, var


def _fit_from_stats(ss: SuffStats, subset: SubmodelIndicator, prior: GaussPrior) -> FittedModel:
    cols = subset.columns
    if cols.max() >= ss.gram.shape[0]:
        raise DimensionMismatch("subset refers to columns that do not exist")
    G = ss.gram[np.ix_(cols, cols)]
    b = ss.xty[cols]
    q = cols.size
    try:
        lam, V = np.linalg.eigh(G)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise SingularDesign(f"eigendecomposition failed for {subset}: {exc}") from exc
    if not np.all(np.isfinite(lam)):
        raise SingularDesign(f"non-finite Gram eigenvalues for {subset}")
    lam = np.clip(lam, 0.0, None)
    c = V.T @ b
    c2 = c * c
    n = ss.n
    a_n = prior.alpha_sigma + 0.5 * n
    const = (-0.5 * n * LOG_2PI + prior.alpha_sigma * np.log(prior.beta_sigma)
             + gammaln(a_n) - gammaln(prior.alpha_sigma))

    def conditional(tau2):
        prec = lam[None, :] + 1.0 / tau2[:, None]
        quad = (c2[None, :] / prec).sum(axis=1)
        b_n = prior.beta_sigma + 0.5 * np.clip(ss.yty - quad, 0.0, None)
        log_ml_g = (const - 0.5 * q * np.log(tau2) - 0.5 * np.log(prec).sum(axis=1)
                    - a_n * np.log(b_n))
        return prec, b_n, log_ml_g

    if prior.adaptive:
        tau2, log_q = adaptive_nodes(lambda s: conditional(np.exp(s))[2], prior)
    else:
        tau2, log_q = prior.tau2_grid, prior.tau2_log_weights
    prec, b_n, log_ml_g = conditional(tau2)
    if not np.all(prec > 0):
        raise SingularDesign(f"regularized normal equations not positive definite for {subset}")
    mu = (c[None, :] / prec) @ V.T
    joint = log_q + log_ml_g
    top = joint.max()
    log_ml = float(top + np.log(np.exp(joint - top).sum()))
    if not np.isfinite(log_ml):
        raise SingularDesign(f"non-finite marginal likelihood for {subset}")
    return FittedModel(subset, n, tau2, joint - log_ml, mu, prec, V, float(a_n), b_n, log_ml)


def _full_log_ml(ss: SuffStats, cols: np.ndarray, prior: GaussPrior) -> float:
    sub = SubmodelIndicator.from_variables(ss.gram.shape[0] - 1, cols[1:].tolist())
    return _fit_from_stats(ss, sub, prior).log_ml


def quick_log_ml(ss: SuffStats, cols: np.ndarray, prior: GaussPrior) -> float:
    """Log marginal likelihood alone, for model-space search.

    Trapezoid rule in ``log tau2``: on the coarse scan when the posterior is
    wide relative to its spacing, else on a uniform pass over the region the
    scan keeps. Either rule is accurate far below 1e-6 once the posterior sd
    spans ``_QUICK_MIN_SD`` spacings; otherwise the full fit is used.
    """
    if not prior.adaptive:
        return _full_log_ml(ss, cols, prior)
    lam, V = np.linalg.eigh(ss.gram[np.ix_(cols, cols)])
    c2 = (V.T @ ss.xty[cols]) ** 2
    lam = np.clip(lam, 0.0, None)
    n, q = ss.n, cols.size
    a_n = prior.alpha_sigma + 0.5 * n

    def log_post(s, log_prior):
        prec = lam[None, :] + np.exp(-s)[:, None]
        b_n = prior.beta_sigma + 0.5 * np.clip(ss.yty - (c2[None, :] / prec).sum(axis=1), 0.0, None)
        return log_prior - 0.5 * q * s - 0.5 * np.log(prec).sum(axis=1) - a_n * np.log(b_n)

    def trapezoid(s, lp):
        top = lp.max()
        w = np.exp(lp - top)
        total = w.sum()
        mean = (w @ s) / total
        sd = np.sqrt((w @ (s - mean) ** 2) / total)
        h = s[1] - s[0]
        return top + np.log((total - 0.5 * (w[0] + w[-1])) * h), sd >= _QUICK_MIN_SD * h

    s = prior._scan
    lp = log_post(s, prior._scan_prior)
    val, ok = trapezoid(s, lp)
    if not ok:
        keep = np.flatnonzero(lp > lp.max() - _SCAN_DROP)
        u = np.linspace(s[max(keep[0] - 1, 0)], s[min(keep[-1] + 1, s.size - 1)], prior.n_grid)
        val, ok = trapezoid(u, log_post(u, prior.log_density_log_tau2(u)))
    if not ok or not np.isfinite(val):
        return _full_log_ml(ss, cols, prior)
    const = (-0.5 * n * LOG_2PI + prior.alpha_sigma * np.log(prior.beta_sigma)
             + gammaln(a_n) - gammaln(prior.alpha_sigma))
    return float(const + val)


def fit_arrays(D: np.ndarray, y: np.ndarray, subset: SubmodelIndicator, prior: GaussPrior) -> FittedModel:
    """Fit from a full design ``D`` (intercept column first); ``D`` may have zero rows."""
    D = np.asarray(D, float).reshape(-1, subset.p + 1)
    return _fit_from_stats(SuffStats.from_arrays(D, y), subset, prior)


def fit(dataset: Dataset, subset: SubmodelIndicator, prior: GaussPrior) -> FittedModel:
    """Closed-form posterior of ``subset`` on ``dataset`` over the ``tau2`` grid."""
    if subset.p != dataset.p:
        raise DimensionMismatch(f"indicator covers {subset.p} variables, dataset has {dataset.p}")
    return _fit_from_stats(SuffStats.from_dataset(dataset), subset, prior)


def log_marginal_likelihood(fitted: FittedModel) -> float:
    return fitted.log_ml


def _design_row(fitted: FittedModel, x) -> np.ndarray:
    x = np.asarray(x, float).ravel()
    sub = fitted.subset
    if x.size == sub.p:
        return np.concatenate([[1.0], x])[sub.columns]
    if x.size == sub.size:
        return np.concatenate([[1.0], x])
    raise DimensionMismatch(f"x has {x.size} entries; expected {sub.p} (all predictors) or {sub.size} (subset)")


def predictive(fitted: FittedModel, x) -> PredictiveMixture:
    """Student-t mixture predictive at predictor vector ``x``.

    ``x`` holds either all p predictors or only the subset's predictors, in
    variable order; the intercept is added here.
    """
    row = _design_row(fitted, x)[None, :]
    g = np.arange(fitted.tau2.size)
    _, loc, s2 = fitted._t_params(row, g)
    return PredictiveMixture(fitted.log_w, loc[0], np.sqrt(s2[0]), np.full(g.size, 2.0 * fitted.a_n))


def predictive_mean_var(fitted: FittedModel, x):
    mean, var = fitted.mean_var(_design_row(fitted, x)[None, :])
    return float(mean[0]), float(var[0])


def sample_posterior(fitted: FittedModel, S: int, seed: int) -> PosteriorDraws:
    """Draw grid point, then ``s2``, then ``w`` for each of ``S`` draws."""
    if S < 1:
        raise ValueError("S must be >= 1")
    rng = np.random.default_rng(seed)
    p_grid = np.exp(fitted.log_w)
    g = rng.choice(p_grid.size, size=S, p=p_grid / p_grid.sum())
    sigma2 = fitted.b_n[g] / rng.gamma(fitted.a_n, size=S)
    z = rng.standard_normal((S, fitted.q))
    w = fitted.mu[g] + np.sqrt(sigma2)[:, None] * ((z / np.sqrt(fitted.prec[g])) @ fitted.eigvecs.T)
    return PosteriorDraws(fitted.subset, w, sigma2, seed)
