"""Closed-form projection of reference-model draws onto submodels of a
Gaussian linear model.

For a draw ``(w, sigma2)`` with fit ``f = X w``, the submodel that is
closest in predictive KL divergence at the training inputs has the
least-squares coefficients of ``f`` on the submodel columns and a noise
variance inflated by the mean squared residual of that fit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .core import LOG_2PI, PosteriorDraws, PredictiveMixture, SubmodelIndicator, _frozen
from .errors import DimensionMismatch, NullModelZeroDiscrepancy, RankDeficientSubmodel

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ProjectedDraws:
    subset: SubmodelIndicator
    w: np.ndarray          # (S, size + 1)
    sigma2: np.ndarray     # projected noise variances
    kl: np.ndarray
    source_hash: Optional[str] = None

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, float))
        if w.shape[1] != self.subset.size + 1:
            raise DimensionMismatch("projected weights do not match the subset")
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "sigma2", _frozen(np.asarray(self.sigma2, float).ravel()))
        object.__setattr__(self, "kl", _frozen(np.asarray(self.kl, float).ravel()))

    def __len__(self):
        return self.w.shape[0]

    @property
    def discrepancy(self) -> float:
        return float(self.kl.mean())

    def full_weights(self) -> np.ndarray:
        """Weights embedded in the full p + 1 layout, zero for excluded variables."""
        out = np.zeros((len(self), self.subset.p + 1))
        out[:, self.subset.columns] = self.w
        return out

    def logpdf(self, Xs: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Pointwise log density of the equal-weight Gaussian mixture at subset-design rows."""
        Xs = np.atleast_2d(np.asarray(Xs, float))
        if Xs.shape[1] != self.w.shape[1]:
            raise DimensionMismatch(f"design rows have {Xs.shape[1]} columns, projection has {self.w.shape[1]}")
        mu = Xs @ self.w.T
        s2 = self.sigma2[None, :]
        comp = -0.5 * (LOG_2PI + np.log(s2) + (np.asarray(y, float)[:, None] - mu) ** 2 / s2)
        return logsumexp(comp, axis=1) - np.log(len(self))

    def predictor(self):
        """Callable ``(X, y) -> log densities`` on raw predictor rows."""
        cols = self.subset.columns

        def predict(X, y):
            D = np.column_stack([np.ones(len(y)), np.asarray(X, float)])
            return self.logpdf(D[:, cols], y)

        return predict


def _draw_fits(draws: PosteriorDraws, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, float)
    if X.shape[1] != draws.subset.p + 1:
        raise DimensionMismatch(f"design has {X.shape[1]} columns, draws cover {draws.subset.p} variables")
    return draws.w @ X[:, draws.subset.columns].T


def _factor(Xs: np.ndarray, subset: SubmodelIndicator):
    if Xs.shape[1] > Xs.shape[0]:
        raise RankDeficientSubmodel(f"submodel {subset} has more columns than observations")
    Q, R = linalg.qr(Xs, mode="economic")
    d = np.abs(np.diag(R))
    if d.min() <= RANK_TOL * max(d.max(), 1.0):
        raise RankDeficientSubmodel(f"submodel {subset} has a rank-deficient design")
    return Q, R


def _project(F: np.ndarray, sigma2: np.ndarray, X: np.ndarray, subset: SubmodelIndicator):
    n = X.shape[0]
    Q, R = _factor(X[:, subset.columns], subset)
    coef = Q.T @ F.T
    w_perp = linalg.solve_triangular(R, coef).T
    resid = F - (Q @ coef).T
    s2_perp = sigma2 + np.einsum("ij,ij->i", resid, resid) / n
    return w_perp, s2_perp, 0.5 * np.log(s2_perp / sigma2)


def project_draw(w, sigma2: float, X: np.ndarray, subset: SubmodelIndicator):
    """Project one full-model draw; returns ``(w_perp, sigma2_perp, kl)``."""
    X = np.asarray(X, float)
    w = np.asarray(w, float).ravel()
    if w.size != X.shape[1]:
        raise DimensionMismatch(f"w has {w.size} entries, design has {X.shape[1]} columns")
    wp, s2, kl = _project((X @ w)[None, :], np.array([float(sigma2)]), X, subset)
    return wp[0], float(s2[0]), float(kl[0])


def project_draws(draws: PosteriorDraws, X: np.ndarray, subset: SubmodelIndicator):
    """Project every draw with one factorization; returns ``(ProjectedDraws, discrepancy)``."""
    F = _draw_fits(draws, X)
    wp, s2, kl = _project(F, draws.sigma2, np.asarray(X, float), subset)
    proj = ProjectedDraws(subset, wp, s2, kl, draws.digest)
    return proj, proj.discrepancy


def projected_predictive(proj: ProjectedDraws, x) -> PredictiveMixture:
    """Equal-weight Gaussian mixture at predictor vector ``x`` (all p or subset-only entries)."""
    x = np.asarray(x, float).ravel()
    sub = proj.subset
    if x.size == sub.p:
        row = np.concatenate([[1.0], x])[sub.columns]
    elif x.size == sub.size:
        row = np.concatenate([[1.0], x])
    else:
        raise DimensionMismatch(f"x has {x.size} entries; expected {sub.p} or {sub.size}")
    S = len(proj)
    return PredictiveMixture(np.full(S, -np.log(S)), proj.w @ row, np.sqrt(proj.sigma2))


def explanatory_power(delta_m: float, delta_null: float, tol: float = 1e-12) -> float:
    if not delta_null > tol:
        raise NullModelZeroDiscrepancy(
            f"empty-model discrepancy {delta_null:g} is not positive; the reference adds nothing over the empty model")
    return 1.0 - delta_m / delta_null


def forward_projection_path(draws: PosteriorDraws, X: np.ndarray, max_size: Optional[int] = None,
                            tie_tol: float = 1e-10):
    """Greedy forward search minimizing the projection discrepancy.

    Equivalent to running :func:`project_draws` for every candidate at every
    step, but each step only updates an orthonormal basis of the selected
    columns: the residual sum of squares of draw ``s`` after adding column
    ``j`` drops by ``(r_j' e_s)^2 / r_j' r_j`` where ``r_j`` and ``e_s`` are
    the current residuals of the column and of the draw's fit.

    Returns ``(order, discrepancies)`` with ``discrepancies[m]`` for size m.
    """
    X = np.asarray(X, float)
    n, p = X.shape[0], X.shape[1] - 1
    max_size = p if max_size is None else min(max_size, p)
    F = _draw_fits(draws, X)
    s2 = draws.sigma2

    def disc(rss):
        return float(np.mean(0.5 * np.log1p(rss / (n * s2))))

    q = X[:, 0] / np.linalg.norm(X[:, 0])
    E = F - np.outer(F @ q, q)
    rss = np.einsum("ij,ij->i", E, E)
    Rc = X[:, 1:] - np.outer(q, q @ X[:, 1:])
    col_norm2 = np.einsum("ij,ij->j", X[:, 1:], X[:, 1:])
    remaining = list(range(p))
    order, values = [], [disc(rss)]
    while len(order) < max_size and remaining:
        Rr = Rc[:, remaining]
        nn = np.einsum("ij,ij->j", Rr, Rr)
        ok = nn > RANK_TOL * np.maximum(col_norm2[remaining], 1.0)
        if not np.any(ok):
            break
        G = E @ Rr
        safe = np.where(ok, nn, 1.0)
        new_rss = np.clip(rss[:, None] - G * G / safe[None, :], 0.0, None)
        cand = np.mean(0.5 * np.log1p(new_rss / (n * s2[:, None])), axis=0)
        cand[~ok] = np.inf
        best = cand.min()
        pick = next(i for i, v in enumerate(cand) if v <= best + tie_tol)
        j = remaining.pop(pick)
        r = Rc[:, j] / np.sqrt(nn[pick])
        E = E - np.outer(E @ r, r)
        rss = np.einsum("ij,ij->i", E, E)
        Rc = Rc - np.outer(r, r @ Rc)
        order.append(j + 1)
        values.append(disc(rss))
    return order, values
