"""Expected log density of a candidate predictive under a reference
predictive, averaged over training inputs, and the matching KL discrepancy.

Each per-point integral uses the trapezoid rule on an equally spaced grid
centred at the reference mean and spanning a fixed number of reference
standard deviations either side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import PredictiveMixture
from .errors import LengthMismatch, QuadratureOverflow


@dataclass(frozen=True)
class QuadratureSpec:
    points: int = 201
    half_width_scales: float = 10.0

    def __post_init__(self):
        if self.points < 11 or self.points % 2 == 0:
            raise ValueError("quadrature needs an odd number of points >= 11")
        if not self.half_width_scales > 0:
            raise ValueError("half width must be positive")

    def unit_grid(self):
        t = np.linspace(-self.half_width_scales, self.half_width_scales, self.points)
        w = np.full(self.points, t[1] - t[0])
        w[[0, -1]] *= 0.5
        return t, w


def _centre_and_scale(m: PredictiveMixture):
    """Mixture mean and sd; a component with infinite variance contributes its scale instead."""
    w = np.exp(m.log_weights)
    ratio = np.ones_like(m.dof)
    heavy = np.isfinite(m.dof) & (m.dof > 2)
    ratio[heavy] = m.dof[heavy] / (m.dof[heavy] - 2.0)
    mean = float(np.sum(w * m.loc))
    return mean, float(np.sqrt(np.sum(w * (m.scale ** 2 * ratio + (m.loc - mean) ** 2))))


class ReferenceGrid:
    """Reference densities tabulated on per-point quadrature grids.

    Built once per reference; any number of candidates can then be scored
    by supplying their log densities at ``points`` (shape n x Q).
    """

    def __init__(self, centre, scale, log_density_fn, quad: QuadratureSpec = QuadratureSpec()):
        self.quad = quad
        t, w = quad.unit_grid()
        self.centre = np.asarray(centre, float)
        self.scale = np.asarray(scale, float)
        self.points = self.centre[:, None] + self.scale[:, None] * t[None, :]
        self.log_ref = np.asarray(log_density_fn(self.points), float)
        self.weights = np.exp(self.log_ref) * (self.scale[:, None] * w[None, :])
        self.self_utility = self.utility(self.log_ref)

    @property
    def n(self) -> int:
        return self.centre.size

    @classmethod
    def from_mixtures(cls, ref: Sequence[PredictiveMixture], quad: QuadratureSpec = QuadratureSpec()):
        cs = np.array([_centre_and_scale(m) for m in ref])
        ref = list(ref)

        def logdens(pts):
            return np.stack([m.logpdf(row) for m, row in zip(ref, pts)])

        return cls(cs[:, 0], cs[:, 1], logdens, quad)

    def utility(self, log_cand: np.ndarray) -> float:
        log_cand = np.asarray(log_cand, float)
        if log_cand.shape != self.points.shape:
            raise LengthMismatch(f"candidate log densities have shape {log_cand.shape}, grid is {self.points.shape}")
        bad = np.isneginf(log_cand) & (self.weights > 0)
        if np.any(bad):
            raise QuadratureOverflow(f"candidate density underflows at {int(bad.sum())} grid points with reference mass")
        return float(np.mean(np.sum(self.weights * log_cand, axis=1)))

    def discrepancy(self, log_cand: np.ndarray) -> float:
        return self.self_utility - self.utility(log_cand)

    def score_mixtures(self, cand: Sequence[PredictiveMixture]) -> np.ndarray:
        if len(cand) != self.n:
            raise LengthMismatch(f"{len(cand)} candidate predictives for {self.n} points")
        return np.stack([m.logpdf(row) for m, row in zip(cand, self.points)])


def reference_utility(ref: Sequence[PredictiveMixture], cand: Sequence[PredictiveMixture],
                      quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Mean over points of the expected candidate log density under the reference."""
    if len(ref) != len(cand):
        raise LengthMismatch(f"{len(ref)} reference vs {len(cand)} candidate predictives")
    grid = ReferenceGrid.from_mixtures(ref, quad)
    return grid.utility(grid.score_mixtures(cand))


def reference_discrepancy(ref: Sequence[PredictiveMixture], cand: Sequence[PredictiveMixture],
                          quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Mean KL divergence from reference to candidate predictive."""
    if len(ref) != len(cand):
        raise LengthMismatch(f"{len(ref)} reference vs {len(cand)} candidate predictives")
    grid = ReferenceGrid.from_mixtures(ref, quad)
    return grid.discrepancy(grid.score_mixtures(cand))
