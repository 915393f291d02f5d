"""Simulated regression data with block-equicorrelated predictors.

Predictors come in groups of five that share a common correlation; the
first three groups carry the signal with weights ``xi``, ``xi/2`` and
``xi/4`` and all other weights are zero. ``xi`` is set so that the noise
accounts for a fixed fraction of the response variance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .core import Dataset, write_csv

NOISE_FRACTION = 0.3


@dataclass(frozen=True)
class SimConfig:
    n: int = 100
    p: int = 100
    rho: float = 0.5
    sigma2: float = 1.0
    group_size: int = 5
    weight_tiers: Tuple[float, ...] = (1.0, 0.5, 0.25)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.p % self.group_size:
            raise ValueError(f"p must be a multiple of the group size {self.group_size}")
        if self.p < self.group_size * len(self.weight_tiers):
            raise ValueError("p too small to hold every signal group")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "weight_tiers", tuple(float(t) for t in self.weight_tiers))


@dataclass(frozen=True)
class SimTruth:
    true_w: tuple
    sigma2: float
    xi: float
    group_size: int
    rho: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimTruth":
        d = json.loads(text)
        d["true_w"] = tuple(d["true_w"])
        return cls(**d)


def solve_xi(rho: float, sigma2: float = 1.0, group_size: int = 5,
             weight_tiers=(1.0, 0.5, 0.25), noise_fraction: float = NOISE_FRACTION) -> float:
    """Signal scale giving ``sigma2 / Var(y) = noise_fraction``.

    Within a group of equal weights c, Var(c * sum x) = c^2 (g + g(g-1) rho).
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    tiers = np.asarray(weight_tiers, float)
    per_unit = float(np.sum(tiers ** 2)) * group_size * (1.0 + (group_size - 1) * rho)
    signal_var = sigma2 * (1.0 - noise_fraction) / noise_fraction
    return float(np.sqrt(signal_var / per_unit))


def true_weights(cfg: SimConfig) -> np.ndarray:
    xi = solve_xi(cfg.rho, cfg.sigma2, cfg.group_size, cfg.weight_tiers)
    w = np.zeros(cfg.p)
    for g, tier in enumerate(cfg.weight_tiers):
        w[g * cfg.group_size:(g + 1) * cfg.group_size] = tier * xi
    return w


def sample_predictors(n: int, p: int, rho: float, group_size: int, rng: np.random.Generator) -> np.ndarray:
    """Rows from N(0, R) with R block-diagonal equicorrelation, via one shared factor per block."""
    shared = rng.standard_normal((n, p // group_size))
    own = rng.standard_normal((n, p))
    return np.sqrt(rho) * np.repeat(shared, group_size, axis=1) + np.sqrt(1.0 - rho) * own


def generate(cfg: SimConfig, n_test: int = 0):
    """Draw a dataset (raw scale) and its truth; with ``n_test`` also an independent test set.

    Returns ``(train, truth)`` or ``(train, truth, test)``.
    """
    rng = np.random.default_rng(cfg.seed)
    w = true_weights(cfg)

    def draw(n):
        X = sample_predictors(n, cfg.p, cfg.rho, cfg.group_size, rng)
        y = X @ w + np.sqrt(cfg.sigma2) * rng.standard_normal(n)
        return Dataset(X, y, names=tuple(f"x{j}" for j in range(1, cfg.p + 1)))

    train = draw(cfg.n)
    truth = SimTruth(tuple(float(v) for v in w), cfg.sigma2,
                     solve_xi(cfg.rho, cfg.sigma2, cfg.group_size, cfg.weight_tiers), cfg.group_size, cfg.rho)
    if n_test:
        return train, truth, draw(n_test)
    return train, truth


def write_simulation(cfg: SimConfig, out_dir) -> Tuple[Path, Path]:
    """Write ``data.csv`` and ``truth.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data, truth = generate(cfg)
    write_csv(data, out / "data.csv")
    (out / "truth.json").write_text(truth.to_json() + "\n", encoding="utf-8")
    return out / "data.csv", out / "truth.json"
