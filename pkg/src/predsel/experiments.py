"""Replication studies and the (U, alpha) size-rule sweep.

Every task gets its own seed from ``task_seed(seed, kind, index)``, so
results do not depend on the number of workers or the order in which
tasks finish. Records are written as JSON lines, aggregates as CSV.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import criteria
from .core import Dataset, apply_standardization, read_csv, standardize
from .gauss import GaussPrior, fit
from .model_space import ModelSpacePrior
from .projection import project_draws
from .search import (METHODS, PATH_METHODS, MethodSettings, Reference, Selection, _subseed, build_reference,
                     cv_search, run_method, select_size, submodel_predictor)
from .simgen import SimConfig, generate

WORKERS_ENV = "PREDSEL_WORKERS"
# criteria whose values are mean log predictive densities, comparable with test MLPD
LOG_DENSITY_CRITERIA = ("cv10", "waic", "dic")

TASK_REPLICATE = 1


def task_seed(seed: int, kind: int, index: int) -> int:
    """Seed of task ``index`` of a given kind; a pure function of the three integers."""
    return int(_subseed(seed, kind, index))


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    methods: Tuple[str, ...] = METHODS
    replications: int = 50
    seed: int = 0
    out: str = "results"
    data: Optional[str] = None
    test_data: Optional[str] = None
    # simulation
    n: int = 100
    p: int = 100
    rho: float = 0.5
    n_test: int = 1000
    # sampler and reference
    iters: int = 50000
    chains: int = 4
    draws: int = 1000
    exact: Optional[bool] = None
    model_prior_a: float = 1.0
    model_prior_b: float = 10.0
    # search
    folds: int = 10
    max_size: Optional[int] = None
    threshold: float = 0.95
    curves: bool = True
    # size rule
    size_method: str = "bma_proj"
    size_folds: int = 10
    alphas: Tuple[float, ...] = (0.95,)
    utility_fractions: Tuple[float, ...] = (0.0, -0.01, -0.05)
    bootstrap: int = 4000

    SECTIONS = {
        "experiment": ("methods", "replications", "seed", "out", "data", "test_data"),
        "simulation": ("n", "p", "rho", "n_test"),
        "sampler": ("iters", "chains", "draws", "exact", "model_prior_a", "model_prior_b"),
        "search": ("folds", "max_size", "threshold", "curves"),
        "size_rule": ("size_method", "size_folds", "alphas", "utility_fractions", "bootstrap"),
    }

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.alphas = tuple(float(a) for a in self.alphas)
        self.utility_fractions = tuple(float(u) for u in self.utility_fractions)
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
        if self.size_method not in PATH_METHODS:
            raise ValueError(f"size_method must be one of {', '.join(PATH_METHODS)}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ValueError("alphas must lie in (0, 1)")
        if self.folds < 2 or self.size_folds < 2:
            raise ValueError("fold counts must be >= 2")
        if self.iters < 2 or self.chains < 1 or self.draws < 1 or self.bootstrap < 1:
            raise ValueError("iters, chains, draws and bootstrap must be positive")

    @classmethod
    def from_mapping(cls, raw: Optional[dict]) -> "ExperimentConfig":
        raw = dict(raw or {})
        flat = {}
        known = {f.name for f in fields(cls)}
        for key, val in raw.items():
            if key in cls.SECTIONS and isinstance(val, dict):
                for k, v in val.items():
                    if k not in cls.SECTIONS[key]:
                        raise ValueError(f"unknown key {key}.{k}")
                    flat[k] = v
            elif key in known:
                flat[key] = val
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**flat)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(yaml.safe_load(fh))

    def to_mapping(self) -> dict:
        d = asdict(self)
        out = {}
        for sec, keys in self.SECTIONS.items():
            out[sec] = {k: (list(d[k]) if isinstance(d[k], tuple) else d[k]) for k in keys}
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=False)

    def settings(self) -> MethodSettings:
        return MethodSettings(gprior=GaussPrior(), mprior=ModelSpacePrior(self.model_prior_a, self.model_prior_b),
                              folds=self.folds, draws=self.draws, iters=self.iters, chains=self.chains,
                              max_size=self.max_size, threshold=self.threshold, exact=self.exact)

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(n=self.n, p=self.p, rho=self.rho, seed=seed)


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


def _num(v):
    """JSON-safe float: infinities and NaN become strings."""
    if v is None:
        return None
    v = float(v)
    if math.isfinite(v):
        return v
    return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")


def _unnum(v):
    return None if v is None else float(v)


@dataclass(frozen=True)
class ResultRecord:
    replication: int
    method: str
    size: int
    indicator: str
    test_mlpd: float
    delta_mlpd: float
    criterion: Optional[float]
    bias_gap: Optional[float]
    wall_time: float

    def to_json(self) -> str:
        d = asdict(self)
        for k in ("test_mlpd", "delta_mlpd", "criterion", "bias_gap", "wall_time"):
            d[k] = _num(d[k])
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ResultRecord":
        d = json.loads(line)
        for k in ("test_mlpd", "delta_mlpd", "criterion", "bias_gap", "wall_time"):
            d[k] = _unnum(d[k])
        return cls(**d)


@dataclass(frozen=True)
class SweepRecord:
    replication: int
    method: str
    alpha: float
    utility_fraction: float
    U: float
    gap: float
    size: int
    satisfied: bool
    final_delta_mlpd: float

    @property
    def above(self) -> bool:
        return self.final_delta_mlpd >= self.U

    def to_json(self) -> str:
        d = asdict(self)
        for k in ("U", "gap", "final_delta_mlpd"):
            d[k] = _num(d[k])
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SweepRecord":
        d = json.loads(line)
        for k in ("U", "gap", "final_delta_mlpd"):
            d[k] = _unnum(d[k])
        return cls(**d)


@dataclass
class RunResult:
    records: list = field(default_factory=list)
    curves: list = field(default_factory=list)   # (replication, method, size, test mlpd, delta, criterion)
    failed: list = field(default_factory=list)   # (replication, message)

    @property
    def partial(self) -> bool:
        return bool(self.failed)


# ---------------------------------------------------------------------------
# data for one replication
# ---------------------------------------------------------------------------


def replication_data(cfg: ExperimentConfig, rep: int) -> Tuple[Dataset, Optional[Dataset], int]:
    """Standardized training set, test set transformed with training moments, task seed."""
    seed = task_seed(cfg.seed, TASK_REPLICATE, rep)
    if cfg.data:
        train = standardize(read_csv(cfg.data, standardize_data=False))
        test = apply_standardization(read_csv(cfg.test_data, standardize_data=False), train) if cfg.test_data else None
        return train, test, seed
    raw, _, raw_test = generate(cfg.sim_config(seed), n_test=cfg.n_test)
    train = standardize(raw)
    return train, apply_standardization(raw_test, train), seed


def selection_predictor(sel: Selection, reference: Optional[Reference], train: Dataset, settings: MethodSettings):
    if sel.method == "bma_proj":
        return project_draws(reference.draws, train.design(), sel.selected)[0].predictor()
    return criteria.fitted_predictor(fit(train, sel.selected, settings.gprior))


def _criterion_at(sel: Selection) -> Optional[float]:
    if sel.path is None or sel.method not in LOG_DENSITY_CRITERIA:
        return None
    return float(sel.path.criterion_values[sel.selected.size])


def run_replication(cfg: ExperimentConfig, rep: int) -> Tuple[List[ResultRecord], list]:
    train, test, seed = replication_data(cfg, rep)
    if test is None:
        raise ValueError("replications need a test set (simulate, or give test_data)")
    settings = cfg.settings()
    t0 = time.perf_counter()
    reference = build_reference(train, settings, seed)
    ref_time = time.perf_counter() - t0
    bma_test = criteria.mlpd(reference.bma, test)
    records, curves = [], []
    for method in cfg.methods:
        t0 = time.perf_counter()
        sel = run_method(method, train, settings, seed, reference=reference)
        wall = time.perf_counter() - t0
        if method in ("map", "mpp_median", "bma_ref", "bma_proj"):
            wall += ref_time
        u = criteria.mlpd(selection_predictor(sel, reference, train, settings), test)
        d = criteria.delta_mlpd(u, bma_test).value
        crit = _criterion_at(sel)
        records.append(ResultRecord(rep, method, sel.selected.size, sel.selected.bitstring, u.value, d, crit,
                                    None if crit is None else crit - u.value, wall))
        if cfg.curves and sel.path is not None and method in PATH_METHODS:
            for m in range(sel.path.max_size + 1):
                pred = submodel_predictor(method, sel.path, reference, train, settings, m)
                um = criteria.mlpd(pred, test)
                cm = float(sel.path.criterion_values[m]) if method in LOG_DENSITY_CRITERIA else None
                curves.append((rep, method, m, um.value, um.value - bma_test.value, cm))
    return records, curves


# ---------------------------------------------------------------------------
# size-rule sweep
# ---------------------------------------------------------------------------


def sweep_replication(cfg: ExperimentConfig, rep: int) -> List[SweepRecord]:
    """Size chosen by inner CV on the training set, judged on the test set.

    Without a test set the training data are split into ``size_folds``
    and the final utility is pooled over the held-out folds.
    """
    train, test, seed = replication_data(cfg, rep)
    settings = cfg.settings()
    method = cfg.size_method
    if test is not None:
        splits = [(train, test)]
    else:
        folds = criteria.make_folds(train.n, cfg.size_folds, _subseed(seed, 11))
        splits = [(train.take(np.setdiff1d(np.arange(train.n), idx)), train.take(idx)) for idx in folds]

    cells = [(a, f) for a in cfg.alphas for f in cfg.utility_fractions]
    final = {c: [] for c in cells}
    chosen = {c: [] for c in cells}
    gaps = []
    for k, (tr, te) in enumerate(splits):
        kseed = _subseed(seed, 12, k)
        inner = cv_search(tr, method, settings, cfg.size_folds, kseed)
        gap = inner.utility_gap()
        gaps.append(gap)
        reference = build_reference(tr, settings, kseed)
        path = run_method(method, tr, settings, kseed, reference=reference, full_path=True).path
        bma_pw = reference.bma.logpdf(te.X, te.y)
        cache = {}
        for c in cells:
            alpha, frac = c
            dec = select_size(inner, frac * gap, alpha, cfg.bootstrap, _subseed(kseed, 13))
            m = min(dec.m, path.max_size)
            if m not in cache:
                pred = submodel_predictor(method, path, reference, tr, settings, m)
                cache[m] = pred(te.X, te.y) - bma_pw
            final[c].append(cache[m])
            chosen[c].append((m, dec.satisfied))
    gap = float(np.mean(gaps))
    out = []
    for c in cells:
        alpha, frac = c
        sizes = [m for m, _ in chosen[c]]
        out.append(SweepRecord(rep, method, alpha, frac, frac * gap, gap, int(round(np.mean(sizes))),
                               all(s for _, s in chosen[c]), float(np.concatenate(final[c]).mean())))
    return out


# ---------------------------------------------------------------------------
# running, writing
# ---------------------------------------------------------------------------


def _safe(fn, cfg, rep):
    try:
        return rep, fn(cfg, rep), None
    except Exception as exc:  # reported per replication; the rest continue
        return rep, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def _map_replications(fn, cfg: ExperimentConfig, on_result):
    reps = range(cfg.replications)
    workers = min(worker_count(), cfg.replications)
    if workers == 1:
        for rep in reps:
            on_result(*_safe(fn, cfg, rep))
        return
    with ProcessPoolExecutor(workers) as pool:
        futures = [pool.submit(_safe, fn, cfg, rep) for rep in reps]
        for fut in futures:   # submission order keeps the output order stable
            on_result(*fut.result())


def replicate(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """All configured methods on every replication; writes records as they finish."""
    res = RunResult()
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rec_path = out / "records.jsonl"
    rec_path.write_text("", encoding="utf-8")

    def on_result(rep, value, err):
        if err is not None:
            res.failed.append((rep, err))
            return
        records, curves = value
        res.records.extend(records)
        res.curves.extend(curves)
        with rec_path.open("a", encoding="utf-8") as fh:
            for r in records:
                fh.write(r.to_json() + "\n")

    _map_replications(run_replication, cfg, on_result)
    write_summary(res.records, out / "summary.csv")
    write_curves(res.curves, out / "curves.csv")
    _write_failures(res.failed, out)
    return res


def size_sweep(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    res = RunResult()
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rec_path = out / "sweep.jsonl"
    rec_path.write_text("", encoding="utf-8")

    def on_result(rep, value, err):
        if err is not None:
            res.failed.append((rep, err))
            return
        res.records.extend(value)
        with rec_path.open("a", encoding="utf-8") as fh:
            for r in value:
                fh.write(r.to_json() + "\n")

    _map_replications(sweep_replication, cfg, on_result)
    write_sweep_table(res.records, out / "sweep.csv")
    _write_failures(res.failed, out)
    return res


def _write_failures(failed, out: Path):
    path = out / "failed.txt"
    if failed:
        path.write_text("".join(f"replication {r}: {msg}\n" for r, msg in failed), encoding="utf-8")
    elif path.exists():
        path.unlink()


def _interval(vals):
    vals = np.asarray(vals, float)
    return float(vals.mean()), float(np.percentile(vals, 2.5)), float(np.percentile(vals, 97.5))


def summarize(records: Sequence[ResultRecord]) -> List[dict]:
    """Per-method means over replications."""
    rows = []
    for method in dict.fromkeys(r.method for r in records):
        rs = [r for r in records if r.method == method]
        gaps = [r.bias_gap for r in rs if r.bias_gap is not None]
        mean_d, lo, hi = _interval([r.delta_mlpd for r in rs])
        rows.append({"method": method, "replications": len(rs),
                     "mean_size": float(np.mean([r.size for r in rs])),
                     "mean_delta_mlpd": mean_d, "delta_lo": lo, "delta_hi": hi,
                     "mean_bias_gap": float(np.mean(gaps)) if gaps else None,
                     "mean_wall_time": float(np.mean([r.wall_time for r in rs]))})
    return rows


def aggregate_curves(curves) -> List[dict]:
    """Per (method, size): mean and empirical 95% interval of test utility over replications."""
    groups: Dict[tuple, list] = {}
    for rep, method, m, u, d, c in curves:
        groups.setdefault((method, m), []).append((u, d, c))
    rows = []
    for (method, m), vals in groups.items():
        u, ulo, uhi = _interval([v[0] for v in vals])
        d, dlo, dhi = _interval([v[1] for v in vals])
        cs = [v[2] for v in vals if v[2] is not None]
        rows.append({"method": method, "size": m, "replications": len(vals), "mean_mlpd": u, "mlpd_lo": ulo,
                     "mlpd_hi": uhi, "mean_delta_mlpd": d, "delta_lo": dlo, "delta_hi": dhi,
                     "mean_criterion": float(np.mean(cs)) if cs else None})
    return rows


def sweep_table(records: Sequence[SweepRecord]) -> List[dict]:
    """One row per (alpha, U fraction): mean U, mean final utility, share at or above U."""
    rows = []
    for key in dict.fromkeys((r.alpha, r.utility_fraction) for r in records):
        rs = [r for r in records if (r.alpha, r.utility_fraction) == key]
        rows.append({"alpha": key[0], "utility_fraction": key[1], "replications": len(rs),
                     "mean_U": float(np.mean([r.U for r in rs])),
                     "mean_final_delta_mlpd": float(np.mean([r.final_delta_mlpd for r in rs])),
                     "mean_size": float(np.mean([r.size for r in rs])),
                     "share_above": float(np.mean([r.above for r in rs]))})
    return rows


def _write_rows(rows: List[dict], path: Path, header: Sequence[str]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row[k]) for k in header})


def write_summary(records, path):
    _write_rows(summarize(records), Path(path), ["method", "replications", "mean_size", "mean_delta_mlpd",
                                                 "delta_lo", "delta_hi", "mean_bias_gap", "mean_wall_time"])


def write_curves(curves, path):
    _write_rows(aggregate_curves(curves), Path(path),
                ["method", "size", "replications", "mean_mlpd", "mlpd_lo", "mlpd_hi", "mean_delta_mlpd",
                 "delta_lo", "delta_hi", "mean_criterion"])


def write_sweep_table(records, path):
    _write_rows(sweep_table(records), Path(path), ["alpha", "utility_fraction", "replications", "mean_U",
                                                   "mean_final_delta_mlpd", "mean_size", "share_above"])


def read_records(path, kind=ResultRecord) -> list:
    with open(path, encoding="utf-8") as fh:
        return [kind.from_json(line) for line in fh if line.strip()]
