"""Command-line entry point: simulate, select, replicate, size-sweep, evaluate.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
4 partial results (some replications failed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from . import criteria
from .core import SubmodelIndicator, apply_standardization, read_csv, standardize
from .errors import NumericalError, PredselError
from .experiments import ExperimentConfig, replicate, selection_predictor, size_sweep
from .search import METHODS, MethodSettings, Selection, build_reference, run_method
from .simgen import SimConfig, write_simulation

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4


def _rho(text):
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"rho must lie in [0, 1), got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _probability(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _add_sampler_flags(p, defaults=True):
    d = MethodSettings() if defaults else None
    p.add_argument("--folds", type=_positive_int, default=d.folds if d else None, help="CV folds inside the search")
    p.add_argument("--draws", type=_positive_int, default=d.draws if d else None, help="reference posterior draws")
    p.add_argument("--iters", type=_positive_int, default=d.iters if d else None,
                   help="sampler iterations per chain, warm-up included")
    p.add_argument("--chains", type=_positive_int, default=d.chains if d else None)
    p.add_argument("--exact", action="store_true", default=None, help="enumerate the model space instead of sampling")
    p.add_argument("--max-size", type=_positive_int, default=None, help="longest search path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="predsel", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated dataset and its true weights")
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--p", type=_positive_int, default=100)
    p.add_argument("--rho", type=_rho, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("select", help="run one selection method on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=_probability, default=0.95, help="explanatory power for the projection")
    _add_sampler_flags(p)
    p.add_argument("--out", help="JSON file (default: stdout)")

    for name, helptext in (("replicate", "all methods over replications"),
                           ("size-sweep", "size rule over a (U, alpha) grid")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
        p.add_argument("--data", help="dataset CSV instead of simulation")
        p.add_argument("--method", action="append", choices=METHODS, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replications", type=_positive_int, default=None)
        _add_sampler_flags(p, defaults=False)
        p.add_argument("--alpha", type=_probability, action="append", default=None)
        p.add_argument("--utility-threshold", type=float, action="append", default=None,
                       help="U as a fraction of the empty-to-reference utility gap (e.g. -0.05)")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("evaluate", help="test-set utility of a saved selection")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--test", required=True, help="test CSV")
    p.add_argument("--selection", required=True, help="JSON written by select")
    p.add_argument("--seed", type=int, default=0)
    _add_sampler_flags(p)
    p.add_argument("--out", help="JSON file (default: stdout)")
    return ap


def _settings(args) -> MethodSettings:
    return MethodSettings(folds=args.folds, draws=args.draws, iters=args.iters, chains=args.chains,
                          max_size=args.max_size, exact=args.exact,
                          threshold=getattr(args, "threshold", 0.95))


def _emit(obj, out):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def selection_to_dict(sel: Selection, dataset) -> dict:
    d = {"method": sel.method, "p": dataset.p, "selected": sel.selected.bitstring,
         "variables": list(sel.selected.variables), "size": sel.selected.size,
         "names": [dataset.names[j - 1] for j in sel.selected.variables] if dataset.names else None,
         "path": sel.path.to_dict() if sel.path else None}
    if sel.path is not None:
        per_size = [{"size": m, "criterion": float(v)} for m, v in enumerate(sel.path.criterion_values)]
        if sel.path.discrepancies is not None:
            for row, phi in zip(per_size, sel.path.explanatory_power()):
                row["explanatory_power"] = float(phi)
        d["per_size"] = per_size
    return d


def cmd_simulate(args):
    data, truth = write_simulation(SimConfig(n=args.n, p=args.p, rho=args.rho, seed=args.seed), args.out)
    print(f"wrote {data} and {truth}")
    return EXIT_OK


def cmd_select(args):
    ds = read_csv(args.data)
    sel = run_method(args.method, ds, _settings(args), args.seed)
    _emit(selection_to_dict(sel, ds), args.out)
    return EXIT_OK


def cmd_evaluate(args):
    saved = json.loads(Path(args.selection).read_text(encoding="utf-8"))
    train = read_csv(args.data, standardize_data=False)
    strain = standardize(train)
    test = apply_standardization(read_csv(args.test, standardize_data=False), strain)
    settings = _settings(args)
    sub = SubmodelIndicator.from_variables(strain.p, saved["variables"])
    reference = build_reference(strain, settings, args.seed)
    sel = Selection(saved["method"], sub, None)
    u = criteria.mlpd(selection_predictor(sel, reference, strain, settings), test)
    bma = criteria.mlpd(reference.bma, test)
    d = criteria.delta_mlpd(u, bma)
    _emit({"method": saved["method"], "selected": sub.bitstring, "size": sub.size, "test_mlpd": u.value,
           "test_mlpd_se": u.se, "bma_mlpd": bma.value, "delta_mlpd": d.value, "delta_mlpd_se": d.se}, args.out)
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    raw = cfg.to_mapping()
    flat = {k: v for sec in raw.values() for k, v in sec.items()}
    overrides = {"data": args.data, "seed": args.seed, "replications": args.replications, "folds": args.folds,
                 "draws": args.draws, "iters": args.iters, "chains": args.chains, "exact": args.exact,
                 "max_size": args.max_size, "out": args.out,
                 "alphas": args.alpha, "utility_fractions": args.utility_threshold}
    if args.method:
        overrides["methods" if args.command == "replicate" else "size_method"] = (
            args.method if args.command == "replicate" else args.method[0])
    flat.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**flat)


def cmd_experiment(args):
    cfg = _experiment_config(args)
    if args.print_config:
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK
    runner = replicate if args.command == "replicate" else size_sweep
    res = runner(cfg)
    print(f"{len(res.records)} records written to {cfg.out}")
    if res.failed:
        print("failed replications: " + ", ".join(str(r) for r, _ in res.failed), file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "select": cmd_select, "evaluate": cmd_evaluate,
            "replicate": cmd_experiment, "size-sweep": cmd_experiment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure in {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PredselError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
