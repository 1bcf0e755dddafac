"""Command-line entry point: complexity, fit, rate, lowerbound."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .complexity import complexity_report
from .errors import (BudgetError, ConvergenceError, InfeasibleError, NumericalError, ParseError,
                     XgbVarError)
from .estimator import (BoostConfig, boost_objective, constrained_lse, dual_pair, greedy_boost,
                        penalized_lse, trees_to_ensemble)
from .harness import ExperimentConfig, rate_summary, run_rate_experiment
from .ingest import dump_tree, load_dataset, parse_xgb_dump
from .lattice import SparseEnsemble
from .minimax import PackingFamily, assouad_bound, family_checks

EXIT_OK, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_BUDGET, EXIT_USAGE = 0, 1, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path: str) -> str:
    try:
        return Path(path).read_text() if path != "-" else sys.stdin.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def _load_json(path: str):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON: {exc}") from exc


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _json_only(args):
    if args.format != "json":
        raise UsageError(f"{args.command} only writes json")


def load_model(text: str) -> SparseEnsemble:
    """An ensemble file ({"atoms": ...}) or an XGBoost JSON dump."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if isinstance(doc, dict) and "atoms" in doc:
        try:
            return SparseEnsemble.from_json(doc)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad ensemble file: {exc}") from exc
    return parse_xgb_dump(text).to_ensemble()


def cmd_complexity(args) -> int:
    _json_only(args)
    ens = load_model(_read(args.model))
    report = complexity_report(ens, args.s, include_tilde=args.tilde)
    _emit(report.dumps(), args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    _json_only(args)
    data = load_dataset(_read(args.dataset), args.response)
    if args.mode in ("constrained", "dual") and args.v is None:
        raise UsageError(f"--mode {args.mode} needs --v")
    if args.mode == "penalized" and args.alpha is None:
        raise UsageError("--mode penalized needs --alpha")
    if args.mode == "constrained":
        doc = constrained_lse(data, args.s, args.v).to_json()
    elif args.mode == "penalized":
        doc = penalized_lse(data, args.s, args.alpha).to_json()
    elif args.mode == "dual":
        alpha, con, pen = dual_pair(data, args.s, args.v)
        doc = pen.to_json()
        doc["dual_of_V"] = args.v
        doc["constrained_objective"] = con.objective
    else:
        cfg = BoostConfig(max_depth=args.s, alpha=args.alpha or 0.0, lam=args.lam,
                          rounds=args.rounds, learning_rate=args.learning_rate)
        trees = greedy_boost(data, cfg)
        doc = {"mode": "greedy", "rounds": cfg.rounds,
               "objective": boost_objective(data, trees, cfg.alpha),
               "trees": [dump_tree(t) for t in trees],
               "ensemble": trees_to_ensemble(trees, data.d).to_json()}
    _emit(json.dumps(doc, indent=2), args.out)
    return EXIT_OK


def cmd_rate(args) -> int:
    obj = _load_json(args.config)
    if not isinstance(obj, dict):
        raise ParseError("rate config must be a JSON object")
    obj = dict(obj, seed=args.seed)
    if args.workers is not None:
        obj["workers"] = args.workers
    config = ExperimentConfig.from_json(obj)
    table = run_rate_experiment(config)
    summary = rate_summary(table, config.sigma)
    if args.format == "csv":
        _emit(table.to_csv(), args.out)
        slope_text = json.dumps(summary, indent=2)
        if args.slope_out:
            _emit(slope_text, args.slope_out)
        else:
            sys.stderr.write(slope_text + "\n")
    else:
        _emit(json.dumps({"table": table.to_json(), "rate": summary}, indent=2), args.out)
    return EXIT_OK


def cmd_lowerbound(args) -> int:
    _json_only(args)
    obj = _load_json(args.config)
    if not isinstance(obj, dict):
        raise ParseError("family config must be a JSON object")
    try:
        V, sigma = float(obj["V"]), float(obj.get("sigma", 1.0))
        n = int(obj["n"]) if "n" in obj else None
        if "s_bar" in obj:
            s_bar = int(obj["s_bar"])
        else:
            s_bar = min(int(obj["s"]), int(obj["d"]))
        box = tuple(obj.get("box", [1.0] * max(s_bar, int(obj.get("d", s_bar)))))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad family config: {exc}") from exc
    if "l" in obj:
        l = obj["l"]
        if not isinstance(l, int) or l < 1:
            raise UsageError(f"l must be a positive integer, got {l!r}")
        family = PackingFamily(s_bar, l, V, box, sigma)
    elif n is not None:
        family = PackingFamily.for_sample_size(len(box), s_bar, V, sigma, n, box)
    else:
        raise UsageError("family config needs l or n")
    doc = {"family": family.to_json(),
           "checks": family_checks(family, seed=args.seed).to_json()}
    if n is not None:
        doc["bound"] = assouad_bound(family, n).to_json()
    _emit(json.dumps(doc, indent=2), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xgbvar", description="Complexity, estimators and rate experiments "
                "for depth-limited tree ensembles.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")

    c = sub.add_parser("complexity", help="V_XGB and Hardy-Krause variations of a model")
    c.add_argument("model", help="XGBoost JSON dump or ensemble JSON")
    c.add_argument("--s", type=int, required=True, help="depth bound")
    c.add_argument("--tilde", action="store_true", help="also compute the disjoint-dictionary value")
    common(c)
    c.set_defaults(func=cmd_complexity)

    f = sub.add_parser("fit", help="fit an estimator to a CSV dataset")
    f.add_argument("dataset")
    f.add_argument("--response", default="y", help="response column (default y)")
    f.add_argument("--s", type=int, required=True)
    f.add_argument("--v", type=float)
    f.add_argument("--alpha", type=float)
    f.add_argument("--mode", choices=("constrained", "penalized", "greedy", "dual"),
                   default="constrained")
    f.add_argument("--rounds", type=int, default=10)
    f.add_argument("--learning-rate", type=float, default=1.0)
    f.add_argument("--lambda", dest="lam", type=float, default=0.0)
    common(f)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("rate", help="Monte Carlo risk table and log-log slope")
    r.add_argument("config", help="experiment config JSON")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--slope-out", help="where to write the slope JSON (csv format only)")
    r.add_argument("--workers", type=int)
    common(r)
    r.set_defaults(func=cmd_rate, format="csv")

    lb = sub.add_parser("lowerbound", help="packing-family checks and Assouad bound")
    lb.add_argument("config", help="family config JSON")
    lb.add_argument("--seed", type=int, required=True)
    common(lb)
    lb.set_defaults(func=cmd_lowerbound)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"xgbvar: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"xgbvar: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except BudgetError as exc:
        print(f"xgbvar: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (InfeasibleError, ConvergenceError, NumericalError) as exc:
        print(f"xgbvar: no certified solution: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except XgbVarError as exc:
        print(f"xgbvar: error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValueError as exc:
        print(f"xgbvar: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
