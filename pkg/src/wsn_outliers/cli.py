"""Command-line entry point: ``wsn-outliers <subcommand> ...``.

Every stage reads and writes plain files so it can be rerun on its own:
trace text, neighbor table, feature CSV, serialized forest, report dir.
Failures print a JSON error record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import forest as rf
from .errors import ConfigError, PipelineError
from .evaluate import (CLASSIFIERS, PipelineSettings, emit_report, load_report,
                       run_sweep)
from .features import CONTEXTS, PAIRINGS, FeatureMatrix, build_feature_matrix
from .ingest import (ATTRIBUTES, WINDOW, load_trace, synthesize_trace, write_locations,
                     write_trace, load_locations)
from .neighbors import (CANDIDATE_RANGE, ENTROPY_MODES, NeighborTable,
                        k_nearest_by_distance, monte_carlo_neighbor_count)
from .noise import ALL_ATTRIBUTES, NoiseSpec, inject_noise

log = logging.getLogger("wsn_outliers")


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _epoch_range(text: str) -> tuple[int, int]:
    lo, _, hi = str(text).partition(":")
    return int(lo), int(hi)


def _add_input(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input")
    g.add_argument("--readings", help="Intel-format readings file")
    g.add_argument("--locations", help="mote_id x y file")
    g.add_argument("--synth", action="store_true", help="generate a synthetic trace")
    g.add_argument("--nodes", type=int, default=9, help="synthetic node count")
    g.add_argument("--epochs", type=int, default=2000, help="synthetic epoch count")
    g.add_argument("--spacing", type=float, default=5.0, help="synthetic grid spacing (m)")
    g.add_argument("--jitter", type=float, default=1.0, help="synthetic per-node jitter scale")
    g.add_argument("--max-rows", type=int, help="read at most this many lines")
    g.add_argument("--node-ids", type=_ints, help="comma-separated mote ids to keep")
    g.add_argument("--epoch-range", type=_epoch_range, help="half-open lo:hi epoch filter")


def _add_noise(p: argparse.ArgumentParser, sweep: bool = False) -> None:
    g = p.add_argument_group("noise")
    if sweep:
        g.add_argument("--sigmas", type=_floats, default=[5.0, 7.5, 10.0])
        g.add_argument("--fractions", type=_floats, default=[0.1, 0.15, 0.2])
        g.add_argument("--seeds", type=_ints, default=[0])
    else:
        g.add_argument("--sigma", type=float, default=5.0)
        g.add_argument("--noise-fraction", type=float, default=0.10)
    g.add_argument("--noise-attr", default=None,
                   help=f"attribute to corrupt, or '{ALL_ATTRIBUTES}' (default: --attribute)")


def _add_pipeline(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--attribute", default="temperature", choices=ATTRIBUTES)
    g.add_argument("--window", type=int, default=WINDOW)
    g.add_argument("--k", type=int, default=4, help="candidate neighbors per node")
    g.add_argument("--neighbor-table", help="use this neighbor table instead of k-NN")
    g.add_argument("--entropy-mode", default="sum", choices=ENTROPY_MODES)
    g.add_argument("--context", default="clean", choices=CONTEXTS)
    g.add_argument("--pairing", default="neighbor", choices=PAIRINGS)


def _add_forest(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("forest")
    g.add_argument("--n-trees", type=int, default=rf.DEFAULT_TREES)
    g.add_argument("--max-depth", type=int, default=rf.DEFAULT_MAX_DEPTH)
    g.add_argument("--min-leaf", type=int, default=rf.DEFAULT_MIN_LEAF)
    g.add_argument("--mtry", type=int)


def _add_eval(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("evaluation")
    g.add_argument("--classifiers", type=lambda s: [c for c in s.split(",") if c],
                   default=None, help=f"comma list from {','.join(CLASSIFIERS)}")
    g.add_argument("--knn-k", type=int, default=5)
    g.add_argument("--test-fraction", type=float, default=0.3)
    g.add_argument("--record-timing", action="store_true",
                   help="fill the seconds column (makes reports non-reproducible)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file supplying defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--dry-run", action="store_true",
                        help="validate and print the resolved plan only")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wsn-outliers", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse and normalize a trace")
    _add_input(p)
    p.add_argument("--out", help="write the cleaned trace here")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic trace")
    _add_input(p)
    p.add_argument("--out", required=True, help="readings file to write")
    p.add_argument("--out-locations", required=True, help="locations file to write")

    p = sub.add_parser("neighbors", parents=[common], help="k-NN table / Monte-Carlo k")
    _add_input(p)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--monte-carlo", action="store_true",
                   help="choose k by Monte-Carlo search over 1..10 (needs readings)")
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--attribute", default="temperature", choices=ATTRIBUTES)
    p.add_argument("--out", help="write the table here")

    p = sub.add_parser("features", parents=[common], help="inject noise and build features")
    _add_input(p)
    _add_noise(p)
    _add_pipeline(p)
    p.add_argument("--out", required=True, help="feature CSV to write")

    p = sub.add_parser("train", parents=[common], help="fit a forest on a feature CSV")
    p.add_argument("--features", required=True)
    _add_forest(p)
    p.add_argument("--out", required=True, help="serialized forest to write")

    for name, helptext in (("detect", "full pipeline for one noise setting"),
                           ("sweep", "full pipeline over a noise grid")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        _add_input(p)
        _add_noise(p, sweep=name == "sweep")
        _add_pipeline(p)
        _add_forest(p)
        _add_eval(p)
        p.add_argument("--out", default="report", help="report directory")

    p = sub.add_parser("report", parents=[common], help="re-render a saved report")
    p.add_argument("--from", dest="source", required=True, help="existing report directory")
    p.add_argument("--out", required=True)
    return parser


def read_config(path: str) -> dict[str, str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", path=path) from exc
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value", path=path)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        conf = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in conf.items():
            if key not in known or key == "config":
                raise ConfigError(f"unknown config key {key!r}", key=key)
            action = known[key]
            if action.nargs == 0:
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(value) if action.type else value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _require(path: str | None, what: str) -> None:
    if not path:
        raise ConfigError(f"missing {what}")
    if not Path(path).is_file():
        raise ConfigError(f"{what} not found: {path}", path=path)


def _validate_input(args) -> None:
    if getattr(args, "synth", False):
        if args.nodes < 2 or args.epochs < WINDOW:
            raise ConfigError(f"--synth needs --nodes >= 2 and --epochs >= {WINDOW}")
        return
    _require(args.readings, "--readings")
    _require(args.locations, "--locations")


def _validate(args) -> None:
    cmd = args.command
    if cmd in ("ingest", "features", "detect", "sweep"):
        _validate_input(args)
    elif cmd == "neighbors":
        if args.monte_carlo or not args.locations:
            _validate_input(args)
        else:
            _require(args.locations, "--locations")
        if not 1 <= args.k <= max(CANDIDATE_RANGE):
            raise ConfigError("--k must lie in 1..10")
    elif cmd == "train":
        _require(args.features, "--features")
    elif cmd == "report":
        _require(str(Path(args.source) / "sweep.csv"), "report sweep.csv")
    if cmd in ("features", "detect", "sweep"):
        if args.window < 2:
            raise ConfigError("--window must be >= 2")
        if not 1 <= args.k <= max(CANDIDATE_RANGE):
            raise ConfigError("--k must lie in 1..10")
        if args.neighbor_table:
            _require(args.neighbor_table, "--neighbor-table")
    if cmd in ("detect", "sweep"):
        unknown = set(args.classifiers or ()) - set(CLASSIFIERS)
        if unknown:
            raise ConfigError(f"unknown classifiers {sorted(unknown)}")
        if not 0.0 <= args.test_fraction < 1.0:
            raise ConfigError("--test-fraction must lie in [0, 1)")
    if cmd == "detect" and not 0.0 <= args.noise_fraction <= 1.0:
        raise ConfigError("--noise-fraction must lie in [0, 1]")
    if cmd == "sweep" and not (args.sigmas and args.fractions and args.seeds):
        raise ConfigError("--sigmas, --fractions and --seeds must be non-empty")


def _load_input(args):
    if args.synth:
        trace = synthesize_trace(args.nodes, args.epochs, args.spacing, args.seed, args.jitter)
    else:
        trace = load_trace(args.readings, args.locations, args.max_rows)
    if args.node_ids or args.epoch_range:
        trace = trace.filter(args.node_ids, args.epoch_range)
    return trace


def _settings(args) -> PipelineSettings:
    return PipelineSettings(
        attribute=args.attribute, noise_attribute=args.noise_attr, window=args.window,
        k=args.k, entropy_mode=args.entropy_mode, context=args.context,
        pairing=args.pairing, n_trees=args.n_trees, max_depth=args.max_depth,
        min_leaf=args.min_leaf, mtry=args.mtry, knn_k=args.knn_k,
        test_fraction=args.test_fraction, record_timing=args.record_timing)


def _table(args, trace):
    if args.neighbor_table:
        return NeighborTable.load(args.neighbor_table, trace.locations)
    return k_nearest_by_distance(trace.locations, args.k)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def plan(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}


def cmd_ingest(args):
    trace = _load_input(args)
    if args.out:
        write_trace(trace, args.out)
    _emit({"readings": len(trace), "nodes": len(trace.node_ids),
           **asdict(trace.stats)})


def cmd_synth(args):
    trace = synthesize_trace(args.nodes, args.epochs, args.spacing, args.seed, args.jitter)
    write_trace(trace, args.out)
    write_locations(trace.locations, args.out_locations)
    _emit({"readings": len(trace), "nodes": len(trace.node_ids)})


def cmd_neighbors(args):
    result = {}
    k = args.k
    if args.monte_carlo:
        trace = _load_input(args)
        k = monte_carlo_neighbor_count(trace, trials=args.trials, seed=args.seed,
                                       attribute=args.attribute)
        locations = trace.locations
        result["monte_carlo_k"] = k
    elif args.synth:
        locations = synthesize_trace(args.nodes, args.epochs, args.spacing, args.seed).locations
    else:
        locations = load_locations(args.locations)
    table = k_nearest_by_distance(locations, k)
    if args.out:
        table.save(args.out)
    else:
        sys.stdout.write(table.to_text())
    if result:
        _emit(result)


def cmd_features(args):
    trace = _load_input(args)
    spec = NoiseSpec(args.sigma, args.noise_fraction, args.noise_attr or args.attribute,
                     args.seed)
    matrix = build_feature_matrix(inject_noise(trace, spec), _table(args, trace),
                                  args.attribute, args.window, args.entropy_mode,
                                  args.context, args.pairing)
    matrix.to_csv(args.out)
    neg, pos = matrix.class_counts()
    _emit({"rows": len(matrix), "normal": neg, "outlier": pos, "skipped": matrix.skipped})


def cmd_train(args):
    matrix = FeatureMatrix.from_csv(args.features)
    model = rf.fit_forest(matrix, args.n_trees, args.max_depth, args.min_leaf, args.mtry,
                          args.seed, n_jobs=args.jobs)
    model.save(args.out)
    _emit({"trees": model.n_trees, "oob_error": rf.oob_error(model, matrix)})


def _sweep(args, sigmas, fractions, seeds, classifiers):
    trace = _load_input(args)
    result = run_sweep(trace, sigmas, fractions, classifiers, seeds, _settings(args),
                       _table(args, trace), jobs=args.jobs)
    emit_report(result, args.out)
    _emit({"out": args.out, "cells": [
        {"sigma": c.sigma, "fraction": c.fraction, "classifier": c.classifier,
         "seed": c.seed, "accuracy": c.accuracy, "error": c.error} for c in result.cells]})
    return result


def cmd_detect(args):
    _sweep(args, [args.sigma], [args.noise_fraction], [args.seed], args.classifiers or ["rf"])


def cmd_sweep(args):
    _sweep(args, args.sigmas, args.fractions, args.seeds, args.classifiers or list(CLASSIFIERS))


def cmd_report(args):
    result = load_report(args.source)
    emit_report(result, args.out)
    _emit({"out": args.out, "cells": len(result.cells)})


COMMANDS = {"ingest": cmd_ingest, "synth": cmd_synth, "neighbors": cmd_neighbors,
            "features": cmd_features, "train": cmd_train, "detect": cmd_detect,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _validate(args)
        if args.dry_run:
            _emit({"plan": plan(args)})
            return 0
        COMMANDS[args.command](args)
        return 0
    except PipelineError as exc:
        sys.stderr.write(json.dumps(exc.record(), default=str) + "\n")
        return 2 if isinstance(exc, ConfigError) else 1
    except (ValueError, TypeError) as exc:
        sys.stderr.write(json.dumps({"error": "config_error", "message": str(exc)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
