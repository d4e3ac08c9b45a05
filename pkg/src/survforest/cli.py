"""Command-line surface and the versioned model file.

Subcommands: train, predict, impute, bench, simulate.  Every command is
end-to-end reproducible from --seed, independent of --threads, and writes
nothing when flag or input validation fails (exit code 2; unexpected
runtime failures exit 1).  Reports are plain CSV with the seeds and
parameters echoed on '#' header lines; they never contain wall-clock
times, so reruns are byte-identical.

The model file is a self-describing JSON document (format_version 1)
holding the grow parameters, the training data, the inbag matrix, and
every tree's node tables, including the per-node member lists that
parameterize the node-level empirical distributions of missing-data
forests.  load_model(save_model(...)) reproduces predictions bit-exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .dataset import (SurvivalDataset, load_csv, save_csv, simulate,
                      _parse_cell)
from .forest import Forest, fit, vimp, _terminal_sums
from .impute import impute_test, iterate_impute, _derive_seed
from .splitting import RULES
from .survstat import prediction_error
from .tree import GrowParams, SurvivalTree, route_complete

MODEL_FORMAT_VERSION = 1


class CommandError(Exception):
    """Validation failure: single-line diagnostic, exit code 2."""


# ---------------------------------------------------------------- model file

def _pack_floats(arr) -> list:
    """Float array -> JSON list with None for NaN (strict-JSON friendly)."""
    return [None if np.isnan(v) else float(v) for v in np.asarray(arr, float)]


def _unpack_floats(values) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def _pack_node_arrays(per_node) -> dict:
    """Sparse per-node list (None at nodes without an entry) -> parallel
    lists of node ids and payloads."""
    nodes = [i for i, v in enumerate(per_node) if v is not None]
    return {"nodes": nodes,
            "values": [np.asarray(per_node[i]).tolist() for i in nodes]}


def _unpack_node_arrays(packed, n_nodes, dtype) -> list:
    out = [None] * n_nodes
    for nid, values in zip(packed["nodes"], packed["values"]):
        out[nid] = np.asarray(values, dtype=dtype)
    return out


def save_model(path, forest: Forest, *, time_col="time",
               status_col="status"):
    """Write a fitted forest as a versioned JSON model file."""
    ds = forest.dataset
    trees = []
    for tree in forest.trees:
        trees.append({
            "var": tree.var.tolist(),
            "threshold": _pack_floats(tree.threshold),
            "left": tree.left.tolist(),
            "right": tree.right.tolist(),
            "term_grid": _pack_node_arrays(tree.term_grid),
            "term_values": _pack_node_arrays(tree.term_values),
            "members": _pack_node_arrays(tree.members),
            "member_weights": _pack_node_arrays(tree.member_weights),
            "terminal_of": tree.terminal_of.tolist(),
        })
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "package_version": __version__,
        "seed": forest.seed,
        "ntree": forest.ntree,
        "bootstrap": forest.bootstrap,
        "params": {"d0": forest.params.d0, "mtry": forest.params.mtry,
                   "rule": forest.params.rule,
                   "missing_mode": forest.params.missing_mode},
        "variables": {"names": list(ds.names), "kinds": list(ds.kinds),
                      "time_col": time_col, "status_col": status_col},
        "event_grid": _pack_floats(forest.event_grid),
        "training": {"times": _pack_floats(ds.times),
                     "status": _pack_floats(ds.status),
                     "covariates": [_pack_floats(row)
                                    for row in ds.covariates]},
        "inbag": forest.inbag.tolist(),
        "trees": trees,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def _read_model_doc(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CommandError(f"cannot read model file: {exc}")
    except json.JSONDecodeError as exc:
        raise CommandError(f"model file is not valid JSON: {exc}")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise CommandError(f"unsupported model format_version {version!r} "
                           f"(this build reads {MODEL_FORMAT_VERSION})")
    return doc


def load_model(path) -> Forest:
    """Read a model file back into a fully functional Forest."""
    return _forest_from_doc(_read_model_doc(path))


def _forest_from_doc(doc: dict) -> Forest:
    variables = doc["variables"]
    ds = SurvivalDataset(
        times=_unpack_floats(doc["training"]["times"]),
        status=_unpack_floats(doc["training"]["status"]),
        covariates=np.array([_unpack_floats(row)
                             for row in doc["training"]["covariates"]]),
        kinds=tuple(variables["kinds"]), names=tuple(variables["names"]))
    params = GrowParams(**doc["params"])
    trees = []
    for packed in doc["trees"]:
        n_nodes = len(packed["var"])
        trees.append(SurvivalTree(
            inbag=np.empty(0, dtype=np.int64),
            var=np.asarray(packed["var"], dtype=np.int64),
            threshold=_unpack_floats(packed["threshold"]),
            left=np.asarray(packed["left"], dtype=np.int64),
            right=np.asarray(packed["right"], dtype=np.int64),
            term_grid=_unpack_node_arrays(packed["term_grid"], n_nodes,
                                          float),
            term_values=_unpack_node_arrays(packed["term_values"], n_nodes,
                                            float),
            members=_unpack_node_arrays(packed["members"], n_nodes,
                                        np.int64),
            member_weights=_unpack_node_arrays(packed["member_weights"],
                                               n_nodes, np.int64),
            terminal_of=np.asarray(packed["terminal_of"], dtype=np.int64),
            missing_mode=params.missing_mode,
            times=ds.times, status=ds.status, covariates=ds.covariates))
    inbag = np.asarray(doc["inbag"], dtype=np.int64)
    for b, tree in enumerate(trees):
        tree.inbag = inbag[:, b]
    return Forest(trees=trees, inbag=inbag,
                  event_grid=_unpack_floats(doc["event_grid"]),
                  params=params, seed=doc["seed"],
                  bootstrap=doc["bootstrap"], dataset=ds)


# ----------------------------------------------------------------- plumbing

def _load_dataset(path, time_col, status_col) -> SurvivalDataset:
    try:
        return load_csv(path, time_col, status_col)
    except OSError as exc:
        raise CommandError(f"cannot read data file: {exc}")
    except ValueError as exc:
        raise CommandError(str(exc))


def _resolve_mtry(text):
    if text == "auto":
        return None
    try:
        value = int(text)
    except ValueError:
        value = 0
    if value < 1:
        raise CommandError("--mtry must be 'auto' or a positive integer")
    return value


def _grow_params(args) -> GrowParams:
    try:
        return GrowParams(d0=args.nodesize, mtry=_resolve_mtry(args.mtry),
                          rule=args.split)
    except ValueError as exc:
        raise CommandError(str(exc))


def _header(command, args, pairs) -> list:
    lines = [f"# survforest {command} (version {__version__})"]
    # --threads is deliberately not echoed: reports must be byte-identical
    # for any worker count
    for key in ("data", "model", "time_col", "status_col", "seed", "ntree",
                "split", "nodesize", "mtry", "iterations", "replicates"):
        if hasattr(args, key):
            lines.append(f"# {key.replace('_', '-')}: {getattr(args, key)}")
    lines += [f"# {k}: {v}" for k, v in pairs]
    return lines


def _write_lines(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _batch_mortality(forest: Forest, rows: np.ndarray) -> np.ndarray:
    """Ensemble mortality of complete covariate rows, summed over every
    nonmissing training time."""
    eval_times = forest.dataset.times
    eval_times = eval_times[~np.isnan(eval_times)]
    sums = _terminal_sums(forest, eval_times)
    total = np.zeros(rows.shape[0])
    for b, tree in enumerate(forest.trees):
        total += sums[b][route_complete(tree, rows)]
    return total / forest.ntree


def _ensemble_chf_rows(forest: Forest, rows: np.ndarray) -> np.ndarray:
    """Bootstrap ensemble CHF of complete rows on the event grid."""
    grid = forest.event_grid
    out = np.zeros((rows.shape[0], grid.size))
    for tree in forest.trees:
        terms = route_complete(tree, rows)
        for t_id in np.unique(terms):
            out[terms == t_id] += tree.terminal_chf(t_id)(grid)
    return out / forest.ntree


# ----------------------------------------------------------------- commands

def cmd_train(args) -> None:
    ds = _load_dataset(args.data, args.time_col, args.status_col)
    params = _grow_params(args)
    if args.ntree < 1:
        raise CommandError("--ntree must be >= 1")
    impute_rows = []
    if ds.has_missing:
        if args.impute_iters < 1:
            raise CommandError("data has missing cells: --impute-iters must "
                               "be >= 1 so training can impute")
        if args.vimp and args.impute_iters < 2:
            raise CommandError("--vimp needs a complete-data forest; use "
                               "--impute-iters 2 or more on missing data")
        completed, forest, reports = iterate_impute(
            ds, params, ntree=args.ntree, seed=args.seed,
            iterations=args.impute_iters, workers=args.threads)
        oob = reports[-1].oob_error
        for r in reports:
            impute_rows.append(("imputation", f"iteration_{r.iteration}_"
                                "oob_error", _fmt(r.oob_error)))
            impute_rows.append(("imputation", f"iteration_{r.iteration}_"
                                "undetermined_cells", r.n_undetermined))
        variable_importance = vimp(forest) if args.vimp else None
    else:
        forest, report = fit(ds, params, ntree=args.ntree, seed=args.seed,
                             compute_vimp=args.vimp, workers=args.threads)
        oob = report.oob_error
        variable_importance = report.vimp

    save_model(args.out_model, forest, time_col=args.time_col,
               status_col=args.status_col)
    lines = _header("train", args, [("n", ds.n), ("d", ds.d),
                                    ("model", args.out_model)])
    lines.append("section,name,value")
    lines.append(f"summary,oob_error,{_fmt(oob)}")
    n_missing = int(np.isnan(ds.covariates).sum() + np.isnan(ds.times).sum()
                    + np.isnan(ds.status).sum())
    lines.append(f"summary,n_missing_cells,{n_missing}")
    for section, name, value in impute_rows:
        lines.append(f"{section},{name},{value}")
    if variable_importance is not None:
        for name, value in zip(ds.names, variable_importance):
            lines.append(f"vimp,{name},{_fmt(value)}")
    _write_lines(args.out_report, lines)
    print(f"model: {args.out_model}")
    print(f"report: {args.out_report}")
    if oob is not None:
        print(f"oob_error: {oob:.4f}")


def _fmt(value) -> str:
    if value is None:
        return "NA"
    return repr(float(value))


def _load_predict_data(path, variables) -> SurvivalDataset:
    """Read a CSV for prediction: model covariates required (first missing
    one is named), outcome columns optional, extra columns ignored."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CommandError(f"cannot read data file: {exc}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CommandError("data file is empty")
        header = [h.strip() for h in header]
        for name in variables["names"]:
            if name not in header:
                raise CommandError(f"column '{name}' required by the model "
                                   "is missing from the data")
        rows = [row for row in reader if row]
    n = len(rows)
    if n == 0:
        raise CommandError("data file has no rows")

    def column(name):
        if name not in header:
            return np.full(n, np.nan)
        j = header.index(name)
        try:
            return np.array([_parse_cell(row[j]) for row in rows])
        except (ValueError, IndexError):
            raise CommandError(f"column '{name}' has unparseable values")

    covariates = np.column_stack([column(name)
                                  for name in variables["names"]])
    try:
        return SurvivalDataset(times=column(variables["time_col"]),
                               status=column(variables["status_col"]),
                               covariates=covariates,
                               kinds=tuple(variables["kinds"]),
                               names=tuple(variables["names"]))
    except ValueError as exc:
        raise CommandError(str(exc))


def cmd_predict(args) -> None:
    doc = _read_model_doc(args.model)
    forest = _forest_from_doc(doc)
    variables = doc["variables"]
    test = _load_predict_data(args.data, variables)
    incomplete = int(np.isnan(test.covariates).any(axis=1).sum())
    if incomplete and not forest.params.missing_mode:
        raise CommandError("data has missing covariate cells but the model "
                           "was trained on complete data and cannot impute "
                           "dynamically")

    if forest.params.missing_mode:
        completed, predictions = impute_test(forest, test)
    else:
        completed = test
        predictions = _batch_mortality(forest, test.covariates)

    header = ["case", "mortality"]
    body = None
    if args.chf:
        header += [f"chf@{g:g}" for g in forest.event_grid]
        body = _ensemble_chf_rows(forest, completed.covariates)
    imputed_cells = int(np.isnan(test.covariates).sum()
                        + np.isnan(test.times).sum()
                        + np.isnan(test.status).sum())
    lines = _header("predict", args,
                    [("n", test.n), ("incomplete_rows", incomplete),
                     ("imputed_cells",
                      imputed_cells if forest.params.missing_mode else 0)])
    lines.append(",".join(header))
    for i in range(test.n):
        row = [str(i), _fmt(predictions[i])]
        if body is not None:
            row += [_fmt(v) for v in body[i]]
        lines.append(",".join(row))
    _write_lines(args.out, lines)
    if args.out_imputed:
        save_csv(completed, args.out_imputed,
                 time_col=variables["time_col"],
                 status_col=variables["status_col"])
    print(f"predictions: {args.out} ({test.n} rows)")


def cmd_impute(args) -> None:
    ds = _load_dataset(args.data, args.time_col, args.status_col)
    params = _grow_params(args)
    if args.iterations < 1:
        raise CommandError("--iterations must be >= 1")
    if args.ntree < 1:
        raise CommandError("--ntree must be >= 1")
    missing_x = np.isnan(ds.covariates)
    missing_t = np.isnan(ds.times)
    missing_s = np.isnan(ds.status)
    completed, forest, reports = iterate_impute(
        ds, params, ntree=args.ntree, seed=args.seed,
        iterations=args.iterations, workers=args.threads)
    save_csv(completed, args.out, time_col=args.time_col,
             status_col=args.status_col)
    lines = _header("impute", args,
                    [("n", ds.n), ("d", ds.d),
                     ("imputed_cells", int(missing_x.sum() + missing_t.sum()
                                           + missing_s.sum())),
                     ("final_oob_error", _fmt(reports[-1].oob_error))])
    lines.append("case,column,value")
    for i, j in np.argwhere(missing_x):
        lines.append(f"{i},{ds.names[j]},"
                     f"{_fmt(completed.covariates[i, j])}")
    for i in np.flatnonzero(missing_t):
        lines.append(f"{i},{args.time_col},{_fmt(completed.times[i])}")
    for i in np.flatnonzero(missing_s):
        lines.append(f"{i},{args.status_col},{_fmt(completed.status[i])}")
    _write_lines(args.report, lines)
    print(f"completed data: {args.out}")
    print(f"imputed-cell report: {args.report}")


def cmd_bench(args) -> None:
    ds = _load_dataset(args.data, args.time_col, args.status_col)
    if ds.has_missing:
        raise CommandError("bench needs complete data; impute first")
    if args.replicates < 1:
        raise CommandError("--replicates must be >= 1")
    if args.ntree < 1:
        raise CommandError("--ntree must be >= 1")
    rules = RULES if args.split == "all" else (args.split,)
    params = {rule: GrowParams(d0=args.nodesize,
                               mtry=_resolve_mtry(args.mtry), rule=rule)
              for rule in rules}

    lines = _header("bench", args, [("n", ds.n), ("d", ds.d),
                                    ("rules", " ".join(rules))])
    lines.append("rule,replicate,pe")
    for r in range(args.replicates):
        rng = np.random.default_rng(
            np.random.SeedSequence((args.seed, 7001, r)))
        while True:
            picked = rng.integers(0, ds.n, size=ds.n)
            oob = np.setdiff1d(np.arange(ds.n), picked)
            if (oob.size and np.any(ds.status[oob] == 1)
                    and np.any(ds.status[picked] == 1)):
                break
        boot = ds.replaced(times=ds.times[picked],
                           status=ds.status[picked],
                           covariates=ds.covariates[picked])
        for k, rule in enumerate(rules):
            forest, _ = fit(boot, params[rule], ntree=args.ntree,
                            seed=_derive_seed(args.seed, 7002 + 10 * r + k),
                            workers=args.threads)
            predicted = _batch_mortality(forest, ds.covariates[oob])
            pe = prediction_error(predicted, ds.times[oob], ds.status[oob])
            lines.append(f"{rule},{r},{_fmt(pe)}")
    _write_lines(args.out, lines)
    print(f"bench table: {args.out}")


def cmd_simulate(args) -> None:
    try:
        ds = simulate(n=args.n, d_signal=args.signal, d_noise=args.noise,
                      censor_rate=args.censor_rate, seed=args.seed)
    except ValueError as exc:
        raise CommandError(str(exc))
    save_csv(ds, args.out)
    print(f"dataset: {args.out} ({ds.n} rows, {ds.d} covariates)")


# ------------------------------------------------------------------- parser

def _add_grow_flags(sub):
    sub.add_argument("--ntree", type=int, default=1000,
                     help="trees in the forest (default 1000)")
    sub.add_argument("--mtry", default="auto",
                     help="candidate variables per split, or 'auto' for "
                          "ceil(sqrt(d))")
    sub.add_argument("--nodesize", type=int, default=3,
                     help="minimum distinct death times per terminal "
                          "(default 3)")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--threads", type=int, default=1,
                     help="worker threads; never affects results")


def _add_data_flags(sub):
    sub.add_argument("--data", required=True, help="CSV input file")
    sub.add_argument("--time-col", required=True)
    sub.add_argument("--status-col", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survforest",
        description="Random survival forests for right-censored data")
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="fit a forest, write a model")
    _add_data_flags(train)
    _add_grow_flags(train)
    train.add_argument("--split", default="logrank",
                       choices=list(RULES),
                       help="splitting rule (default logrank)")
    train.add_argument("--vimp", action="store_true",
                       help="report per-variable importance")
    train.add_argument("--impute-iters", type=int, default=1,
                       help="imputation cycles when the data has missing "
                            "cells (default 1)")
    train.add_argument("--out-model", default="survforest_model.json")
    train.add_argument("--out-report", default="survforest_train.csv")
    train.set_defaults(func=cmd_train)

    predict = commands.add_parser("predict",
                                  help="ensemble mortality for new cases")
    predict.add_argument("--model", required=True)
    predict.add_argument("--data", required=True)
    predict.add_argument("--out", default="survforest_predictions.csv")
    predict.add_argument("--chf", action="store_true",
                         help="append ensemble CHF columns per event-grid "
                              "time (computed from the completed rows)")
    predict.add_argument("--out-imputed",
                         help="also write the completed test data as CSV")
    predict.set_defaults(func=cmd_predict)

    impute = commands.add_parser("impute",
                                 help="complete a dataset with missing "
                                      "cells")
    _add_data_flags(impute)
    _add_grow_flags(impute)
    impute.add_argument("--split", default="logrank", choices=list(RULES))
    impute.add_argument("--iterations", type=int, default=1)
    impute.add_argument("--out", default="survforest_completed.csv")
    impute.add_argument("--report", default="survforest_imputed_cells.csv")
    impute.set_defaults(func=cmd_impute)

    bench = commands.add_parser("bench",
                                help="per-rule OOB prediction error over "
                                     "bootstrap replicates")
    _add_data_flags(bench)
    _add_grow_flags(bench)
    bench.add_argument("--split", default="all",
                       choices=["all", *RULES])
    bench.add_argument("--replicates", type=int, default=100)
    bench.add_argument("--out", default="survforest_bench.csv")
    bench.set_defaults(func=cmd_bench)

    sim = commands.add_parser("simulate",
                              help="write a synthetic benchmark dataset")
    sim.add_argument("--n", type=int, default=300)
    sim.add_argument("--signal", type=int, default=2)
    sim.add_argument("--noise", type=int, default=5)
    sim.add_argument("--censor-rate", type=float, default=0.3)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default="survforest_simulated.csv")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
