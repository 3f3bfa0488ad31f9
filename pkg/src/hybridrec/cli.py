"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 fingerprint mismatch.
Options may come from a ``key = value`` file given with ``--config``;
command-line flags win. ``HYBRIDREC_OUTPUT_ROOT`` prefixes relative output
paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import gravity as gv
from .base import DefaultPredictor, RandomPredictor
from .datasets import movie_catalog
from .evaluation import (EvaluationReport, cold_start_experiment, evaluate_discovery,
                         evaluate_scoring, format_winners, winners_grid)
from .knn import ItemKNN, TopNRequest, full_catalog_top_n, similar_items
from .ratings import (DataError, compute_segments, kfold, load_catalog, load_fold, load_logs,
                      save_catalog, save_logs, split_train_test)
from .similarity import SimilarityMatrix, knn_search, merge_matrices, random_similarity_matrix

logger = logging.getLogger("hybridrec")

OUTPUT_ROOT_ENV = "HYBRIDREC_OUTPUT_ROOT"
TASKS = ("decide", "compare", "discover", "explore")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FINGERPRINT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class FingerprintMismatch(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------------

def file_fingerprint(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def config_hash(args):
    return hashlib.sha256(json.dumps(resolved_config(args), sort_keys=True).encode()).hexdigest()[:16]


def resolved_config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment. Keys use - or _."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def out_path(path):
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def parse_scale(text):
    try:
        a, b = (float(x) for x in str(text).split(","))
    except ValueError:
        raise UsageError(f"scale must be 'min,max', got {text!r}") from None
    if not a < b:
        raise UsageError("scale min must be below max")
    return a, b


def _bool(text):
    if isinstance(text, bool):
        return text
    return str(text).lower() in ("1", "true", "yes", "on")


def _load_catalog(args):
    if getattr(args, "catalog", None):
        return load_catalog(args.catalog)
    if getattr(args, "movies", None):
        return movie_catalog(args.movies)
    return None


def _check_fingerprint(expected, train_path):
    actual = file_fingerprint(train_path)
    if expected and expected != actual:
        raise FingerprintMismatch(f"model was trained on {expected}, {train_path} is {actual}")
    return actual


def load_model_for(args, train):
    """Estimator fitted on ``train`` from ``--baseline`` or a model file."""
    if args.baseline:
        if args.baseline == "default":
            return DefaultPredictor().fit(train), ""
        return RandomPredictor(seed=args.seed).fit(train), ""
    if not args.model:
        raise UsageError("give --model or --baseline")
    path = Path(args.model)
    if not path.exists():
        raise DataError(f"{path}: no such model file")
    with open(path, "rb") as fh:
        magic = fh.read(len(gv.MAGIC))
    if magic == gv.MAGIC:
        model = gv.load_model(path)
        _check_fingerprint(model.fingerprint, args.train)
        est = gv.Gravity(n_factors=model.k, seed=model.params.seed)
        est.fit(train, model=gv.reindex(model, train.user_ids, train.item_ids))
        return est, model.fingerprint
    sm = SimilarityMatrix.load(path)
    _check_fingerprint(sm.fingerprint, args.train)
    est = ItemKNN(k=sm.k, measure=sm.measure, scoring=sm.meta.get("scoring", "mean_based"),
                  n_jobs=args.workers)
    est.fit(train, similarity=sm.reindex(train.item_ids))
    return est, sm.fingerprint


# -- commands ------------------------------------------------------------------------

def cmd_ingest(args):
    m = load_logs(args.logs, parse_scale(args.scale), args.format)
    out = out_path(Path(args.out) / "ratings.tsv")
    save_logs(m, out)
    summary = m.summary()
    summary["file_fingerprint"] = file_fingerprint(out)
    summary["config_hash"] = config_hash(args)
    catalog = _load_catalog(args)
    if catalog is not None:
        cpath = out.parent / "catalog.tsv"
        save_catalog(catalog, cpath)
        summary["catalog_records"] = len(catalog)
        summary["catalog_fingerprint"] = file_fingerprint(cpath)
    text = "".join(f"{k} = {v}\n" for k, v in summary.items())
    (out.parent / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_split(args):
    m = load_logs(args.logs, parse_scale(args.scale), args.format)
    if args.kfold:
        folds = kfold(m, int(args.kfold), int(args.seed))
    else:
        folds = [split_train_test(m, float(args.fraction), int(args.seed))]
    root = out_path(Path(args.out) / "manifest.txt").parent
    lines = [f"source = {args.logs}", f"source_fingerprint = {file_fingerprint(args.logs)}",
             f"config_hash = {config_hash(args)}"]
    for f, (train, test) in enumerate(folds):
        for part, mat in (("train", train), ("test", test)):
            p = root / f"fold{f}.{part}.tsv"
            save_logs(mat, p)
            lines.append(f"fold{f}.{part} = {p.name} {len(mat)} {file_fingerprint(p)}")
    (root / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


def cmd_train_knn(args):
    scale = parse_scale(args.scale)
    train = load_logs(args.train, scale, args.format)
    fp = file_fingerprint(args.train)
    k = int(args.k)
    if args.emulated:
        params = _gravity_params(args)
        model = gv.train(train, params)
        sm = gv.factor_similarity_matrix(model, k, args.factor_measure, args.workers)
        kind = "emulated"
    elif args.random:
        sm = random_similarity_matrix(train.item_ids, k, int(args.seed), args.workers)
        kind = "random"
    else:
        catalog = _load_catalog(args)
        source = catalog if catalog is not None else train
        sm = knn_search(source, k, args.measure, args.workers, item_ids=train.item_ids)
        kind = "thematic" if catalog is not None else "collaborative"
    if args.merge_with:
        other = SimilarityMatrix.load(args.merge_with).reindex(train.item_ids)
        sm = merge_matrices(sm, other, float(args.weight), k)
        kind = "hybrid"
    sm.fingerprint = fp
    sm.meta = {"scoring": args.scoring, "kind": kind, "config_hash": config_hash(args)}
    out = out_path(args.out)
    sm.save(out)
    print(f"wrote {out} ({sm.n_items} items, {len(sm)} neighbours, fingerprint {fp})")


def _gravity_params(args):
    return gv.GravityParams(k=int(args.factors), learning_rate=float(args.learning_rate),
                            regularization=float(args.regularization),
                            max_epochs=int(args.max_epochs), patience=int(args.patience),
                            max_seconds=None if args.max_seconds in (None, "") else float(args.max_seconds),
                            validation_fraction=float(args.validation_fraction),
                            seed=int(args.seed), biases=not _bool(args.no_biases))


def cmd_train_gravity(args):
    train = load_logs(args.train, parse_scale(args.scale), args.format)
    model = gv.train(train, _gravity_params(args))
    model.fingerprint = file_fingerprint(args.train)
    out = out_path(args.out)
    gv.save_model(model, out)
    curve = out.with_name(out.name + ".curve.tsv")
    with open(curve, "w", encoding="utf-8") as fh:
        fh.write(f"# fingerprint={model.fingerprint}\tconfig_hash={config_hash(args)}\n")
        fh.write("epoch\ttrain_rmse\tvalidation_rmse\n")
        for e, tr, va in model.curve:
            fh.write(f"{e}\t{tr:.6f}\t{va:.6f}\n")
    if args.text:
        gv.export_text(model, out_path(args.text))
    print(f"wrote {out} (best epoch {model.best_epoch} of {len(model.curve)}, "
          f"fingerprint {model.fingerprint})")


def cmd_evaluate(args):
    tasks = [t.strip() for t in str(args.tasks).split(",") if t.strip()]
    bad = set(tasks) - set(TASKS)
    if bad:
        raise UsageError(f"unknown tasks {sorted(bad)}; choose from {TASKS}")
    train, test = load_fold(args.train, args.test, parse_scale(args.scale), args.format)
    est, _ = load_model_for(args, train)
    grid = compute_segments(train)
    name = args.name or (args.baseline or Path(args.model).stem)
    rep = EvaluationReport(name, int(args.fold))
    if {"decide", "compare"} & set(tasks):
        rep.update(evaluate_scoring(est, train, test, grid, name, int(args.fold),
                                    estimated=_bool(args.estimated)))
    if {"discover", "explore"} & set(tasks):
        rep.update(evaluate_discovery(est, train, test, grid, int(args.n), name=name,
                                      fold=int(args.fold)))
    rep.meta.update({"config_hash": config_hash(args),
                     "train_file": file_fingerprint(args.train),
                     "test_file": file_fingerprint(args.test)})
    if args.out:
        rep.write(out_path(args.out))
    sys.stdout.write(rep.to_text())


def cmd_recommend(args):
    train = load_logs(args.train, parse_scale(args.scale), args.format)
    est, _ = load_model_for(args, train)
    user = str(args.user)
    if user not in train._user_index:
        raise DataError(f"user {user!r} has no train logs")
    if args.seeded:
        if not isinstance(est, ItemKNN):
            raise UsageError("--seeded needs a similarity-matrix model")
        req = TopNRequest(n=int(args.n), seeds=int(args.seeds), candidates=int(args.candidates),
                          diversity=int(args.diversity), tail_mode=args.tail_mode,
                          recency=args.recency, seed=int(args.seed))
        items = est.recommend_seeded(user, req, compute_segments(train))
    else:
        items = full_catalog_top_n(est, train.user_index(user), int(args.n))
    if items:
        values = est.predict([(user, i) for i in items])
        for rank, (i, v) in enumerate(zip(items, values), 1):
            print(f"{rank}\t{i}\t{v:.4f}")


def cmd_similar(args):
    sm = SimilarityMatrix.load(args.model)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pairs = similar_items(str(args.item), int(args.n), sm)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for j, s in pairs:
        print(f"{j}\t{s:.6f}")


def cmd_coldstart(args):
    logs = load_logs(args.logs, parse_scale(args.scale), args.format)
    catalog = _load_catalog(args)
    if catalog is None:
        raise UsageError("coldstart needs --catalog or --movies")
    counts = sorted({int(x) for x in str(args.counts).split(",") if x.strip()})
    regimes = ("long", "short") if args.regime == "both" else (args.regime,)
    text = ""
    for regime in regimes:
        curve = cold_start_experiment(logs, catalog, counts, regime, seed=int(args.seed),
                                      k=int(args.k), n_jobs=args.workers)
        text += curve.to_text() if not text else "".join(curve.to_text().splitlines(True)[1:])
    header = f"# logs={file_fingerprint(args.logs)}\tconfig_hash={config_hash(args)}\n"
    if args.out:
        out_path(args.out).write_text(header + text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_report(args):
    reports = []
    for path in args.inputs:
        if not Path(path).exists():
            raise DataError(f"{path}: no such report")
        reports.extend(EvaluationReport.read_records(path))
    if not reports:
        raise DataError("no report records")
    merged = {}
    for rep in reports:
        merged.setdefault(rep.model, []).append(rep)
    means = []
    lines = ["model\tmetric\tsegment\tmean\tfolds"]
    for model, reps in merged.items():
        agg = EvaluationReport(model, -1)
        keys = list(dict.fromkeys(k for r in reps for k in r.values))
        for metric, seg in keys:
            vals = [r.get(metric, seg) for r in reps if r.get(metric, seg) is not None]
            value = float(np.mean(vals)) if vals else None
            agg.set(metric, seg, value)
            lines.append(f"{model}\t{metric}\t{seg}\t{'NA' if value is None else f'{value:.6g}'}\t{len(vals)}")
        means.append(agg)
    text = format_winners(winners_grid(means)) + "\n" + "\n".join(lines) + "\n"
    if args.out:
        out_path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# -- parser ----------------------------------------------------------------------------

def _data_opts(p):
    p.add_argument("--format", default="tsv", choices=("tsv", "movielens"))
    p.add_argument("--scale", default="1,5", help="rating scale as min,max")


def _model_opts(p):
    p.add_argument("--model", help="similarity matrix or factor model file")
    p.add_argument("--baseline", choices=("default", "random"))
    p.add_argument("--seed", type=int, default=0)


def _gravity_opts(p):
    p.add_argument("--factors", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=0.03)
    p.add_argument("--regularization", type=float, default=0.008)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--max-seconds", type=float, default=None)
    p.add_argument("--validation-fraction", type=float, default=0.005)
    p.add_argument("--no-biases", action="store_true")


def build_parser():
    parser = _Parser(prog="hybridrec", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file with option defaults")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate logs and print dataset statistics")
    p.add_argument("--logs", required=True)
    _data_opts(p)
    p.add_argument("--catalog", help="item<TAB>attribute<TAB>value[<TAB>weight] file")
    p.add_argument("--movies", help="MovieLens movies.dat")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="write train/test fold files")
    p.add_argument("--logs", required=True)
    _data_opts(p)
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--kfold", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-knn", help="compute an item-item similarity matrix")
    p.add_argument("--train", required=True)
    _data_opts(p)
    p.add_argument("--measure", default="wpearson")
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--scoring", default="mean_based", choices=("mean_based", "mono_user"))
    p.add_argument("--catalog")
    p.add_argument("--movies")
    p.add_argument("--emulated", action="store_true", help="similarity on factor-model item vectors")
    p.add_argument("--factor-measure", default="pearson")
    p.add_argument("--random", action="store_true", help="random similarity baseline")
    p.add_argument("--merge-with", help="similarity file blended in with --weight")
    p.add_argument("--weight", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    _gravity_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_knn)

    p = sub.add_parser("train-gravity", help="train a factor model")
    p.add_argument("--train", required=True)
    _data_opts(p)
    _gravity_opts(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--text", help="also write the lossless text export here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_gravity)

    p = sub.add_parser("evaluate", help="score a model on a fold")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    _data_opts(p)
    _model_opts(p)
    p.add_argument("--tasks", default=",".join(TASKS))
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--name")
    p.add_argument("--estimated", action="store_true", help="add the reweighted RMSE diagnostic")
    p.add_argument("--out", help="report prefix (.txt and .tsv)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="Top-N items for one user")
    p.add_argument("--train", required=True)
    _data_opts(p)
    _model_opts(p)
    p.add_argument("--user", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seeded", action="store_true", help="seed-based candidates instead of full catalog")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--diversity", type=int, default=1)
    p.add_argument("--tail-mode", default="any", choices=("any", "short_head", "long_tail"))
    p.add_argument("--recency", default="any", choices=("any", "recent_first"))
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("similar", help="nearest items of one item")
    p.add_argument("--model", required=True)
    p.add_argument("--item", required=True)
    p.add_argument("--n", type=int, default=10)
    p.set_defaults(func=cmd_similar)

    p = sub.add_parser("coldstart", help="RMSE versus number of users per filtering mode")
    p.add_argument("--logs", required=True)
    _data_opts(p)
    p.add_argument("--catalog")
    p.add_argument("--movies")
    p.add_argument("--regime", default="both", choices=("long", "short", "both"))
    p.add_argument("--counts", default="10,30,100,300,1000")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_coldstart)

    p = sub.add_parser("report", help="cross-fold means and per-task winners")
    p.add_argument("inputs", nargs="+", help="report .tsv files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser, argv):
    """Re-parse with config values as defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    ns, rest = pre.parse_known_args(argv)
    if not ns.config:
        return parser.parse_args(argv)
    cfg = read_config(ns.config)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if a in choices), None)
    if command is None:
        return parser.parse_args(argv)
    sub = choices[command]
    known = {a.dest for a in sub._actions} | {a.dest for a in parser._actions}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    typed = {}
    for action in sub._actions + parser._actions:
        if action.dest in cfg:
            value = cfg[action.dest]
            if isinstance(action, argparse._StoreTrueAction):
                value = _bool(value)
            elif action.type is not None:
                value = action.type(value)
            typed[action.dest] = value
    for a in sub._actions:
        if a.dest in typed:
            a.required = False
    sub.set_defaults(**{k: v for k, v in typed.items() if k in {a.dest for a in sub._actions}})
    parser.set_defaults(**{k: v for k, v in typed.items() if k in {a.dest for a in parser._actions}})
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:          # argparse: --help or bad flags
            return exc.code if isinstance(exc.code, int) else EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"hybridrec: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FingerprintMismatch as exc:
        print(f"hybridrec: fingerprint mismatch: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (DataError, FileNotFoundError) as exc:
        print(f"hybridrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"hybridrec: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
