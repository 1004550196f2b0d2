"""Command-line interface tying the pipeline together.

Subcommands: fetch, features, encode, solve, label, train, eval, report.
Global flags (--seed, --config, --cache-dir) may also come from a flat
key=value config file; explicit flags win. Exit codes: 0 success, 1 usage
error, 2 data error, 3 internal error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, features, imgcodec, labelgen, matio, mlkit
from .errors import (
    AssemblyError,
    EmptyPredictionError,
    FetchError,
    MatrixFormatError,
    NoFeasiblePreconditionerError,
    PreconditionerUnavailableError,
)
from .krylov import LABELED_KINDS, PrecondKind, build_preconditioner, pcg_solve

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_DATA_ERRORS = (
    MatrixFormatError,
    AssemblyError,
    FetchError,
    NoFeasiblePreconditionerError,
    EmptyPredictionError,
    PreconditionerUnavailableError,
    FileNotFoundError,
    NotADirectoryError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def load_config_file(path):
    """Flat key=value lines; '#' starts a comment."""
    config = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _UsageError(f"malformed config line: {raw!r}")
        key, value = line.split("=", 1)
        config[key.strip()] = value.strip()
    return config


def _resolve(flag_value, config, key, default=None, cast=str):
    if flag_value is not None:
        return flag_value
    if key in config:
        return cast(config[key])
    return default


def load_corpus(corpus_dir):
    corpus_dir = Path(corpus_dir)
    paths = sorted(corpus_dir.glob("*.mtx"))
    if not paths:
        raise FileNotFoundError(f"no .mtx files in {corpus_dir}")
    return [(p.stem, matio.read_matrix_market(p)) for p in paths]


def _parse_kinds(spec):
    kinds = []
    for name in spec.split(","):
        name = name.strip().lower()
        if not name:
            continue
        try:
            kinds.append(PrecondKind(name))
        except ValueError:
            raise _UsageError(f"unknown preconditioner kind {name!r}")
    if not kinds:
        raise _UsageError("empty preconditioner list")
    return kinds


def build_parser():
    # global flags live on a shared parent so they are accepted both before
    # and after the subcommand; SUPPRESS keeps subparsers from clobbering
    # values given at the top level
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="global random seed")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="flat key=value config file")
    common.add_argument("--cache-dir", default=argparse.SUPPRESS,
                        help="matrix cache directory")

    parser = _Parser(prog="pcselect", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    p = add("fetch", "download a matrix from the collection")
    p.add_argument("--name", required=True, help="collection name, e.g. HB/bcsstk14")

    p = add("features", "compute the scalar feature table")
    p.add_argument("--corpus", required=True, help="directory of .mtx files")
    p.add_argument("--out", required=True, help="output CSV path")

    p = add("encode", "encode matrices as sparsity images")
    p.add_argument("--corpus", required=True)
    p.add_argument("--m", type=int, default=None, help="image resolution")
    p.add_argument("--out", required=True, help="image dataset directory")

    p = add("solve", "solve one system with a chosen preconditioner")
    p.add_argument("--matrix", required=True, help="Matrix Market file")
    p.add_argument("--pc", default="none", help="preconditioner kind")
    p.add_argument("--rtol", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)

    p = add("label", "build the optimal-preconditioner dataset")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--pcs", default=None, help="comma-separated kinds to time")

    p = add("train", "train one classifier on a labeled corpus")
    p.add_argument("--model", required=True, help="model spec, e.g. cnn_32 or knn")
    p.add_argument("--features", required=True, help="feature table CSV")
    p.add_argument("--labels", required=True, help="label dataset JSONL")
    p.add_argument("--images", default=None, help="image dataset directory")
    p.add_argument("--out", required=True, help="output model file (.npz)")
    p.add_argument("--epochs", type=int, default=None)

    p = add("eval", "run the repeated split evaluation")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--images", default=None)
    p.add_argument("--models", default=None, help="comma-separated model specs")
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--no-svg", action="store_true")

    p = add("report", "recompute summary and plot from metrics CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    return parser


def _load_eval_dataset(features_path, labels_path, images_dir, model_specs):
    ids, X, _flags = features.load_feature_table(features_path)
    labels = labelgen.load_label_dataset(labels_path)
    resolutions = sorted(
        {s.m for s in map(evaluation.parse_model_spec, model_specs) if s.m}
    )
    label_ids = [mid for mid, _, _, _ in labels if mid in set(ids)]
    images = {}
    if resolutions:
        if images_dir is None:
            raise _UsageError("image-based model specs require --images")
        for m in resolutions:
            images[m] = imgcodec.load_image_dataset(images_dir, m, label_ids)
    return evaluation.dataset_from_artifacts(
        ids, X, labels, list(LABELED_KINDS), images
    )


def cmd_fetch(args, config):
    cache = _resolve(getattr(args, "cache_dir", None), config, "cache_dir")
    path = matio.fetch_matrix(args.name, cache_dir=cache)
    print(path)
    return EXIT_OK


def cmd_features(args, config):
    corpus = load_corpus(args.corpus)
    records = []
    for matrix_id, A in corpus:
        f = features.compute_features(A)
        records.append((matrix_id, f))
        print(
            f"{matrix_id}: n={f.n} nnz={f.nnz} "
            f"condest={'?' if f.condest is None else f'{f.condest:.3e}'}"
        )
    features.save_feature_table(records, args.out)
    print(f"wrote {len(records)} rows to {args.out}")
    return EXIT_OK


def cmd_encode(args, config):
    m = _resolve(args.m, config, "m", 32, int)
    corpus = load_corpus(args.corpus)
    written = imgcodec.encode_dataset(corpus, m, args.out)
    print(f"wrote {len(written)} images at m={m} under {args.out}")
    return EXIT_OK


def cmd_solve(args, config):
    A = matio.read_matrix_market(args.matrix)
    try:
        kind = PrecondKind(args.pc.lower())
    except ValueError:
        raise _UsageError(f"unknown preconditioner kind {args.pc!r}")
    rtol = _resolve(args.rtol, config, "rtol", 1e-8, float)
    max_iter = _resolve(args.max_iter, config, "max_iter", None, int)
    M = build_preconditioner(A, kind)
    rng = np.random.default_rng(_resolve(getattr(args, "seed", None), config, "seed", 0, int))
    x_star = rng.standard_normal(A.n)
    b = A.matvec(x_star)
    res = pcg_solve(A, b, M, rtol=rtol, max_iter=max_iter)
    print(
        f"pc={kind.value} n={A.n} iterations={res.iterations} "
        f"rel_residual={res.rel_residual:.3e} converged={res.converged} "
        f"wall_time={res.wall_time:.4f}s"
    )
    return EXIT_OK


def cmd_label(args, config):
    seed = _resolve(getattr(args, "seed", None), config, "seed", 0, int)
    time_limit = _resolve(args.time_limit, config, "time_limit",
                          labelgen.DEFAULT_TIME_LIMIT, float)
    reps = _resolve(args.reps, config, "reps", labelgen.DEFAULT_REPS, int)
    pcs = _resolve(args.pcs, config, "pcs")
    kinds = _parse_kinds(pcs) if pcs else list(LABELED_KINDS)
    corpus = load_corpus(args.corpus)

    def progress(matrix_id, record):
        if record is None:
            print(f"{matrix_id}: UNLABELABLE")
        else:
            names = ",".join(sorted(k.value for k in record.optimal_set))
            print(f"{matrix_id}: optimal={{{names}}} t*={record.t_star:.4f}s")

    records, stats = labelgen.build_label_dataset(
        corpus, kinds=kinds, seed=seed, time_limit=time_limit, reps=reps,
        progress=progress,
    )
    labelgen.save_label_dataset(records, args.out)
    stats_path = Path(args.out).with_suffix(Path(args.out).suffix + ".stats.json")
    stats_path.write_text(json.dumps(stats.as_dict(), indent=2) + "\n")
    print(
        f"labeled {stats.n_labeled}/{stats.n_matrices} matrices; "
        f"mean optima {stats.mean_optima:.2f}; stats in {stats_path}"
    )
    return EXIT_OK


def cmd_train(args, config):
    seed = _resolve(getattr(args, "seed", None), config, "seed", 0, int)
    spec = evaluation.parse_model_spec(args.model)
    dataset = _load_eval_dataset(args.features, args.labels, args.images, [args.model])
    model_config = {}
    epochs = _resolve(args.epochs, config, "epochs", None, int)
    if epochs is not None:
        model_config["epochs"] = epochs
    tm = evaluation.train_for_spec(
        spec, dataset, np.arange(dataset.n), seed, model_config or None
    )
    mlkit.save_model(tm, args.out)
    print(f"trained {args.model} on {dataset.n} matrices -> {args.out}")
    return EXIT_OK


def cmd_eval(args, config):
    seed = _resolve(getattr(args, "seed", None), config, "seed", 0, int)
    model_arg = _resolve(args.models, config, "models", "benchmark,knn")
    model_specs = [s.strip() for s in model_arg.split(",") if s.strip()]
    repetitions = _resolve(args.repetitions, config, "repetitions",
                           evaluation.DEFAULT_REPETITIONS, int)
    dataset = _load_eval_dataset(args.features, args.labels, args.images, model_specs)
    configs = {}
    epochs = _resolve(args.epochs, config, "epochs", None, int)
    if epochs is not None:
        for spec in model_specs:
            parsed = evaluation.parse_model_spec(spec)
            if parsed.kind in ("cnn", "mlp"):
                configs[spec] = {"epochs": epochs}
    report = evaluation.run_experiment(
        dataset,
        model_specs,
        n_repetitions=repetitions,
        seed=seed,
        configs=configs,
        progress=lambda rep, name: print(f"rep {rep:2d}: {name}"),
    )
    written = evaluation.emit_report(report, args.out, svg=not args.no_svg)
    agg = report.aggregates()
    print(f"{'classifier':<24} {'P(acc=1)':>9} {'P(slow<1.5)':>12} {'mean|Yhat|':>11}")
    for name in report.classifiers:
        a = agg[name]
        print(
            f"{name:<24} {a['p_acc1']:>9.3f} {a['p_slow15']:>12.3f} "
            f"{a['mean_pred_size']:>11.2f}"
        )
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args, config):
    report = evaluation.load_metrics_csv(args.metrics)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_summary_csv(report, out / "summary.csv")
    evaluation.write_scatter_svg(report, out / "scatter.svg")
    print(f"wrote {out / 'summary.csv'} and {out / 'scatter.svg'}")
    return EXIT_OK


_COMMANDS = {
    "fetch": cmd_fetch,
    "features": cmd_features,
    "encode": cmd_encode,
    "solve": cmd_solve,
    "label": cmd_label,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config_path = getattr(args, "config", None)
        config = load_config_file(config_path) if config_path else {}
        return _COMMANDS[args.command](args, config)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
