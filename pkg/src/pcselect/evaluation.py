"""Evaluation protocol: accuracy and slowdown metrics, repeated 80/20
splits, and report emission.

accuracy(Y, Yhat) = |Y intersect Yhat| / |Yhat| is precision-style: it
punishes over-prediction. slowdown is the best predicted kind's total time
over the fastest optimal time; it is optimistic (min over the prediction)
and complements accuracy. Aggregates are pooled relative frequencies over
all (repetition, test matrix) pairs; per-repetition means are also emitted.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyPredictionError
from .krylov import PrecondKind
from .mlkit import FeaturePipeline, TrainedModel, cnn_train, fit, predict
from .mlkit.classifiers import MODEL_KINDS

SLOWDOWN_THRESHOLD = 1.5
TEST_FRACTION = 0.2
DEFAULT_REPETITIONS = 30


def accuracy(y_true, y_pred):
    """Fraction of predicted labels that are truly optimal."""
    y_pred = set(y_pred)
    if not y_pred:
        raise EmptyPredictionError("prediction set must be nonempty")
    return len(set(y_true) & y_pred) / len(y_pred)


def slowdown(y_pred, totals, t_star):
    """Best predicted total time over the fastest optimal time.

    `totals` maps kind -> (total_time, feasible); predicted kinds that are
    infeasible or were never timed contribute +inf.
    """
    if t_star <= 0:
        raise ValueError(f"t_star must be positive, got {t_star}")
    best = math.inf
    for kind in y_pred:
        total, feasible = totals.get(kind, (math.inf, False))
        if feasible and total < best:
            best = total
    return best / t_star


@dataclass
class SplitPlan:
    seed: int
    repetition: int  # 1-based
    train_idx: np.ndarray
    test_idx: np.ndarray


def make_splits(n_items, n_repetitions, seed, test_fraction=TEST_FRACTION):
    """Seeded 80/20 splits; the rounding remainder goes to the train side."""
    n_test = int(n_items * test_fraction)
    if n_test < 1:
        raise ValueError(
            f"corpus of {n_items} matrices is too small for a "
            f"{test_fraction:.0%} test split"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    plans = []
    for rep in range(1, n_repetitions + 1):
        perm = rng.permutation(n_items)
        plans.append(
            SplitPlan(
                seed=seed,
                repetition=rep,
                train_idx=np.sort(perm[n_test:]),
                test_idx=np.sort(perm[:n_test]),
            )
        )
    return plans


# ---------------------------------------------------------------------------
# Model specs: "<kind>" for scalar features, "<kind>_<m>" for image models,
# "<kind>_ext<m>" for the extended (scalar + PCA-reduced image) features.


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str
    space: str  # "scalar" | "image" | "extended"
    m: int | None = None


def parse_model_spec(spec) -> ModelSpec:
    parts = spec.split("_")
    kind = parts[0]
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind in spec {spec!r}")
    if len(parts) == 1:
        if kind == "cnn":
            raise ValueError("cnn specs need a resolution, e.g. cnn_32")
        return ModelSpec(spec, kind, "scalar")
    if len(parts) != 2:
        raise ValueError(f"malformed model spec {spec!r}")
    suffix = parts[1]
    if suffix.startswith("ext"):
        if kind == "cnn":
            raise ValueError("cnn does not take extended features")
        return ModelSpec(spec, kind, "extended", int(suffix[3:]))
    m = int(suffix)
    if kind == "cnn":
        return ModelSpec(spec, kind, "image", m)
    # a bare resolution suffix on a tabular kind means the extended set,
    # matching the CNN_32 / RandomForest_32 style naming
    return ModelSpec(spec, kind, "extended", m)


@dataclass
class EvalDataset:
    """Everything the experiment loop needs, aligned by matrix index."""

    ids: list
    scalars: np.ndarray  # (n, 9), NaN where an estimator failed
    Y: np.ndarray  # (n, K) binary
    kinds: list  # label order, list of PrecondKind
    totals: list  # per matrix: {PrecondKind: (total_time, feasible)}
    t_star: list
    images: dict = field(default_factory=dict)  # m -> (n, m, m, 3) uint8

    @property
    def n(self):
        return len(self.ids)

    def flats(self, m):
        return self.images[m].reshape(self.n, -1).astype(np.float64)


def dataset_from_artifacts(feature_ids, X, labels, kinds, images=None):
    """Align a feature table with label records into an EvalDataset.

    `labels` is the output of labelgen.load_label_dataset; matrices missing
    from either side are dropped. Label vectors follow `kinds` order.
    """
    index = {mid: i for i, mid in enumerate(feature_ids)}
    ids = []
    rows = []
    Y = []
    totals = []
    t_star = []
    for mid, optimal, ts, tot in labels:
        if mid not in index:
            continue
        ids.append(mid)
        rows.append(X[index[mid]])
        Y.append([1.0 if k in optimal else 0.0 for k in kinds])
        totals.append(tot)
        t_star.append(ts)
    return EvalDataset(
        ids=ids,
        scalars=np.array(rows, dtype=np.float64),
        Y=np.array(Y, dtype=np.float64),
        kinds=list(kinds),
        totals=totals,
        t_star=t_star,
        images=images or {},
    )


@dataclass
class PairMetric:
    classifier: str
    repetition: int
    matrix_id: str
    accuracy: float
    slowdown: float
    pred_set: tuple  # kind names, sorted


@dataclass
class EvalReport:
    rows: list
    classifiers: list
    n_repetitions: int
    seed: int
    slowdown_threshold: float = SLOWDOWN_THRESHOLD

    def aggregates(self):
        """Pooled relative frequencies per classifier, plus per-repetition
        means of the same events."""
        out = {}
        for name in self.classifiers:
            rows = [r for r in self.rows if r.classifier == name]
            n = len(rows)
            acc1 = [1.0 if r.accuracy == 1.0 else 0.0 for r in rows]
            slow = [
                1.0 if r.slowdown < self.slowdown_threshold else 0.0 for r in rows
            ]
            reps = sorted({r.repetition for r in rows})
            rep_means_acc = [
                float(np.mean([a for a, r in zip(acc1, rows) if r.repetition == rep]))
                for rep in reps
            ]
            rep_means_slow = [
                float(np.mean([s for s, r in zip(slow, rows) if r.repetition == rep]))
                for rep in reps
            ]
            out[name] = {
                "p_acc1": sum(acc1) / n if n else 0.0,
                "p_slow15": sum(slow) / n if n else 0.0,
                "mean_pred_size": (
                    float(np.mean([len(r.pred_set) for r in rows])) if n else 0.0
                ),
                "p_acc1_repmean": float(np.mean(rep_means_acc)) if n else 0.0,
                "p_slow15_repmean": float(np.mean(rep_means_slow)) if n else 0.0,
            }
        return out


def _model_seed(base_seed, repetition, spec_index):
    return int(
        np.random.SeedSequence([base_seed, repetition, spec_index]).generate_state(1)[0]
    )


def train_for_spec(spec: ModelSpec, dataset: EvalDataset, train_idx, seed, config):
    Ytr = dataset.Y[train_idx]
    names = [k.value for k in dataset.kinds]
    if spec.space == "image":
        return cnn_train(
            dataset.images[spec.m][train_idx], Ytr, config=config, seed=seed,
            label_names=names,
        )
    if spec.space == "scalar":
        pipeline = FeaturePipeline.fit("scalar", dataset.scalars[train_idx])
        Xtr = pipeline.transform(dataset.scalars[train_idx])
    else:
        flats = dataset.flats(spec.m)
        pipeline = FeaturePipeline.fit(
            "extended", dataset.scalars[train_idx], flats[train_idx]
        )
        Xtr = pipeline.transform(dataset.scalars[train_idx], flats[train_idx])
    return fit(
        spec.kind, Xtr, Ytr, config=config, seed=seed, label_names=names,
        pipeline=pipeline,
    )


def predict_for_spec(
    spec: ModelSpec, tm: TrainedModel, dataset: EvalDataset, index
):
    """Predicted set of PrecondKind for one matrix index."""
    if spec.space == "image":
        labels = predict(tm, dataset.images[spec.m][index])
    elif spec.space == "scalar":
        x = tm.pipeline.transform(dataset.scalars[index][None, :])[0]
        labels = predict(tm, x)
    else:
        x = tm.pipeline.transform(
            dataset.scalars[index][None, :], dataset.flats(spec.m)[index][None, :]
        )[0]
        labels = predict(tm, x)
    return {dataset.kinds[i] for i in labels}


def run_experiment(
    dataset: EvalDataset,
    model_specs,
    n_repetitions=DEFAULT_REPETITIONS,
    seed=0,
    configs=None,
    slowdown_threshold=SLOWDOWN_THRESHOLD,
    progress=None,
) -> EvalReport:
    """Repeated train/test evaluation with splits shared across classifiers
    (comparisons are paired). The benchmark classifier is always included.
    """
    specs = [parse_model_spec(s) for s in model_specs]
    if not any(s.kind == "benchmark" for s in specs):
        specs.insert(0, parse_model_spec("benchmark"))
    configs = configs or {}
    splits = make_splits(dataset.n, n_repetitions, seed)
    rows = []
    for plan in splits:
        for spec_index, spec in enumerate(specs):
            model_seed = _model_seed(seed, plan.repetition, spec_index)
            tm = train_for_spec(
                spec, dataset, plan.train_idx, model_seed, configs.get(spec.name)
            )
            for idx in plan.test_idx:
                pred = predict_for_spec(spec, tm, dataset, idx)
                y_true = {
                    dataset.kinds[k]
                    for k in np.flatnonzero(dataset.Y[idx] == 1.0)
                }
                rows.append(
                    PairMetric(
                        classifier=spec.name,
                        repetition=plan.repetition,
                        matrix_id=dataset.ids[idx],
                        accuracy=accuracy(y_true, pred),
                        slowdown=slowdown(pred, dataset.totals[idx], dataset.t_star[idx]),
                        pred_set=tuple(sorted(k.value for k in pred)),
                    )
                )
            if progress:
                progress(plan.repetition, spec.name)
    return EvalReport(
        rows=rows,
        classifiers=[s.name for s in specs],
        n_repetitions=n_repetitions,
        seed=seed,
        slowdown_threshold=slowdown_threshold,
    )


# ---------------------------------------------------------------------------
# Report emission


def _fmt(x):
    if math.isinf(x):
        return "inf"
    return repr(float(x))


def write_metrics_csv(report: EvalReport, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["classifier", "repetition", "matrix_id", "accuracy", "slowdown", "pred_set"]
        )
        for r in report.rows:
            writer.writerow(
                [
                    r.classifier,
                    r.repetition,
                    r.matrix_id,
                    _fmt(r.accuracy),
                    _fmt(r.slowdown),
                    "|".join(r.pred_set),
                ]
            )


def load_metrics_csv(path):
    rows = []
    classifiers = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = [
            "classifier", "repetition", "matrix_id", "accuracy", "slowdown", "pred_set",
        ]
        if header != expected:
            raise ValueError(f"unexpected metrics header {header}")
        n_reps = 0
        for rec in reader:
            rows.append(
                PairMetric(
                    classifier=rec[0],
                    repetition=int(rec[1]),
                    matrix_id=rec[2],
                    accuracy=float(rec[3]),
                    slowdown=math.inf if rec[4] == "inf" else float(rec[4]),
                    pred_set=tuple(rec[5].split("|")) if rec[5] else (),
                )
            )
            if rec[0] not in classifiers:
                classifiers.append(rec[0])
            n_reps = max(n_reps, int(rec[1]))
    return EvalReport(rows=rows, classifiers=classifiers, n_repetitions=n_reps, seed=-1)


def write_summary_csv(report: EvalReport, path):
    agg = report.aggregates()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "classifier",
                "p_acc1",
                "p_slow15",
                "mean_pred_size",
                "p_acc1_repmean",
                "p_slow15_repmean",
            ]
        )
        for name in report.classifiers:
            a = agg[name]
            writer.writerow(
                [
                    name,
                    _fmt(a["p_acc1"]),
                    _fmt(a["p_slow15"]),
                    _fmt(a["mean_pred_size"]),
                    _fmt(a["p_acc1_repmean"]),
                    _fmt(a["p_slow15_repmean"]),
                ]
            )


def write_scatter_svg(report: EvalReport, path, size=480):
    """P(accuracy=1) on x against P(slowdown<threshold) on y, one labeled
    marker per classifier."""
    agg = report.aggregates()
    margin = 50
    span = size - 2 * margin

    def sx(v):
        return margin + v * span

    def sy(v):
        return size - margin - v * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{margin}" y1="{size - margin}" x2="{size - margin}" '
        f'y2="{size - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{size - margin}" '
        f'stroke="black"/>',
        f'<text x="{size / 2:.0f}" y="{size - 10}" text-anchor="middle" '
        f'font-size="12">P(accuracy = 1)</text>',
        f'<text x="14" y="{size / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {size / 2:.0f})">'
        f"P(slowdown &lt; {report.slowdown_threshold})</text>",
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{sx(tick):.1f}" y="{size - margin + 16}" '
            f'text-anchor="middle" font-size="10">{tick:g}</text>'
        )
        parts.append(
            f'<text x="{margin - 8}" y="{sy(tick) + 3:.1f}" text-anchor="end" '
            f'font-size="10">{tick:g}</text>'
        )
    for name in report.classifiers:
        a = agg[name]
        x, y = sx(a["p_acc1"]), sy(a["p_slow15"])
        parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="steelblue" '
            f'class="marker"/>'
        )
        parts.append(
            f'<text x="{x + 6:.2f}" y="{y - 6:.2f}" font-size="10">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def emit_report(report: EvalReport, out_dir, svg=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out / "metrics.csv")
    write_summary_csv(report, out / "summary.csv")
    written = [out / "metrics.csv", out / "summary.csv"]
    if svg:
        write_scatter_svg(report, out / "scatter.svg")
        written.append(out / "scatter.svg")
    return written
