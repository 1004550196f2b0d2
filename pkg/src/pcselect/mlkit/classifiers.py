"""Multi-label classifiers over scalar, image, and extended feature sets.

Tabular kinds (k-NN, logistic regression, random forest, MLP, benchmark)
take a preprocessed feature matrix; the CNN takes byte images. Multi-label
learning uses binary relevance: one independent binary problem per label.
Every model predicts through a 0.5 score threshold (k-NN: strict neighbor
majority) and substitutes the fallback label, the most frequent one in the
training set, whenever the thresholded set comes out empty.
"""

from dataclasses import dataclass, field

import numpy as np

from . import neural
from .preprocess import FeaturePipeline

MODEL_KINDS = ("benchmark", "knn", "logreg", "rforest", "mlp", "cnn")

MODEL_FILE_VERSION = 1


def fallback_label(Y):
    """Index of the most frequent label column (lowest index on ties)."""
    counts = np.asarray(Y).sum(axis=0)
    return int(np.argmax(counts))


@dataclass
class TrainedModel:
    kind: str
    model: object
    n_labels: int
    fallback_index: int
    threshold: float = 0.5
    pipeline: FeaturePipeline | None = None
    label_names: list = field(default_factory=list)
    seed: int = 0
    image_resolution: int | None = None
    version: int = MODEL_FILE_VERSION


# ---------------------------------------------------------------------------
# Model internals


@dataclass
class BenchmarkModel:
    """Always predicts the training set's most frequent label."""

    label_index: int
    n_labels: int

    def scores(self, X):
        X = np.atleast_2d(X)
        s = np.zeros((X.shape[0], self.n_labels))
        s[:, self.label_index] = 1.0
        return s


@dataclass
class KnnModel:
    X: np.ndarray
    Y: np.ndarray
    k: int = 5

    def scores(self, X):
        """Fraction of the k nearest training rows carrying each label."""
        X = np.atleast_2d(X)
        d2 = ((X[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        return self.Y[order].mean(axis=1)


@dataclass
class LogRegModel:
    w: np.ndarray  # (d, K)
    b: np.ndarray  # (K,)

    def scores(self, X):
        return neural.sigmoid(np.atleast_2d(X) @ self.w + self.b)


def _fit_logreg(X, Y, l2=1.0, tol=1e-6, max_iter=20000):
    """K independent L2-penalized logistic regressions by gradient descent.

    Objective per label: mean BCE + l2/(2n) * ||w||^2 (bias unpenalized).
    The step size 1/L comes from the curvature bound of the sigmoid loss.
    """
    n, d = X.shape
    K = Y.shape[1]
    w = np.zeros((d, K))
    b = np.zeros(K)
    lips = (np.linalg.norm(X, 2) ** 2) / (4.0 * n) + (l2 + n) / n  # + bias row
    step = 1.0 / lips
    for _ in range(max_iter):
        p = neural.sigmoid(X @ w + b)
        resid = (p - Y) / n
        gw = X.T @ resid + (l2 / n) * w
        gb = resid.sum(axis=0)
        w -= step * gw
        b -= step * gb
        if max(np.abs(gw).max(), np.abs(gb).max()) <= tol:
            break
    return LogRegModel(w, b)


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value=None, feature=-1, threshold=0.0, left=None, right=None):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value  # leaf: fraction of positive samples


def _gini(pos, total):
    if total == 0:
        return 0.0
    p = pos / total
    return 2.0 * p * (1.0 - p)


def _grow_tree(X, y, idx, rng, mtry, min_samples_split=2):
    pos = y[idx].sum()
    total = idx.size
    if total < min_samples_split or pos == 0 or pos == total:
        return _TreeNode(value=pos / total)
    d = X.shape[1]
    features = rng.choice(d, size=mtry, replace=False)
    parent = _gini(pos, total)
    best = (0.0, -1, 0.0)  # (gain, feature, threshold)
    for f in features:
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = y[idx][order]
        cum_pos = np.cumsum(sy)
        for cut in range(1, total):
            if sv[cut] == sv[cut - 1]:
                continue
            left_pos = cum_pos[cut - 1]
            gain = parent - (
                cut * _gini(left_pos, cut)
                + (total - cut) * _gini(pos - left_pos, total - cut)
            ) / total
            if gain > best[0]:
                best = (gain, f, (sv[cut] + sv[cut - 1]) / 2.0)
    if best[1] < 0:
        return _TreeNode(value=pos / total)
    _, feature, threshold = best
    mask = X[idx, feature] <= threshold
    return _TreeNode(
        feature=int(feature),
        threshold=float(threshold),
        left=_grow_tree(X, y, idx[mask], rng, mtry, min_samples_split),
        right=_grow_tree(X, y, idx[~mask], rng, mtry, min_samples_split),
    )


def _tree_predict(node, x):
    while node.value is None:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


@dataclass
class RandomForestModel:
    """Binary-relevance random forest: per label, `n_trees` Gini trees grown
    on bootstrap samples with sqrt(d) feature subsampling per split."""

    forests: list  # per label: list of _TreeNode
    n_trees: int

    def scores(self, X):
        X = np.atleast_2d(X)
        out = np.empty((X.shape[0], len(self.forests)))
        for k, trees in enumerate(self.forests):
            for i in range(X.shape[0]):
                out[i, k] = np.mean([_tree_predict(t, X[i]) for t in trees])
        return out


def _fit_rforest(X, Y, n_trees=100, seed=0):
    n, d = X.shape
    mtry = max(1, int(round(np.sqrt(d))))
    forests = []
    for k in range(Y.shape[1]):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        trees = []
        for _ in range(n_trees):
            boot = rng.integers(0, n, size=n)
            trees.append(_grow_tree(X, Y[:, k].astype(float), boot, rng, mtry))
        forests.append(trees)
    return RandomForestModel(forests=forests, n_trees=n_trees)


@dataclass
class MlpModel:
    net: neural.Network

    def scores(self, X):
        return self.net.forward(np.atleast_2d(X), train=False)


@dataclass
class CnnModel:
    net: neural.Network
    m: int

    def scores(self, images):
        return self.net.forward(neural.images_to_input(images), train=False)


# ---------------------------------------------------------------------------
# Public fit / predict


def fit(kind, X, Y, config=None, seed=0, label_names=(), pipeline=None) -> TrainedModel:
    """Train a tabular-feature model; X must already be preprocessed by the
    pipeline that will accompany the model."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 training rows")
    if Y.size == 0 or Y.sum() == 0:
        raise ValueError("label matrix has no positive entries")
    config = config or {}
    if kind == "benchmark":
        model = BenchmarkModel(label_index=fallback_label(Y), n_labels=Y.shape[1])
    elif kind == "knn":
        model = KnnModel(X=X, Y=Y, k=int(config.get("k", 5)))
    elif kind == "logreg":
        model = _fit_logreg(
            X,
            Y,
            l2=float(config.get("l2", 1.0)),
            tol=float(config.get("tol", 1e-6)),
            max_iter=int(config.get("max_iter", 20000)),
        )
    elif kind == "rforest":
        model = _fit_rforest(X, Y, n_trees=int(config.get("n_trees", 100)), seed=seed)
    elif kind == "mlp":
        net = neural.build_mlp(
            X.shape[1], Y.shape[1], hidden=int(config.get("hidden", 128)), seed=seed
        )
        tc = neural.TrainConfig(
            epochs=int(config.get("epochs", 50)),
            batch_size=int(config.get("batch_size", 16)),
            lr=float(config.get("lr", 1e-3)),
            seed=seed,
        )
        neural.train_network(net, X, Y, tc)
        model = MlpModel(net=net)
    else:
        raise ValueError(f"unknown tabular model kind {kind!r}")
    return TrainedModel(
        kind=kind,
        model=model,
        n_labels=Y.shape[1],
        fallback_index=fallback_label(Y),
        pipeline=pipeline,
        label_names=list(label_names),
        seed=seed,
    )


def cnn_train(images, Y, config=None, seed=0, label_names=()) -> TrainedModel:
    """Train the image classifier on byte images of shape (n, m, m, 3)."""
    images = np.asarray(images)
    Y = np.asarray(Y, dtype=np.float64)
    if images.shape[0] != Y.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {Y.shape[0]} label rows")
    if images.shape[0] < 2:
        raise ValueError("need at least 2 training images")
    m = images.shape[1]
    config = config or {}
    net = neural.build_cnn(
        m,
        Y.shape[1],
        c_in=images.shape[3],
        conv1=int(config.get("conv1", 32)),
        conv2=int(config.get("conv2", 64)),
        dense=int(config.get("dense", 128)),
        dropout=float(config.get("dropout", 0.5)),
        seed=seed,
    )
    tc = neural.TrainConfig(
        epochs=int(config.get("epochs", 50)),
        batch_size=int(config.get("batch_size", 16)),
        lr=float(config.get("lr", 1e-3)),
        seed=seed,
    )
    neural.train_network(net, neural.images_to_input(images), Y, tc)
    return TrainedModel(
        kind="cnn",
        model=CnnModel(net=net, m=m),
        n_labels=Y.shape[1],
        fallback_index=fallback_label(Y),
        label_names=list(label_names),
        seed=seed,
        image_resolution=m,
    )


def predict_scores(tm: TrainedModel, x):
    """Per-label scores in [0, 1] for one input (preprocessed features for
    tabular kinds, a byte image for the CNN)."""
    if tm.kind == "cnn":
        return tm.model.scores(x)[0]
    return tm.model.scores(np.atleast_2d(x))[0]


def predict(tm: TrainedModel, x):
    """Nonempty set of label indices for one input."""
    scores = predict_scores(tm, x)
    if tm.kind == "knn":
        k = tm.model.k
        labels = {int(i) for i in np.flatnonzero(scores * k > k / 2.0)}
    else:
        labels = {int(i) for i in np.flatnonzero(scores >= tm.threshold)}
    if not labels:
        labels = {tm.fallback_index}
    return labels
