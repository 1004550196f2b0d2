"""Feature preprocessing: median imputation, z-scoring, and PCA.

Every statistic is fitted on training rows only and replayed verbatim on
test rows; the fitted pipeline travels with the trained model.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray  # zero-variance columns carry 1.0 here


def standardize_fit(X) -> StandardizeStats:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("standardization needs at least 2 training rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return StandardizeStats(mean=mean, std=std)


def standardize_apply(stats: StandardizeStats, X):
    return (np.asarray(X, dtype=np.float64) - stats.mean) / stats.std


def impute_fit(X):
    """Per-column medians of the finite entries (0.0 for all-NaN columns)."""
    X = np.asarray(X, dtype=np.float64)
    medians = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j]
        finite = col[np.isfinite(col)]
        medians[j] = np.median(finite) if finite.size else 0.0
    return medians


def impute_apply(medians, X):
    X = np.array(X, dtype=np.float64, copy=True)
    bad = ~np.isfinite(X)
    if bad.any():
        X[bad] = np.broadcast_to(medians, X.shape)[bad]
    return X


@dataclass
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # (n_retained, d), orthonormal rows
    explained_variance_ratio: np.ndarray  # ratios of the retained components
    n_components: int


def pca_fit(X, variance_target=0.99) -> PcaBasis:
    """Centered SVD keeping the smallest prefix of components whose
    explained-variance ratios sum to at least variance_target."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("PCA needs at least 2 training rows")
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s**2
    total = var.sum()
    if total == 0.0:
        # all rows identical: keep one (arbitrary) direction
        return PcaBasis(mean, vt[:1], np.array([1.0]), 1)
    ratios = var / total
    cum = np.cumsum(ratios)
    k = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
    k = min(k, vt.shape[0])
    return PcaBasis(mean, vt[:k], ratios[:k], k)


def pca_apply(basis: PcaBasis, X):
    X = np.asarray(X, dtype=np.float64)
    return (X - basis.mean) @ basis.components.T


def pca_inverse(basis: PcaBasis, scores):
    return np.asarray(scores, dtype=np.float64) @ basis.components + basis.mean


@dataclass
class FeaturePipeline:
    """Raw features -> model input.

    space "scalar": impute + z-score the scalar columns.
    space "extended": the scalar part as above, concatenated with the PCA
    scores of the flattened image vectors (PCA fitted at 99% variance).
    """

    space: str
    medians: np.ndarray
    stats: StandardizeStats
    pca: PcaBasis | None = None

    @classmethod
    def fit(cls, space, scalars, flats=None, variance_target=0.99):
        medians = impute_fit(scalars)
        filled = impute_apply(medians, scalars)
        stats = standardize_fit(filled)
        if space == "scalar":
            return cls(space, medians, stats)
        if space == "extended":
            if flats is None:
                raise ValueError("extended pipeline needs flattened images")
            return cls(space, medians, stats, pca_fit(flats, variance_target))
        raise ValueError(f"unknown feature space {space!r}")

    def transform(self, scalars, flats=None):
        scalars = np.atleast_2d(np.asarray(scalars, dtype=np.float64))
        X = standardize_apply(self.stats, impute_apply(self.medians, scalars))
        if self.space == "extended":
            if flats is None:
                raise ValueError("extended pipeline needs flattened images")
            X = np.hstack([X, pca_apply(self.pca, np.atleast_2d(flats))])
        return X
