"""Scalar matrix features: density, size, diagonal dominance, and estimates
of the 1-norm condition number and the extreme eigenvalues.

The condition estimate uses the Hager-Higham 1-norm power method, with each
inverse application done by an (unpreconditioned) conjugate-gradient solve;
the eigenvalue estimates use power iteration and inverse iteration. These
estimators are input signals for the classifiers, not reported results, so
parity with any particular library is not a goal.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CondestUnavailableError
from .krylov import pcg_solve
from .matio import SparseMatrix

#: Value recorded for ddeg when every row has a zero off-diagonal sum.
DDEG_CAP = 1e12

#: Column order of the persisted feature table. The nine feature columns are
#: followed by the two estimator convergence flags.
FEATURE_COLUMNS = [
    "density",
    "n",
    "nnz",
    "row_nnz",
    "condest",
    "min_eig",
    "max_eig",
    "ddom",
    "ddeg",
]
FLAG_COLUMNS = ["condest_converged", "eigs_converged"]


@dataclass
class ScalarFeatures:
    density: float
    n: int
    nnz: int
    row_nnz: float
    condest: float | None
    min_eig: float | None
    max_eig: float | None
    ddom: float
    ddeg: float
    condest_converged: bool = True
    eigs_converged: bool = True

    def vector(self):
        """Feature values in FEATURE_COLUMNS order, NaN where missing."""
        out = []
        for name in FEATURE_COLUMNS:
            v = getattr(self, name)
            out.append(math.nan if v is None else float(v))
        return np.array(out)


def basic_features(A: SparseMatrix) -> ScalarFeatures:
    """Features computable by direct row scans (no estimators).

    A row with zero off-diagonal absolute sum contributes +inf to the ddeg
    minimum; if every row is like that, ddeg is recorded as DDEG_CAP.
    Missing diagonal entries count as 0.
    """
    n = A.n
    nnz = A.nnz
    d = A.diagonal()
    rows = A.expanded_rows()
    abs_row_sums = np.bincount(rows, weights=np.abs(A.values), minlength=n)
    off_sums = abs_row_sums - np.abs(d)
    # guard against tiny negative round-off from the subtraction
    off_sums = np.maximum(off_sums, 0.0)

    dominated = np.abs(d) > off_sums
    positive = off_sums > 0.0
    if np.any(positive):
        ddeg = float(np.min(np.abs(d[positive]) / off_sums[positive]))
    else:
        ddeg = DDEG_CAP
    return ScalarFeatures(
        density=nnz / (n * n),
        n=n,
        nnz=nnz,
        row_nnz=nnz / n,
        condest=None,
        min_eig=None,
        max_eig=None,
        ddom=float(np.count_nonzero(dominated)) / n,
        ddeg=ddeg,
    )


def norm1(A: SparseMatrix):
    """Exact 1-norm (maximum absolute column sum)."""
    col_sums = np.bincount(A.col_idx, weights=np.abs(A.values), minlength=A.n)
    return float(col_sums.max()) if A.nnz else 0.0


def _inverse_apply(A, v, solver_tol, max_iter):
    res = pcg_solve(A, v, None, rtol=solver_tol, max_iter=max_iter)
    if not res.converged:
        raise CondestUnavailableError(
            f"inner CG solve did not converge within {max_iter} iterations"
        )
    return res.x


def estimate_condest(A: SparseMatrix, solver_tol=1e-10, max_restarts=5, max_iter=None):
    """Hager-Higham estimate of the 1-norm condition number of SPD A.

    ||A||_1 is computed exactly; ||A^{-1}||_1 is estimated by the 1-norm
    power method, where each application of A^{-1} is a CG solve to relative
    residual solver_tol. The result is a lower bound on the true condition
    number, up to the inner-solve tolerance.
    """
    n = A.n
    if max_iter is None:
        max_iter = 10 * n
    x = np.full(n, 1.0 / n)
    est = 0.0
    for it in range(max_restarts):
        y = _inverse_apply(A, x, solver_tol, max_iter)
        est_new = float(np.sum(np.abs(y)))
        if it > 0 and est_new <= est:
            break
        est = max(est, est_new)
        xi = np.where(y >= 0.0, 1.0, -1.0)
        z = _inverse_apply(A, xi, solver_tol, max_iter)
        if float(np.max(np.abs(z))) <= float(z @ x):
            break
        x = np.zeros(n)
        x[int(np.argmax(np.abs(z)))] = 1.0
    return norm1(A) * est


@dataclass
class ExtremeEigs:
    min_eig: float
    max_eig: float
    min_converged: bool
    max_converged: bool

    @property
    def converged(self):
        return self.min_converged and self.max_converged


_EIG_START_SEED = 0x5EED


def _rayleigh_iteration(A, apply_step, tol, max_iter):
    """Shared loop: step the vector, track the Rayleigh quotient of A."""
    rng = np.random.default_rng(_EIG_START_SEED)
    v = rng.standard_normal(A.n)
    v /= np.linalg.norm(v)
    lam = math.nan
    for _ in range(max_iter):
        w = apply_step(v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0, True
        v = w / norm_w
        lam_new = float(v @ A.matvec(v))
        if not math.isnan(lam) and abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new, True
        lam = lam_new
    return lam, False


def estimate_extreme_eigs(A: SparseMatrix, tol=1e-6, max_iter=1000, solver_tol=1e-10):
    """Largest-magnitude eigenvalue by power iteration, smallest-magnitude by
    inverse iteration (each step a CG solve). Iterates until the Rayleigh
    quotient's relative change drops to tol; hitting max_iter returns the
    last iterate flagged unconverged.
    """
    max_eig, max_ok = _rayleigh_iteration(A, A.matvec, tol, max_iter)

    def inv_step(v):
        res = pcg_solve(A, v, None, rtol=solver_tol, max_iter=10 * A.n)
        if not res.converged:
            raise _InverseStepFailed(res.x)
        return res.x

    try:
        min_eig, min_ok = _rayleigh_iteration(A, inv_step, tol, max_iter)
    except _InverseStepFailed as exc:
        w = exc.last
        norm_w = np.linalg.norm(w)
        if norm_w > 0.0:
            w = w / norm_w
            min_eig = float(w @ A.matvec(w))
        else:
            min_eig = math.nan
        min_ok = False
    return ExtremeEigs(min_eig, max_eig, min_ok, max_ok)


class _InverseStepFailed(Exception):
    def __init__(self, last):
        self.last = last


def compute_features(A: SparseMatrix, eig_tol=1e-6, eig_max_iter=1000,
                     solver_tol=1e-10) -> ScalarFeatures:
    """All nine features plus convergence flags for one matrix.

    A failed condition estimate leaves condest missing (imputed later at
    model time); unconverged eigenvalue estimates are recorded as-is with
    the flag cleared. A negative min_eig for a nominally SPD matrix is
    recorded, not rejected: the estimators are approximate by design.
    """
    feats = basic_features(A)
    try:
        feats.condest = estimate_condest(A, solver_tol=solver_tol)
        feats.condest_converged = True
    except CondestUnavailableError:
        feats.condest = None
        feats.condest_converged = False
    eigs = estimate_extreme_eigs(A, tol=eig_tol, max_iter=eig_max_iter,
                                 solver_tol=solver_tol)
    feats.min_eig = eigs.min_eig
    feats.max_eig = eigs.max_eig
    feats.eigs_converged = eigs.converged
    return feats


# ---------------------------------------------------------------------------
# Feature table persistence


def save_feature_table(records, path):
    """Write `{matrix_id: ScalarFeatures}` pairs as CSV (missing -> empty)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["matrix_id"] + FEATURE_COLUMNS + FLAG_COLUMNS)
        for matrix_id, f in records:
            row = [matrix_id]
            for name in FEATURE_COLUMNS:
                v = getattr(f, name)
                if v is None or (isinstance(v, float) and math.isnan(v)):
                    row.append("")
                else:
                    row.append(repr(float(v)) if isinstance(v, float) else v)
            row.append(int(f.condest_converged))
            row.append(int(f.eigs_converged))
            writer.writerow(row)


def load_feature_table(path):
    """Read the CSV back as (ids, X, flags); missing cells become NaN."""
    ids = []
    rows = []
    flags = []
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["matrix_id"] + FEATURE_COLUMNS + FLAG_COLUMNS
        if header != expected:
            raise ValueError(f"unexpected feature table header: {header}")
        for row in reader:
            ids.append(row[0])
            rows.append(
                [math.nan if cell == "" else float(cell) for cell in row[1:10]]
            )
            flags.append([bool(int(cell)) for cell in row[10:12]])
    return ids, np.array(rows, dtype=np.float64), np.array(flags, dtype=bool)
