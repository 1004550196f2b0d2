import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcselect import features, matio
from pcselect.errors import CondestUnavailableError

from conftest import random_sparse_spd, random_spd, tridiag


def test_basic_features_dense_dominated():
    A = matio.from_dense([[4.0, 1.0], [1.0, 3.0]])
    f = features.basic_features(A)
    assert f.density == 1.0
    assert f.n == 2 and f.nnz == 4
    assert f.row_nnz == 2.0
    assert f.ddom == 1.0
    assert f.ddeg == 3.0  # min(4/1, 3/1)


def test_basic_features_no_row_dominated():
    f = features.basic_features(matio.from_dense([[1.0, 2.0], [2.0, 1.0]]))
    assert f.ddom == 0.0
    assert f.ddeg == 0.5


def test_basic_features_tridiagonal():
    f = features.basic_features(tridiag(3))
    assert f.ddom == pytest.approx(2.0 / 3.0)
    assert f.ddeg == 1.0


def test_ddeg_zero_offdiagonal_rows_excluded():
    # row 0 has no off-diagonal entries: contributes +inf, min over the rest
    A = matio.from_coo(3, 3, [0, 1, 1, 2, 2, 1], [0, 1, 2, 2, 1, 0],
                       [5.0, 2.0, 1.0, 3.0, 1.0, 0.0])
    f = features.basic_features(A)
    # note (1,0) entry is an explicit zero and is dropped at assembly
    assert f.ddeg == pytest.approx(2.0)
    assert f.ddom == 1.0


def test_ddeg_cap_when_all_rows_degenerate():
    f = features.basic_features(matio.from_dense(np.diag([3.0, 4.0])))
    assert f.ddeg == features.DDEG_CAP
    assert f.ddom == 1.0


def test_missing_diagonal_counts_as_zero():
    A = matio.from_coo(2, 2, [0, 1], [1, 0], [2.0, 2.0])
    f = features.basic_features(A)
    assert f.ddom == 0.0
    assert f.ddeg == 0.0


def test_condest_diagonal_exact():
    A = matio.from_dense(np.diag([1.0, 10.0, 100.0]))
    assert features.estimate_condest(A) == 100.0


def test_condest_identity():
    assert features.estimate_condest(matio.from_dense(np.eye(5))) == 1.0


def test_condest_tridiagonal_hand_value():
    """||A||_1 = 4 and ||A^{-1}||_1 = 2 for the order-3 chain, so the
    estimate is 8 up to the inner-solve tolerance."""
    est = features.estimate_condest(tridiag(3))
    assert est == pytest.approx(8.0, rel=0.01)


@given(exps=st.lists(st.integers(-8, 8), min_size=2, max_size=12))
def test_condest_exact_on_dyadic_diagonals(exps):
    """Powers of two divide exactly, which makes floating-point exactness
    well-defined for the diagonal contract."""
    d = np.array([2.0**e for e in exps])
    A = matio.from_dense(np.diag(d))
    assert features.estimate_condest(A) == np.abs(d).max() / np.abs(d).min()


def test_condest_lower_bound_against_dense(rng):
    for _ in range(5):
        A = random_spd(15, rng, cond=1e3)
        dense = A.to_dense()
        kappa = np.linalg.norm(dense, 1) * np.linalg.norm(np.linalg.inv(dense), 1)
        est = features.estimate_condest(A)
        assert est <= kappa * (1.0 + 1e-6)
        assert est >= 0.3 * kappa


def test_condest_unavailable_on_inner_nonconvergence(rng):
    A = random_spd(40, rng, cond=1e8)
    with pytest.raises(CondestUnavailableError):
        features.estimate_condest(A, max_iter=2)


def test_extreme_eigs_diagonal():
    A = matio.from_dense(np.diag([1.0, 10.0, 100.0]))
    eigs = features.estimate_extreme_eigs(A, tol=1e-10)
    assert eigs.converged
    assert eigs.min_eig == pytest.approx(1.0, abs=1e-8)
    assert eigs.max_eig == pytest.approx(100.0, rel=1e-8)


def test_extreme_eigs_tridiagonal_closed_form():
    eigs = features.estimate_extreme_eigs(tridiag(3), tol=1e-9)
    assert eigs.min_eig == pytest.approx(2.0 - math.sqrt(2.0), abs=1e-6)
    assert eigs.max_eig == pytest.approx(2.0 + math.sqrt(2.0), abs=1e-6)


def test_extreme_eigs_identity():
    eigs = features.estimate_extreme_eigs(matio.from_dense(np.eye(5)))
    assert eigs.converged
    assert eigs.min_eig == 1.0 and eigs.max_eig == 1.0


def test_extreme_eigs_against_dense_solver(rng):
    # logspace spectra keep the extreme eigenvalues well separated; power
    # iteration stalls (by design) on near-degenerate extremes
    for _ in range(5):
        A = random_spd(20, rng, cond=1e4)
        w = np.linalg.eigvalsh(A.to_dense())
        eigs = features.estimate_extreme_eigs(A, tol=1e-10)
        assert eigs.min_eig == pytest.approx(w[0], rel=1e-6)
        assert eigs.max_eig == pytest.approx(w[-1], rel=1e-6)


def test_extreme_eigs_unconverged_flag(rng):
    A = random_spd(30, rng, cond=1e6)
    eigs = features.estimate_extreme_eigs(A, tol=1e-14, max_iter=2)
    assert not eigs.max_converged


def test_scaling_leaves_basic_features_unchanged(rng):
    A = random_sparse_spd(25, rng)
    # dyadic factor: scaling is exact, so every feature matches bitwise
    B = matio.SparseMatrix(A.n, A.row_ptr, A.col_idx, 8.0 * A.values)
    fa, fb = features.basic_features(A), features.basic_features(B)
    for name in ("density", "n", "nnz", "row_nnz", "ddom", "ddeg"):
        assert getattr(fa, name) == getattr(fb, name)
    # generic factor: the ratio features match to rounding
    C = matio.SparseMatrix(A.n, A.row_ptr, A.col_idx, 7.5 * A.values)
    fc = features.basic_features(C)
    assert (fc.density, fc.n, fc.nnz, fc.row_nnz) == (
        fa.density, fa.n, fa.nnz, fa.row_nnz)
    assert fc.ddom == fa.ddom
    assert fc.ddeg == pytest.approx(fa.ddeg, rel=1e-12)


def test_scaling_leaves_condest_invariant(rng):
    A = random_spd(12, rng)
    B = matio.SparseMatrix(A.n, A.row_ptr, A.col_idx, 3.0 * A.values)
    assert features.estimate_condest(B) == pytest.approx(
        features.estimate_condest(A), rel=1e-8
    )


def test_permutation_invariance_of_all_features(rng):
    A = random_sparse_spd(20, rng)
    perm = rng.permutation(20)
    dense = A.to_dense()[np.ix_(perm, perm)]
    B = matio.from_dense(dense)
    fa = features.compute_features(A, eig_tol=1e-10)
    fb = features.compute_features(B, eig_tol=1e-10)
    for name in ("density", "n", "nnz", "row_nnz", "ddom", "ddeg"):
        assert getattr(fa, name) == pytest.approx(getattr(fb, name), rel=1e-12)
    assert fa.condest == pytest.approx(fb.condest, rel=1e-6)
    assert fa.min_eig == pytest.approx(fb.min_eig, rel=1e-5)
    assert fa.max_eig == pytest.approx(fb.max_eig, rel=1e-5)


def test_negative_min_eig_is_recorded_not_rejected(tmp_path):
    """The estimators are approximate; a negative smallest-eigenvalue
    estimate for a nominally SPD matrix must flow through the table."""
    f = features.ScalarFeatures(
        density=0.1, n=10, nnz=10, row_nnz=1.0, condest=3.6,
        min_eig=-3.60, max_eig=5.8e9, ddom=0.0, ddeg=0.1,
    )
    path = tmp_path / "features.csv"
    features.save_feature_table([("weird", f)], path)
    ids, X, flags = features.load_feature_table(path)
    assert ids == ["weird"]
    assert X[0][features.FEATURE_COLUMNS.index("min_eig")] == -3.60


def test_feature_table_roundtrip_with_missing_condest(tmp_path):
    f = features.ScalarFeatures(
        density=0.5, n=4, nnz=8, row_nnz=2.0, condest=None,
        min_eig=1.0, max_eig=2.0, ddom=0.25, ddeg=0.75,
        condest_converged=False,
    )
    path = tmp_path / "features.csv"
    features.save_feature_table([("m", f)], path)
    ids, X, flags = features.load_feature_table(path)
    assert math.isnan(X[0][features.FEATURE_COLUMNS.index("condest")])
    assert flags[0].tolist() == [False, True]


def test_compute_features_full_vector(rng):
    A = random_sparse_spd(15, rng)
    f = features.compute_features(A)
    v = f.vector()
    assert v.shape == (9,)
    assert np.all(np.isfinite(v))
    assert f.condest_converged and f.eigs_converged


@settings(max_examples=20)
@given(seed=st.integers(0, 2**16), n=st.integers(2, 25))
def test_basic_feature_ranges(seed, n):
    A = random_sparse_spd(n, np.random.default_rng(seed))
    f = features.basic_features(A)
    assert 0.0 < f.density <= 1.0
    assert f.density == f.nnz / n**2
    assert f.row_nnz == f.nnz / n
    assert 0.0 <= f.ddom <= 1.0
    assert f.ddeg >= 0.0
