import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcselect import labelgen, matio
from pcselect.errors import NoFeasiblePreconditionerError
from pcselect.krylov import PrecondKind as K

from conftest import random_sparse_spd, tridiag

ALL_KINDS = list(labelgen.LABELED_KINDS)


def make_timing(kind, total, feasible=True, matrix_id="m"):
    medians = [total / labelgen.SYSTEMS_PER_MATRIX] * labelgen.SYSTEMS_PER_MATRIX
    return labelgen.PairTiming(
        matrix_id=matrix_id,
        kind=kind,
        per_system_median=medians,
        total_time=total if feasible else math.inf,
        worst_rel_residual=1e-12,
        worst_rel_error=1e-12,
        feasible=feasible,
        failure=None if feasible else "setup: synthetic",
    )


# -- RHS suites ---------------------------------------------------------------


def test_rhs_identity_b_equals_xstar():
    A = matio.from_dense(np.eye(3))
    suite = labelgen.generate_rhs_suite(A, 7, "id3")
    assert len(suite.systems) == 10
    for x_star, b in suite.systems:
        np.testing.assert_array_equal(b, x_star)


def test_rhs_deterministic_under_seed():
    A = tridiag(5)
    s1 = labelgen.generate_rhs_suite(A, 7, "t")
    s2 = labelgen.generate_rhs_suite(A, 7, "t")
    for (x1, b1), (x2, b2) in zip(s1.systems, s2.systems):
        np.testing.assert_array_equal(x1, x2)
        np.testing.assert_array_equal(b1, b2)


def test_rhs_b_is_a_times_xstar():
    A = matio.from_dense(np.diag([2.0, 2.0]))
    suite = labelgen.generate_rhs_suite(A, 3, "d")
    for x_star, b in suite.systems:
        np.testing.assert_array_equal(b, 2.0 * x_star)


def test_suite_seed_stable_across_corpus_order():
    assert labelgen.suite_seed(0, "a") == labelgen.suite_seed(0, "a")
    assert labelgen.suite_seed(0, "a") != labelgen.suite_seed(0, "b")
    assert labelgen.suite_seed(0, "a") != labelgen.suite_seed(1, "a")


# -- timing -------------------------------------------------------------------


def test_time_pair_identity_jacobi_feasible():
    A = matio.from_dense(np.eye(100))
    suite = labelgen.generate_rhs_suite(A, 1, "i100")
    t = labelgen.time_pair(A, K.JACOBI, suite, reps=3, time_limit=10.0)
    assert t.feasible
    assert t.worst_rel_residual < 1e-12
    assert len(t.per_system_median) == 10
    assert t.total_time == sum(t.per_system_median)


def test_time_pair_zero_pivot_infeasible():
    A = matio.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
    suite = labelgen.generate_rhs_suite(A, 1, "z")
    t = labelgen.time_pair(A, K.ILU0, suite, reps=2, time_limit=5.0)
    assert not t.feasible
    assert t.total_time == math.inf
    assert "setup" in t.failure


def test_time_pair_unavailable_kind_infeasible():
    A = tridiag(4)
    suite = labelgen.generate_rhs_suite(A, 1, "t")
    t = labelgen.time_pair(A, K.MG, suite, reps=1, time_limit=5.0)
    assert not t.feasible and t.total_time == math.inf


def test_time_pair_time_limit_breach(rng):
    A = random_sparse_spd(300, rng)
    suite = labelgen.generate_rhs_suite(A, 1, "big")
    t = labelgen.time_pair(A, K.ILU0, suite, reps=1, time_limit=1e-7)
    assert not t.feasible
    assert t.total_time == math.inf
    assert t.failure == "time limit breached"


def test_time_pair_determinism_of_accuracy_fields():
    A = tridiag(40)
    suite = labelgen.generate_rhs_suite(A, 5, "t40")
    t1 = labelgen.time_pair(A, K.ICC0, suite, reps=1, time_limit=10.0)
    t2 = labelgen.time_pair(A, K.ICC0, suite, reps=1, time_limit=10.0)
    assert t1.worst_rel_residual == t2.worst_rel_residual
    assert t1.worst_rel_error == t2.worst_rel_error


def test_median_sum_rule():
    t = make_timing(K.ILU1, 1.0)
    assert t.per_system_median == [0.1] * 10
    assert t.total_time == pytest.approx(1.0)


# -- optimal sets -------------------------------------------------------------


def test_optimal_set_band_inclusion():
    rec = labelgen.optimal_set(
        [make_timing(K.ILU1, 1.0), make_timing(K.SOR, 1.05), make_timing(K.JACOBI, 2.0)]
    )
    assert rec.optimal_set == {K.ILU1, K.SOR}
    assert rec.t_star == 1.0


def test_optimal_set_band_edge_exclusion():
    rec = labelgen.optimal_set([make_timing(K.ILU1, 1.0), make_timing(K.SOR, 1.11)])
    assert rec.optimal_set == {K.ILU1}


def test_optimal_set_no_feasible_pair():
    with pytest.raises(NoFeasiblePreconditionerError):
        labelgen.optimal_set([make_timing(K.ILU1, 1.0, feasible=False)])


@settings(max_examples=60)
@given(
    totals=st.lists(
        st.floats(1e-3, 1e3, allow_nan=False), min_size=1, max_size=len(ALL_KINDS)
    ),
    infeasible_mask=st.lists(st.booleans(), min_size=len(ALL_KINDS),
                             max_size=len(ALL_KINDS)),
)
def test_optimal_set_band_property(totals, infeasible_mask):
    timings = [
        make_timing(kind, total, feasible=not dead)
        for kind, total, dead in zip(ALL_KINDS, totals, infeasible_mask)
    ]
    feasible = [t for t in timings if t.feasible]
    if not feasible:
        with pytest.raises(NoFeasiblePreconditionerError):
            labelgen.optimal_set(timings)
        return
    rec = labelgen.optimal_set(timings)
    t_star = min(t.total_time for t in feasible)
    argmin = [t.kind for t in feasible if t.total_time == t_star]
    assert rec.t_star == t_star
    assert set(argmin) <= rec.optimal_set
    for t in timings:
        if t.kind in rec.optimal_set:
            assert t.feasible and t.total_time <= 1.1 * t_star


@settings(max_examples=60)
@given(
    totals=st.lists(st.floats(1e-3, 1e2, allow_nan=False), min_size=2, max_size=6),
    limits=st.tuples(st.floats(1e-2, 1e3), st.floats(1e-2, 1e3)),
)
def test_lowering_time_limit_never_adds_members(totals, limits):
    lo, hi = sorted(limits)
    timings = [make_timing(kind, total) for kind, total in zip(ALL_KINDS, totals)]

    def label_at(limit):
        re = [labelgen.with_time_limit(t, limit) for t in timings]
        try:
            return labelgen.optimal_set(re).optimal_set
        except NoFeasiblePreconditionerError:
            return frozenset()

    assert label_at(lo) <= label_at(hi)


def test_two_matrix_toy_corpus_matches_brute_force():
    """Hand-built timings against an independent set-comprehension oracle."""
    data = {
        "alpha": {K.ILU0: (0.50, True), K.SOR: (0.54, True), K.JACOBI: (2.0, True)},
        "beta": {K.ILU0: (3.00, True), K.SOR: (0.10, True), K.JACOBI: (0.111, True)},
    }
    for matrix_id, table in data.items():
        timings = [
            make_timing(kind, total, feasible=ok, matrix_id=matrix_id)
            for kind, (total, ok) in table.items()
        ]
        rec = labelgen.optimal_set(timings)
        t_star = min(t for t, ok in table.values() if ok)
        expected = {
            kind for kind, (t, ok) in table.items() if ok and t <= 1.1 * t_star
        }
        assert rec.optimal_set == expected
        assert rec.t_star == t_star
    # the beta row exercises the band boundary: 0.111 > 1.1 * 0.10
    beta = labelgen.optimal_set(
        [make_timing(k, t, feasible=ok, matrix_id="beta")
         for k, (t, ok) in data["beta"].items()]
    )
    assert beta.optimal_set == {K.SOR}


# -- dataset build + persistence ----------------------------------------------


def small_corpus(rng):
    return [
        ("chain", tridiag(60)),
        ("dog", random_sparse_spd(50, rng, dominance=4.0)),
        ("cat", random_sparse_spd(40, rng, dominance=4.0)),
    ]


def test_build_label_dataset_and_stats(rng):
    kinds = [K.JACOBI, K.ILU0]
    records, stats = labelgen.build_label_dataset(
        small_corpus(rng), kinds=kinds, seed=1, time_limit=10.0, reps=1
    )
    assert len(records) == 3
    assert stats.n_labeled == 3 and not stats.unlabelable
    assert set(stats.kind_frequency) == {"jacobi", "ilu0"}
    assert stats.mean_optima >= 1.0
    sizes = sorted(stats.size_distribution)
    assert all(1 <= s <= 2 for s in sizes)
    assert sum(stats.size_distribution.values()) == pytest.approx(1.0)


def test_single_optimal_corpus_mean():
    records = [
        labelgen.LabelRecord("a", frozenset({K.ILU0}), 1.0, {}),
        labelgen.LabelRecord("b", frozenset({K.SOR}), 2.0, {}),
    ]
    stats = labelgen.dataset_stats(records)
    assert stats.mean_optima == 1.0
    assert stats.size_distribution == {1: 1.0}


def test_label_dataset_jsonl_roundtrip(tmp_path):
    rec = labelgen.optimal_set(
        [
            make_timing(K.ILU1, 1.0),
            make_timing(K.SOR, 1.05),
            make_timing(K.JACOBI, 2.0, feasible=False),
        ]
    )
    path = tmp_path / "labels.jsonl"
    labelgen.save_label_dataset([rec], path)
    obj = json.loads(path.read_text().splitlines()[0])
    assert obj["timings"]["jacobi"]["total_time"] == "inf"
    loaded = labelgen.load_label_dataset(path)
    matrix_id, optimal, t_star, totals = loaded[0]
    assert matrix_id == "m"
    assert optimal == {K.ILU1, K.SOR}
    assert t_star == 1.0
    assert totals[K.JACOBI] == (math.inf, False)
    assert totals[K.SOR] == (1.05, True)
