import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcselect import mlkit
from pcselect.errors import TrainingDivergedError
from pcselect.mlkit import classifiers, neural, preprocess


# -- standardization and imputation --------------------------------------------


def test_standardize_example():
    stats = preprocess.standardize_fit([[0.0], [2.0]])
    assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
    assert preprocess.standardize_apply(stats, [[0.0]])[0, 0] == -1.0


def test_standardize_constant_column_passthrough():
    stats = preprocess.standardize_fit([[5.0, 1.0], [5.0, 3.0]])
    out = preprocess.standardize_apply(stats, [[5.0, 1.0], [5.0, 3.0]])
    np.testing.assert_array_equal(out[:, 0], [0.0, 0.0])


def test_standardize_train_set_centered(rng):
    X = rng.random((20, 4)) * 10
    stats = preprocess.standardize_fit(X)
    out = preprocess.standardize_apply(stats, X)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)


def test_standardize_needs_two_rows():
    with pytest.raises(ValueError):
        preprocess.standardize_fit([[1.0]])


def test_imputation_uses_train_medians():
    X = np.array([[1.0, np.nan], [3.0, 4.0], [5.0, 8.0]])
    med = preprocess.impute_fit(X)
    np.testing.assert_array_equal(med, [3.0, 6.0])
    filled = preprocess.impute_apply(med, [[np.nan, np.nan]])
    np.testing.assert_array_equal(filled, [[3.0, 6.0]])


# -- PCA -----------------------------------------------------------------------


def test_pca_rank1_line():
    basis = preprocess.pca_fit([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    assert basis.n_components == 1
    assert basis.explained_variance_ratio[0] == pytest.approx(1.0)


def test_pca_full_basis_reconstructs(rng):
    X = rng.standard_normal((10, 3))
    basis = preprocess.pca_fit(X, variance_target=1.0)
    back = preprocess.pca_inverse(basis, preprocess.pca_apply(basis, X))
    np.testing.assert_allclose(back, X, atol=1e-10)


def test_pca_components_orthonormal(rng):
    X = rng.standard_normal((15, 6))
    basis = preprocess.pca_fit(X, variance_target=0.99)
    gram = basis.components @ basis.components.T
    np.testing.assert_allclose(gram, np.eye(basis.n_components), atol=1e-10)


def test_pca_ratios_match_covariance_eigendecomposition(rng):
    """Brute-force oracle: explained-variance ratios from the eigenvalues of
    the sample covariance matrix."""
    X = rng.standard_normal((20, 50))
    basis = preprocess.pca_fit(X, variance_target=1.0)
    cov = np.cov(X, rowvar=False, ddof=1)
    eig = np.sort(np.linalg.eigvalsh(cov))[::-1]
    ratios = eig / eig.sum()
    np.testing.assert_allclose(
        basis.explained_variance_ratio, ratios[: basis.n_components], atol=1e-8
    )


def test_pca_retains_99_percent(rng):
    X = rng.standard_normal((40, 12)) * np.linspace(10, 0.1, 12)
    basis = preprocess.pca_fit(X, variance_target=0.99)
    assert basis.explained_variance_ratio.sum() >= 0.99 - 1e-12
    # minimality: dropping the last retained component goes below target
    if basis.n_components > 1:
        assert basis.explained_variance_ratio[:-1].sum() < 0.99


def test_pipeline_extended_concatenates_pca_scores(rng):
    scalars = rng.random((10, 9))
    flats = rng.random((10, 48))
    pipe = preprocess.FeaturePipeline.fit("extended", scalars, flats)
    X = pipe.transform(scalars, flats)
    assert X.shape == (10, 9 + pipe.pca.n_components)
    # scalar block is the standardized scalars
    np.testing.assert_allclose(X[:, :9].mean(axis=0), 0.0, atol=1e-12)


# -- neural core ----------------------------------------------------------------


def test_cnn_shape_chain_m32():
    net = neural.build_cnn(32, 10, seed=0)
    trace = []
    net.forward(np.zeros((1, 32, 32, 3)), trace=trace)
    assert trace == [
        (32, 32, 3),
        (32, 32, 32), (32, 32, 32), (16, 16, 32),
        (16, 16, 64), (16, 16, 64), (8, 8, 64),
        (4096,), (128,), (128,), (128,), (10,),
    ]


def test_cnn_parameter_count_m32():
    net = neural.build_cnn(32, 10, seed=0)
    conv1 = 3 * 3 * 3 * 32 + 32
    conv2 = 3 * 3 * 32 * 64 + 64
    dense1 = 8 * 8 * 64 * 128 + 128
    out = 128 * 10 + 10
    assert net.n_params == conv1 + conv2 + dense1 + out
    assert (conv1, conv2, out) == (896, 18496, 1290)


def test_cnn_rejects_bad_resolution():
    with pytest.raises(ValueError):
        neural.build_cnn(30, 4)


def test_zero_network_outputs_half():
    net = neural.build_cnn(8, 3, conv1=2, conv2=2, dense=4, seed=0)
    net.set_flat_params(np.zeros(net.n_params))
    scores = neural.cnn_forward(net, np.zeros((8, 8, 3), dtype=np.uint8))
    np.testing.assert_array_equal(scores, [0.5, 0.5, 0.5])


def test_dropout_seeded_and_eval_deterministic(rng):
    net = neural.build_cnn(8, 2, conv1=2, conv2=3, dense=16, dropout=0.5, seed=1)
    img = rng.integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
    a = neural.cnn_forward(net, img, train_mode=True, seed=42)
    b = neural.cnn_forward(net, img, train_mode=True, seed=42)
    c = neural.cnn_forward(net, img, train_mode=True, seed=43)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    e1 = neural.cnn_forward(net, img, train_mode=False, seed=1)
    e2 = neural.cnn_forward(net, img, train_mode=False, seed=99)
    np.testing.assert_array_equal(e1, e2)


def test_gradients_match_finite_differences(rng):
    """Analytic backprop against central differences on a tiny network."""
    net = neural.build_cnn(8, 2, conv1=2, conv2=3, dense=4, dropout=0.0, seed=1)
    assert net.n_params <= 500
    X = rng.random((2, 8, 8, 3))
    Y = np.array([[1.0, 0.0], [0.0, 1.0]])
    flat0 = net.get_flat_params()
    net.loss_and_grads(X, Y, train=False)
    analytic = net.get_flat_grads()
    eps = 1e-6
    for i in range(0, net.n_params, 7):  # sampled subset for speed
        fp = flat0.copy(); fp[i] += eps
        net.set_flat_params(fp)
        lp = neural.bce_loss(net.forward(X), Y)
        fm = flat0.copy(); fm[i] -= eps
        net.set_flat_params(fm)
        lm = neural.bce_loss(net.forward(X), Y)
        num = (lp - lm) / (2 * eps)
        denom = max(abs(num), abs(analytic[i]), 1e-8)
        assert abs(analytic[i] - num) / denom < 1e-4
    net.set_flat_params(flat0)


def test_train_lr_zero_keeps_params(rng):
    net = neural.build_mlp(4, 3, hidden=8, seed=2)
    before = net.get_flat_params().copy()
    X, Y = rng.random((10, 4)), (rng.random((10, 3)) > 0.5).astype(float)
    neural.train_network(net, X, Y, neural.TrainConfig(epochs=3, lr=0.0, seed=0))
    np.testing.assert_array_equal(before, net.get_flat_params())


def test_train_deterministic_under_seed(rng):
    X, Y = rng.random((12, 5)), (rng.random((12, 3)) > 0.5).astype(float)
    nets = []
    for _ in range(2):
        net = neural.build_mlp(5, 3, hidden=8, seed=4)
        neural.train_network(net, X, Y, neural.TrainConfig(epochs=8, seed=11))
        nets.append(net.get_flat_params())
    np.testing.assert_array_equal(nets[0], nets[1])


def test_training_diverged_error(rng):
    net = neural.build_mlp(2, 2, hidden=4, seed=0)
    X = np.array([[np.inf, 1.0], [1.0, 2.0]])
    Y = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(TrainingDivergedError):
        neural.train_network(net, X, Y, neural.TrainConfig(epochs=1, batch_size=2))


# -- classifiers ----------------------------------------------------------------


def test_benchmark_predicts_most_frequent(rng):
    Y = np.zeros((10, 4))
    Y[:, 2] = 1.0
    Y[0, 1] = 1.0
    tm = mlkit.fit("benchmark", rng.random((10, 3)), Y)
    for _ in range(3):
        assert mlkit.predict(tm, rng.random(3)) == {2}


def test_benchmark_tie_breaks_to_lowest_index():
    Y = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert classifiers.fallback_label(Y) == 0


def test_knn_k1_reproduces_training_labels(rng):
    X = rng.random((12, 5))
    Y = (rng.random((12, 4)) > 0.6).astype(float)
    Y[:, 0] = 1.0
    tm = mlkit.fit("knn", X, Y, config={"k": 1})
    for i in range(12):
        assert mlkit.predict(tm, X[i]) == {int(j) for j in np.flatnonzero(Y[i])}


def test_knn_strict_majority():
    # neighbor label counts (3, 2, 0) with k=5: only the first label clears k/2
    X = np.arange(5.0)[:, None]
    Y = np.array([[1, 1, 0], [1, 1, 0], [1, 0, 0], [0, 0, 0], [0, 0, 0]], float)
    tm = classifiers.TrainedModel(
        kind="knn", model=classifiers.KnnModel(X=X, Y=Y, k=5), n_labels=3,
        fallback_index=0,
    )
    assert mlkit.predict(tm, np.array([2.0])) == {0}


def test_logreg_separable_training_accuracy():
    X = np.array([[-3.0], [-2.0], [2.0], [3.0]])
    Y = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], float)
    tm = mlkit.fit("logreg", X, Y)
    preds = [mlkit.predict(tm, X[i]) for i in range(4)]
    assert preds == [{0}, {0}, {1}, {1}]


def test_fit_validates_inputs(rng):
    X = rng.random((4, 2))
    with pytest.raises(ValueError):
        mlkit.fit("logreg", X, np.zeros((4, 2)))  # no positive labels
    with pytest.raises(ValueError):
        mlkit.fit("logreg", X, np.ones((3, 2)))  # row mismatch
    with pytest.raises(ValueError):
        mlkit.fit("nonesuch", X, np.ones((4, 2)))


def test_rforest_learns_split(rng):
    X = np.vstack([rng.normal(-2, 0.3, size=(15, 2)), rng.normal(2, 0.3, size=(15, 2))])
    Y = np.zeros((30, 2))
    Y[:15, 0] = 1.0
    Y[15:, 1] = 1.0
    tm = mlkit.fit("rforest", X, Y, config={"n_trees": 30}, seed=0)
    assert mlkit.predict(tm, np.array([-2.0, -2.0])) == {0}
    assert mlkit.predict(tm, np.array([2.0, 2.0])) == {1}


def test_rforest_deterministic_under_seed(rng):
    X = rng.random((20, 3))
    Y = (rng.random((20, 3)) > 0.5).astype(float)
    Y[:, 0] = 1.0
    s1 = mlkit.fit("rforest", X, Y, config={"n_trees": 15}, seed=3)
    s2 = mlkit.fit("rforest", X, Y, config={"n_trees": 15}, seed=3)
    q = rng.random((5, 3))
    np.testing.assert_array_equal(s1.model.scores(q), s2.model.scores(q))


def test_mlp_learns_separable(rng):
    X = np.array([[-3.0], [-2.5], [2.5], [3.0]])
    Y = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], float)
    tm = mlkit.fit("mlp", X, Y, config={"epochs": 300, "hidden": 16}, seed=0)
    assert [mlkit.predict(tm, X[i]) for i in range(4)] == [{0}, {0}, {1}, {1}]


def test_empty_prediction_falls_back():
    model = classifiers.LogRegModel(w=np.zeros((2, 3)), b=np.array([-9.0, -9.0, -9.0]))
    tm = classifiers.TrainedModel(kind="logreg", model=model, n_labels=3,
                                  fallback_index=1)
    assert mlkit.predict(tm, np.zeros(2)) == {1}


def test_scores_at_exact_threshold_included():
    model = classifiers.LogRegModel(w=np.zeros((2, 2)), b=np.array([0.0, -1.0]))
    tm = classifiers.TrainedModel(kind="logreg", model=model, n_labels=2,
                                  fallback_index=1)
    # sigmoid(0) = 0.5 sits exactly at the threshold
    assert mlkit.predict(tm, np.zeros(2)) == {0}


@settings(max_examples=25, derandomize=True)
@given(seed=st.integers(0, 2**16))
def test_prediction_always_nonempty(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((8, 3))
    Y = (rng.random((8, 3)) > 0.7).astype(float)
    Y[0, 0] = 1.0
    for kind in ("benchmark", "knn", "logreg"):
        tm = mlkit.fit(kind, X, Y, seed=seed)
        assert len(mlkit.predict(tm, rng.random(3))) >= 1


def test_fit_permutation_invariance(rng):
    X = rng.random((14, 4))
    Y = (rng.random((14, 3)) > 0.5).astype(float)
    Y[:, 1] = 1.0
    perm = rng.permutation(14)
    q = rng.random(4)
    for kind in ("benchmark", "knn"):
        a = mlkit.fit(kind, X, Y, seed=0)
        b = mlkit.fit(kind, X[perm], Y[perm], seed=0)
        assert mlkit.predict(a, q) == mlkit.predict(b, q)
    la = mlkit.fit("logreg", X, Y, seed=0)
    lb = mlkit.fit("logreg", X[perm], Y[perm], seed=0)

    def loss(tm):
        p = np.clip(tm.model.scores(X), 1e-12, 1 - 1e-12)
        return -np.mean(Y * np.log(p) + (1 - Y) * np.log(1 - p))

    assert loss(la) == pytest.approx(loss(lb), abs=1e-6)


# -- persistence ----------------------------------------------------------------


def test_model_roundtrip_all_kinds(tmp_path, rng):
    X = rng.random((10, 4))
    Y = (rng.random((10, 3)) > 0.5).astype(float)
    Y[:, 0] = 1.0
    imgs = rng.integers(0, 256, size=(6, 8, 8, 3)).astype(np.uint8)
    Yc = np.zeros((6, 3))
    Yc[np.arange(6), np.arange(6) % 3] = 1.0
    pipe = preprocess.FeaturePipeline.fit("scalar", X)
    models = {
        "benchmark": mlkit.fit("benchmark", X, Y),
        "knn": mlkit.fit("knn", pipe.transform(X), Y, pipeline=pipe),
        "logreg": mlkit.fit("logreg", X, Y),
        "rforest": mlkit.fit("rforest", X, Y, config={"n_trees": 10}, seed=1),
        "mlp": mlkit.fit("mlp", X, Y, config={"epochs": 5}, seed=1),
        "cnn": mlkit.cnn_train(
            imgs, Yc, config={"conv1": 2, "conv2": 3, "dense": 8, "epochs": 2}, seed=0
        ),
    }
    for kind, tm in models.items():
        path = tmp_path / f"{kind}.npz"
        mlkit.save_model(tm, path)
        back = mlkit.load_model(path)
        assert back.version == 1
        assert back.kind == kind
        assert back.fallback_index == tm.fallback_index
        x = imgs[0] if kind == "cnn" else (
            pipe.transform(X)[0] if kind == "knn" else X[0]
        )
        np.testing.assert_array_equal(
            mlkit.predict_scores(tm, x), mlkit.predict_scores(back, x)
        )
        if kind == "knn":
            assert back.pipeline is not None
            np.testing.assert_array_equal(back.pipeline.stats.mean, pipe.stats.mean)


def test_model_file_version_enforced(tmp_path, rng):
    X = rng.random((4, 2))
    Y = np.ones((4, 2))
    tm = mlkit.fit("benchmark", X, Y)
    path = tmp_path / "m.npz"
    mlkit.save_model(tm, path)
    import json

    data = dict(np.load(path))
    meta = json.loads(bytes(data["meta"].tobytes()).decode())
    meta["version"] = 999
    data["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **data)
    with pytest.raises(ValueError, match="version"):
        mlkit.load_model(path)
