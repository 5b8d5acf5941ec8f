import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridq import data, metrics, nn
from hybridq.errors import DataError, NumericError, ShapeError
from hybridq.metrics import FeatureStats

from oracles import central_difference


def stats(mean, cov):
    return FeatureStats(np.asarray(mean, float), np.asarray(cov, float), 10)


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


# ---------------------------------------------------------------------------
# features and statistics
# ---------------------------------------------------------------------------


def test_features_deterministic(rng):
    x = rng.uniform(-1, 1, (5, 3, 16, 16))
    f1 = metrics.extract_features(x, 3)
    np.testing.assert_array_equal(f1, metrics.extract_features(x, 3))
    assert f1.shape == (5, metrics.FEATURE_DIM)


def test_features_depend_on_seed(rng):
    x = rng.uniform(-1, 1, (2, 3, 16, 16))
    assert not np.allclose(metrics.extract_features(x, 0), metrics.extract_features(x, 1))


def test_constant_images_identical_rows():
    f = metrics.extract_features(np.zeros((4, 3, 16, 16)))
    np.testing.assert_array_equal(f, np.broadcast_to(f[0], f.shape))


def test_features_shape_error():
    with pytest.raises(ShapeError):
        metrics.extract_features(np.zeros((2, 1, 16, 16)))


def test_gaussian_stats_two_points():
    s = metrics.gaussian_stats(np.array([[0.0, 0.0], [2.0, 0.0]]))
    np.testing.assert_allclose(s.mean, [1, 0])
    np.testing.assert_allclose(s.covariance, [[2, 0], [0, 0]])


def test_gaussian_stats_identical_rows():
    s = metrics.gaussian_stats(np.ones((5, 3)))
    np.testing.assert_array_equal(s.covariance, np.zeros((3, 3)))


def test_gaussian_stats_needs_two():
    with pytest.raises(metrics.InsufficientDataError):
        metrics.gaussian_stats(np.ones((1, 3)))


# ---------------------------------------------------------------------------
# eigensolver
# ---------------------------------------------------------------------------


def test_eig_identity():
    w, v = metrics.sym_eig(np.eye(4))
    np.testing.assert_allclose(w, np.ones(4))


def test_eig_two_by_two():
    w, _ = metrics.sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(w, [1.0, 3.0], atol=1e-12)


def test_eig_asymmetric():
    with pytest.raises(ValueError):
        metrics.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_eig_nonconvergence_is_reported(rng):
    a = rng.normal(size=(6, 6))
    with pytest.raises(NumericError):
        metrics.sym_eig(a + a.T, max_sweeps=1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 12))
def test_eig_decomposition(seed, d):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d, d))
    a = a + a.T
    w, v = metrics.sym_eig(a)
    np.testing.assert_allclose(v.T @ v, np.eye(d), atol=1e-10)
    np.testing.assert_allclose((v * w) @ v.T, a, atol=1e-9)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-9)
    assert np.all(np.diff(w) >= 0)


def test_sqrt_psd(rng):
    b = rng.normal(size=(5, 5))
    a = b @ b.T
    s = metrics.sqrt_psd(a)
    np.testing.assert_allclose(s @ s, a, atol=1e-9)


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------


def test_fd_identical_is_zero(rng):
    b = rng.normal(size=(6, 6))
    s = stats(rng.normal(size=6), b @ b.T)
    assert metrics.frechet_distance(s, s) < 1e-8


@settings(max_examples=50, deadline=None)
@given(
    ma=st.floats(-5, 5), mb=st.floats(-5, 5), va=st.floats(0, 10), vb=st.floats(0, 10)
)
def test_fd_scalar_closed_form(ma, mb, va, vb):
    expected = (ma - mb) ** 2 + va + vb - 2 * np.sqrt(va * vb)
    got = metrics.frechet_distance(stats([ma], [[va]]), stats([mb], [[vb]]))
    assert got == pytest.approx(max(expected, 0.0), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 8))
def test_fd_diagonal_decomposition(seed, d):
    rng = np.random.default_rng(seed)
    ma, mb = rng.normal(size=(2, d))
    va, vb = rng.uniform(0, 3, size=(2, d))
    expected = np.sum((ma - mb) ** 2) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2)
    got = metrics.frechet_distance(stats(ma, np.diag(va)), stats(mb, np.diag(vb)))
    assert got == pytest.approx(expected, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 8))
def test_fd_commuting_covariances(seed, d):
    # shared eigenbasis reduces to the diagonal formula; exercises the rotation path
    rng = np.random.default_rng(seed)
    q = random_orthogonal(rng, d)
    va, vb = rng.uniform(0, 3, size=(2, d))
    ma, mb = rng.normal(size=(2, d))
    expected = np.sum((ma - mb) ** 2) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2)
    a = stats(ma, (q * va) @ q.T)
    b = stats(mb, (q * vb) @ q.T)
    assert metrics.frechet_distance(a, b) == pytest.approx(expected, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 6))
def test_fd_symmetric_and_nonnegative(seed, d):
    rng = np.random.default_rng(seed)
    ca, cb = rng.normal(size=(2, d, d))
    a = stats(rng.normal(size=d), ca @ ca.T)
    b = stats(rng.normal(size=d), cb @ cb.T)
    ab, ba = metrics.frechet_distance(a, b), metrics.frechet_distance(b, a)
    assert ab >= 0
    assert ab == pytest.approx(ba, rel=1e-8, abs=1e-8)


def test_fd_dimension_mismatch():
    with pytest.raises(ShapeError):
        metrics.frechet_distance(stats([0.0], [[1.0]]), stats([0.0, 0.0], np.eye(2)))


def test_fid_self_zero(rng):
    x = rng.uniform(-1, 1, (80, 3, 16, 16))
    assert metrics.fid(x, x) < 1e-8


def test_fid_grows_with_corruption(rng):
    x = data.to_arrays(data.synth_lesion_dataset(data.DatasetSpec((40, 40, 40), 16, seed=3)))[0]
    noise = rng.normal(size=x.shape)
    scores = [metrics.fid(x, np.clip(x + lvl * noise, -1, 1)) for lvl in (0.0, 0.1, 0.3, 0.6)]
    assert scores[0] < 1e-8
    assert all(a <= b for a, b in zip(scores, scores[1:]))


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def test_report_perfect():
    r = metrics.classification_report([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert r.accuracy == 1.0
    np.testing.assert_array_equal(r.precision, 1.0)
    np.testing.assert_array_equal(r.recall, 1.0)


def test_report_all_zero_predictions():
    r = metrics.classification_report([0, 0, 0, 0], [0, 0, 1, 1], 2)
    assert r.accuracy == 0.5
    assert r.macro_recall == 0.5
    assert r.macro_precision == 0.25
    assert r.precision[1] == 0.0


def test_report_length_mismatch():
    with pytest.raises(ShapeError):
        metrics.classification_report([0, 1], [0], 2)


@pytest.fixture(scope="module")
def tiny_sets():
    real = data.synth_lesion_dataset(data.DatasetSpec((12, 12, 24), 16, seed=1))
    test = data.synth_lesion_dataset(data.DatasetSpec((10, 10, 10), 16, seed=2))
    gen = [
        data.LabeledImage(im.pixels.copy(), im.label, "generated")
        for im in data.synth_lesion_dataset(data.DatasetSpec((30, 30, 60), 16, seed=4))
    ]
    return real, test, gen


def test_harness_alpha_zero_is_baseline(tiny_sets):
    real, test, gen = tiny_sets
    cfg = metrics.HarnessConfig(epochs=2, seed=5)
    with_pool = metrics.augmentation_harness(real, gen, 0.0, test, cfg)
    without = metrics.augmentation_harness(real, [], 0.0, test, cfg)
    np.testing.assert_array_equal(with_pool.confusion, without.confusion)
    assert with_pool.macro_recall == without.macro_recall


def _count_steps(monkeypatch):
    calls = []
    real_step = nn.Adam.step
    monkeypatch.setattr(nn.Adam, "step", lambda self, *a: calls.append(1) or real_step(self, *a))
    return calls


@pytest.mark.parametrize("equal,expected", [(True, 2 * 2), (False, 2 * 3)])
def test_harness_step_budget(tiny_sets, monkeypatch, equal, expected):
    # 48 real images make 2 batches of 32; the alpha 0.5 mix has 96 images, so 3
    real, test, gen = tiny_sets
    calls = _count_steps(monkeypatch)
    metrics.augmentation_harness(real, gen, 0.5, test, metrics.HarnessConfig(epochs=2, equal_steps=equal))
    assert len(calls) == expected


def test_train_classifier_partial_epoch(tiny_sets, monkeypatch):
    x, y = data.to_arrays(tiny_sets[0])
    calls = _count_steps(monkeypatch)
    metrics.train_classifier(x, y, 3, metrics.HarnessConfig(epochs=1, batch_size=8), steps=9)
    assert len(calls) == 9


def test_harness_rejects_generated_test(tiny_sets):
    real, test, gen = tiny_sets
    with pytest.raises(DataError):
        metrics.augmentation_harness(real, gen, 0.0, gen[:5], metrics.HarnessConfig(epochs=1))


def test_harness_short_supply(tiny_sets):
    real, test, gen = tiny_sets
    with pytest.raises(DataError):
        metrics.augmentation_harness(real, gen[:3], 0.5, test, metrics.HarnessConfig(epochs=1))


def test_classifier_gradients(rng):
    model = metrics.SmallCNN.init(8, 3, rng)
    x = rng.normal(size=(2, 3, 8, 8))
    y = np.array([0, 2])
    logits, cache = model.forward(x)
    _, dl = nn.softmax_cross_entropy(logits, y)
    grads = model.backward(dl, cache)

    for name in ("fc_w", "c1_b"):
        def loss(w):
            m = metrics.SmallCNN(dict(model.params, **{name: w}))
            return nn.softmax_cross_entropy(m.forward(x)[0], y)[0]

        fd = central_difference(loss, model.params[name], 1e-6)
        np.testing.assert_allclose(grads[name], fd, atol=1e-7)
