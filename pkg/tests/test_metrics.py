"""Tests for the automatic evaluation metrics."""

import math

import mpmath
import numpy as np
import pytest

from creagen.errors import ValidationError
from creagen.metrics import (
    ClassifierBundle,
    MetricReport,
    am_from_probs,
    category_histogram,
    compute_metrics,
    confusion_score,
    entropy_rows,
    histogram_from_probs,
    inception_like_from_probs,
    inception_like_score,
    nn_distance,
    photometrics,
    train_classifier,
)
from creagen.synth import generate_dataset


def _mp_kl(p, q):
    return mpmath.fsum(mpmath.mpf(a) * mpmath.log(mpmath.mpf(a) / mpmath.mpf(b)) for a, b in zip(p, q) if a > 0)


def oracle_inception(p):
    with mpmath.workdps(40):
        n, k = len(p), len(p[0])
        marg = [mpmath.fsum(mpmath.mpf(row[j]) for row in p) / n for j in range(k)]
        return float(mpmath.exp(mpmath.fsum(_mp_kl(row, marg) for row in p) / n))


def oracle_am(p, c):
    with mpmath.workdps(40):
        n, k = len(p), len(p[0])
        marg = [mpmath.fsum(mpmath.mpf(row[j]) for row in p) / n for j in range(k)]
        return float(mpmath.fsum(_mp_kl(c, row) for row in p) / n - _mp_kl(c, marg))


def oracle_entropy(row):
    with mpmath.workdps(40):
        return float(-mpmath.fsum(mpmath.mpf(a) * mpmath.log(mpmath.mpf(a)) for a in row if a > 0))


def fixed_probs(seed, n=30, k=7):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.full(k, 0.7), size=n)


class TestProbabilityScores:
    def test_inception_identical_rows(self):
        p = np.tile([0.2, 0.3, 0.5], (5, 1))
        assert inception_like_from_probs(p) == pytest.approx(1.0, abs=1e-15)

    def test_inception_one_hot(self):
        p = np.full((7, 7), 1e-9)
        np.fill_diagonal(p, 1 - 6e-9)
        assert inception_like_from_probs(p) == pytest.approx(7.0, rel=1e-6)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_inception_oracle(self, seed):
        p = fixed_probs(seed)
        assert abs(inception_like_from_probs(p) - oracle_inception(p.tolist())) <= 1e-8

    def test_am_identical_rows(self):
        p = np.tile([0.2, 0.3, 0.5], (4, 1))
        assert am_from_probs(p, [0.4, 0.4, 0.2])[0] == pytest.approx(0.0, abs=1e-15)

    def test_am_worked_example(self):
        score, clamped = am_from_probs(np.array([[0.9, 0.1], [0.1, 0.9]]), [0.5, 0.5])
        ref = oracle_am([[0.9, 0.1], [0.1, 0.9]], [0.5, 0.5])
        assert abs(ref - 0.5108) < 1e-4
        assert abs(score - ref) <= 1e-12
        assert not clamped

    @pytest.mark.parametrize("seed", [3, 4])
    def test_am_oracle(self, seed):
        p = fixed_probs(seed)
        c = np.random.default_rng(seed + 10).dirichlet(np.ones(7))
        assert abs(am_from_probs(p, c)[0] - oracle_am(p.tolist(), c.tolist())) <= 1e-8

    def test_am_clamp_flag(self):
        score, clamped = am_from_probs(np.array([[1.0, 0.0], [0.5, 0.5]]), [0.5, 0.5])
        assert clamped and math.isfinite(score)

    def test_am_order_invariant(self):
        p = fixed_probs(5)
        c = np.full(7, 1 / 7)
        assert am_from_probs(p, c)[0] == pytest.approx(am_from_probs(p[::-1], c)[0], abs=1e-14)

    def test_entropy_bounds_and_oracle(self):
        p = fixed_probs(6)
        e = entropy_rows(p)
        assert np.all(e >= 0) and np.all(e <= math.log(7) + 1e-12)
        for row, v in zip(p, e):
            assert abs(v - oracle_entropy(row.tolist())) <= 1e-10
        assert entropy_rows(np.full((1, 7), 1 / 7))[0] == pytest.approx(math.log(7), abs=1e-15)
        assert entropy_rows(np.eye(7)[:1])[0] == 0.0

    def test_histogram_ties_lowest_index(self):
        p = np.array([[0.5, 0.5, 0.0], [0.2, 0.4, 0.4], [0.1, 0.1, 0.8]])
        np.testing.assert_array_equal(histogram_from_probs(p), [1, 1, 1])

    def test_bad_matrix(self):
        with pytest.raises(ValidationError):
            inception_like_from_probs(np.ones((1, 3)) / 3)


class TestNearestNeighbours:
    def test_brute_force_exact(self):
        rng = np.random.default_rng(0)
        q = rng.standard_normal((200, 16))
        t = rng.standard_normal((1000, 16))
        got = nn_distance(q, t, k=10)
        for i in range(200):
            d = sorted(float(np.sqrt(np.sum((q[i] - t[j]) * (q[i] - t[j])))) for j in range(1000))
            assert got[i] == np.mean(d[:10])

    def test_self_query(self):
        t = np.random.default_rng(1).standard_normal((50, 8))
        np.testing.assert_array_equal(nn_distance(t, t, k=1), 0.0)

    def test_duplicates(self):
        rng = np.random.default_rng(2)
        q, t = rng.standard_normal((20, 4)), rng.standard_normal((30, 4))
        np.testing.assert_array_equal(nn_distance(q, np.concatenate([t, t]), k=2), nn_distance(q, t, k=1))

    def test_k_too_large(self):
        with pytest.raises(ValidationError):
            nn_distance(np.zeros((2, 3)), np.zeros((5, 3)), k=6)

    def test_width_mismatch(self):
        with pytest.raises(ValidationError):
            nn_distance(np.zeros((2, 3)), np.zeros((5, 4)), k=1)


class TestPhotometrics:
    def test_black(self):
        d, a, s = photometrics(np.zeros((64, 64, 3)))
        assert (d, a, s) == (4096, 0.0, 0.0)

    def test_half_black_half_white(self):
        img = np.zeros((64, 64, 3))
        img[32:] = 1.0
        d, a, s = photometrics(img)
        assert d == 2048 and a == pytest.approx(0.5, abs=1e-12) and abs(s) < 1e-12

    def test_symmetric_about_half(self):
        rng = np.random.default_rng(0)
        y = rng.random((16, 32))
        y = np.concatenate([y, 1 - y])
        img = np.repeat(y[..., None], 3, axis=2)
        assert abs(photometrics(img)[2]) < 1e-10

    def test_skew_population_convention(self):
        y = np.array([0.0, 0.0, 0.0, 1.0])
        img = np.repeat(y.reshape(2, 2, 1), 3, axis=2)
        m = y.mean()
        ref = np.mean((y - m) ** 3) / np.mean((y - m) ** 2) ** 1.5
        assert photometrics(img)[2] == pytest.approx(ref, rel=1e-12)

    def test_bt601(self):
        img = np.zeros((1, 1, 3))
        img[..., 1] = 1.0
        assert photometrics(img)[1] == pytest.approx(0.587)


@pytest.fixture(scope="module")
def small_data():
    return generate_dataset(n_items=490, size=32, augment_factor=1, seed=0)


@pytest.fixture(scope="module")
def bundle(small_data):
    return train_classifier(small_data, seed=0, epochs=1, batch_size=32, width_scale=1 / 16, feature_dim=16)


class TestClassifier:
    def test_bundle_fields(self, bundle):
        for head in ("shape", "texture"):
            assert bundle.c_train[head].shape == (7,)
            assert abs(bundle.c_train[head].sum() - 1) < 1e-12
            assert 0 <= bundle.accuracy[head] <= 1

    def test_low_accuracy_warning(self, small_data):
        b = train_classifier(small_data.subset(np.concatenate([small_data.indices("train")[:64], small_data.indices("val")])),
                             seed=1, epochs=1, batch_size=32, width_scale=1 / 16, feature_dim=8)
        low = [h for h in ("shape", "texture") if b.accuracy[h] < 0.9]
        assert len(b.warnings) == len(low)

    def test_deterministic(self, small_data, bundle):
        again = train_classifier(small_data, seed=0, epochs=1, batch_size=32, width_scale=1 / 16, feature_dim=16)
        a, b = bundle.net.state_dict(), again.net.state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_save_load(self, bundle, tmp_path, small_data):
        back = ClassifierBundle.load(bundle.save(tmp_path / "c.ckpt"))
        imgs = small_data.float_images(np.arange(5))
        for u, v in zip(bundle.predict(imgs), back.predict(imgs)):
            np.testing.assert_array_equal(u, v)
        assert back.accuracy == bundle.accuracy

    def test_needs_labels(self, small_data):
        unl = small_data.subset(np.arange(len(small_data)))
        unl.shape_labels = np.full(len(unl), -1)
        with pytest.raises(ValidationError):
            train_classifier(unl)

    def test_image_wrappers(self, bundle, small_data):
        imgs = small_data.float_images(np.arange(10))
        p = bundle.probs(imgs, "texture")
        assert inception_like_score(imgs, "texture", bundle) == pytest.approx(inception_like_from_probs(p))
        assert confusion_score(imgs[0], "texture", bundle) == pytest.approx(entropy_rows(p[:1])[0])
        assert category_histogram(imgs, "shape", bundle).sum() == 10
        with pytest.raises(ValueError):
            bundle.probs(imgs, "colour")


class TestReport:
    def test_compute_and_round_trip(self, bundle, small_data, tmp_path):
        imgs = small_data.float_images(np.arange(12))
        feats = bundle.features(small_data.float_images(small_data.indices("train")))
        rep = compute_metrics(imgs, bundle, feats, k=3)
        assert len(rep) == 12
        assert 1 <= rep.summary["inception_texture"] <= 7
        assert np.all(rep.darkness <= 32 * 32)
        p = tmp_path / "m.csv"
        p.write_text(rep.to_csv())
        back = MetricReport.read_csv(p)
        for col in ("shape_confusion", "nn_distance", "skewness", "pred_texture"):
            np.testing.assert_array_equal(back.column(col), rep.column(col))
        # set-level scores are invariant to image order
        perm = compute_metrics(imgs[::-1], bundle, feats, k=3)
        assert perm.summary["am_texture"] == pytest.approx(rep.summary["am_texture"], abs=1e-12)
        assert perm.summary["texture_histogram"] == rep.summary["texture_histogram"]

    def test_missing_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,nn_distance\n0,1.0\n")
        with pytest.raises(ValidationError, match="missing"):
            MetricReport.read_csv(p)
