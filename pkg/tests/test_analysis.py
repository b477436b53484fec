"""Tests for rating ingestion and the statistics toolkit."""

import mpmath
import numpy as np
import pytest

from creagen.analysis import (
    DegenerateInput,
    aggregate_records,
    correlation_matrix,
    ingest_ratings,
    paired_ttest,
    pca,
    pearson,
    realness_proportions,
    simulate_ratings,
    wundt_csv,
    wundt_data,
    write_rating_records,
)
from creagen.errors import ValidationError


def mp_pearson(x, y):
    with mpmath.workdps(50):
        x = [mpmath.mpf(float(v)) for v in x]
        y = [mpmath.mpf(float(v)) for v in y]
        mx, my = mpmath.fsum(x) / len(x), mpmath.fsum(y) / len(y)
        sxy = mpmath.fsum((a - mx) * (b - my) for a, b in zip(x, y))
        sxx = mpmath.fsum((a - mx) ** 2 for a in x)
        syy = mpmath.fsum((b - my) ** 2 for b in y)
        return float(sxy / mpmath.sqrt(sxx * syy))


def mp_ttest(a, b):
    """t and two-sided p via the regularized incomplete beta function."""
    with mpmath.workdps(50):
        d = [mpmath.mpf(float(u)) - mpmath.mpf(float(v)) for u, v in zip(a, b)]
        n = len(d)
        m = mpmath.fsum(d) / n
        sd = mpmath.sqrt(mpmath.fsum((x - m) ** 2 for x in d) / (n - 1))
        t = m / (sd / mpmath.sqrt(n))
        df = n - 1
        p = mpmath.betainc(mpmath.mpf(df) / 2, mpmath.mpf(1) / 2, 0, df / (df + t * t), regularized=True)
        return float(t), float(p)


def _records(rows):
    return [(i, r, *ans) for i, r, ans in rows]


class TestRatings:
    def test_all_threes(self):
        agg = aggregate_records(_records([(1, f"r{k}", (3, 3, 3, 3, 3, 1)) for k in range(5)]))
        np.testing.assert_array_equal(agg.question("q1"), [3.0])
        assert agg.flagged.size == 0

    def test_designer_fraction(self):
        votes = (1, 1, 1, 0, 0)
        agg = aggregate_records(_records([(7, f"r{k}", (2, 2, 2, 2, 2, v)) for k, v in enumerate(votes)]))
        assert agg.question("q6")[0] == pytest.approx(0.6)

    def test_flag_non_five(self):
        agg = aggregate_records(_records([(1, "a", (3,) * 5 + (1,)), (2, "a", (3,) * 5 + (0,))]))
        np.testing.assert_array_equal(agg.flagged, [1, 2])

    def test_duplicate_pair(self):
        with pytest.raises(ValidationError, match="image 1 by rater a"):
            aggregate_records(_records([(1, "a", (3,) * 5 + (1,)), (1, "a", (4,) * 5 + (1,))]))

    @pytest.mark.parametrize("ans", [(0, 3, 3, 3, 3, 1), (3, 3, 3, 3, 6, 1), (3, 3, 3, 3, 3, 2)])
    def test_out_of_range(self, ans):
        with pytest.raises(ValidationError, match="row 2"):
            aggregate_records(_records([(1, "a", ans)]))

    def test_csv_round_trip(self, tmp_path):
        recs = simulate_ratings(
            {c: np.arange(6.0) for c in ("shape_confusion", "texture_confusion", "nn_distance", "darkness", "avg_intensity", "skewness")},
            range(6),
            seed=1,
        )
        p = tmp_path / "r.csv"
        p.write_text(write_rating_records(recs))
        agg = ingest_ratings(p)
        assert agg.image_ids.tolist() == list(range(6))
        assert np.all(agg.counts == 5)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("image,rater,q1,q2,q3,q4,q5,q6\n")
        with pytest.raises(ValidationError, match="header"):
            ingest_ratings(p)

    def test_non_integer(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("image_id,rater_id,q1,q2,q3,q4,q5,q6\n1,a,3,x,3,3,3,1\n")
        with pytest.raises(ValidationError, match="row 2"):
            ingest_ratings(p)

    def test_simulated_deterministic(self):
        cols = {c: np.random.default_rng(0).random(10) for c in ("shape_confusion", "texture_confusion", "nn_distance", "darkness", "avg_intensity", "skewness")}
        assert simulate_ratings(cols, range(10), seed=3) == simulate_ratings(cols, range(10), seed=3)


class TestPearson:
    def test_closed_forms(self):
        v = np.array([1.0, 4.0, 2.0, 8.0])
        assert pearson(v, v) == 1.0
        assert pearson([1, 2, 3], [3, 2, 1]) == -1.0

    def test_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, y = rng.standard_normal(50), rng.standard_normal(50) + 0.3 * np.arange(50)
            assert abs(pearson(x, y) - mp_pearson(x, y)) <= 1e-12

    def test_symmetry_and_affine(self):
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal(30), rng.standard_normal(30)
        assert pearson(x, y) == pytest.approx(pearson(y, x), abs=1e-15)
        assert abs(pearson(3 * x + 2, y) - pearson(x, y)) <= 1e-12
        assert abs(pearson(-0.5 * x + 1, y) + pearson(x, y)) <= 1e-12

    def test_zero_variance(self):
        with pytest.raises(DegenerateInput):
            pearson([1, 1, 1], [1, 2, 3])

    def test_length(self):
        with pytest.raises(ValidationError):
            pearson([1.0], [2.0])
        with pytest.raises(ValidationError):
            pearson([1, 2], [1, 2, 3])


class TestCorrelationMatrix:
    def test_auto(self):
        rng = np.random.default_rng(2)
        cols = {f"q{i}": rng.standard_normal(20) for i in range(4)}
        res = correlation_matrix(range(20), cols)
        np.testing.assert_array_equal(np.diag(res.matrix), 1.0)
        np.testing.assert_allclose(res.matrix, res.matrix.T, atol=1e-15)
        for a, na in enumerate(cols):
            for b, nb in enumerate(cols):
                if a != b:
                    assert res.matrix[a, b] == pearson(cols[na], cols[nb])

    def test_cross_and_alignment(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal(10)
        left = {"metric": m, "other": rng.standard_normal(10)}
        # right table covers ids 2..11 in reverse order
        ids_r = list(range(11, 1, -1))
        right = {"q1": np.array([m[i] if i < 10 else 0.0 for i in ids_r])}
        res = correlation_matrix(range(10), left, ids_r, right)
        assert res.n_aligned == 8 and res.n_dropped == 4
        assert res.matrix[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_undefined_is_nan(self):
        res = correlation_matrix(range(5), {"a": np.arange(5.0)}, range(5), {"b": np.ones(5)})
        assert np.isnan(res.matrix[0, 0]) and res.undefined == [("a", "b")]

    def test_too_few(self):
        with pytest.raises(ValidationError, match="at least 3"):
            correlation_matrix([0, 1], {"a": [1.0, 2.0]})


class TestTTest:
    def test_zero_mean_difference(self):
        r = paired_ttest([1.0, 2.0], [0.0, 3.0])
        assert r.t == 0.0 and r.p == pytest.approx(1.0)

    def test_constant_difference(self):
        with pytest.raises(DegenerateInput):
            paired_ttest([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])
        with pytest.raises(DegenerateInput):
            paired_ttest([1.0, 2.0], [1.0, 2.0])

    def test_oracle(self):
        rng = np.random.default_rng(4)
        for n in (3, 8, 25, 100):
            a = rng.standard_normal(n)
            b = a + rng.normal(0.3, 1.0, n)
            r = paired_ttest(a, b)
            t, p = mp_ttest(a, b)
            assert abs(r.t - t) <= 1e-9 * max(1.0, abs(t))
            assert abs(r.p - p) <= 1e-9
            assert r.n == n

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            paired_ttest([1.0, 2.0], [1.0])


class TestPCA:
    def test_line(self):
        t = np.linspace(-1, 1, 50)
        res = pca(np.stack([t, 2 * t + 1], axis=1), components=2)
        assert abs(res.explained_ratio[0] - 1.0) <= 1e-10
        assert res.rank_deficient
        assert res.explained_variance[1] == 0.0
        assert np.all(res.loadings[:, 0] > 0)

    def test_isotropic(self):
        x = np.random.default_rng(5).standard_normal((10000, 2))
        res = pca(x)
        ratio = res.explained_variance[0] / res.explained_variance[1]
        assert 0.8 <= ratio <= 1.25

    def test_reconstruction(self):
        x = np.random.default_rng(6).standard_normal((40, 4)) @ np.random.default_rng(7).standard_normal((4, 4))
        res = pca(x, components=4)
        recon = res.projections @ res.loadings.T + res.mean
        assert np.max(np.abs(recon - x)) <= 1e-8
        total = np.sum(np.var(x, axis=0, ddof=1))
        assert abs(res.explained_variance.sum() - total) <= 1e-8 * total

    def test_no_scaling_by_default(self):
        x = np.random.default_rng(8).standard_normal((200, 2)) * [10.0, 1.0]
        assert abs(pca(x).loadings[0, 0]) > 0.99
        assert abs(pca(x, standardize=True).loadings[0, 0]) < 0.99

    def test_sign_convention(self):
        x = np.random.default_rng(9).standard_normal((30, 3))
        res = pca(x, components=3)
        for j in range(3):
            col = res.loadings[:, j]
            assert col[np.argmax(np.abs(col))] > 0

    def test_errors(self):
        with pytest.raises(ValidationError):
            pca(np.zeros((1, 3)))
        with pytest.raises(ValidationError):
            pca(np.zeros((5, 2)), components=3)

    def test_csv(self):
        res = pca(np.random.default_rng(10).standard_normal((5, 3)))
        loadings, proj = res.to_csv(["a", "b", "c"], row_ids=[10, 11, 12, 13, 14])
        assert loadings.splitlines()[0] == "metric,pc1,pc2"
        assert proj.splitlines()[1].startswith("10,")


class TestWundt:
    def test_single(self):
        assert wundt_data({"m": (1.5, 3.0)}) == [("m", 1.5, 3.0)]

    def test_ties_by_name(self):
        pts = wundt_data({"b": (1.0, 2.0), "a": (1.0, 4.0), "c": (0.5, 1.0)})
        assert [p[0] for p in pts] == ["c", "a", "b"]
        assert wundt_csv(pts).splitlines()[0] == "model,novelty,rating"


class TestRealness:
    def test_proportions(self, tmp_path):
        p = tmp_path / "real.csv"
        rows = ["image_id,rater_id,source,answer"]
        rows += [f"{i},a,generated,{'real' if i < 2 else 'generated'}" for i in range(10)]
        rows += [f"{i},a,real,{'generated' if i < 13 else 'real'}" for i in range(10, 20)]
        p.write_text("\n".join(rows) + "\n")
        res = realness_proportions(p)
        assert res.generated_thought_real == pytest.approx(0.2)
        assert res.real_thought_generated == pytest.approx(0.3)

    def test_bad_value(self, tmp_path):
        p = tmp_path / "real.csv"
        p.write_text("image_id,rater_id,source,answer\n1,a,fake,real\n")
        with pytest.raises(ValidationError, match="row 2"):
            realness_proportions(p)
