"""Tests for evaluation-set selection."""

import json

import numpy as np
import pytest

from creagen.errors import ValidationError
from creagen.evalsets import SET_NAMES, gallery, read_sets, save_galleries, select_sets, sets_to_json


class FakeReport:
    def __init__(self, ids, shape, texture, nn):
        self.ids = np.asarray(ids)
        self.cols = {"shape_confusion": shape, "texture_confusion": texture, "nn_distance": nn}

    def column(self, name):
        return np.asarray(self.cols[name])

    def permuted(self, perm):
        return FakeReport(self.ids[perm], *(np.asarray(self.cols[c])[perm] for c in ("shape_confusion", "texture_confusion", "nn_distance")))


def random_report(n, seed=0):
    rng = np.random.default_rng(seed)
    return FakeReport(np.arange(n), rng.random(n), rng.random(n), rng.random(n) * 10)


def sort_oracle(ids, values, descending, size):
    pairs = sorted(zip(values, ids), key=lambda p: (-p[0] if descending else p[0], p[1]))
    return [int(i) for _, i in pairs[:size]]


@pytest.fixture(scope="module")
def big():
    return random_report(10000)


class TestSelectSets:
    def test_sizes(self, big):
        sets = select_sets(big, size=100)
        assert list(sets) == list(SET_NAMES)
        assert all(len(v) == 100 for v in sets.values())

    def test_full_sort_oracle(self, big):
        sets = select_sets(big, size=100)
        for short, col in (("shape_entropy", "shape_confusion"), ("texture_entropy", "texture_confusion"), ("nn_distance", "nn_distance")):
            vals = big.column(col).tolist()
            assert sets[f"high_{short}"] == sort_oracle(big.ids.tolist(), vals, True, 100)
            assert sets[f"low_{short}"] == sort_oracle(big.ids.tolist(), vals, False, 100)

    def test_mixed_oracle(self, big):
        sets = select_sets(big, size=100)
        ids = big.ids.tolist()
        low_shape = sort_oracle(ids, big.column("shape_confusion").tolist(), False, len(ids))
        high_nn = sort_oracle(ids, big.column("nn_distance").tolist(), True, len(ids))
        rank_a = {i: r for r, i in enumerate(low_shape)}
        rank_b = {i: r for r, i in enumerate(high_nn)}
        assert sets["mixed_low_shape_entropy_high_nn"] == sort_oracle(ids, [rank_a[i] + rank_b[i] for i in ids], False, 100)

    def test_high_low_disjoint(self, big):
        sets = select_sets(big, size=100)
        for short in ("shape_entropy", "texture_entropy", "nn_distance"):
            assert not set(sets[f"high_{short}"]) & set(sets[f"low_{short}"])

    def test_random_seeded(self, big):
        a = select_sets(big, size=100, seed=3)["random"]
        assert a == select_sets(big, size=100, seed=3)["random"]
        assert a != select_sets(big, size=100, seed=4)["random"]
        assert len(set(a)) == 100 and set(a) <= set(big.ids.tolist())

    def test_ties_by_id(self):
        n = 300
        rep = FakeReport(np.arange(n), np.zeros(n), np.zeros(n), np.zeros(n))
        sets = select_sets(rep, size=100)
        assert sets["high_shape_entropy"] == list(range(100))
        assert sets["low_nn_distance"] == list(range(100))

    def test_row_permutation_invariant(self):
        rep = random_report(500, seed=1)
        rep.cols["shape_confusion"] = np.round(rep.cols["shape_confusion"], 1)  # force ties
        perm = np.random.default_rng(2).permutation(500)
        assert select_sets(rep, size=50) == select_sets(rep.permuted(perm), size=50)

    def test_population_subset(self):
        rep = random_report(500)
        pop = np.arange(100, 400)
        sets = select_sets(rep, population=pop, size=50)
        assert all(100 <= i < 400 for v in sets.values() for i in v)

    def test_population_too_small(self):
        with pytest.raises(ValidationError, match="smaller"):
            select_sets(random_report(199), size=100)

    def test_uncovered_ids(self):
        with pytest.raises(ValidationError, match="cover"):
            select_sets(random_report(300), population=np.arange(250, 500), size=100)

    def test_duplicate_ids(self):
        rep = random_report(300)
        rep.ids[5] = 6
        with pytest.raises(ValidationError, match="duplicate"):
            select_sets(rep, size=100)


class TestSerialization:
    def test_json_round_trip(self, tmp_path):
        sets = select_sets(random_report(300), size=100)
        p = tmp_path / "sets.json"
        p.write_text(sets_to_json(sets, {"seed": 0}))
        assert read_sets(p) == sets
        assert json.loads(p.read_text())["seed"] == 0

    def test_bad_file(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("[1, 2]")
        with pytest.raises(ValidationError):
            read_sets(p)

    def test_galleries(self, tmp_path):
        imgs = np.random.default_rng(0).random((300, 8, 8, 3))
        sets = select_sets(random_report(300), size=100)
        paths = save_galleries(sets, imgs, np.arange(300), tmp_path)
        assert len(paths) == 8
        g = gallery(imgs[:25], columns=10, pad=2)
        assert g.size == (10 * 10 + 2, 3 * 10 + 2)
