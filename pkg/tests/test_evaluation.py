import math

import numpy as np
import pytest

from probdml.evaluation import (
    RetrievalReport,
    cluster_diversity,
    compare_retrieval,
    diversity_metrics,
    feature_diversity,
    map_at_r,
    norm_histogram,
    recall_at_k,
    retrieval_report,
    write_diversity_csv,
)


def _dup_points(rng, c=4, m=5):
    base = rng.normal(size=(c, m))
    return np.repeat(base, 2, axis=0), np.repeat(np.arange(c), 2)


class TestRecall:
    def test_duplicates(self):
        x, y = _dup_points(np.random.default_rng(0))
        assert recall_at_k(x, y, 1) == 1.0
        assert recall_at_k(x, y, 1, "euclidean") == 1.0

    def test_chance_level(self):
        rng = np.random.default_rng(1)
        c, n = 5, 20
        x = rng.normal(size=(c * n, 6))
        y = np.repeat(np.arange(c), n)
        p = (n - 1) / (n * c - 1)
        sigma = math.sqrt(p * (1 - p) / (c * n))
        vals = [recall_at_k(x, rng.permutation(y), 1) for _ in range(20)]
        for v in vals:
            assert abs(v - p) <= 3 * sigma
        assert abs(np.mean(vals) - p) <= 3 * sigma / math.sqrt(20)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(40, 4)), rng.integers(3, size=40)
        s = rng.uniform(0.1, 10, (40, 1))
        for k in (1, 3):
            assert recall_at_k(x, y, k) == recall_at_k(10 * x, y, k) == recall_at_k(s * x, y, k)

    def test_euclidean_not_scale_invariant(self):
        # shrinking point 1 onto point 0 makes it the euclidean neighbour of 0
        x = np.array([[1.0, 0.0], [3.0, 0.0], [0.8, 0.6]])
        y = np.array([0, 1, 0])
        s = np.array([[1.0], [1 / 3], [1.0]])
        assert recall_at_k(x, y, 1, "euclidean") != recall_at_k(s * x, y, 1, "euclidean")
        assert recall_at_k(x, y, 1) == recall_at_k(s * x, y, 1)

    def test_full_k_is_one(self):
        rng = np.random.default_rng(3)
        y = np.repeat(np.arange(4), 3)
        assert recall_at_k(rng.normal(size=(12, 3)), y, 11) == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            recall_at_k(np.ones((3, 2)), [0, 1, 0], 3)
        with pytest.raises(ValueError):
            recall_at_k(np.ones((1, 2)), [0], 1)
        with pytest.raises(ValueError):
            recall_at_k(np.ones((3, 2)), [0, 1, 0], 1, "manhattan")

    def test_tie_break_by_index(self):
        # query 0 is equidistant from 1 (other class) and 2 (same class): lower index wins
        x = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        assert recall_at_k(x, [0, 1, 0], 1) == pytest.approx(1 / 3)
        assert recall_at_k(x, [0, 0, 1], 1) == pytest.approx(2 / 3)


class TestMap:
    def test_perfect_and_wrong(self):
        x, y = _dup_points(np.random.default_rng(4))
        assert map_at_r(x, y, 10) == 1.0
        x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.9, 0.1], [-0.9, 0.1]])
        y = np.array([0, 0, 1, 1])
        # R capped at 1 relevant item, ranked last after the nearer other-class point
        assert map_at_r(x, y, 1) == 0.0

    def test_hand_computed(self):
        # 1-D points on a circle: angles (degrees) and labels
        ang = np.deg2rad([0, 10, 30, 60, 100])
        x = np.stack([np.cos(ang), np.sin(ang)], 1)
        y = np.array([0, 1, 0, 0, 1])
        # query 0: order 1(x) 2(v) 3(v) 4(x); R=2 relevant -> (0 + 1/2 [P@2 at hit 2] ...)
        ap0 = (1 / 2 + 0) / 2  # hits at rank 2 only within first 2 -> P@2 = 1/2
        # query 1: order 0 2 (tie at 10 and 20 deg -> 0 then 2) 3 4 -> relevant {4}, R=1: rank1 miss
        ap1 = 0.0
        # query 2: order 1(x),0(v)? distances 20 (to 1), 30 (to 0 and 3) -> 1, 0, 3, 4; R=2
        ap2 = (0 + 1 / 2) / 2
        # query 3: order 2(v) 4(x) 1 0 -> distances 30, 40, 50, 60; R=2: hits at rank 1
        ap3 = (1 + 0) / 2
        # query 4: order 3(x) 2(x) 1(v) 0; R=1: miss
        ap4 = 0.0
        assert map_at_r(x, y, 1000) == pytest.approx(np.mean([ap0, ap1, ap2, ap3, ap4]), rel=1e-14)

    def test_report(self):
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=(30, 3)), rng.integers(3, size=30)
        rep = retrieval_report(x, y, ks=(1, 2, 4, 8, 64), r=5)
        assert isinstance(rep, RetrievalReport)
        vals = [rep.recall_at[k] for k in sorted(rep.recall_at)]
        assert 64 not in rep.recall_at and np.all(np.diff(vals) >= 0)
        assert 0 <= rep.map_at_r <= 1
        assert '"recall_at"' in rep.to_json()
        assert set(compare_retrieval(x, y)) == {"cosine", "euclidean"}


class TestDiversity:
    def test_uniform_sphere_near_max(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(5000, 8))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        assert feature_diversity(x) > 0.99

    def test_identical(self):
        x = np.tile([1.0, 2.0, 3.0], (10, 1))
        assert diversity_metrics(x, np.repeat([0, 1], 5)) == (0.0, 0.0)

    def test_single_direction(self):
        x = np.outer(np.linspace(1, 2, 10), [1.0, 0.0, 0.0])
        assert feature_diversity(x) == pytest.approx(0.0, abs=1e-12)

    def test_cluster_spread(self):
        rng = np.random.default_rng(7)
        mu = np.array([1.0, 0, 0])
        tight = mu + 0.01 * rng.normal(size=(50, 3))
        loose = mu + 0.5 * rng.normal(size=(50, 3))
        assert cluster_diversity(loose, np.zeros(50)) > cluster_diversity(tight, np.zeros(50))

    def test_single_sample_class_warns(self):
        with pytest.warns(UserWarning):
            cluster_diversity(np.eye(3), [0, 0, 1])

    def test_csv(self, tmp_path):
        write_diversity_csv(tmp_path / "d.csv", [("cos", 0.5, 0.1)])
        assert (tmp_path / "d.csv").read_text().splitlines() == ["name,feature_diversity,cluster_diversity", "cos,0.5,0.1"]


class TestNormHistogram:
    def test_equal_norms_single_bin(self):
        x = np.tile([3.0, 4.0], (6, 1))
        h = norm_histogram(x, np.zeros(6, int), bins=5)
        assert np.count_nonzero(h.counts[0]) == 1 and h.counts[0].sum() == 6

    def test_empty_group(self):
        x = np.random.default_rng(8).normal(size=(5, 3))
        h = norm_histogram(x, np.array(["clean"] * 5), bins=4, order=["ambiguous", "clean"])
        assert h.counts["ambiguous"].sum() == 0 and h.p_value is None

    def test_p_value_direction(self, tmp_path):
        rng = np.random.default_rng(9)
        small = rng.normal(size=(100, 4)) * 0.5
        big = rng.normal(size=(100, 4)) * 2.0
        g = np.r_[np.full(100, "ambiguous"), np.full(100, "clean")]
        h = norm_histogram(np.r_[small, big], g, bins=10, order=["ambiguous", "clean"])
        assert h.p_value < 1e-6 and h.mean_norm["ambiguous"] < h.mean_norm["clean"]
        h.write_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "group,lo,hi,count" and len(lines) == 21

    def test_bins_validated(self):
        with pytest.raises(ValueError):
            norm_histogram(np.ones((3, 2)), [0, 0, 0], bins=1)
