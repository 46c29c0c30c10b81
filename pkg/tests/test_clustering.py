import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from recaudit.clustering import (ArchetypeLabel, cluster_archetypes,
                                 stratify_focal_users)
from recaudit.errors import DegenerateInputError, InvalidQuotaError
from recaudit.traces import ClusterConfig

CFG = ClusterConfig(K=8)


def planted_corners(n_per=20, noise=0.0, seed=0):
    """Eight distinct diet mixtures with optional noise, plus truth labels."""
    rng = np.random.default_rng(seed)
    centers = np.array([
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
        [0.5, 0.5, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.5, 0.5, 0.0],
        [0.2, 0.2, 0.2, 0.2, 0.2],
    ])
    vectors, truth = [], []
    for k, center in enumerate(centers):
        for _ in range(n_per):
            v = center + noise * rng.standard_normal(5)
            v = np.clip(v, 0.0, None)
            v = v / v.sum()
            vectors.append(v)
            truth.append(k)
    return np.array(vectors), np.array(truth)


def recovery_rate(majors, truth):
    """Best-matching fraction of correctly assigned labels."""
    k = max(majors.max(), truth.max()) + 1
    confusion = np.zeros((k, k))
    for m, t in zip(majors, truth):
        confusion[m, t] += 1
    rows, cols = linear_sum_assignment(-confusion)
    return confusion[rows, cols].sum() / len(truth)


class TestClusterArchetypes:
    def test_separable_corners_zero_impurity(self):
        vectors, truth = planted_corners(noise=0.0)
        labels = cluster_archetypes(vectors, CFG)
        majors = np.array([l.major for l in labels])
        assert recovery_rate(majors, truth) == 1.0

    def test_noisy_recovery(self):
        vectors, truth = planted_corners(noise=0.03, seed=4)
        labels = cluster_archetypes(vectors, CFG)
        majors = np.array([l.major for l in labels])
        assert recovery_rate(majors, truth) >= 0.95

    def test_semantic_tags(self):
        vectors, truth = planted_corners()
        labels = cluster_archetypes(vectors, CFG)
        by_truth = {t: labels[i] for i, t in enumerate(truth)}
        assert by_truth[0].tag == "fL"
        assert by_truth[2].tag == "C"
        assert by_truth[4].tag == "fR"
        mixes = {by_truth[k].tag for k in (5, 6, 7)} - {"L", "R"}
        assert all(tag.startswith("mix") for tag in mixes)

    def test_permutation_invariance(self):
        vectors, _ = planted_corners(noise=0.02, seed=9)
        labels = cluster_archetypes(vectors, CFG)
        rng = np.random.default_rng(1)
        perm = rng.permutation(len(vectors))
        shuffled = cluster_archetypes(vectors[perm], CFG)
        for i, p in enumerate(perm):
            assert shuffled[i] == labels[p]

    def test_zero_vectors_labeled_none(self):
        vectors, _ = planted_corners()
        vectors = np.vstack([vectors, np.zeros(5)])
        labels = cluster_archetypes(vectors, CFG)
        assert labels[-1].tag == "none"
        assert labels[-1].major == -1

    def test_too_few_vectors(self):
        with pytest.raises(DegenerateInputError):
            cluster_archetypes(np.eye(5), CFG)

    def test_fr_tiers_planted_levels(self):
        # fR shares 0.3 / 0.6 / 0.9 must land in low / medium / high.
        rng = np.random.default_rng(5)
        vectors, truth = [], []
        for share, tier in ((0.6, "low"), (0.75, "medium"), (0.9, "high")):
            for _ in range(15):
                v = np.array([0.0, 0.0, 1.0 - share, 0.0, share])
                v = np.clip(v + 0.01 * rng.standard_normal(5), 0, None)
                vectors.append(v / v.sum())
                truth.append(tier)
        # Pad with the seven non-fR planted groups so the three tier
        # levels share the single fR cluster of a K=8 cut.
        pad, _ = planted_corners(n_per=10)
        pad = pad[np.array([t for t in range(80)
                            if t // 10 != 4])]  # drop the pure-fR corner
        offset = len(vectors)
        vectors = np.vstack([vectors, pad])
        labels = cluster_archetypes(vectors, CFG)
        for i, tier in enumerate(truth):
            assert labels[i].tag == "fR"
            assert labels[i].fr_tier == tier
        assert all(l.fr_tier is None for l in labels[offset:]
                   if l.tag != "fR")


def label_block(tag, count, tier=None, major=0):
    return [ArchetypeLabel(major, tag, tier)] * count


class TestStratify:
    def make_labels(self):
        return (label_block("C", 300, major=2)
                + label_block("R", 100, major=3)
                + label_block("fR", 50, "low", major=4)
                + label_block("fR", 41, "medium", major=4)
                + label_block("fR", 17, "high", major=4))

    def test_tiered_quota_selection(self):
        labels = self.make_labels()
        quotas = {"C": 32, "fR:low": 35, "fR:medium": "ALL",
                  "fR:high": "ALL"}
        selected, weights = stratify_focal_users(labels, quotas, seed=1)
        assert len(selected) == 125
        assert len(weights) == 125

    def test_quota_exceeds_stratum(self):
        labels = self.make_labels()
        with pytest.raises(InvalidQuotaError):
            stratify_focal_users(labels, {"fR:medium": 50}, seed=1)

    def test_weights_restore_population_shares(self):
        labels = self.make_labels()
        quotas = {"C": 32, "fR:low": 35, "fR:medium": "ALL",
                  "fR:high": "ALL"}
        selected, weights = stratify_focal_users(labels, quotas, seed=1)
        total_pop = 508
        c_weight = next(weights[i] for i in selected
                        if labels[i].stratum() == "C")
        fr_low_weight = next(weights[i] for i in selected
                             if labels[i].stratum() == "fR:low")
        # weight = population_share / sample_share per stratum
        assert c_weight == pytest.approx((300 / total_pop) / (32 / 125))
        assert fr_low_weight == pytest.approx((50 / total_pop) / (35 / 125))
        assert c_weight > fr_low_weight

    def test_deterministic_under_seed(self):
        labels = self.make_labels()
        quotas = {"C": 10, "fR:low": 5}
        a, _ = stratify_focal_users(labels, quotas, seed=7)
        b, _ = stratify_focal_users(labels, quotas, seed=7)
        c, _ = stratify_focal_users(labels, quotas, seed=8)
        assert a == b
        assert a != c
