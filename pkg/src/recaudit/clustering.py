"""Archetype clustering of news-diet vectors and focal-user stratification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .catalog import CATEGORIES
from .errors import DegenerateInputError, InvalidQuotaError
from .traces import ClusterConfig

FR_TIERS = ("low", "medium", "high")
NO_NEWS_TAG = "none"
ALL = "ALL"


@dataclass(frozen=True)
class ArchetypeLabel:
    major: int          # cluster id, -1 for histories with no news
    tag: str            # semantic tag: fL/L/C/R/fR, mix<i>, or "none"
    fr_tier: str | None = None

    def stratum(self) -> str:
        if self.fr_tier is not None:
            return f"{self.tag}:{self.fr_tier}"
        return self.tag


def cluster_archetypes(vectors, cfg: ClusterConfig) -> list[ArchetypeLabel]:
    """Agglomerative clustering of diet vectors into K archetypes.

    All-zero vectors (no news) are excluded from clustering and labeled
    "none".  Each of the five category tags goes to the cluster with the
    highest mean share of that category (greedy, globally best first);
    leftover clusters get mix<i> tags.  Members of the fR cluster are
    sub-clustered into three tiers ordered by mean fR share.
    """
    vectors = np.asarray(vectors, dtype=float)
    nonzero = np.flatnonzero(vectors.sum(axis=1) > 0)
    if len(nonzero) < cfg.K:
        raise DegenerateInputError(
            f"need at least K={cfg.K} nonzero vectors, got {len(nonzero)}")
    active = vectors[nonzero]
    if len(np.unique(active, axis=0)) < cfg.K:
        raise DegenerateInputError(
            f"need at least K={cfg.K} distinct vectors")
    link = linkage(active, method=cfg.linkage.lower())
    assignment = fcluster(link, t=cfg.K, criterion="maxclust")  # 1..K

    # Canonical cluster ids: sort clusters by their mean vector so the
    # partition is stable under input permutation.
    cluster_ids = np.unique(assignment)
    means = np.vstack([active[assignment == c].mean(axis=0)
                       for c in cluster_ids])
    order = np.lexsort(means.T[::-1])
    remap = {int(cluster_ids[o]): rank for rank, o in enumerate(order)}
    majors = np.array([remap[int(c)] for c in assignment])
    means = means[order]

    tags = _assign_tags(means)
    fr_cluster = next((k for k, t in tags.items() if t == "fR"), None)

    tiers: dict[int, str] = {}
    if fr_cluster is not None:
        members = np.flatnonzero(majors == fr_cluster)
        fr_share = active[members, CATEGORIES.index("fR")]
        tiers = dict(zip(members.tolist(), _fr_tiers(fr_share)))

    labels: list[ArchetypeLabel] = [
        ArchetypeLabel(-1, NO_NEWS_TAG)] * len(vectors)
    for pos, row in enumerate(nonzero):
        major = int(majors[pos])
        labels[row] = ArchetypeLabel(major, tags[major], tiers.get(pos))
    return labels


def _assign_tags(means: np.ndarray) -> dict[int, str]:
    """Greedy category-tag assignment by mean category share."""
    k = means.shape[0]
    tags: dict[int, str] = {}
    taken_categories: set[int] = set()
    scores = means.copy()
    while len(taken_categories) < len(CATEGORIES) and len(tags) < k:
        flat = np.argmax(scores)
        ci, cj = divmod(int(flat), scores.shape[1])
        tags[ci] = CATEGORIES[cj]
        taken_categories.add(cj)
        scores[ci, :] = -np.inf
        scores[:, cj] = -np.inf
    mix = 1
    for ci in range(k):
        if ci not in tags:
            tags[ci] = f"mix{mix}"
            mix += 1
    return tags


def _fr_tiers(fr_share: np.ndarray) -> list[str]:
    """Split fR-cluster members into low/medium/high consumption tiers."""
    n = len(fr_share)
    if n < 3:
        return ["low"] * n
    link = linkage(fr_share.reshape(-1, 1), method="ward")
    groups = fcluster(link, t=3, criterion="maxclust")
    group_means = {g: fr_share[groups == g].mean() for g in np.unique(groups)}
    ranked = sorted(group_means, key=group_means.get)
    tier_of = {g: FR_TIERS[i] for i, g in enumerate(ranked)}
    return [tier_of[g] for g in groups]


def stratify_focal_users(labels, quotas: dict, seed: int):
    """Select focal histories per stratum quota; emit population weights.

    ``quotas`` maps stratum keys (ArchetypeLabel.stratum()) to an integer
    count or "ALL".  Returns (selected_indices, weights) where weights map
    each selected index to population_share / sample_share of its stratum.
    Deterministic under seed.
    """
    strata: dict[str, list[int]] = {}
    population = 0
    for i, label in enumerate(labels):
        if label.tag == NO_NEWS_TAG:
            continue
        strata.setdefault(label.stratum(), []).append(i)
        population += 1
    rng = np.random.default_rng(seed)
    selected: list[int] = []
    weights: dict[int, float] = {}
    for stratum in sorted(quotas):
        quota = quotas[stratum]
        members = strata.get(stratum, [])
        if quota == ALL:
            chosen = list(members)
        else:
            quota = int(quota)
            if quota > len(members):
                raise InvalidQuotaError(
                    f"quota {quota} exceeds stratum {stratum!r} size "
                    f"{len(members)}")
            chosen = sorted(rng.choice(members, size=quota,
                                       replace=False).tolist())
        if not chosen:
            continue
        population_share = len(members) / population
        sample_share = len(chosen)  # normalized below
        for i in chosen:
            weights[i] = population_share / sample_share
        selected.extend(chosen)
    # Normalize sample shares against the full focal set size.
    total = len(selected)
    for i in list(weights):
        weights[i] *= total
    return selected, weights
