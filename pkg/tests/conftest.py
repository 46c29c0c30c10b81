import numpy as np
import pytest

from recaudit.catalog import CategoryThresholds, build_synthetic_catalog
from recaudit.platform import CatalogIndex
from recaudit.traces import WatchEvent


@pytest.fixture(scope="session")
def wide_catalog():
    """Catalog whose scores cover the partisan axis densely."""
    return build_synthetic_catalog(n_channels=4000, mean=0.0, sd=0.15,
                                   videos_per_channel=5, seed=101)


@pytest.fixture(scope="session")
def wide_index(wide_catalog):
    return CatalogIndex(wide_catalog, CategoryThresholds())


def nearest_videos(index, targets, rng=None):
    """Catalog video ids whose scores are nearest the requested targets."""
    targets = np.asarray(targets, dtype=float)
    pos = np.searchsorted(index.scores, targets)
    if rng is not None:
        pos = pos + rng.integers(-5, 6, size=len(targets))
    pos = np.clip(pos, 0, index.n - 1)
    return [str(v) for v in index.video_ids[pos]]


def make_trace(index, target_scores, user_id="u", duration_s=300,
               rng=None, start_ts=0, ts_step=600):
    """Watch events replaying catalog videos with scores near targets."""
    ids = nearest_videos(index, target_scores, rng)
    return [WatchEvent(user_id, seq + 1, vid, start_ts + seq * ts_step,
                       duration_s)
            for seq, vid in enumerate(ids)]
