"""Watch-trace ingestion, history sampling, and news-diet vectors.

A trace file is row-per-watch CSV (`user_id,seq,video_id,start_ts,duration_s`).
Histories are fixed-length (120) windows sampled uniformly from eligible
users (at least 140 watches), with per-user sample counts proportional to
panel lifetime.  The news-diet vector of a history is computed over the
first ``learning_window`` events only, so archetype assignment never sees
the observation phase.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .catalog import CATEGORIES, UNSCORED, Catalog, CategoryThresholds
from .errors import IneligibleUserError, IntegrityError, ParseError

HISTORY_LEN = 120
MIN_TRACE_LEN = 140

WATCH_TIME = "WATCH_TIME"
COUNT = "COUNT"

# Default lifetime-proportional sampling rate: one history per 90 panel days.
DAYS_PER_SAMPLE = 90.0


@dataclass(frozen=True)
class WatchEvent:
    user_id: str
    seq: int
    video_id: str
    start_ts: int
    duration_s: int


@dataclass
class UserTrajectory:
    user_id: str
    events: list[WatchEvent]

    @property
    def M(self) -> int:
        return len(self.events)

    def lifetime_days(self) -> float:
        if len(self.events) < 2:
            return 0.0
        return (self.events[-1].start_ts - self.events[0].start_ts) / 86400.0


@dataclass
class HistorySample:
    history_id: str
    user_id: str
    start_index: int  # 1-based within the source trajectory
    events: list[WatchEvent]
    archetype: object = None  # ArchetypeLabel, assigned after clustering


@dataclass(frozen=True)
class ClusterConfig:
    """Knobs for news-diet vectors and archetype clustering."""

    K: int = 8
    linkage: str = "ward"
    basis: str = WATCH_TIME
    learning_window: int = 60

    def __post_init__(self):
        if self.K < 2:
            raise IntegrityError("K must be >= 2")
        if self.learning_window > HISTORY_LEN:
            raise IntegrityError("learning_window must be <= 120")
        if self.basis not in (WATCH_TIME, COUNT):
            raise IntegrityError(f"unknown basis {self.basis!r}")


def ingest_traces(path) -> dict[str, UserTrajectory]:
    """Stream a trace CSV into per-user trajectories.

    Rows are processed one at a time; per-user seq must be strictly
    increasing in file order.  Unknown video ids are kept (they label as
    UNSCORED downstream).
    """
    events_by_user: dict[str, list[WatchEvent]] = {}
    last_seq: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty trace file", line=1)
        expected = ["user_id", "seq", "video_id", "start_ts", "duration_s"]
        if header != expected:
            raise ParseError(
                f"expected header {','.join(expected)!r}, "
                f"got {','.join(header)!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 cells, got {len(row)}",
                                 line=lineno)
            user_id, seq_s, video_id, ts_s, dur_s = row
            try:
                seq, ts, dur = int(seq_s), int(ts_s), int(dur_s)
            except ValueError:
                raise ParseError(f"non-integer field in row {row!r}",
                                 line=lineno)
            if dur < 0:
                raise ParseError(f"negative duration_s {dur}", line=lineno)
            prev = last_seq.get(user_id)
            if prev is not None and seq <= prev:
                raise IntegrityError(
                    f"non-monotone seq for user {user_id!r}: "
                    f"{seq} after {prev} (line {lineno})")
            last_seq[user_id] = seq
            events_by_user.setdefault(user_id, []).append(
                WatchEvent(user_id, seq, video_id, ts, dur))
    return {uid: UserTrajectory(uid, evs)
            for uid, evs in events_by_user.items()}


def lifetime_weight(traj: UserTrajectory,
                    days_per_sample: float = DAYS_PER_SAMPLE) -> float:
    """Lifetime-proportional sampling weight, floored at 1 sample."""
    return max(1.0, traj.lifetime_days() / days_per_sample)


def sample_histories(traj: UserTrajectory, lifetime_weight: float,
                     seed: int, base_rate: float = 1.0,
                     ) -> list[HistorySample]:
    """Sample length-120 windows with uniform random start points.

    Sample count is round(base_rate * lifetime_weight), at least 1.
    Raises IneligibleUserError for trajectories shorter than 140 events.
    """
    if lifetime_weight <= 0:
        raise IntegrityError("lifetime_weight must be positive")
    if traj.M < MIN_TRACE_LEN:
        raise IneligibleUserError(
            f"user {traj.user_id!r} has M={traj.M} < {MIN_TRACE_LEN}")
    n_samples = max(1, round(base_rate * lifetime_weight))
    rng = np.random.default_rng(seed)
    # start_index is 1-based on [1, M-120]
    starts = rng.integers(1, traj.M - HISTORY_LEN + 1, size=n_samples)
    samples = []
    for j, start in enumerate(starts):
        start = int(start)
        events = traj.events[start - 1:start - 1 + HISTORY_LEN]
        samples.append(HistorySample(
            history_id=f"{traj.user_id}:{j}",
            user_id=traj.user_id,
            start_index=start,
            events=events))
    return samples


def viewership_vector(sample: HistorySample, catalog: Catalog,
                      thresholds: CategoryThresholds, cfg: ClusterConfig,
                      score_column: str = "partisan_score") -> np.ndarray:
    """Normalized news-diet vector over {fL, L, C, R, fR}.

    Computed over the first ``cfg.learning_window`` events only.  Mass is
    watch seconds (WATCH_TIME basis) or event counts (COUNT basis) of
    scored videos; unscored videos carry no mass.  Returns the all-zero
    sentinel when the window contains no news.
    """
    nu = np.zeros(len(CATEGORIES))
    index = {c: i for i, c in enumerate(CATEGORIES)}
    for event in sample.events[:cfg.learning_window]:
        category = catalog.video_category(event.video_id, thresholds,
                                          score_column)
        if category == UNSCORED:
            continue
        mass = float(event.duration_s) if cfg.basis == WATCH_TIME else 1.0
        nu[index[category]] += mass
    total = nu.sum()
    if total > 0:
        nu /= total
    return nu


def news_seconds(sample: HistorySample, catalog: Catalog,
                 thresholds: CategoryThresholds, cfg: ClusterConfig) -> float:
    """Total scored-video watch seconds in the learning window."""
    total = 0.0
    for event in sample.events[:cfg.learning_window]:
        if catalog.video_category(event.video_id, thresholds) != UNSCORED:
            total += event.duration_s
    return total


def write_archetype_csv(path, samples: list[HistorySample],
                        weights: dict[str, float] | None = None) -> None:
    """Write `history_id,user_id,start_index,major,fr_tier,weight`."""
    weights = weights or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["history_id", "user_id", "start_index",
                         "major", "fr_tier", "weight"])
        for s in samples:
            label = s.archetype
            writer.writerow([
                s.history_id, s.user_id, s.start_index,
                "" if label is None else label.tag,
                "" if label is None or label.fr_tier is None else label.fr_tier,
                repr(weights.get(s.history_id, 1.0)),
            ])
