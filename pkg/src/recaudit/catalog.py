"""Content universe: channels, videos, partisanship scores, category labels.

Channel scores live on a dimensionless axis centered at 0 (negative = left,
positive = right).  Category bands are defined in units of a configurable
standard deviation sigma (default 0.08): C inside (-sigma, sigma), L/R in the
one-to-two-sigma bands, fL/fR beyond two sigma.  Ties at band edges go to the
more extreme band.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError, InvalidInputError, ParseError

CATEGORIES = ("fL", "L", "C", "R", "fR")
UNSCORED = "UNSCORED"

# Missing-score policies
DROP = "DROP"
IMPUTE_ZERO_MEAN = "IMPUTE_ZERO_MEAN"

SCORE_COLUMN = "partisan_score"


@dataclass(frozen=True)
class CategoryThresholds:
    """Band width parameter for category labeling."""

    sigma: float = 0.08

    def __post_init__(self):
        if not (self.sigma > 0):
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")


def label_category(score: float, thresholds: CategoryThresholds) -> str:
    """Map a partisan score to one of fL, L, C, R, fR.

    Bands partition the real line; edge ties go outward:
    fL: s <= -2*sigma, L: -2*sigma < s <= -sigma, C: |s| < sigma,
    R: sigma <= s < 2*sigma, fR: s >= 2*sigma.
    """
    if score is None or not np.isfinite(score):
        raise InvalidInputError(f"score must be finite, got {score}")
    sigma = thresholds.sigma
    if score >= 2 * sigma:
        return "fR"
    if score >= sigma:
        return "R"
    if score <= -2 * sigma:
        return "fL"
    if score <= -sigma:
        return "L"
    return "C"


@dataclass
class Channel:
    channel_id: str
    partisan_score: float | None = None
    alt_scores: dict = field(default_factory=dict)

    def score(self, column: str = SCORE_COLUMN) -> float | None:
        if column == SCORE_COLUMN:
            return self.partisan_score
        return self.alt_scores.get(column)


@dataclass
class Video:
    video_id: str
    channel_id: str
    duration_s: int = 0


class Catalog:
    """Immutable-after-construction universe of channels and videos.

    ``missing_score_policy`` controls how consumers treat videos whose
    channel has no score: DROP leaves them unscored, IMPUTE_ZERO_MEAN is
    applied via :meth:`with_imputed_scores` before use.
    """

    def __init__(self, channels, videos, missing_score_policy: str = DROP):
        if missing_score_policy not in (DROP, IMPUTE_ZERO_MEAN):
            raise InvalidInputError(
                f"unknown missing_score_policy {missing_score_policy!r}")
        self.channels: dict[str, Channel] = {}
        for ch in channels:
            if ch.channel_id in self.channels:
                raise IntegrityError(f"duplicate channel_id {ch.channel_id!r}")
            self.channels[ch.channel_id] = ch
        self.videos: dict[str, Video] = {}
        for v in videos:
            if v.video_id in self.videos:
                raise IntegrityError(f"duplicate video_id {v.video_id!r}")
            if v.channel_id not in self.channels:
                raise IntegrityError(
                    f"video {v.video_id!r} references unknown channel "
                    f"{v.channel_id!r}")
            self.videos[v.video_id] = v
        self.missing_score_policy = missing_score_policy

    def video_score(self, video_id: str,
                    score_column: str = SCORE_COLUMN) -> float | None:
        """Channel score of a video; None if video or score is unknown."""
        video = self.videos.get(video_id)
        if video is None:
            return None
        return self.channels[video.channel_id].score(score_column)

    def video_category(self, video_id: str, thresholds: CategoryThresholds,
                       score_column: str = SCORE_COLUMN) -> str:
        score = self.video_score(video_id, score_column)
        if score is None:
            return UNSCORED
        return label_category(score, thresholds)

    def fraction_unscored(self, score_column: str = SCORE_COLUMN) -> float:
        if not self.videos:
            return 0.0
        n_missing = sum(
            1 for v in self.videos.values()
            if self.channels[v.channel_id].score(score_column) is None)
        return n_missing / len(self.videos)

    def with_imputed_scores(self, sigma: float, seed: int) -> "Catalog":
        """Fill missing partisan scores with N(0, sigma) draws.

        Draws are keyed on (seed, channel_id) so imputation is stable no
        matter how many channels are missing or in what order they appear.
        """
        channels = []
        for ch in self.channels.values():
            if ch.partisan_score is None:
                digest = hashlib.sha256(
                    f"impute:{seed}:{ch.channel_id}".encode()).digest()
                rng = np.random.default_rng(
                    int.from_bytes(digest[:8], "little"))
                score = float(rng.normal(0.0, sigma))
                channels.append(Channel(ch.channel_id, score,
                                        dict(ch.alt_scores)))
            else:
                channels.append(ch)
        return Catalog(channels, list(self.videos.values()),
                       missing_score_policy=self.missing_score_policy)


def load_channel_scores(path) -> list[Channel]:
    """Read a channel-score CSV: channel_id,partisan_score[,<alt>...].

    Empty score cells mean the channel is unscored.  Duplicate ids raise
    IntegrityError; malformed rows raise ParseError with the line number.
    """
    channels: list[Channel] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty channel-score file", line=1)
        if len(header) < 2 or header[0] != "channel_id" \
                or header[1] != SCORE_COLUMN:
            raise ParseError(
                f"expected header 'channel_id,{SCORE_COLUMN}[,...]', "
                f"got {','.join(header)!r}", line=1)
        alt_names = header[2:]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} cells, got {len(row)}",
                    line=lineno)
            channel_id = row[0]
            if channel_id in seen:
                raise IntegrityError(
                    f"duplicate channel_id {channel_id!r} at line {lineno}")
            seen.add(channel_id)
            score = _parse_score(row[1], lineno)
            alt = {}
            for name, cell in zip(alt_names, row[2:]):
                value = _parse_score(cell, lineno)
                if value is not None:
                    alt[name] = value
            channels.append(Channel(channel_id, score, alt))
    return channels


def load_videos(path) -> list[Video]:
    """Read a video CSV: video_id,channel_id,duration_s."""
    videos: list[Video] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty video file", line=1)
        if header[:3] != ["video_id", "channel_id", "duration_s"]:
            raise ParseError(
                "expected header 'video_id,channel_id,duration_s', "
                f"got {','.join(header)!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 3:
                raise ParseError(f"expected 3 cells, got {len(row)}",
                                 line=lineno)
            video_id, channel_id, dur = row[0], row[1], row[2]
            if video_id in seen:
                raise IntegrityError(
                    f"duplicate video_id {video_id!r} at line {lineno}")
            seen.add(video_id)
            try:
                duration = int(dur)
            except ValueError:
                raise ParseError(f"bad duration_s {dur!r}", line=lineno)
            if duration < 0:
                raise ParseError(f"negative duration_s {duration}",
                                 line=lineno)
            videos.append(Video(video_id, channel_id, duration))
    return videos


def _parse_score(cell: str, lineno: int) -> float | None:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"bad score cell {cell!r}", line=lineno)
    if not np.isfinite(value):
        raise ParseError(f"non-finite score {cell!r}", line=lineno)
    return value


def build_synthetic_catalog(n_channels: int, mean: float, sd: float,
                            videos_per_channel: int, seed: int,
                            duration_range: tuple[int, int] = (120, 1800),
                            ) -> Catalog:
    """Generate a scored catalog with N(mean, sd) channel scores.

    Bit-deterministic for a fixed seed.  Durations are uniform integers on
    ``duration_range``.
    """
    if n_channels < 1:
        raise InvalidInputError("n_channels must be >= 1")
    if videos_per_channel < 1:
        raise InvalidInputError("videos_per_channel must be >= 1")
    if sd < 0:
        raise InvalidInputError("sd must be >= 0")
    rng = np.random.default_rng(seed)
    scores = mean + sd * rng.standard_normal(n_channels)
    lo, hi = duration_range
    durations = rng.integers(lo, hi + 1, size=n_channels * videos_per_channel)
    channels = [Channel(f"ch{i:05d}", float(scores[i]))
                for i in range(n_channels)]
    videos = []
    k = 0
    for i in range(n_channels):
        for _ in range(videos_per_channel):
            videos.append(Video(f"v{k:07d}", f"ch{i:05d}",
                                int(durations[k])))
            k += 1
    return Catalog(channels, videos)


def write_catalog_csv(catalog: Catalog, channels_path, videos_path) -> None:
    """Write a catalog back out in the documented CSV formats."""
    alt_names = sorted({name for ch in catalog.channels.values()
                        for name in ch.alt_scores})
    with open(channels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel_id", SCORE_COLUMN] + alt_names)
        for ch in catalog.channels.values():
            row = [ch.channel_id,
                   "" if ch.partisan_score is None else repr(ch.partisan_score)]
            for name in alt_names:
                value = ch.alt_scores.get(name)
                row.append("" if value is None else repr(value))
            writer.writerow(row)
    with open(videos_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "channel_id", "duration_s"])
        for v in catalog.videos.values():
            writer.writerow([v.video_id, v.channel_id, v.duration_s])
