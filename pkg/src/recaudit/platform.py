"""Synthetic recommender platform with known ground truth.

The platform is linear-Gaussian: each account carries one EMA partisanship
estimate per surface (sidebar, homepage), updated on every watch as
``s <- rho*s + (1-rho)*w*x``.  A slate for surface u targets mean score
``mu_u = kappa_u * s_u + bias_u`` with zero-mean Gaussian jitter around it,
so closed-loop behaviour has analytic fixed points (s* = b/(1-kappa)) and
geometric forgetting that estimators can be validated against.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .catalog import Catalog, CategoryThresholds, label_category
from .errors import InsufficientCatalogError, InvalidInputError, ParseError

SIDEBAR = "SIDEBAR"
HOMEPAGE = "HOMEPAGE"

UNIFORM = "UNIFORM"
TIME_FRACTION = "TIME_FRACTION"

# Watch-count scale over which history-dependent homepage retention ramps up.
RHO_HOME_RAMP = 120


@dataclass
class RecommenderParams:
    """Ground-truth parameters of the synthetic recommender.

    ``rho_home_gain`` makes homepage retention grow with account history:
    rho_home_effective = rho_home + rho_home_gain * min(watch_count/120, 1).
    """

    kappa_side: float = 0.8
    kappa_home: float = 0.5
    bias_side: float = 0.0
    bias_home: float = 0.0
    rho_side: float = 0.9
    rho_home: float = 0.9
    rho_home_gain: float = 0.0
    slate_noise_sd: float = 0.05
    sidebar_size: int = 30
    homepage_size: int = 15
    watch_weighting: str = UNIFORM

    def __post_init__(self):
        if self.sidebar_size < 1 or self.homepage_size < 1:
            raise InvalidInputError("slate sizes must be >= 1")
        for name in ("rho_side", "rho_home"):
            rho = getattr(self, name)
            if not (0.0 <= rho < 1.0):
                raise InvalidInputError(f"{name} must be in [0, 1)")
        if self.watch_weighting not in (UNIFORM, TIME_FRACTION):
            raise InvalidInputError(
                f"unknown watch_weighting {self.watch_weighting!r}")

    def kappa(self, surface: str) -> float:
        return self.kappa_side if surface == SIDEBAR else self.kappa_home

    def bias(self, surface: str) -> float:
        return self.bias_side if surface == SIDEBAR else self.bias_home

    def slate_size(self, surface: str) -> int:
        return self.sidebar_size if surface == SIDEBAR else self.homepage_size

    def effective_rho(self, surface: str, watch_count: int) -> float:
        if surface == SIDEBAR:
            return self.rho_side
        rho = self.rho_home + self.rho_home_gain * min(
            watch_count / RHO_HOME_RAMP, 1.0)
        return min(rho, 0.999999)

    def to_dict(self) -> dict:
        return asdict(self)


def save_params(params: RecommenderParams, path) -> None:
    """Write params as `key = value` lines, one field per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in params.to_dict().items():
            fh.write(f"{key} = {value}\n")


def load_params(path) -> RecommenderParams:
    """Read a `key = value` params file; unknown keys are errors."""
    fields = RecommenderParams.__dataclass_fields__
    kwargs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {line!r}",
                                 line=lineno)
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in fields:
                raise ParseError(f"unknown parameter {key!r}", line=lineno)
            kind = fields[key].type
            if kind == "int":
                kwargs[key] = int(value)
            elif kind == "float":
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
    return RecommenderParams(**kwargs)


@dataclass
class AccountState:
    account_id: str
    s_side: float = 0.0
    s_home: float = 0.0
    watch_count: int = 0

    def s(self, surface: str) -> float:
        return self.s_side if surface == SIDEBAR else self.s_home


def reset_account(account_id: str) -> AccountState:
    """Clean-slate account: no learned preference, empty history."""
    return AccountState(account_id=account_id)


def record_watch(state: AccountState, score: float | None, watch_s: float,
                 duration_s: float, params: RecommenderParams,
                 ) -> AccountState:
    """Update learned state in place for one watched video.

    Unscored videos (score None) leave the state untouched.  The
    history-dependent homepage retention uses the pre-watch count.
    """
    if watch_s < 0:
        raise InvalidInputError(f"negative watch_s {watch_s}")
    if score is None:
        return state
    if params.watch_weighting == TIME_FRACTION and duration_s > 0:
        w = min(watch_s / duration_s, 1.0)
    else:
        w = 1.0
    for surface, attr in ((SIDEBAR, "s_side"), (HOMEPAGE, "s_home")):
        rho = params.effective_rho(surface, state.watch_count)
        setattr(state, attr,
                rho * getattr(state, attr) + (1.0 - rho) * w * score)
    state.watch_count += 1
    return state


@dataclass
class Slate:
    surface: str
    item_ids: np.ndarray      # video ids in rank order (rank 1 first)
    item_scores: np.ndarray   # scores in rank order
    generated_at_step: int
    frac_fr: float

    @property
    def items(self) -> list:
        """Ordered (video_id, score) pairs; rank 1 first."""
        return list(zip(self.item_ids.tolist(), self.item_scores.tolist()))

    @property
    def mean_score(self) -> float:
        return float(self.item_scores.mean())


class CatalogIndex:
    """Score-sorted view of a catalog's scored videos, for fast slate draws."""

    def __init__(self, catalog: Catalog,
                 thresholds: CategoryThresholds | None = None,
                 score_column: str = "partisan_score"):
        thresholds = thresholds or CategoryThresholds()
        self.thresholds = thresholds
        self.score_column = score_column
        ids, scores, is_fr = [], [], []
        self.lookup: dict[str, tuple[float | None, str, int]] = {}
        for video in catalog.videos.values():
            score = catalog.video_score(video.video_id, score_column)
            self.lookup[video.video_id] = (
                score, video.channel_id, video.duration_s)
            if score is None:
                continue
            ids.append(video.video_id)
            scores.append(score)
            is_fr.append(label_category(score, thresholds) == "fR")
        order = np.argsort(scores, kind="stable")
        self.video_ids = np.asarray(ids, dtype=object)[order]
        self.scores = np.asarray(scores, dtype=float)[order]
        self.is_fr = np.asarray(is_fr, dtype=bool)[order]
        self.n = len(self.scores)

    def video_info(self, video_id: str):
        """(score, channel_id, duration_s); unknown ids are unscored."""
        return self.lookup.get(video_id, (None, "", 0))


# Half-width of the index-space jitter that de-clumps nearest-score picks.
_PICK_SPREAD = 3


def generate_slate(state: AccountState, surface: str, index: CatalogIndex,
                   params: RecommenderParams, rng: np.random.Generator,
                   step: int = 0) -> Slate:
    """Draw one slate whose expected item score is kappa*s + bias.

    Each slot samples a target score mu + N(0, slate_noise_sd) and takes a
    video near that score in the sorted catalog (with small index jitter so
    repeated targets spread over neighbours).  Items are ranked by
    closeness to mu; rank 1 of the sidebar is the up-next item.
    """
    size = params.slate_size(surface)
    if index.n < size:
        raise InsufficientCatalogError(
            f"catalog has {index.n} scored videos, slate needs {size}")
    mu = params.kappa(surface) * state.s(surface) + params.bias(surface)
    targets = mu + params.slate_noise_sd * rng.standard_normal(size)
    pos = np.searchsorted(index.scores, targets)
    pos = pos + rng.integers(-_PICK_SPREAD, _PICK_SPREAD + 1, size=size)
    pos = np.clip(pos, 0, index.n - 1)
    scores = index.scores[pos]
    order = np.argsort(np.abs(scores - mu), kind="stable")
    ranked = pos[order]
    frac_fr = float(index.is_fr[pos].mean())
    return Slate(surface, index.video_ids[ranked], scores[order], step,
                 frac_fr)


def expected_state(rho, watch_sequence_means, s0: float = 0.0) -> np.ndarray:
    """Analytic EMA recursion over a sequence of expected watch scores.

    ``rho`` may be a scalar or a per-step sequence (for history-dependent
    retention).  Returns the state after each step.
    """
    means = np.asarray(watch_sequence_means, dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), means.shape)
    out = np.empty_like(means)
    s = s0
    for t in range(len(means)):
        s = rho[t] * s + (1.0 - rho[t]) * means[t]
        out[t] = s
    return out


def config_hash(params: RecommenderParams, run_seed: int,
                extra: dict | None = None) -> str:
    """Short stable hash of the effective configuration."""
    payload = {"params": params.to_dict(), "run_seed": run_seed}
    if extra:
        payload["extra"] = extra
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def session_rng(run_seed: int, *keys) -> np.random.Generator:
    """Independent per-session generator derived from the run seed.

    The stream is keyed by hash(run_seed, *keys) so sessions never share
    state and reruns are bit-reproducible.
    """
    tag = ":".join(str(k) for k in (run_seed,) + keys)
    digest = hashlib.sha256(tag.encode()).digest()
    return np.random.default_rng(
        np.random.SeedSequence(int.from_bytes(digest[:16], "little")))
