"""Bot policies and session execution.

A session is a fixed-length loop: at every step both slates are generated,
the policy picks a video, and the watch is recorded with pacing-derived
watch time.  Slate generation never touches account state; only watching
does.  Rule-based policies replay their learning history during the
learning phase and apply their rule during observation, which is what makes
the four bots of one replication indistinguishable until the phases split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SessionUnderrunError
from .platform import (HOMEPAGE, SIDEBAR, AccountState, CatalogIndex,
                       RecommenderParams, Slate, generate_slate,
                       record_watch, reset_account)
from .traces import WatchEvent

TRACE_REPLAY = "TRACE_REPLAY"
UP_NEXT = "UP_NEXT"
RANDOM_SIDEBAR = "RANDOM_SIDEBAR"
RANDOM_HOMEPAGE = "RANDOM_HOMEPAGE"
SWITCH = "SWITCH"

RULE_KINDS = (UP_NEXT, RANDOM_SIDEBAR, RANDOM_HOMEPAGE)

LEARNING = "learning"
OBSERVATION = "observation"


@dataclass
class BotPolicy:
    """What the bot watches at each step.

    ``history`` feeds replay steps: the whole session for TRACE_REPLAY,
    the learning phase for rule kinds, and steps up to ``switch_step`` for
    SWITCH (``history_b`` takes over at switch_step + 1).
    """

    kind: str
    history: list[WatchEvent] | None = None
    switch_step: int | None = None
    history_b: list[WatchEvent] | None = None

    def __post_init__(self):
        if self.kind == SWITCH and (self.switch_step is None
                                    or self.history_b is None):
            raise InvalidInputError("SWITCH needs switch_step and history_b")


@dataclass(frozen=True)
class PacingRule:
    """Simulated-time pacing: fractions of real durations, with caps."""

    watch_fraction: float = 0.5
    watch_cap_s: float = 600.0
    pause_fraction: float = 0.5
    pause_cap_s: float = 1200.0

    def __post_init__(self):
        if not (0.0 < self.watch_fraction <= 1.0):
            raise InvalidInputError("watch_fraction must be in (0, 1]")
        if self.watch_cap_s <= 0 or self.pause_cap_s <= 0:
            raise InvalidInputError("pacing caps must be positive")

    def watch_seconds(self, duration_s: float) -> float:
        return min(self.watch_fraction * duration_s, self.watch_cap_s)


@dataclass
class StepRecord:
    step: int
    phase: str
    policy: str
    video_id: str
    channel_id: str
    watch_score: float  # nan when unscored
    watch_s: float
    sidebar_mean: float
    sidebar_frac_fr: float
    home_mean: float
    home_frac_fr: float
    upnext_score: float


@dataclass
class Session:
    account_id: str
    policy_kind: str
    n_learning: int
    n_observation: int
    records: list[StepRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def watched_video_ids(self) -> list[str]:
        return [r.video_id for r in self.records]

    def observation_records(self) -> list[StepRecord]:
        return self.records[self.n_learning:]


def next_action(policy: BotPolicy, step: int, phase: str, sidebar: Slate,
                homepage: Slate, rng: np.random.Generator):
    """Choose the step's video.

    Returns (video_id, replayed_event) where replayed_event is the source
    WatchEvent for replay steps and None for rule-chosen ones.
    """
    if policy.kind == TRACE_REPLAY:
        return _replay(policy.history, step, step)
    if policy.kind == SWITCH:
        if step <= policy.switch_step:
            return _replay(policy.history, step, step)
        return _replay(policy.history_b, step - policy.switch_step, step)
    if policy.kind in RULE_KINDS and phase == LEARNING:
        return _replay(policy.history, step, step)
    if policy.kind == UP_NEXT:
        return str(sidebar.item_ids[0]), None
    if policy.kind == RANDOM_SIDEBAR:
        return str(sidebar.item_ids[int(rng.integers(len(sidebar.item_ids)))]), None
    if policy.kind == RANDOM_HOMEPAGE:
        return str(homepage.item_ids[int(rng.integers(len(homepage.item_ids)))]), None
    raise InvalidInputError(f"unknown policy kind {policy.kind!r}")


def _replay(history, index_1based: int, step: int):
    if history is None or index_1based > len(history):
        raise SessionUnderrunError(
            f"history exhausted at step {step}", step=step)
    event = history[index_1based - 1]
    return event.video_id, event


def run_session(index: CatalogIndex, policy: BotPolicy, pacing: PacingRule,
                params: RecommenderParams, n_learning: int,
                n_observation: int, rng: np.random.Generator,
                account_id: str = "bot") -> Session:
    """Execute one full session from a freshly reset account."""
    state = reset_account(account_id)
    session = Session(account_id, policy.kind, n_learning, n_observation)
    for step in range(1, n_learning + n_observation + 1):
        phase = LEARNING if step <= n_learning else OBSERVATION
        sidebar = generate_slate(state, SIDEBAR, index, params, rng, step)
        homepage = generate_slate(state, HOMEPAGE, index, params, rng, step)
        video_id, event = next_action(policy, step, phase, sidebar,
                                      homepage, rng)
        score, channel_id, catalog_duration = index.video_info(video_id)
        if event is not None:
            # Replayed watches pace off the real user's viewing duration.
            watch_basis = event.duration_s
            duration_s = catalog_duration or event.duration_s
        else:
            watch_basis = catalog_duration
            duration_s = catalog_duration
        watch_s = pacing.watch_seconds(watch_basis)
        record_watch(state, score, watch_s, duration_s, params)
        session.records.append(StepRecord(
            step=step,
            phase=phase,
            policy=policy.kind,
            video_id=video_id,
            channel_id=channel_id,
            watch_score=float("nan") if score is None else score,
            watch_s=watch_s,
            sidebar_mean=sidebar.mean_score,
            sidebar_frac_fr=sidebar.frac_fr,
            home_mean=homepage.mean_score,
            home_frac_fr=homepage.frac_fr,
            upnext_score=float(sidebar.item_scores[0]),
        ))
    return session
