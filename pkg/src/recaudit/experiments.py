"""Composition of sessions into the two audit experiments.

Experiment A (bias): per focal user and replication, four bots share the
same 60-video learning replay; in the observation phase the control bot
continues the real trace while up-next / random-sidebar / random-homepage
bots follow their rules.

Experiment B (forgetting): per focal user and replication, two arms switch
from a far-right history to a moderate partner history -- SHORT after 30
videos, LONG after 120.  The two control framings from the same runs
(long-as-control over steps 31..120, short-as-control over the post-switch
windows) are produced by the estimators, not by extra sessions.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .bots import (RANDOM_HOMEPAGE, RANDOM_SIDEBAR, SWITCH, TRACE_REPLAY,
                   UP_NEXT, BotPolicy, PacingRule, Session, StepRecord,
                   run_session)
from .errors import ConfigMismatchError, InvalidInputError, ParseError, \
    RecauditError
from .platform import CatalogIndex, RecommenderParams, config_hash, \
    session_rng
from .traces import HistorySample

ROLE_CONTROL = "control"
ROLE_UP_NEXT = "up_next"
ROLE_RANDOM_SIDEBAR = "random_sidebar"
ROLE_RANDOM_HOMEPAGE = "random_homepage"
BIAS_ROLES = (ROLE_CONTROL, ROLE_UP_NEXT, ROLE_RANDOM_SIDEBAR,
              ROLE_RANDOM_HOMEPAGE)

ROLE_SHORT = "short"
ROLE_LONG = "long"
ROLE_BASELINE = "baseline"
FORGETTING_ARMS = (ROLE_SHORT, ROLE_LONG)

_ROLE_POLICY_KIND = {
    ROLE_UP_NEXT: UP_NEXT,
    ROLE_RANDOM_SIDEBAR: RANDOM_SIDEBAR,
    ROLE_RANDOM_HOMEPAGE: RANDOM_HOMEPAGE,
}


@dataclass
class ExperimentSpecA:
    """Bias experiment: stratified focal histories, 4 bots per replication."""

    focal: list[HistorySample]
    weights: dict[str, float] = field(default_factory=dict)
    n_learning: int = 60
    n_observation: int = 60
    replications: int = 3

    def planned_sessions(self) -> int:
        return len(self.focal) * self.replications * len(BIAS_ROLES)


@dataclass
class ExperimentSpecB:
    """Forgetting experiment: fR focal histories with moderate partners."""

    focal: list[HistorySample]
    partners: list[HistorySample]
    weights: dict[str, float] = field(default_factory=dict)
    short_learning: int = 30
    long_learning: int = 120
    observation: int = 120
    replications: int = 3

    def __post_init__(self):
        if len(self.partners) != len(self.focal):
            raise InvalidInputError("one partner history per focal history")

    def planned_sessions(self) -> int:
        return len(self.focal) * self.replications * len(FORGETTING_ARMS)


@dataclass
class TrajectoryLog:
    experiment: str
    focal_id: str
    replication: int
    role: str
    session: Session
    weight: float = 1.0


@dataclass
class ExperimentResult:
    experiment: str
    logs: dict = field(default_factory=dict)  # (focal_id, rep, role) -> log
    attrition: list = field(default_factory=list)
    planned: int = 0

    @property
    def completed(self) -> int:
        return len(self.logs)

    def by_replication(self):
        """Group logs as {(focal_id, rep): {role: TrajectoryLog}}."""
        groups: dict[tuple, dict] = {}
        for (focal_id, rep, role), log in sorted(self.logs.items()):
            groups.setdefault((focal_id, rep), {})[role] = log
        return groups


def _bias_policies(history, n_learning):
    return {
        ROLE_CONTROL: BotPolicy(TRACE_REPLAY, history),
        ROLE_UP_NEXT: BotPolicy(UP_NEXT, history[:n_learning]),
        ROLE_RANDOM_SIDEBAR: BotPolicy(RANDOM_SIDEBAR, history[:n_learning]),
        ROLE_RANDOM_HOMEPAGE: BotPolicy(RANDOM_HOMEPAGE,
                                        history[:n_learning]),
    }


def run_bias_experiment(spec: ExperimentSpecA, index: CatalogIndex,
                        params: RecommenderParams, run_seed: int,
                        pacing: PacingRule | None = None,
                        out_dir=None, workers: int = 1) -> ExperimentResult:
    """Run the four-bot bias experiment over all focal users.

    Session failures abort the whole replication (all four roles) and are
    recorded in the attrition list; nothing is dropped silently.
    """
    pacing = pacing or PacingRule()
    result = ExperimentResult("bias", planned=spec.planned_sessions())
    cfg_hash = config_hash(params, run_seed, {"experiment": "bias"})
    jobs = []
    for sample in spec.focal:
        total = spec.n_learning + spec.n_observation
        for rep in range(1, spec.replications + 1):
            policies = _bias_policies(sample.events[:total], spec.n_learning)
            for role, policy in policies.items():
                jobs.append(_SessionJob(
                    experiment="bias", focal_id=sample.history_id, rep=rep,
                    role=role, policy=policy, n_learning=spec.n_learning,
                    n_observation=spec.n_observation,
                    weight=spec.weights.get(sample.history_id, 1.0)))
    _execute(jobs, index, params, pacing, run_seed, cfg_hash, result,
             workers)
    if out_dir is not None:
        write_run(out_dir, result)
    return result


def run_forgetting_experiment(spec: ExperimentSpecB, index: CatalogIndex,
                              params: RecommenderParams, run_seed: int,
                              pacing: PacingRule | None = None,
                              out_dir=None, workers: int = 1,
                              ) -> ExperimentResult:
    """Run the SHORT/LONG switch arms over all focal/partner pairs."""
    pacing = pacing or PacingRule()
    result = ExperimentResult("forgetting", planned=spec.planned_sessions())
    cfg_hash = config_hash(params, run_seed, {"experiment": "forgetting"})
    jobs = []
    for sample, partner in zip(spec.focal, spec.partners):
        weight = spec.weights.get(sample.history_id, 1.0)
        for rep in range(1, spec.replications + 1):
            for role, learn in ((ROLE_SHORT, spec.short_learning),
                                (ROLE_LONG, spec.long_learning)):
                policy = BotPolicy(SWITCH, sample.events[:learn],
                                   switch_step=learn,
                                   history_b=partner.events)
                jobs.append(_SessionJob(
                    experiment="forgetting", focal_id=sample.history_id,
                    rep=rep, role=role, policy=policy, n_learning=learn,
                    n_observation=spec.observation, weight=weight))
    _execute(jobs, index, params, pacing, run_seed, cfg_hash, result,
             workers)
    if out_dir is not None:
        write_run(out_dir, result)
    return result


def run_baseline_sessions(partners: list[HistorySample], index: CatalogIndex,
                          params: RecommenderParams, run_seed: int,
                          pacing: PacingRule | None = None,
                          replications: int = 1, out_dir=None,
                          ) -> ExperimentResult:
    """Pure moderate-history replays; the forgetting-curve baseline."""
    pacing = pacing or PacingRule()
    result = ExperimentResult("baseline",
                              planned=len(partners) * replications)
    cfg_hash = config_hash(params, run_seed, {"experiment": "forgetting"})
    jobs = []
    for partner in partners:
        for rep in range(1, replications + 1):
            jobs.append(_SessionJob(
                experiment="baseline", focal_id=partner.history_id,
                rep=rep, role=ROLE_BASELINE,
                policy=BotPolicy(TRACE_REPLAY, partner.events),
                n_learning=len(partner.events), n_observation=0,
                weight=1.0))
    _execute(jobs, index, params, pacing, run_seed, cfg_hash, result, 1)
    if out_dir is not None:
        write_run(out_dir, result)
    return result


@dataclass
class _SessionJob:
    experiment: str
    focal_id: str
    rep: int
    role: str
    policy: BotPolicy
    n_learning: int
    n_observation: int
    weight: float


def _run_job(job: _SessionJob, index, params, pacing, run_seed, cfg_hash):
    rng = session_rng(run_seed, job.focal_id, job.rep, job.role)
    session = run_session(index, job.policy, pacing, params, job.n_learning,
                          job.n_observation, rng,
                          account_id=f"{job.focal_id}/{job.rep}/{job.role}")
    session.meta = {
        "experiment": job.experiment,
        "focal_id": job.focal_id,
        "replication": job.rep,
        "role": job.role,
        "policy": job.policy.kind,
        "weight": job.weight,
        "run_seed": run_seed,
        "config_hash": cfg_hash,
        "n_learning": job.n_learning,
        "n_observation": job.n_observation,
        "params": params.to_dict(),
    }
    return session


def _execute(jobs, index, params, pacing, run_seed, cfg_hash, result,
             workers):
    outcomes = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                (job.focal_id, job.rep, job.role): pool.submit(
                    _run_job, job, index, params, pacing, run_seed, cfg_hash)
                for job in jobs}
            for key, future in futures.items():
                try:
                    outcomes[key] = future.result()
                except RecauditError as exc:
                    outcomes[key] = exc
    else:
        for job in jobs:
            key = (job.focal_id, job.rep, job.role)
            try:
                outcomes[key] = _run_job(job, index, params, pacing,
                                         run_seed, cfg_hash)
            except RecauditError as exc:
                outcomes[key] = exc
    # A failed session aborts its whole replication.
    failed_reps = {(f, r) for (f, r, _), out in outcomes.items()
                   if isinstance(out, RecauditError)}
    for job in jobs:
        key = (job.focal_id, job.rep, job.role)
        out = outcomes[key]
        if (job.focal_id, job.rep) in failed_reps:
            reason = str(out) if isinstance(out, RecauditError) \
                else "replication aborted by sibling session failure"
            result.attrition.append({
                "focal_id": job.focal_id, "replication": job.rep,
                "role": job.role, "reason": reason})
            continue
        result.logs[key] = TrajectoryLog(
            result.experiment, job.focal_id, job.rep, job.role, out,
            job.weight)


# --- serialization ---------------------------------------------------------

_CSV_COLUMNS = ["step", "phase", "policy", "video_id", "channel_id",
                "watch_score", "watch_s", "sidebar_mean", "sidebar_frac_fR",
                "home_mean", "home_frac_fR", "upnext_score"]
_FIELD_OF_COLUMN = {"sidebar_frac_fR": "sidebar_frac_fr",
                    "home_frac_fR": "home_frac_fr"}


def write_session_csv(path, session: Session) -> None:
    """One CSV per session; first line is a '#'-prefixed JSON header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("#" + json.dumps(session.meta, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for r in session.records:
            writer.writerow([
                r.step, r.phase, r.policy, r.video_id, r.channel_id,
                "" if math.isnan(r.watch_score) else repr(r.watch_score),
                repr(r.watch_s), repr(r.sidebar_mean),
                repr(r.sidebar_frac_fr), repr(r.home_mean),
                repr(r.home_frac_fr), repr(r.upnext_score)])


def read_session_csv(path) -> Session:
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ParseError(f"{path}: missing JSON header line", line=1)
        meta = json.loads(first[1:])
        reader = csv.reader(fh)
        header = next(reader)
        if header != _CSV_COLUMNS:
            raise ParseError(f"{path}: unexpected columns {header}", line=2)
        session = Session(
            account_id=f"{meta['focal_id']}/{meta['replication']}"
                       f"/{meta['role']}",
            policy_kind=meta["policy"],
            n_learning=meta["n_learning"],
            n_observation=meta["n_observation"],
            meta=meta)
        for row in reader:
            session.records.append(StepRecord(
                step=int(row[0]), phase=row[1], policy=row[2],
                video_id=row[3], channel_id=row[4],
                watch_score=float(row[5]) if row[5] else float("nan"),
                watch_s=float(row[6]), sidebar_mean=float(row[7]),
                sidebar_frac_fr=float(row[8]), home_mean=float(row[9]),
                home_frac_fr=float(row[10]), upnext_score=float(row[11])))
    return session


def write_run(out_dir, result: ExperimentResult) -> None:
    """Lay out `<out>/<experiment>/<focal>/<rep>/<role>.csv` + attrition."""
    root = os.path.join(out_dir, result.experiment)
    for (focal_id, rep, role), log in sorted(result.logs.items()):
        rep_dir = os.path.join(root, focal_id.replace(":", "_"), str(rep))
        os.makedirs(rep_dir, exist_ok=True)
        write_session_csv(os.path.join(rep_dir, f"{role}.csv"), log.session)
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "attrition.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["focal_id", "replication", "role", "reason"])
        for entry in result.attrition:
            writer.writerow([entry["focal_id"], entry["replication"],
                             entry["role"], entry["reason"]])


def read_run(out_dir, experiment: str) -> ExperimentResult:
    """Load a run directory back into an ExperimentResult.

    Refuses to mix sessions carrying different config hashes.
    """
    root = os.path.join(out_dir, experiment)
    result = ExperimentResult(experiment)
    hashes = set()
    for focal_dir in sorted(os.listdir(root)):
        focal_path = os.path.join(root, focal_dir)
        if not os.path.isdir(focal_path):
            continue
        for rep_dir in sorted(os.listdir(focal_path)):
            rep_path = os.path.join(focal_path, rep_dir)
            for name in sorted(os.listdir(rep_path)):
                if not name.endswith(".csv"):
                    continue
                session = read_session_csv(os.path.join(rep_path, name))
                meta = session.meta
                hashes.add(meta["config_hash"])
                if len(hashes) > 1:
                    raise ConfigMismatchError(
                        f"run {root} mixes config hashes {sorted(hashes)}")
                key = (meta["focal_id"], meta["replication"], meta["role"])
                result.logs[key] = TrajectoryLog(
                    experiment, meta["focal_id"], meta["replication"],
                    meta["role"], session, meta.get("weight", 1.0))
    attrition_path = os.path.join(root, "attrition.csv")
    if os.path.exists(attrition_path):
        with open(attrition_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            result.attrition = list(reader)
    result.planned = len(result.logs) + len(result.attrition)
    return result


def load_manifest(path) -> dict:
    """Parse a `key = value` experiment manifest.

    Quota entries use dotted keys (`quota.C = 32`, `quota.fR:low = ALL`)
    and are collected into a `quotas` dict.
    """
    manifest: dict = {"quotas": {}}
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
            if key.startswith("quota."):
                stratum = key[len("quota."):]
                manifest["quotas"][stratum] = (
                    value if value == "ALL" else int(value))
            else:
                manifest[key] = value
    return manifest
