import numpy as np
import pytest

from recaudit.bots import LEARNING, BotPolicy, PacingRule, TRACE_REPLAY, \
    run_session
from recaudit.errors import ConfigMismatchError, InvalidInputError, \
    ParseError
from recaudit.experiments import (BIAS_ROLES, FORGETTING_ARMS, ROLE_CONTROL,
                                  ROLE_LONG, ROLE_SHORT, ROLE_UP_NEXT,
                                  ExperimentSpecA, ExperimentSpecB,
                                  load_manifest, read_run, read_session_csv,
                                  run_baseline_sessions, run_bias_experiment,
                                  run_forgetting_experiment,
                                  write_session_csv)
from recaudit.platform import RecommenderParams, expected_state, session_rng
from recaudit.traces import HistorySample
from tests.conftest import make_trace

PARAMS = RecommenderParams()


def focal_samples(index, n, target=0.25, length=120, prefix="u", rng=None):
    samples = []
    for i in range(n):
        user = f"{prefix}{i}"
        events = make_trace(index, [target] * length, user_id=user, rng=rng)
        samples.append(HistorySample(f"{user}:1", user, 1, events))
    return samples


class TestSpecs:
    def test_bias_planned_sessions(self, wide_index):
        focal = focal_samples(wide_index, 125)
        spec = ExperimentSpecA(focal)
        assert spec.planned_sessions() == 125 * 3 * 4 == 1500

    def test_forgetting_planned_sessions(self, wide_index):
        focal = focal_samples(wide_index, 44)
        partners = focal_samples(wide_index, 44, target=0.0, prefix="p")
        spec = ExperimentSpecB(focal, partners)
        assert spec.planned_sessions() == 44 * 3 * 2 == 264

    def test_partner_count_mismatch(self, wide_index):
        focal = focal_samples(wide_index, 3)
        partners = focal_samples(wide_index, 2, prefix="p")
        with pytest.raises(InvalidInputError):
            ExperimentSpecB(focal, partners)


class TestBiasExperiment:
    def test_learning_phase_alignment(self, wide_index):
        # All four bots of a replication replay the same 60 videos.
        focal = focal_samples(wide_index, 2, length=120)
        spec = ExperimentSpecA(focal, n_learning=10, n_observation=5,
                               replications=2)
        result = run_bias_experiment(spec, wide_index, PARAMS, run_seed=3)
        assert result.completed == result.planned == 2 * 2 * 4
        for (focal_id, rep), roles in result.by_replication().items():
            assert set(roles) == set(BIAS_ROLES)
            control_learning = [
                r.video_id for r in roles[ROLE_CONTROL].session.records[:10]]
            for role in BIAS_ROLES:
                learned = [r.video_id
                           for r in roles[role].session.records[:10]]
                assert learned == control_learning

    def test_control_continues_trace(self, wide_index):
        focal = focal_samples(wide_index, 1, length=120)
        spec = ExperimentSpecA(focal, n_learning=10, n_observation=10,
                               replications=1)
        result = run_bias_experiment(spec, wide_index, PARAMS, run_seed=4)
        log = result.logs[(focal[0].history_id, 1, ROLE_CONTROL)]
        assert log.session.watched_video_ids() == \
            [e.video_id for e in focal[0].events[:20]]

    def test_up_next_tracks_expected_state(self, wide_index):
        # Closed-loop check against the analytic EMA recursion: with tiny
        # slate noise the watched score at observation step t is close to
        # kappa * s_{t-1}, so the state follows the deterministic
        # recursion s_t = rho*s_{t-1} + (1-rho)*kappa*s_{t-1}.
        params = RecommenderParams(kappa_side=0.5, rho_side=0.9,
                                   slate_noise_sd=0.005)
        focal = focal_samples(wide_index, 1, target=0.3, length=60)
        spec = ExperimentSpecA(focal, n_learning=30, n_observation=30,
                               replications=1)
        result = run_bias_experiment(spec, wide_index, params, run_seed=5)
        session = result.logs[(focal[0].history_id, 1, ROLE_UP_NEXT)].session
        learn_scores = [r.watch_score for r in session.records[:30]]
        s = expected_state(0.9, learn_scores)[-1]
        r_eff = 0.9 + 0.1 * 0.5  # rho + (1-rho)*kappa
        watched = session.column("watch_score")[30:]
        predicted = np.array([0.5 * s * r_eff**t for t in range(30)])
        assert np.allclose(watched, predicted, atol=0.02)

    def test_attrition_aborts_whole_replication(self, wide_index):
        good = focal_samples(wide_index, 1, length=120, prefix="g")
        short = focal_samples(wide_index, 1, length=12, prefix="s")
        spec = ExperimentSpecA(good + short, n_learning=10, n_observation=10,
                               replications=2)
        result = run_bias_experiment(spec, wide_index, PARAMS, run_seed=6)
        assert result.planned == 16
        assert result.completed == 8  # the short-history user fully aborts
        assert len(result.attrition) == 8
        aborted = {e["focal_id"] for e in result.attrition}
        assert aborted == {short[0].history_id}
        reasons = {e["reason"] for e in result.attrition}
        assert any("step" in r for r in reasons)

    def test_bit_identical_rerun(self, wide_index, tmp_path):
        focal = focal_samples(wide_index, 2, length=80)
        spec = ExperimentSpecA(focal, n_learning=8, n_observation=8,
                               replications=1)
        for run in ("one", "two"):
            run_bias_experiment(spec, wide_index, PARAMS, run_seed=7,
                                out_dir=tmp_path / run)
        a = sorted((tmp_path / "one").rglob("*.csv"))
        b = sorted((tmp_path / "two").rglob("*.csv"))
        assert len(a) == len(b) == 9  # 8 sessions + attrition.csv
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_parallel_matches_serial(self, wide_index):
        focal = focal_samples(wide_index, 2, length=80)
        spec = ExperimentSpecA(focal, n_learning=8, n_observation=8,
                               replications=1)
        serial = run_bias_experiment(spec, wide_index, PARAMS, run_seed=8,
                                     workers=1)
        parallel = run_bias_experiment(spec, wide_index, PARAMS, run_seed=8,
                                       workers=2)
        assert set(serial.logs) == set(parallel.logs)
        for key in serial.logs:
            assert serial.logs[key].session.watched_video_ids() == \
                parallel.logs[key].session.watched_video_ids()


class TestForgettingExperiment:
    def test_arms_switch_at_their_steps(self, wide_index):
        focal = focal_samples(wide_index, 1, target=0.3, length=40)
        partners = focal_samples(wide_index, 1, target=0.0, length=120,
                                 prefix="p")
        spec = ExperimentSpecB(focal, partners, short_learning=10,
                               long_learning=40, observation=30,
                               replications=1)
        result = run_forgetting_experiment(spec, wide_index, PARAMS,
                                           run_seed=9)
        assert result.completed == 2
        short = result.logs[(focal[0].history_id, 1, ROLE_SHORT)].session
        long = result.logs[(focal[0].history_id, 1, ROLE_LONG)].session
        assert len(short.records) == 40
        assert len(long.records) == 70
        # SHORT arm: 10 focal videos then the partner trace.
        assert short.watched_video_ids()[:10] == \
            [e.video_id for e in focal[0].events[:10]]
        assert short.watched_video_ids()[10:] == \
            [e.video_id for e in partners[0].events[:30]]
        # LONG arm: full 40 focal videos then the partner trace.
        assert long.watched_video_ids()[:40] == \
            [e.video_id for e in focal[0].events[:40]]
        assert long.watched_video_ids()[40:] == \
            [e.video_id for e in partners[0].events[:30]]

    def test_baseline_sessions(self, wide_index):
        partners = focal_samples(wide_index, 3, target=0.0, length=20,
                                 prefix="p")
        result = run_baseline_sessions(partners, wide_index, PARAMS,
                                       run_seed=10)
        assert result.experiment == "baseline"
        assert result.completed == result.planned == 3
        for log in result.logs.values():
            assert log.session.policy_kind == TRACE_REPLAY
            assert len(log.session.records) == 20


class TestSerialization:
    def make_session(self, wide_index, seed=11):
        history = make_trace(wide_index, [0.1] * 6)
        session = run_session(
            wide_index, BotPolicy(TRACE_REPLAY, history), PacingRule(),
            PARAMS, n_learning=4, n_observation=2,
            rng=session_rng(seed, "serialize"))
        session.meta = {
            "experiment": "bias", "focal_id": "u:1", "replication": 1,
            "role": "control", "policy": TRACE_REPLAY, "weight": 1.5,
            "run_seed": seed, "config_hash": "abc123", "n_learning": 4,
            "n_observation": 2, "params": PARAMS.to_dict()}
        return session

    def test_round_trip(self, wide_index, tmp_path):
        session = self.make_session(wide_index)
        path = tmp_path / "s.csv"
        write_session_csv(path, session)
        loaded = read_session_csv(path)
        assert loaded.meta == session.meta
        assert len(loaded.records) == len(session.records)
        for a, b in zip(loaded.records, session.records):
            assert a == b

    def test_nan_score_round_trip(self, wide_index, tmp_path):
        session = self.make_session(wide_index)
        session.records[0].watch_score = float("nan")
        path = tmp_path / "s.csv"
        write_session_csv(path, session)
        loaded = read_session_csv(path)
        assert np.isnan(loaded.records[0].watch_score)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("step,phase\n1,learning\n")
        with pytest.raises(ParseError):
            read_session_csv(path)

    def test_run_round_trip(self, wide_index, tmp_path):
        focal = focal_samples(wide_index, 2, length=80)
        spec = ExperimentSpecA(focal, n_learning=8, n_observation=8,
                               replications=2)
        result = run_bias_experiment(spec, wide_index, PARAMS, run_seed=12,
                                     out_dir=tmp_path)
        loaded = read_run(tmp_path, "bias")
        assert set(loaded.logs) == set(result.logs)
        assert loaded.planned == result.planned
        key = next(iter(result.logs))
        assert loaded.logs[key].weight == result.logs[key].weight
        assert loaded.logs[key].session.watched_video_ids() == \
            result.logs[key].session.watched_video_ids()

    def test_config_mismatch_detected(self, wide_index, tmp_path):
        focal = focal_samples(wide_index, 2, length=80)
        spec = ExperimentSpecA(focal, n_learning=8, n_observation=8,
                               replications=1)
        run_bias_experiment(spec, wide_index, PARAMS, run_seed=13,
                            out_dir=tmp_path)
        # Tamper with one session's recorded config hash.
        victim = next((tmp_path / "bias").rglob("control.csv"))
        text = victim.read_text()
        victim.write_text(text.replace(
            '"config_hash": "', '"config_hash": "x'))
        with pytest.raises(ConfigMismatchError):
            read_run(tmp_path, "bias")


class TestManifest:
    def test_parse(self, tmp_path):
        path = tmp_path / "run.manifest"
        path.write_text(
            "# comment\n"
            "run_seed = 7\n"
            "quota.C = 32\n"
            "quota.fR:low = 35\n"
            "quota.fR:medium = ALL\n")
        manifest = load_manifest(path)
        assert manifest["run_seed"] == "7"
        assert manifest["quotas"] == {"C": 32, "fR:low": 35,
                                      "fR:medium": "ALL"}

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "run.manifest"
        path.write_text("run_seed 7\n")
        with pytest.raises(ParseError):
            load_manifest(path)
