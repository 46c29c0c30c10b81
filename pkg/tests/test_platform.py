import numpy as np
import pytest

from recaudit.catalog import CategoryThresholds, build_synthetic_catalog
from recaudit.errors import InsufficientCatalogError, InvalidInputError
from recaudit.platform import (HOMEPAGE, SIDEBAR, AccountState,
                               CatalogIndex, RecommenderParams,
                               config_hash, expected_state, generate_slate,
                               record_watch, reset_account, session_rng)


def params_with(**kwargs):
    return RecommenderParams(**kwargs)


class TestAccountState:
    def test_reset_is_clean(self):
        state = AccountState("a", s_side=0.4, s_home=-0.2, watch_count=17)
        fresh = reset_account(state.account_id)
        assert fresh.s_side == 0.0
        assert fresh.s_home == 0.0
        assert fresh.watch_count == 0

    def test_reset_slates_center_on_prior(self, wide_index):
        params = params_with(bias_side=0.0, slate_noise_sd=0.05)
        rng = session_rng(0, "reset-slates")
        means = [generate_slate(reset_account("a"), SIDEBAR, wide_index,
                                params, rng).mean_score
                 for _ in range(1000)]
        means = np.array(means)
        se = means.std(ddof=1) / np.sqrt(len(means))
        assert abs(means.mean()) < 3 * se + 1e-3

    def test_same_seed_stream_identical_behavior(self, wide_index):
        params = params_with()
        results = []
        for _ in range(2):
            rng = session_rng(42, "twin")
            state = reset_account("a")
            log = []
            for step in range(10):
                slate = generate_slate(state, SIDEBAR, wide_index, params,
                                       rng, step)
                record_watch(state, slate.item_scores[0], 60, 120, params)
                log.append((tuple(slate.item_ids.tolist()), state.s_side))
            results.append(log)
        assert results[0] == results[1]


class TestRecordWatch:
    def test_single_ema_step(self):
        params = params_with(rho_side=0.9, rho_home=0.9)
        state = reset_account("a")
        record_watch(state, 1.0, 60, 120, params)
        assert state.s_side == pytest.approx(0.1)
        assert state.s_home == pytest.approx(0.1)
        assert state.watch_count == 1

    def test_geometric_series_oracle(self):
        # n watches of constant c from reset: s = c * (1 - rho^n)
        params = params_with(rho_side=0.8, rho_home=0.8)
        c, n = 0.3, 25
        state = reset_account("a")
        for _ in range(n):
            record_watch(state, c, 60, 120, params)
        assert state.s_side == pytest.approx(c * (1 - 0.8**n))

    def test_unscored_leaves_state_unchanged(self):
        params = params_with()
        state = reset_account("a")
        record_watch(state, 0.5, 60, 120, params)
        before = (state.s_side, state.s_home, state.watch_count)
        record_watch(state, None, 60, 120, params)
        assert (state.s_side, state.s_home, state.watch_count) == before

    def test_negative_watch_time_rejected(self):
        with pytest.raises(InvalidInputError):
            record_watch(reset_account("a"), 0.5, -1, 120, params_with())

    def test_time_fraction_weighting(self):
        params = params_with(watch_weighting="TIME_FRACTION", rho_side=0.9,
                             rho_home=0.9)
        state = reset_account("a")
        record_watch(state, 1.0, 30, 120, params)  # quarter watched
        assert state.s_side == pytest.approx(0.1 * 0.25)
        state = reset_account("b")
        record_watch(state, 1.0, 500, 120, params)
        assert state.s_side == pytest.approx(0.1)  # w capped at 1

    def test_history_dependent_home_retention(self):
        params = params_with(rho_home=0.85, rho_home_gain=0.12)
        assert params.effective_rho(HOMEPAGE, 0) == pytest.approx(0.85)
        assert params.effective_rho(HOMEPAGE, 30) == pytest.approx(0.88)
        assert params.effective_rho(HOMEPAGE, 120) == pytest.approx(0.97)
        assert params.effective_rho(HOMEPAGE, 500) == pytest.approx(0.97)
        assert params.effective_rho(SIDEBAR, 500) == params.rho_side


class TestGenerateSlate:
    def test_sizes_and_ranking(self, wide_index):
        params = params_with()
        rng = session_rng(1, "sizes")
        state = AccountState("a", s_side=0.4)
        slate = generate_slate(state, SIDEBAR, wide_index, params, rng)
        assert len(slate.item_ids) == 30
        mu = params.kappa_side * 0.4
        dist = np.abs(slate.item_scores - mu)
        assert (np.diff(dist) >= 0).all()  # rank 1 is closest to target
        home = generate_slate(state, HOMEPAGE, wide_index, params, rng)
        assert len(home.item_ids) == 15

    def test_personalized_mean(self, wide_index):
        # kappa=0.5, s=0.4 targets a 0.2 slate mean.
        params = params_with(kappa_side=0.5)
        rng = session_rng(2, "personalized")
        state = AccountState("a", s_side=0.4)
        means = np.array([
            generate_slate(state, SIDEBAR, wide_index, params, rng)
            .mean_score for _ in range(1000)])
        se = means.std(ddof=1) / np.sqrt(len(means))
        assert means.mean() == pytest.approx(0.2, abs=3 * se + 2e-3)

    def test_surface_ordering(self, wide_index):
        params = params_with(kappa_side=0.8, kappa_home=0.2)
        rng = session_rng(3, "ordering")
        state = AccountState("a", s_side=0.4, s_home=0.4)
        side = np.mean([generate_slate(state, SIDEBAR, wide_index, params,
                                       rng).mean_score
                        for _ in range(300)])
        home = np.mean([generate_slate(state, HOMEPAGE, wide_index, params,
                                       rng).mean_score
                        for _ in range(300)])
        assert home < side

    def test_surface_exchangeability(self, wide_catalog):
        # Same kappa/bias/rho: sidebar and homepage draws are identically
        # distributed (compare large-sample means).
        index = CatalogIndex(wide_catalog)
        params = params_with(kappa_side=0.6, kappa_home=0.6,
                             homepage_size=30)
        state = AccountState("a", s_side=0.3, s_home=0.3)
        rng_a = session_rng(4, "exch-a")
        rng_b = session_rng(4, "exch-b")
        side = np.array([generate_slate(state, SIDEBAR, index, params,
                                        rng_a).mean_score
                         for _ in range(800)])
        home = np.array([generate_slate(state, HOMEPAGE, index, params,
                                        rng_b).mean_score
                         for _ in range(800)])
        pooled_se = np.hypot(side.std(ddof=1) / np.sqrt(len(side)),
                             home.std(ddof=1) / np.sqrt(len(home)))
        assert abs(side.mean() - home.mean()) < 3 * pooled_se + 1e-3

    def test_insufficient_catalog(self):
        catalog = build_synthetic_catalog(2, 0.0, 0.05, 1, seed=5)
        index = CatalogIndex(catalog)
        with pytest.raises(InsufficientCatalogError):
            generate_slate(reset_account("a"), SIDEBAR, index,
                           params_with(), session_rng(0, "small"))

    def test_frac_fr_counts_extreme_items(self, wide_index):
        params = params_with(slate_noise_sd=0.01)
        rng = session_rng(6, "fr")
        state = AccountState("a", s_side=1.0)  # mu = 0.8, far right
        slate = generate_slate(state, SIDEBAR, wide_index, params, rng)
        assert slate.frac_fr == 1.0


class TestExpectedState:
    def test_constant_sequence_fixed_point(self):
        series = expected_state(0.9, [0.4] * 400)
        assert series[-1] == pytest.approx(0.4, abs=1e-8)

    def test_geometric_decay_after_switch(self):
        rho = 0.9
        series = expected_state(rho, [0.5] * 100 + [0.0] * 50)
        s_t = series[99]
        for t in range(1, 50):
            assert series[99 + t] == pytest.approx(s_t * rho**t)

    def test_closed_loop_fixed_point_matches_simulation(self, wide_index):
        # Up-next loop: watched score tracks the slate target mu = k*s + b,
        # so the analytic fixed point is s* = b / (1 - k).
        kappa, bias = 0.5, 0.05
        s_star = bias / (1 - kappa)
        params = params_with(kappa_side=kappa, bias_side=bias,
                             slate_noise_sd=0.02)
        state = reset_account("a")
        rng = session_rng(7, "closed-loop")
        for step in range(300):
            slate = generate_slate(state, SIDEBAR, wide_index, params, rng)
            record_watch(state, float(slate.item_scores[0]), 60, 120,
                         params)
        assert state.s_side == pytest.approx(s_star, rel=0.05)

    def test_time_varying_rho(self):
        series = expected_state([0.0, 0.5], [1.0, 1.0])
        assert series[0] == 1.0
        assert series[1] == pytest.approx(1.0)
        series = expected_state([0.0, 0.5], [1.0, 0.0])
        assert series[1] == pytest.approx(0.5)


class TestConfigHash:
    def test_sensitive_to_params_and_seed(self):
        a = config_hash(params_with(), 1)
        b = config_hash(params_with(), 2)
        c = config_hash(params_with(kappa_side=0.1), 1)
        assert a != b and a != c
        assert a == config_hash(params_with(), 1)

    def test_session_rng_streams_are_distinct(self):
        a = session_rng(1, "f", 1, "control").integers(2**32)
        b = session_rng(1, "f", 1, "up_next").integers(2**32)
        c = session_rng(1, "f", 1, "control").integers(2**32)
        assert a == c
        assert a != b
