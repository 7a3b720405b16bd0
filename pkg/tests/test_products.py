import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smcpricer.diffusion import ConfigurationError
from smcpricer.products import (
    BarrierOption,
    CashflowState,
    TarnSpec,
    barrier_indicator,
    barrier_payoff,
    tarn_f,
    tarn_payoff,
    tarn_payoff_batch,
    tarn_update,
)


def option(d=1, lo=95.0, hi=105.0, strike=100.0, kind="call"):
    return BarrierOption.from_prices((540,), lo, hi, strike, d=d, option_kind=kind)


class TestBarrierIndicator:
    def test_midpoint_is_inside(self):
        opt = option(d=3)
        s = opt.log_mid[0][None, :]
        assert barrier_indicator(opt, 0, s) == 1.0

    def test_boundary_counts_as_knocked_out(self):
        opt = option()
        s = np.array([[math.log(95.0)]])
        assert barrier_indicator(opt, 0, s) == 0.0

    def test_one_coordinate_outside_kills_all(self):
        opt = option(d=10)
        s = np.tile(opt.log_mid[0], (1, 1)).copy()
        s[0, 7] = math.log(110.0)
        assert barrier_indicator(opt, 0, s) == 0.0

    def test_vectorized_over_paths(self):
        opt = option(d=2)
        s = np.stack([opt.log_mid[0], np.log([94.0, 100.0])])
        np.testing.assert_array_equal(barrier_indicator(opt, 0, s), [1.0, 0.0])


class TestBarrierPayoff:
    def test_knocked_out_pays_zero(self):
        opt = option()
        assert barrier_payoff(np.array([math.log(200.0)]), 0.0, opt) == 0.0

    def test_call_payoff(self):
        opt = option()
        assert barrier_payoff(np.array([math.log(104.0)]), 1.0, opt) == pytest.approx(4.0)

    def test_put_payoff(self):
        opt = option(kind="put")
        assert barrier_payoff(np.array([math.log(97.0)]), 1.0, opt) == pytest.approx(3.0)

    def test_at_the_money_zero(self):
        opt = option()
        assert barrier_payoff(np.array([math.log(100.0)]), 1.0, opt) == pytest.approx(0.0, abs=1e-12)

    def test_basket_mean_aggregation(self):
        opt = option(d=2)
        terminal = np.log(np.array([[98.0, 108.0]]))
        assert barrier_payoff(terminal, np.array([1.0]), opt) == pytest.approx(3.0)


class TestTarnF:
    def test_band_interior(self):
        assert tarn_f(100.0) == -20.0

    def test_right_branch(self):
        assert tarn_f(120.0) == pytest.approx(40.0)

    def test_jump_across_lower_edge(self):
        assert tarn_f(89.99) == pytest.approx(0.02)
        assert tarn_f(90.0) == -20.0

    def test_vectorized(self):
        np.testing.assert_allclose(tarn_f(np.array([70.0, 100.0, 111.0])), [40.0, -20.0, 22.0])


class TestTarnUpdate:
    def test_five_inside_fixings_stop_on_losses(self):
        spec = TarnSpec()
        state = CashflowState()
        for k in range(1, 6):
            state = tarn_update(state, k, 100.0, spec)
        assert state.losses == 100.0
        assert state.tau == 5

    def test_big_first_gain_stops_immediately(self):
        spec = TarnSpec()
        state = tarn_update(CashflowState(), 1, 220.0, spec)
        assert state.gains == pytest.approx(240.0)
        assert state.tau == 1

    def test_horizon_stop_when_no_cutoff_breached(self):
        # cutoffs wide enough that only the last fixing can stop the note
        spec = TarnSpec(gain_cutoff=1e6, loss_cutoff=1e6)
        state = CashflowState()
        for k in range(1, 25):
            state = tarn_update(state, k, 100.0 if k % 2 else 110.5, spec)
        assert state.tau == 24

    def test_update_after_stop_rejected(self):
        spec = TarnSpec()
        state = tarn_update(CashflowState(), 1, 220.0, spec)
        with pytest.raises(ValueError):
            tarn_update(state, 2, 100.0, spec)

    def test_fixings_must_be_consecutive(self):
        with pytest.raises(ValueError):
            tarn_update(CashflowState(), 3, 100.0, TarnSpec())


class TestTarnPayoff:
    def test_all_inside_first_five_pays_zero(self):
        prices = np.full(24, 100.0)
        assert tarn_payoff(prices, TarnSpec()) == 0.0

    def test_big_first_fixing(self):
        prices = np.full(24, 100.0)
        prices[0] = 220.0  # f = 240 >= gain cutoff at the first fixing
        assert tarn_payoff(prices, TarnSpec()) == pytest.approx(340.0)

    def test_batch_matches_per_path(self):
        rng = np.random.default_rng(0)
        spec = TarnSpec()
        prices = rng.uniform(70.0, 130.0, size=(500, spec.n_fixings))
        batch = tarn_payoff_batch(prices, spec)
        single = np.array([tarn_payoff(row, spec) for row in prices])
        np.testing.assert_allclose(batch, single)

    @given(st.lists(st.floats(min_value=50.0, max_value=200.0), min_size=24, max_size=24))
    @settings(max_examples=200, deadline=None)
    def test_payoff_nonnegative_and_matches_brute_force(self, prices):
        spec = TarnSpec()
        arr = np.asarray(prices)
        value = tarn_payoff(arr, spec)
        assert value >= 0.0
        assert value == pytest.approx(tarn_payoff_batch(arr[None, :], spec)[0])

    def test_accumulators_monotone_and_tau_is_stopping_time(self):
        rng = np.random.default_rng(4)
        spec = TarnSpec()
        for _ in range(20):
            prices = rng.uniform(60.0, 140.0, size=spec.n_fixings)
            state = CashflowState()
            prev_g = prev_l = 0.0
            for k in range(1, spec.n_fixings + 1):
                state = tarn_update(state, k, float(prices[k - 1]), spec)
                assert state.gains >= prev_g and state.losses >= prev_l
                prev_g, prev_l = state.gains, state.losses
                if state.tau is not None:
                    # changing later fixings cannot change tau
                    other = prices.copy()
                    other[k:] = 100.0
                    st2 = CashflowState()
                    for j in range(1, k + 1):
                        st2 = tarn_update(st2, j, float(other[j - 1]), spec)
                    assert st2.tau == state.tau
                    break


class TestValidation:
    def test_barriers_must_be_ordered(self):
        with pytest.raises(ConfigurationError):
            BarrierOption.from_prices((540,), 105.0, 95.0, 100.0)

    def test_cutoffs_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            TarnSpec(gain_cutoff=-1.0)
