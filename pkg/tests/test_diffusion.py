import math

import numpy as np
import pytest

from smcpricer.defaults import barrier_local_vol_model, tarn_local_vol_model
from smcpricer.diffusion import (
    AssetBasket,
    ConfigurationError,
    PathState,
    TimeGrid,
    VolatilityModel,
    approx_marginal_local_vol,
    euler_step,
    local_vol,
    marginal_density_constant_vol,
    simulate_path,
)

S0 = math.log(100.0)


def make_grid(n_days: int, monitoring=None) -> TimeGrid:
    return TimeGrid(step_days=n_days, monitoring_steps=tuple(monitoring or ()))


class TestEulerStep:
    def test_zero_vol_is_identity(self):
        state = PathState(step=3, logprices=np.array([S0]))
        model = VolatilityModel.constant(0.0)
        basket = AssetBasket.from_prices(100.0)
        out = euler_step(state, model, basket, make_grid(10), z=np.array([1.7]))
        assert out.step == 4
        assert out.logprices[0] == S0

    def test_drift_only_step(self):
        # s' = log(100) - 0.08^2 / (2 * 360) = 4.6051613
        state = PathState(step=0, logprices=np.array([S0]))
        model = VolatilityModel.constant(0.08)
        basket = AssetBasket.from_prices(100.0)
        out = euler_step(state, model, basket, make_grid(540), z=np.array([0.0]))
        assert out.logprices[0] == pytest.approx(4.6051613, abs=1e-7)

    def test_unit_shock_step(self):
        # drift -8.889e-6 plus diffusion 0.08 / sqrt(360)
        state = PathState(step=0, logprices=np.array([S0]))
        model = VolatilityModel.constant(0.08)
        basket = AssetBasket.from_prices(100.0)
        out = euler_step(state, model, basket, make_grid(540), z=np.array([1.0]))
        assert out.logprices[0] == pytest.approx(4.6093777, abs=1e-6)

    def test_rejects_states_at_horizon(self):
        state = PathState(step=10, logprices=np.array([S0]))
        model = VolatilityModel.constant(0.08)
        basket = AssetBasket.from_prices(100.0)
        with pytest.raises(ValueError):
            euler_step(state, model, basket, make_grid(10), z=np.array([0.0]))

    def test_rejects_non_finite_state(self):
        state = PathState(step=0, logprices=np.array([np.nan]))
        model = VolatilityModel.constant(0.08)
        basket = AssetBasket.from_prices(100.0)
        with pytest.raises(ValueError):
            euler_step(state, model, basket, make_grid(10), z=np.array([0.0]))


class TestLocalVol:
    def test_barrier_curve_knot(self):
        assert local_vol(barrier_local_vol_model(), 100.0) == pytest.approx(0.093)

    def test_barrier_curve_midpoint(self):
        # halfway between the knots (90, 0.097) and (100, 0.093)
        assert local_vol(barrier_local_vol_model(), 95.0) == pytest.approx(0.095)

    def test_tarn_curve_minimum(self):
        assert local_vol(tarn_local_vol_model(), 100.0) == pytest.approx(0.035)

    def test_every_knot_reproduced_exactly(self):
        model = barrier_local_vol_model()
        for price, vol in zip(model.knot_prices, model.knot_vols):
            assert local_vol(model, price) == vol

    def test_segment_midpoints_match_hand_interpolation(self):
        model = tarn_local_vol_model()
        for (p0, v0), (p1, v1) in zip(
            zip(model.knot_prices, model.knot_vols),
            zip(model.knot_prices[1:], model.knot_vols[1:]),
        ):
            mid = 0.5 * (p0 + p1)
            assert local_vol(model, mid) == pytest.approx(0.5 * (v0 + v1), rel=1e-12)

    def test_out_of_range_price_rejected(self):
        knots = [(50.0, 0.1), (150.0, 0.2)]
        model = VolatilityModel.local(knots)
        with pytest.raises(ConfigurationError):
            local_vol(model, 10.0)

    def test_constant_model_rejected(self):
        with pytest.raises(ConfigurationError):
            local_vol(VolatilityModel.constant(0.1), 100.0)


class TestSimulatePath:
    def test_zero_vol_constant_path(self):
        basket = AssetBasket.from_prices(100.0)
        paths = simulate_path(basket, VolatilityModel.constant(0.0), make_grid(25), seed=1)
        assert (paths == S0).all()

    def test_terminal_std_matches_gaussian_law(self):
        basket = AssetBasket.from_prices(100.0)
        grid = make_grid(540)
        paths = simulate_path(basket, VolatilityModel.constant(0.08), grid, seed=7, n_paths=100_000)
        std = paths[:, -1, 0].std(ddof=1)
        assert std == pytest.approx(0.08 * math.sqrt(540.0 / 360.0), abs=1e-3)

    def test_terminal_mean_and_var_within_4_se(self):
        n, sigma = 20_000, 0.1
        basket = AssetBasket.from_prices(100.0)
        grid = make_grid(90)
        t = grid.t(90)
        terminal = simulate_path(basket, VolatilityModel.constant(sigma), grid, seed=3, n_paths=n)[:, -1, 0]
        mean_th, var_th = S0 - 0.5 * sigma**2 * t, sigma**2 * t
        se_mean = math.sqrt(var_th / n)
        assert abs(terminal.mean() - mean_th) < 4 * se_mean
        se_var = var_th * math.sqrt(2.0 / (n - 1))
        assert abs(terminal.var(ddof=1) - var_th) < 4 * se_var

    def test_independent_assets_uncorrelated(self):
        basket = AssetBasket.from_prices(100.0, d=2)
        paths = simulate_path(basket, VolatilityModel.constant(0.2), make_grid(30), seed=5, n_paths=10_000)
        corr = np.corrcoef(paths[:, -1, 0], paths[:, -1, 1])[0, 1]
        assert abs(corr) < 0.02

    def test_deterministic_given_seed(self):
        basket = AssetBasket.from_prices(100.0, d=3)
        model = VolatilityModel.constant(0.1)
        a = simulate_path(basket, model, make_grid(20), seed=11, n_paths=50)
        b = simulate_path(basket, model, make_grid(20), seed=11, n_paths=50)
        assert (a == b).all()

    def test_correlation_is_respected(self):
        rho = 0.8
        corr = np.array([[1.0, rho], [rho, 1.0]])
        basket = AssetBasket.from_prices(100.0, d=2, correlation=corr)
        paths = simulate_path(basket, VolatilityModel.constant(0.2), make_grid(30), seed=9, n_paths=20_000)
        c = np.corrcoef(paths[:, -1, 0], paths[:, -1, 1])[0, 1]
        assert c == pytest.approx(rho, abs=0.02)

    def test_non_psd_correlation_rejected(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ConfigurationError):
            AssetBasket.from_prices(100.0, d=2, correlation=bad)


class TestMarginalDensityConstantVol:
    def test_density_at_its_mean(self):
        # phi at the mean with std 0.1 * sqrt(1y): 1 / (0.1 sqrt(2 pi))
        basket = AssetBasket.from_prices(100.0)
        grid = make_grid(360)
        val = marginal_density_constant_vol(basket, 0.1, grid, 360, np.array([S0 - 0.005]))
        assert val == pytest.approx(1.0 / (0.1 * math.sqrt(2 * math.pi)), rel=1e-6)

    def test_two_identical_assets_square_the_density(self):
        b1 = AssetBasket.from_prices(100.0)
        b2 = AssetBasket.from_prices(100.0, d=2)
        grid = make_grid(360)
        s = S0 - 0.003
        one = marginal_density_constant_vol(b1, 0.1, grid, 200, np.array([s]))
        two = marginal_density_constant_vol(b2, 0.1, grid, 200, np.array([s, s]))
        assert two == pytest.approx(one**2, rel=1e-12)

    def test_density_integrates_to_one(self):
        basket = AssetBasket.from_prices(100.0)
        grid = make_grid(360)
        xs = np.linspace(S0 - 1.0, S0 + 1.0, 20_001)
        vals = np.array([
            marginal_density_constant_vol(basket, 0.1, grid, 360, np.array([x])) for x in xs
        ])
        assert np.trapezoid(vals, xs) == pytest.approx(1.0, abs=1e-6)

    def test_step_zero_rejected(self):
        basket = AssetBasket.from_prices(100.0)
        with pytest.raises(ValueError):
            marginal_density_constant_vol(basket, 0.1, make_grid(10), 0, np.array([S0]))


class TestApproxMarginalLocalVol:
    def test_flat_curve_reduces_to_constant_vol(self):
        c = 0.07
        flat = VolatilityModel.local([(1e-6, c), (1e6, c)])
        grid = make_grid(120)
        basket = AssetBasket.from_prices(100.0)
        approx = approx_marginal_local_vol(flat, grid, S0)
        for n in (1, 40, 120):
            s = np.array([S0 - 0.01])
            exact = marginal_density_constant_vol(basket, c, grid, n, s)
            got = float(np.exp(approx.log_pdf(n, s)))
            assert got == pytest.approx(exact, rel=1e-12)

    def test_first_step_mean(self):
        # log(100) - 0.093^2 / (2 * 360) with the barrier curve at 100
        approx = approx_marginal_local_vol(barrier_local_vol_model(), make_grid(540), S0)
        assert approx.mean[1] == pytest.approx(4.6051582, abs=1e-7)

    def test_mean_path_strictly_decreasing(self):
        approx = approx_marginal_local_vol(barrier_local_vol_model(), make_grid(540), S0)
        assert (np.diff(approx.mean) < 0).all()
