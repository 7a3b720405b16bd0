"""Price estimators: plain Monte Carlo, resample-at-monitoring SMC, and
weighted SMC with guiding functions.

All three estimate the same expectation; they differ only in variance.  The
plain estimator averages raw payoffs.  The monitoring estimator folds the
barrier indicators into particle weights and resamples at every monitoring
date.  The weighted estimator multiplies in a chosen weighting sequence and
resamples adaptively; its output picks up the prefactor h_0(s_0) and, for
TARNs, the terminal correction payoff / h at the last guided fixing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import (
    AssetBasket,
    ConfigurationError,
    TimeGrid,
    VolatilityModel,
    approx_marginal_local_vol,
)
from .products import (
    BarrierOption,
    TarnSpec,
    barrier_indicator,
    barrier_payoff,
    tarn_payoff_batch,
)
from .rng import SeedKey, as_key
from .smc import (
    EulerDynamics,
    ParticleSystem,
    SmcConfig,
    TargetModel,
    estimate,
    run_smc,
)
from .weighting import (
    PilotTarget,
    PotentialSequence,
    WeightingFunction,
    _tarn_chain_params,
    brownian_bridge_target,
    build_potentials,
    build_tarn_potentials,
    constant_vol_marginal_schedule,
    mixture_target,
    pilot_weighting,
    tarn_corrected_weighting,
    tarn_naive_weighting,
    unit_weighting,
)

Array = np.ndarray

METHODS = ("plain_mc", "smc_monitor", "smc_weighted")
BARRIER_WEIGHTINGS = ("none", "bridge", "pilot")
TARN_WEIGHTINGS = ("none", "tarn_naive", "tarn_corrected", "tarn_mixture")


@dataclass(frozen=True)
class WeightingChoice:
    """Which guiding weights to build, deferred until the model is known."""

    name: str = "none"
    bridge_inflation: float = 0.2
    active_fraction: float = 2.0 / 3.0
    pilot: PilotTarget | None = None
    crude_sigma: float = 0.04  # reference marginal vol for local-vol TARN weights


@dataclass(frozen=True)
class PricingRequest:
    product: BarrierOption | TarnSpec
    basket: AssetBasket
    model: VolatilityModel
    grid: TimeGrid
    method: str
    smc: SmcConfig
    weighting: WeightingChoice = WeightingChoice()

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.method != "smc_weighted" and self.weighting.name != "none":
            raise ConfigurationError("weighting functions apply only to smc_weighted")
        if isinstance(self.product, BarrierOption):
            if self.product.d != self.basket.d:
                raise ConfigurationError("product dimension must match the basket")
            if any(s > self.grid.step_days for s in self.product.monitoring_steps):
                raise ConfigurationError("monitoring dates must lie on the grid")
            if self.weighting.name not in BARRIER_WEIGHTINGS:
                raise ConfigurationError(f"{self.weighting.name!r} is not a barrier weighting")
        else:
            if self.basket.d != 1:
                raise ConfigurationError("TARNs are single-underlying products")
            if self.method == "smc_monitor":
                raise ConfigurationError("smc_monitor applies to barrier products only")
            if self.weighting.name not in TARN_WEIGHTINGS:
                raise ConfigurationError(f"{self.weighting.name!r} is not a TARN weighting")
        if self.weighting.name in ("pilot", "tarn_mixture") and self.weighting.pilot is None:
            raise ConfigurationError(f"weighting {self.weighting.name!r} needs a fitted pilot target")


@dataclass(frozen=True)
class PricingResult:
    estimate: float
    n_particles: int
    extinct: bool
    resample_steps: tuple[int, ...]
    log_c_hat: float
    ess_trace: tuple[tuple[int, float, bool], ...]
    wall_time_s: float
    se_hint: float | None = None


def _barrier_weighting(request: PricingRequest) -> WeightingFunction:
    choice = request.weighting
    option: BarrierOption = request.product
    horizon = request.grid.step_days
    if choice.name == "none":
        return unit_weighting(horizon)
    if choice.name == "bridge":
        if request.model.kind == "local":
            marg = approx_marginal_local_vol(request.model, request.grid, float(request.basket.s0[0]))
            return brownian_bridge_target(
                request.basket, option, request.grid,
                marginal=marg, inflation=choice.bridge_inflation,
                active_fraction=choice.active_fraction,
            )
        return brownian_bridge_target(
            request.basket, option, request.grid,
            sigma=request.model.sigma, inflation=choice.bridge_inflation,
            active_fraction=choice.active_fraction,
        )
    # pilot target: moments come from the pilot run, the reference marginal
    # from the model actually being priced
    if request.model.kind == "local":
        marg = approx_marginal_local_vol(request.model, request.grid, float(request.basket.s0[0]))
        ref_log_pdf = marg.log_pdf
    else:
        ref = constant_vol_marginal_schedule(request.basket, request.model.sigma, request.grid.dt_years, horizon)
        ref_log_pdf = ref.log_pdf
    return pilot_weighting(choice.pilot, request.basket, ref_log_pdf, horizon)


def _price_barrier(request: PricingRequest, seed: SeedKey) -> PricingResult:
    option: BarrierOption = request.product
    grid = request.grid
    dynamics = EulerDynamics(request.basket, request.model, grid.dt_years)
    config = replace(request.smc, master_seed=as_key(seed))
    horizon = grid.step_days

    if request.method == "plain_mc":
        target = TargetModel(
            dynamics=dynamics, horizon=horizon, potentials=None,
            record_steps=option.monitoring_steps,
        )
        system = run_smc(target, config)
        alive = np.ones(config.n_particles)
        for i, step in enumerate(option.monitoring_steps):
            alive *= barrier_indicator(option, i, system.recorded[step])
        values = barrier_payoff(system.states, alive, option)
        est = estimate(system, values)
        se = float(np.std(values, ddof=1) / math.sqrt(config.n_particles))
        return _result(system, est, config, se_hint=se)

    if request.method == "smc_monitor":
        potentials = build_potentials(unit_weighting(horizon), option, horizon)
        config = replace(config, resample_mode="at_steps", resample_steps=option.monitoring_steps)
        weighting_prefactor = 1.0
    else:
        weighting = _barrier_weighting(request)
        potentials = build_potentials(weighting, option, horizon)
        weighting_prefactor = float(
            np.exp(potentials.weighting.log_h(0, request.basket.s0[None, :]))[0]
        )

    target = TargetModel(dynamics=dynamics, horizon=horizon, potentials=potentials)
    system = run_smc(target, config)
    values = 0.0 if system.extinct else barrier_payoff(system.states, 1.0, option)
    est = weighting_prefactor * estimate(system, values)
    return _result(system, est, config)


def _tarn_weighting(request: PricingRequest) -> WeightingFunction:
    choice = request.weighting
    spec: TarnSpec = request.product
    s0 = float(request.basket.s0[0])
    if choice.name == "none":
        n_steps, _, _ = _tarn_chain_params(request.model, spec)
        return unit_weighting(n_steps)
    if choice.name == "tarn_naive":
        return tarn_naive_weighting(spec, request.model, s0)
    if choice.name == "tarn_corrected":
        return tarn_corrected_weighting(spec, request.model, s0, choice.crude_sigma)
    return mixture_target(choice.pilot, spec, request.model, s0, choice.crude_sigma)


def _price_tarn(request: PricingRequest, seed: SeedKey) -> PricingResult:
    spec: TarnSpec = request.product
    n_steps, dt_step, fixing_steps = _tarn_chain_params(request.model, spec)
    last_guided = fixing_steps[spec.weighting_horizon_fixings - 1]
    dynamics = EulerDynamics(request.basket, request.model, dt_step)
    config = replace(request.smc, master_seed=as_key(seed))

    def fixing_prices(system: ParticleSystem) -> Array:
        cols = [system.recorded[step][:, 0] for step in fixing_steps]
        return np.exp(np.stack(cols, axis=1))

    if request.method == "plain_mc":
        target = TargetModel(dynamics=dynamics, horizon=n_steps, potentials=None, record_steps=fixing_steps)
        system = run_smc(target, config)
        values = tarn_payoff_batch(fixing_prices(system), spec)
        est = estimate(system, values)
        se = float(np.std(values, ddof=1) / math.sqrt(config.n_particles))
        return _result(system, est, config, se_hint=se)

    weighting = _tarn_weighting(request)
    potentials = build_tarn_potentials(weighting, spec, request.model)
    target = TargetModel(
        dynamics=dynamics, horizon=n_steps, potentials=potentials, record_steps=fixing_steps
    )
    system = run_smc(target, config)
    if system.extinct:
        return _result(system, 0.0, config)
    payoff = tarn_payoff_batch(fixing_prices(system), spec)
    log_h_end = potentials.weighting.log_h(last_guided, system.recorded[last_guided])
    values = payoff * np.exp(-log_h_end)
    prefactor = float(np.exp(potentials.weighting.log_h(0, request.basket.s0[None, :]))[0])
    est = prefactor * estimate(system, values)
    return _result(system, est, config)


def _result(
    system: ParticleSystem,
    est: float,
    config: SmcConfig,
    se_hint: float | None = None,
) -> PricingResult:
    return PricingResult(
        estimate=float(est),
        n_particles=config.n_particles,
        extinct=system.extinct,
        resample_steps=tuple(system.resample_log),
        log_c_hat=system.log_c_hat,
        ess_trace=tuple(system.ess_trace),
        wall_time_s=0.0,
        se_hint=se_hint,
    )


def price(request: PricingRequest, seed: SeedKey) -> PricingResult:
    """Price the request with the configured method; deterministic in (request, seed)."""
    t0 = time.perf_counter()
    if isinstance(request.product, TarnSpec):
        result = _price_tarn(request, seed)
    else:
        result = _price_barrier(request, seed)
    return replace(result, wall_time_s=time.perf_counter() - t0)


def price_tarn(request: PricingRequest, seed: SeedKey) -> PricingResult:
    """Alias of :func:`price` restricted to TARN requests."""
    if not isinstance(request.product, TarnSpec):
        raise ConfigurationError("price_tarn requires a TARN product")
    return price(request, seed)
