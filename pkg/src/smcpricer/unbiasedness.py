"""Verification harness for the unbiasedness of the SMC estimator under
adaptive multinomial resampling.

A traced run exposes, per resampling time tau_s, the per-particle products
of incremental weights since the previous resampling (v), their mean
(v_bar), and the normalized resampling weights V.  The product of segment
means is an alternative normalizing-constant estimator Z that must agree
with the engine's running estimate to float precision, and per particle the
identity

    H_tilde(tau_s) * V(tau_s) = H(tau_{s-1}) / n_particles

ties each segment's weights to the previous one (H accumulates segment
means over the inverse lineage weight product).  The statistical test runs
many independent replicates and checks that the mean of Z * psi_hat matches
an external oracle within 3 standard errors, while requiring that adaptive
resampling actually fired in enough replicates for the check to have teeth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .diffusion import AssetBasket, TimeGrid, VolatilityModel, gaussian_log_pdf
from .products import BarrierOption, TarnSpec, barrier_payoff, tarn_payoff_batch
from .rng import ORACLE, SeedKey, as_key, substream
from .smc import EulerDynamics, ParticleSystem, SmcConfig, TargetModel, run_smc
from .weighting import (
    WeightingFunction,
    _tarn_chain_params,
    brownian_bridge_target,
    build_potentials,
    build_tarn_potentials,
    tarn_naive_weighting,
    unit_weighting,
)

Array = np.ndarray

TRACE_LOG_TOL = 1e-10


class TraceMismatch(RuntimeError):
    """Trace-derived normalizing constant disagrees with the engine's."""


@dataclass(frozen=True)
class ResamplingTrace:
    """Segment-level quantities of one traced run."""

    resample_steps: tuple[int, ...]
    log_segment_means: tuple[float, ...]  # log v_bar at each resampling, plus the final segment
    log_z: float
    max_identity_error: float
    max_weight_sum_error: float
    consistency_error: float  # |log Z - log C_hat|


@dataclass(frozen=True)
class TracedRun:
    z_estimate: float
    psi_hat: float
    extinct: bool
    trace: ResamplingTrace
    midrun_resampled: bool


def _check_identities(system: ParticleSystem) -> tuple[float, float]:
    """Max log error of the segment identity and of the V normalization."""
    tr = system.trace
    n = system.n_particles
    log_n = math.log(n)
    max_identity = 0.0
    max_weight_sum = 0.0
    prev_sum_log_vbar = 0.0
    prev_cla_post = np.zeros(n)
    for seg in tr.segments:
        finite = np.isfinite(seg.log_v_pre)
        log_norm = logsumexp(seg.log_v_pre)
        v_weights = np.exp(seg.log_v_pre - log_norm)
        max_weight_sum = max(max_weight_sum, abs(float(v_weights.sum()) - 1.0))
        # log(H_tilde V) vs log(H_prev / n), particlewise on live particles
        lhs = (
            (seg.sum_log_vbar_through - seg.cum_log_alpha_pre[finite])
            + (seg.log_v_pre[finite] - log_n - seg.log_vbar)
        )
        rhs = -log_n + prev_sum_log_vbar - prev_cla_post[finite]
        if lhs.size:
            max_identity = max(max_identity, float(np.abs(lhs - rhs).max()))
        prev_sum_log_vbar = seg.sum_log_vbar_through
        prev_cla_post = seg.cum_log_alpha_post
    return max_identity, max_weight_sum


def traced_run(
    target: TargetModel,
    config: SmcConfig,
    psi: Callable[[ParticleSystem], Array],
) -> TracedRun:
    """Run the engine with trace instrumentation and verify its bookkeeping.

    Returns the segment-product normalizing estimate Z, the self-normalized
    psi estimate over the final-segment weights, and the identity errors.
    A gap above 1e-10 between log Z and the engine's log C_hat means the two
    accumulators diverged and is raised as a hard failure.
    """
    if config.resample_mode != "adaptive":
        raise ValueError("the traced harness covers adaptive multinomial resampling")
    system = run_smc(target, config, trace=True)
    tr = system.trace
    if system.extinct:
        trace = ResamplingTrace(
            resample_steps=tuple(system.resample_log),
            log_segment_means=tuple(s.log_vbar for s in tr.segments),
            log_z=-math.inf,
            max_identity_error=_check_identities(system)[0],
            max_weight_sum_error=_check_identities(system)[1],
            consistency_error=0.0,
        )
        return TracedRun(0.0, 0.0, True, trace, any(s < target.horizon for s in system.resample_log))

    log_z = tr.sum_log_vbar
    consistency = abs(log_z - system.log_c_hat)
    if consistency > TRACE_LOG_TOL:
        raise TraceMismatch(
            f"segment product log Z = {log_z} vs engine log C = {system.log_c_hat}"
        )
    # final-segment weights V_N (pre any horizon resampling)
    log_v_final = tr.final_log_v
    log_norm = logsumexp(log_v_final)
    v_n = np.exp(log_v_final - log_norm)
    psi_values = psi(system)
    psi_hat = float((v_n * psi_values).sum())

    max_identity, max_weight_sum = _check_identities(system)
    segment_means = [s.log_vbar for s in tr.segments]
    if tr.final_log_vbar is not None:
        segment_means.append(tr.final_log_vbar)
    trace = ResamplingTrace(
        resample_steps=tuple(system.resample_log),
        log_segment_means=tuple(segment_means),
        log_z=log_z,
        max_identity_error=max_identity,
        max_weight_sum_error=max_weight_sum,
        consistency_error=consistency,
    )
    midrun = any(s < target.horizon for s in system.resample_log)
    return TracedRun(math.exp(log_z), psi_hat, False, trace, midrun)


# ---------------------------------------------------------------------------
# Canonical toy instances and their oracles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyInstance:
    """A (target, config, psi) factory keyed by replicate seed."""

    build: Callable[[SeedKey], tuple[TargetModel, SmcConfig, Callable[[ParticleSystem], Array]]]
    description: str


def barrier_toy_instance(
    n_particles: int = 64,
    k: int = 10,
    sigma: float = 0.2,
    lower_price: float = 99.0,
    upper_price: float = 107.0,
    strike_price: float = 100.0,
    s0_price: float = 100.0,
    psi: str = "payoff",
    weighting: str = "bridge",
) -> ToyInstance:
    """Small single-monitoring barrier run that resamples frequently.

    ``n_particles`` is deliberately tiny so the adaptive branch fires in a
    large fraction of replicates.
    """
    basket = AssetBasket.from_prices(s0_price)
    model = VolatilityModel.constant(sigma)
    grid = TimeGrid(step_days=k, monitoring_steps=(k,))
    option = BarrierOption.from_prices((k,), lower_price, upper_price, strike_price)
    if weighting == "bridge":
        wf = brownian_bridge_target(basket, option, grid, sigma=sigma)
    elif weighting == "none":
        wf = unit_weighting(k)
    else:
        raise ValueError(f"unknown toy weighting {weighting!r}")
    potentials = build_potentials(wf, option, k)
    dynamics = EulerDynamics(basket, model, grid.dt_years)

    def psi_fn(system: ParticleSystem) -> Array:
        if psi == "one":
            return np.ones(system.n_particles)
        return np.asarray(barrier_payoff(system.states, 1.0, option))

    def build(seed: SeedKey):
        target = TargetModel(dynamics=dynamics, horizon=k, potentials=potentials)
        config = SmcConfig(n_particles=n_particles, master_seed=as_key(seed))
        return target, config, psi_fn

    return ToyInstance(build=build, description=f"barrier toy psi={psi} weighting={weighting}")


def barrier_toy_oracle(
    k: int = 10,
    sigma: float = 0.2,
    lower_price: float = 99.0,
    upper_price: float = 107.0,
    strike_price: float = 100.0,
    s0_price: float = 100.0,
    psi: str = "payoff",
    n_nodes: int = 400,
) -> float:
    """Gauss-Legendre quadrature of the corridor expectation at the horizon.

    The terminal log price is exactly Gaussian, so integrating the density
    (times the payoff for psi = "payoff") over the corridor gives the toy's
    reference value to quadrature precision.
    """
    t = k / 360.0
    mean = math.log(s0_price) - 0.5 * sigma**2 * t
    std = sigma * math.sqrt(t)
    lo, hi = math.log(lower_price), math.log(upper_price)

    def integrate(a: float, b: float, f) -> float:
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        s = 0.5 * (b - a) * x + 0.5 * (a + b)
        dens = np.exp(gaussian_log_pdf(s, mean, std))
        return float(0.5 * (b - a) * (w * f(s) * dens).sum())

    if psi == "one":
        return integrate(lo, hi, lambda s: np.ones_like(s))
    a = max(lo, math.log(strike_price))
    if a >= hi:
        return 0.0
    return integrate(a, hi, lambda s: np.exp(s) - strike_price)


def tarn_toy_instance(
    n_particles: int = 64,
    n_fixings: int = 3,
    sigma: float = 0.12,
    s0_price: float = 100.0,
) -> ToyInstance:
    """Three-fixing TARN with the naive polynomial weights over all fixings."""
    spec = TarnSpec(n_fixings=n_fixings, weighting_horizon_fixings=n_fixings)
    basket = AssetBasket.from_prices(s0_price)
    model = VolatilityModel.constant(sigma)
    wf = tarn_naive_weighting(spec, model, math.log(s0_price))
    potentials = build_tarn_potentials(wf, spec, model)
    n_steps, dt_step, fixing_steps = _tarn_chain_params(model, spec)
    dynamics = EulerDynamics(basket, model, dt_step)
    last = fixing_steps[-1]

    def psi_fn(system: ParticleSystem) -> Array:
        prices = np.exp(np.stack([system.recorded[s][:, 0] for s in fixing_steps], axis=1))
        payoff = tarn_payoff_batch(prices, spec)
        return payoff * np.exp(-wf.log_h(last, system.recorded[last]))

    def build(seed: SeedKey):
        target = TargetModel(
            dynamics=dynamics, horizon=n_steps, potentials=potentials, record_steps=fixing_steps
        )
        config = SmcConfig(n_particles=n_particles, master_seed=as_key(seed))
        return target, config, psi_fn

    return ToyInstance(build=build, description="tarn toy naive weighting")


def tarn_toy_oracle(
    n_paths: int = 10_000_000,
    n_fixings: int = 3,
    sigma: float = 0.12,
    s0_price: float = 100.0,
    seed: SeedKey = 1234,
) -> tuple[float, float]:
    """Large plain-MC value and standard error for the TARN toy."""
    spec = TarnSpec(n_fixings=n_fixings, weighting_horizon_fixings=n_fixings)
    dt = spec.fixing_interval_days / 360.0
    g = substream(seed, ORACLE)
    z = g.standard_normal((n_paths, n_fixings))
    increments = -0.5 * sigma**2 * dt + sigma * math.sqrt(dt) * z
    s = math.log(s0_price) + np.cumsum(increments, axis=1)
    payoff = tarn_payoff_batch(np.exp(s), spec)
    return float(payoff.mean()), float(payoff.std(ddof=1) / math.sqrt(n_paths))


# ---------------------------------------------------------------------------
# The statistical test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnbiasReport:
    mean: float
    se: float
    oracle: float
    z_score: float
    verdict: str  # pass | fail | inconclusive
    resample_rate: float
    midrun_resample_rate: float
    n_replicates: int
    n_extinct: int
    max_identity_error: float
    max_consistency_error: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "se": self.se,
            "oracle": self.oracle,
            "z_score": self.z_score,
            "verdict": self.verdict,
            "resample_rate": self.resample_rate,
            "midrun_resample_rate": self.midrun_resample_rate,
            "n_replicates": self.n_replicates,
            "n_extinct": self.n_extinct,
            "max_identity_error": self.max_identity_error,
            "max_consistency_error": self.max_consistency_error,
        }


def unbiasedness_test(
    instance: ToyInstance,
    replicates: int,
    oracle: float,
    seed: SeedKey = 0,
    oracle_se: float = 0.0,
    min_resample_rate: float = 0.3,
    se_multiple: float = 3.0,
) -> UnbiasReport:
    """Check E[Z * psi_hat] against the oracle over independent replicates.

    The verdict is "inconclusive" rather than "pass" when fewer than
    ``min_resample_rate`` of the replicates resampled before the horizon:
    without resampling activity the property being verified is vacuous.
    """
    if replicates < 2:
        raise ValueError("need at least two replicates")
    key = as_key(seed)
    values = np.empty(replicates)
    resampled = 0
    midrun = 0
    extinct = 0
    max_identity = 0.0
    max_consistency = 0.0
    for r in range(replicates):
        target, config, psi = instance.build(key + (r,))
        run = traced_run(target, config, psi)
        values[r] = run.z_estimate * run.psi_hat
        resampled += bool(run.trace.resample_steps)
        midrun += run.midrun_resampled
        extinct += run.extinct
        max_identity = max(max_identity, run.trace.max_identity_error)
        max_consistency = max(max_consistency, run.trace.consistency_error)
    mean = float(values.mean())
    se = float(math.sqrt(values.var(ddof=1) / replicates + oracle_se**2))
    z = (mean - oracle) / se if se > 0 else math.inf * np.sign(mean - oracle)
    midrun_rate = midrun / replicates
    if midrun_rate < min_resample_rate:
        verdict = "inconclusive"
    elif abs(z) <= se_multiple:
        verdict = "pass"
    else:
        verdict = "fail"
    return UnbiasReport(
        mean=mean,
        se=se,
        oracle=oracle,
        z_score=float(z),
        verdict=verdict,
        resample_rate=resampled / replicates,
        midrun_resample_rate=midrun_rate,
        n_replicates=replicates,
        n_extinct=extinct,
        max_identity_error=max_identity,
        max_consistency_error=max_consistency,
    )
