"""Sequential Monte Carlo engine.

One generic loop: propose every particle one step forward, multiply its
weight by the step potential, update the running normalizing-constant
estimate, then resample (adaptively on low effective sample size, always,
or at fixed steps) with multinomial index draws.  Weights are held in log
space throughout; indicator potentials make exact zeros routine and the
product of hundreds of step factors would underflow otherwise.

The estimator read off at the horizon is

    C_hat_N * sum_i Wbar_N_i * H(path_i),

the running product of per-step weight sums times the weighted average of
the payoff functional.  If every particle hits weight zero the run is
extinct and its estimate is 0 by convention, not an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Protocol

import numpy as np
from scipy.special import logsumexp

from .diffusion import AssetBasket, VolatilityModel, euler_update
from .rng import PROPOSAL, RESAMPLE, SeedKey, substream
from .weighting import PotentialSequence

Array = np.ndarray


class ParticleExtinction(RuntimeError):
    """All particle weights are zero (every path knocked out)."""


class PotentialError(RuntimeError):
    """A potential evaluated to NaN or a negative value."""


@dataclass(frozen=True)
class SmcConfig:
    """Engine parameters: ensemble size, seed, and the resampling rule."""

    n_particles: int
    master_seed: SeedKey = 0
    ess_threshold_fraction: float = 0.5
    resample_mode: str = "adaptive"  # adaptive | always | at_steps
    resample_steps: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        if not 0.0 < self.ess_threshold_fraction <= 1.0:
            raise ValueError("ess_threshold_fraction must lie in (0, 1]")
        if self.resample_mode not in ("adaptive", "always", "at_steps"):
            raise ValueError(f"unknown resample_mode {self.resample_mode!r}")
        object.__setattr__(self, "resample_steps", tuple(self.resample_steps))


class Dynamics(Protocol):
    """Proposal kernel: initial states plus the one-step transition."""

    d: int

    def initial(self, n_particles: int) -> Array: ...

    def propose(self, step: int, states: Array, rng: np.random.Generator) -> Array: ...


@dataclass(frozen=True)
class EulerDynamics:
    """Euler log-price transition for a basket; draws carry the correlation."""

    basket: AssetBasket
    model: VolatilityModel
    dt_step: float

    @property
    def d(self) -> int:
        return self.basket.d

    def initial(self, n_particles: int) -> Array:
        return np.broadcast_to(self.basket.s0, (n_particles, self.basket.d)).copy()

    def propose(self, step: int, states: Array, rng: np.random.Generator) -> Array:
        z = self.basket.correlated_normals(rng, states.shape[0])
        return euler_update(states, self.model, self.dt_step, z)


@dataclass(frozen=True)
class TargetModel:
    """What the engine runs: dynamics, potentials, horizon, states to keep."""

    dynamics: Dynamics
    horizon: int
    potentials: PotentialSequence | None = None
    record_steps: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.potentials is not None and self.potentials.horizon != self.horizon:
            raise ValueError("potential sequence horizon must match the target")
        object.__setattr__(self, "record_steps", tuple(sorted(set(self.record_steps))))


@dataclass
class TraceSegment:
    """Bookkeeping captured at one resampling time (pre- and post-resample)."""

    step: int
    log_vbar: float
    log_v_pre: Array
    cum_log_alpha_pre: Array
    indices: Array
    cum_log_alpha_post: Array
    sum_log_vbar_through: float


@dataclass
class TraceState:
    """Per-particle incremental-weight accumulators for the resampling trace.

    ``log_v`` is the log product of step potentials since the last
    resampling; ``cum_log_alpha`` the log product along the whole surviving
    lineage.  Both are tracked independently of the engine weights so that
    trace-derived quantities cross-check the engine arithmetic.
    """

    log_v: Array
    cum_log_alpha: Array
    sum_log_vbar: float = 0.0
    segments: list[TraceSegment] = dataclass_field(default_factory=list)
    final_log_v: Array | None = None
    final_log_vbar: float | None = None


@dataclass
class ParticleSystem:
    """Weighted particle ensemble at one step of the run."""

    states: Array
    log_weights: Array       # last unnormalized log weights w_n
    log_norm_weights: Array  # current normalized log weights (post-resampling)
    log_c_hat: float
    step: int
    resample_log: list[int] = dataclass_field(default_factory=list)
    recorded: dict[int, Array] = dataclass_field(default_factory=dict)
    extinct: bool = False
    log_h_cache: Array | None = None
    ess_trace: list[tuple[int, float, bool]] = dataclass_field(default_factory=list)
    trace: TraceState | None = None

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def norm_weights(self) -> Array:
        return np.exp(self.log_norm_weights)

    @property
    def c_hat(self) -> float:
        return math.exp(self.log_c_hat)

    @property
    def ess_value(self) -> float:
        return ess(self.norm_weights)


def init_system(target: TargetModel, config: SmcConfig, trace: bool = False) -> ParticleSystem:
    n = config.n_particles
    states = target.dynamics.initial(n)
    log_uniform = np.full(n, -math.log(n))
    system = ParticleSystem(
        states=states,
        log_weights=log_uniform.copy(),
        log_norm_weights=log_uniform.copy(),
        log_c_hat=0.0,
        step=0,
    )
    if 0 in target.record_steps:
        system.recorded[0] = states.copy()
    if trace:
        system.trace = TraceState(log_v=np.zeros(n), cum_log_alpha=np.zeros(n))
    return system


def ess(norm_weights: Array) -> float:
    """Effective sample size 1 / sum(W^2) of normalized weights."""
    w = np.asarray(norm_weights, dtype=float)
    total = float((w * w).sum())
    if total == 0.0:
        raise ParticleExtinction("all particle weights are zero")
    return 1.0 / total


def multinomial_resample(system: ParticleSystem, rng: np.random.Generator) -> ParticleSystem:
    """Draw offspring i.i.d. from the weight distribution and reset weights.

    Indices come from one uniform per draw inverted through the cumulative
    weights in particle order.  States, recorded history, and any trace
    arrays are permuted consistently; the normalizing-constant estimate is
    untouched.
    """
    w = system.norm_weights
    if not (w > 0).any():
        raise ParticleExtinction("cannot resample an extinct system")
    n = system.n_particles
    cum = np.cumsum(w)
    cum[-1] = 1.0  # guard the top edge against rounding
    idx = np.searchsorted(cum, rng.random(n), side="right")
    idx = np.minimum(idx, n - 1)

    system.states = system.states[idx]
    system.log_norm_weights = np.full(n, -math.log(n))
    system.recorded = {k: v[idx] for k, v in system.recorded.items()}
    if system.log_h_cache is not None:
        system.log_h_cache = system.log_h_cache[idx]
    system.resample_log.append(system.step)
    if system.trace is not None:
        tr = system.trace
        log_vbar = float(logsumexp(tr.log_v) - math.log(n))
        tr.sum_log_vbar += log_vbar
        tr.segments.append(
            TraceSegment(
                step=system.step,
                log_vbar=log_vbar,
                log_v_pre=tr.log_v.copy(),
                cum_log_alpha_pre=tr.cum_log_alpha.copy(),
                indices=idx.copy(),
                cum_log_alpha_post=tr.cum_log_alpha[idx].copy(),
                sum_log_vbar_through=tr.sum_log_vbar,
            )
        )
        tr.log_v = np.zeros(n)
        tr.cum_log_alpha = tr.cum_log_alpha[idx]
    return system


def _should_resample(config: SmcConfig, step: int, horizon: int, ess_now: float) -> bool:
    if config.resample_mode == "always":
        return True
    if config.resample_mode == "at_steps":
        return step in config.resample_steps
    return ess_now < config.ess_threshold_fraction * config.n_particles


def smc_step(system: ParticleSystem, target: TargetModel, config: SmcConfig) -> ParticleSystem:
    """Advance the ensemble one step: propose, weight, normalize, resample."""
    if system.extinct:
        raise ParticleExtinction("cannot advance an extinct system")
    n = system.step + 1
    if n > target.horizon:
        raise ValueError(f"system already at the horizon {target.horizon}")

    prev_states = system.states
    states = target.dynamics.propose(n, prev_states, substream(config.master_seed, PROPOSAL, n))
    system.states = states
    system.step = n
    if n in target.record_steps:
        system.recorded[n] = states.copy()

    pots = target.potentials
    weighted = pots is not None and pots.potential_active(n)
    if weighted:
        log_g, log_h_now = pots.log_potential(n, prev_states, states, system.log_h_cache)
        if np.isnan(log_g).any():
            bad = int(np.flatnonzero(np.isnan(log_g))[0])
            raise PotentialError(f"potential is NaN for particle {bad} at step {n}")
        system.log_h_cache = log_h_now
        log_w = system.log_norm_weights + log_g
        log_sum = float(logsumexp(log_w))
        system.log_weights = log_w
        if log_sum == -math.inf:
            system.extinct = True
            system.ess_trace.append((n, 0.0, False))
            return system
        system.log_c_hat += log_sum
        system.log_norm_weights = log_w - log_sum
        if system.trace is not None:
            system.trace.log_v = system.trace.log_v + log_g
            system.trace.cum_log_alpha = system.trace.cum_log_alpha + log_g
    else:
        system.log_h_cache = None  # h_{n} == 1 here; next ratio recomputes cheaply

    ess_now = system.ess_value
    if system.trace is not None and n == target.horizon:
        # Keep the horizon-segment view before any final-step resampling.
        tr = system.trace
        tr.final_log_v = tr.log_v.copy()
        if not system.resample_log or system.resample_log[-1] != n:
            tr.final_log_vbar = float(logsumexp(tr.log_v) - math.log(system.n_particles))

    did_resample = False
    if _should_resample(config, n, target.horizon, ess_now):
        multinomial_resample(system, substream(config.master_seed, RESAMPLE, n))
        did_resample = True
        if system.trace is not None:
            system.trace.final_log_vbar = None if n == target.horizon else system.trace.final_log_vbar
    system.ess_trace.append((n, ess_now, did_resample))
    return system


def run_smc(target: TargetModel, config: SmcConfig, trace: bool = False) -> ParticleSystem:
    """Run the engine from step 0 to the horizon (or to extinction)."""
    system = init_system(target, config, trace=trace)
    for _ in range(target.horizon):
        system = smc_step(system, target, config)
        if system.extinct:
            return system
    if trace and system.trace is not None:
        tr = system.trace
        if tr.final_log_vbar is not None:
            tr.sum_log_vbar += tr.final_log_vbar
    return system


def estimate(system: ParticleSystem, h: Callable[[ParticleSystem], Array] | Array) -> float:
    """C_hat_N times the weighted mean of the test functional H."""
    if system.extinct:
        return 0.0
    values = h(system) if callable(h) else np.asarray(h, dtype=float)
    return float(math.exp(system.log_c_hat) * (system.norm_weights * values).sum())
