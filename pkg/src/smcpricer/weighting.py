"""Guiding weight sequences and the potentials they induce.

A weighting function h_n is a positive function of the step-n state that is
1 outside its active range.  Successive ratios h_n / h_{n-1} become the
multiplicative potentials of the particle engine, so the product of
potentials telescopes: whatever h is chosen, the estimator targets the same
price and only the variance changes.  Barrier corridors enter as 0/1
indicator factors at the monitoring steps.

Concrete choices built here:

* Brownian-bridge targets pulled toward the corridor midpoint, with an
  inflated standard deviation so the target never degenerates.
* "Optimal" targets fitted from a one-dimensional pilot run (marginal
  moments of surviving or escaping paths).
* TARN weights: the squared distance from the initial log price, optionally
  divided by the running marginal density, and a two-sided Gaussian mixture
  fitted to escaping pilot paths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import (
    AssetBasket,
    ConfigurationError,
    LocalVolMarginal,
    TimeGrid,
    VolatilityModel,
    approx_marginal_local_vol,
    euler_update,
    gaussian_log_pdf,
)
from .products import TARN_BAND, BarrierOption, TarnSpec, barrier_indicator
from .rng import PILOT, SeedKey, substream

Array = np.ndarray

POSITIVITY_FLOOR = 1e-12  # keeps polynomial weights positive at the pinch point


class PilotSampleError(RuntimeError):
    """Raised when a pilot run yields too few qualifying paths."""


@dataclass(frozen=True)
class WeightingFunction:
    """Step-indexed positive weight h_n(s); identically 1 off the active range."""

    horizon: int
    active: Array  # bool, length horizon + 1
    log_evaluator: Callable[[int, Array], Array] | None
    label: str = "unit"

    def __post_init__(self) -> None:
        act = np.asarray(self.active, dtype=bool)
        if act.shape != (self.horizon + 1,):
            raise ConfigurationError("active mask must have length horizon + 1")
        object.__setattr__(self, "active", act)

    @property
    def active_steps(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.active))

    def log_h(self, step: int, s: Array) -> Array:
        """log h_step at states ``s`` of shape (..., d); zeros when inactive."""
        if not 0 <= step <= self.horizon:
            raise ValueError(f"step {step} outside [0, {self.horizon}]")
        s = np.atleast_2d(np.asarray(s, dtype=float))
        if not self.active[step]:
            return np.zeros(s.shape[:-1])
        return self.log_evaluator(step, s)


def unit_weighting(horizon: int) -> WeightingFunction:
    return WeightingFunction(horizon=horizon, active=np.zeros(horizon + 1, dtype=bool), log_evaluator=None)


@dataclass(frozen=True)
class GaussianSchedule:
    """Per-step, per-asset Gaussian parameters, indexed by step."""

    mean: Array  # (horizon + 1, d)
    std: Array   # (horizon + 1, d)

    def log_pdf(self, step: int, s: Array) -> Array:
        return gaussian_log_pdf(s, self.mean[step], self.std[step]).sum(axis=-1)


def constant_vol_marginal_schedule(basket: AssetBasket, sigma: Array | float, grid_dt: float, horizon: int) -> GaussianSchedule:
    """Exact Gaussian step marginals under constant volatility."""
    sig = np.broadcast_to(np.atleast_1d(np.asarray(sigma, dtype=float)), (basket.d,))
    t = np.arange(horizon + 1)[:, None] * grid_dt
    mean = basket.s0[None, :] - 0.5 * sig[None, :] ** 2 * t
    std = sig[None, :] * np.sqrt(np.maximum(t, 0.0))
    return GaussianSchedule(mean=mean, std=std)


def _ratio_weighting(
    horizon: int,
    active: Array,
    target: GaussianSchedule,
    reference_log_pdf: Callable[[int, Array], Array],
    label: str,
) -> WeightingFunction:
    def evaluator(step: int, s: Array) -> Array:
        return gaussian_log_pdf(s, target.mean[step], target.std[step]).sum(axis=-1) - reference_log_pdf(step, s)

    return WeightingFunction(horizon=horizon, active=active, log_evaluator=evaluator, label=label)


def default_active_start(k: int, fraction: float = 2.0 / 3.0) -> int:
    """First guided step: particles explore freely before ceil(fraction * k)."""
    return int(math.ceil(fraction * k))


def brownian_bridge_target(
    basket: AssetBasket,
    option: BarrierOption,
    grid: TimeGrid,
    sigma: Array | float | None = None,
    marginal: LocalVolMarginal | None = None,
    inflation: float = 0.2,
    active_fraction: float = 2.0 / 3.0,
    anchor_log: Array | None = None,
) -> WeightingFunction:
    """Bridge-shaped target toward the corridor midpoint at the monitoring date.

    Per asset the step-n target is Gaussian with the bridge mean
    s0 + (n / k)(K - s0) and standard deviation
    sigma_n sqrt(t_n (t_k - t_n) / t_k) + inflation * sigma_n * sqrt(t_k),
    so the target stays non-degenerate at n = k.  With constant volatility
    the reference marginal is exact; with local volatility both the vol
    schedule sigma_n and the reference come from ``marginal``.
    """
    if len(option.monitoring_steps) != 1:
        raise ConfigurationError("bridge target assumes a single monitoring date")
    k = option.monitoring_steps[-1]
    anchor = option.log_mid[-1] if anchor_log is None else np.asarray(anchor_log, dtype=float)
    if not ((anchor > option.log_lower[-1]) & (anchor < option.log_upper[-1])).all():
        raise ConfigurationError("bridge anchor must lie inside the corridor")

    horizon = grid.step_days
    steps = np.arange(horizon + 1)
    t = steps * grid.dt_years
    tk = k * grid.dt_years
    if marginal is not None:
        sig_n = marginal.step_vol[: horizon + 1][:, None]
        ref_log_pdf = marginal.log_pdf
    else:
        if sigma is None:
            raise ConfigurationError("constant-vol bridge needs sigma")
        sig = np.broadcast_to(np.atleast_1d(np.asarray(sigma, dtype=float)), (basket.d,))
        if (sig <= 0).any():
            raise ConfigurationError("bridge target requires positive volatility")
        sig_n = np.broadcast_to(sig, (horizon + 1, basket.d))
        ref = constant_vol_marginal_schedule(basket, sig, grid.dt_years, horizon)
        ref_log_pdf = ref.log_pdf

    frac = np.clip(steps / k, 0.0, 1.0)[:, None]
    mean = basket.s0[None, :] + frac * (anchor[None, :] - basket.s0[None, :])
    bridge_var_t = np.clip(t * (tk - t) / tk, 0.0, None)  # t_n (t_k - t_n) / t_k
    std = sig_n * np.sqrt(bridge_var_t)[:, None] + inflation * sig_n * math.sqrt(tk)
    target = GaussianSchedule(mean=mean, std=std)

    active = np.zeros(horizon + 1, dtype=bool)
    start = default_active_start(k, active_fraction)
    active[start:k] = True  # the monitoring step itself carries the indicator only
    return _ratio_weighting(horizon, active, target, ref_log_pdf, label="bridge")


# ---------------------------------------------------------------------------
# Pilot-fitted targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PilotTarget:
    """Marginal moments of qualifying pilot paths, one entry per active step.

    ``mode`` is "survivors" (single component) or "escapers" (left/right
    mixture with empirical side proportions).
    """

    mode: str
    steps: tuple[int, ...]
    mean: Array | None = None
    std: Array | None = None
    left_mean: Array | None = None
    left_std: Array | None = None
    right_mean: Array | None = None
    right_std: Array | None = None
    w_left: float | None = None
    w_right: float | None = None
    n_qualifying: int = 0
    n_left: int = 0
    n_right: int = 0
    m1: int = 0

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else [float(x) for x in np.asarray(a)]

        return {
            "mode": self.mode,
            "steps": list(self.steps),
            "mean": arr(self.mean),
            "std": arr(self.std),
            "left_mean": arr(self.left_mean),
            "left_std": arr(self.left_std),
            "right_mean": arr(self.right_mean),
            "right_std": arr(self.right_std),
            "w_left": self.w_left,
            "w_right": self.w_right,
            "n_qualifying": self.n_qualifying,
            "n_left": self.n_left,
            "n_right": self.n_right,
            "m1": self.m1,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PilotTarget":
        def arr(x):
            return None if x is None else np.asarray(x, dtype=float)

        return cls(
            mode=data["mode"],
            steps=tuple(int(s) for s in data["steps"]),
            mean=arr(data.get("mean")),
            std=arr(data.get("std")),
            left_mean=arr(data.get("left_mean")),
            left_std=arr(data.get("left_std")),
            right_mean=arr(data.get("right_mean")),
            right_std=arr(data.get("right_std")),
            w_left=data.get("w_left"),
            w_right=data.get("w_right"),
            n_qualifying=int(data.get("n_qualifying", 0)),
            n_left=int(data.get("n_left", 0)),
            n_right=int(data.get("n_right", 0)),
            m1=int(data.get("m1", 0)),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path: str) -> "PilotTarget":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


MIN_QUALIFYING_PATHS = 30


def fit_pilot_target(
    model: VolatilityModel,
    basket: AssetBasket,
    grid: TimeGrid,
    product: BarrierOption | TarnSpec,
    m1: int,
    seed: SeedKey,
    mode: str,
    active_fraction: float = 2.0 / 3.0,
) -> PilotTarget:
    """Fit marginal targets from a one-dimensional pilot simulation.

    "survivors": paths inside the barrier corridor at every monitoring date;
    per-step mean and std over the guided range.  "escapers": paths leaving
    the TARN band at one of the guided fixings, split by exit side into a
    two-component mixture.  Fewer than 30 qualifying paths is an error; rerun
    with a larger ``m1``.
    """
    if basket.d != 1:
        raise ConfigurationError("pilot runs are one-dimensional")
    if m1 < 1000:
        raise ConfigurationError("pilot needs m1 >= 1000")
    if mode == "survivors":
        if not isinstance(product, BarrierOption):
            raise ConfigurationError("survivor pilots apply to barrier options")
        return _fit_barrier_pilot(model, basket, grid, product, m1, seed, active_fraction)
    if mode == "escapers":
        if not isinstance(product, TarnSpec):
            raise ConfigurationError("escaper pilots apply to TARNs")
        return _fit_tarn_pilot(model, basket, product, m1, seed)
    raise ConfigurationError(f"unknown pilot mode {mode!r}")


def _fit_barrier_pilot(
    model: VolatilityModel,
    basket: AssetBasket,
    grid: TimeGrid,
    option: BarrierOption,
    m1: int,
    seed: SeedKey,
    active_fraction: float,
) -> PilotTarget:
    k = option.monitoring_steps[-1]
    start = default_active_start(k, active_fraction)
    active_steps = tuple(range(start, k))
    states = np.broadcast_to(basket.s0, (m1, 1)).copy()
    kept = np.empty((m1, len(active_steps)))
    alive = np.ones(m1, dtype=bool)
    pos = {s: i for i, s in enumerate(active_steps)}
    for n in range(1, grid.step_days + 1):
        z = basket.correlated_normals(substream(seed, PILOT, n), m1)
        states = euler_update(states, model, grid.dt_years, z)
        if n in pos:
            kept[:, pos[n]] = states[:, 0]
        if n in option.monitoring_steps:
            alive &= barrier_indicator(option, option.monitor_index(n), states).astype(bool)
    n_surv = int(alive.sum())
    if n_surv < MIN_QUALIFYING_PATHS:
        raise PilotSampleError(
            f"only {n_surv} of {m1} pilot paths survived; increase m1"
        )
    surv = kept[alive]
    return PilotTarget(
        mode="survivors",
        steps=active_steps,
        mean=surv.mean(axis=0),
        std=surv.std(axis=0, ddof=1),
        n_qualifying=n_surv,
        m1=m1,
    )


def _tarn_chain_params(model: VolatilityModel, spec: TarnSpec) -> tuple[int, float, tuple[int, ...]]:
    """Chain length, per-step year fraction and fixing positions on the chain.

    Constant volatility steps fixing to fixing (the one-step transition is
    exact); local volatility must step daily.
    """
    dt_day = 1.0 / 360.0
    if model.kind == "constant":
        return spec.n_fixings, spec.fixing_interval_days * dt_day, tuple(range(1, spec.n_fixings + 1))
    return spec.horizon_days, dt_day, spec.fixing_steps


def _fit_tarn_pilot(
    model: VolatilityModel,
    basket: AssetBasket,
    spec: TarnSpec,
    m1: int,
    seed: SeedKey,
) -> PilotTarget:
    n_steps, dt_step, fixing_steps = _tarn_chain_params(model, spec)
    window = fixing_steps[: spec.weighting_horizon_fixings]
    last_active = window[-1]
    active_steps = tuple(range(1, last_active + 1))
    log_lo, log_hi = math.log(TARN_BAND[0]), math.log(TARN_BAND[1])

    # Pass 1: classify exits at the guided fixings (side of the first exit).
    side = np.zeros(m1, dtype=np.int8)  # 0 none, -1 left, +1 right
    states = np.broadcast_to(basket.s0, (m1, 1)).copy()
    for n in range(1, last_active + 1):
        z = basket.correlated_normals(substream(seed, PILOT, n), m1)
        states = euler_update(states, model, dt_step, z)
        if n in window:
            s = states[:, 0]
            fresh = side == 0
            side[fresh & (s < log_lo)] = -1
            side[fresh & (s > log_hi)] = +1

    n_left = int((side == -1).sum())
    n_right = int((side == 1).sum())
    n_escaped = n_left + n_right
    if n_escaped < MIN_QUALIFYING_PATHS:
        raise PilotSampleError(
            f"only {n_escaped} of {m1} pilot paths escaped the band; increase m1"
        )

    # Pass 2: replay the identical substreams and accumulate per-step moments
    # of each side group (avoids storing every daily state).
    sel_l = side == -1
    sel_r = side == 1
    stats = {key: np.zeros((2, len(active_steps))) for key in ("l", "r")}
    states = np.broadcast_to(basket.s0, (m1, 1)).copy()
    for n in range(1, last_active + 1):
        z = basket.correlated_normals(substream(seed, PILOT, n), m1)
        states = euler_update(states, model, dt_step, z)
        s = states[:, 0]
        stats["l"][0, n - 1] = s[sel_l].sum()
        stats["l"][1, n - 1] = (s[sel_l] ** 2).sum()
        stats["r"][0, n - 1] = s[sel_r].sum()
        stats["r"][1, n - 1] = (s[sel_r] ** 2).sum()

    def moments(sums: Array, count: int) -> tuple[Array, Array]:
        mean = sums[0] / count
        var = np.maximum(sums[1] / count - mean**2, 0.0) * count / max(count - 1, 1)
        return mean, np.sqrt(var)

    lm, ls = moments(stats["l"], max(n_left, 1))
    rm, rs = moments(stats["r"], max(n_right, 1))
    return PilotTarget(
        mode="escapers",
        steps=active_steps,
        left_mean=lm,
        left_std=ls,
        right_mean=rm,
        right_std=rs,
        w_left=n_left / n_escaped,
        w_right=n_right / n_escaped,
        n_qualifying=n_escaped,
        n_left=n_left,
        n_right=n_right,
        m1=m1,
    )


def pilot_weighting(
    pilot: PilotTarget,
    basket: AssetBasket,
    reference_log_pdf: Callable[[int, Array], Array],
    horizon: int,
) -> WeightingFunction:
    """Single-Gaussian target with the pilot survivors' moments, one per asset."""
    if pilot.mode != "survivors":
        raise ConfigurationError("pilot_weighting needs a survivor pilot")
    mean = np.zeros((horizon + 1, basket.d))
    std = np.ones((horizon + 1, basket.d))
    active = np.zeros(horizon + 1, dtype=bool)
    for i, step in enumerate(pilot.steps):
        mean[step] = pilot.mean[i]
        std[step] = pilot.std[i]
        active[step] = True
    target = GaussianSchedule(mean=mean, std=std)
    if (std[active] <= 0).any():
        raise ConfigurationError("degenerate pilot standard deviation")
    return _ratio_weighting(horizon, active, target, reference_log_pdf, label="pilot")


# ---------------------------------------------------------------------------
# TARN weights
# ---------------------------------------------------------------------------

def tarn_weight_naive(s: Array, s0: float, floor: float = POSITIVITY_FLOOR) -> Array:
    """Squared log-distance from the start, floored to stay positive."""
    return np.maximum((np.asarray(s, dtype=float) - s0) ** 2, floor)


def tarn_weight_density_corrected(
    s: Array,
    s0: float,
    log_marginal: Array,
    floor: float = POSITIVITY_FLOOR,
) -> Array:
    """log of (s - s0)^2 / p_n(s), computed in log space and floored."""
    log_num = np.log(tarn_weight_naive(s, s0, floor))
    return np.maximum(log_num - log_marginal, math.log(floor))


def tarn_naive_weighting(spec: TarnSpec, model: VolatilityModel, s0: float) -> WeightingFunction:
    n_steps, _, fixing_steps = _tarn_chain_params(model, spec)
    last_active = fixing_steps[spec.weighting_horizon_fixings - 1]
    active = np.zeros(n_steps + 1, dtype=bool)
    active[1 : last_active + 1] = True

    def evaluator(step: int, s: Array) -> Array:
        return np.log(tarn_weight_naive(s[..., 0], s0))

    return WeightingFunction(horizon=n_steps, active=active, log_evaluator=evaluator, label="tarn_naive")


def tarn_reference_log_pdf(
    spec: TarnSpec,
    model: VolatilityModel,
    s0: float,
    crude_sigma: float = 0.04,
) -> Callable[[int, Array], Array]:
    """Marginal density the corrected/mixture TARN weights divide by.

    Exact under constant volatility; under local volatility the crude
    constant-vol surrogate with the given sigma.
    """
    _, dt_step, _ = _tarn_chain_params(model, spec)
    sig = float(model.sigma[0]) if model.kind == "constant" else crude_sigma

    def log_pdf(step: int, s: Array) -> Array:
        t = step * dt_step
        mean = s0 - 0.5 * sig * sig * t
        return gaussian_log_pdf(s[..., 0], mean, sig * math.sqrt(t))

    return log_pdf


def tarn_corrected_weighting(
    spec: TarnSpec,
    model: VolatilityModel,
    s0: float,
    crude_sigma: float = 0.04,
) -> WeightingFunction:
    n_steps, _, fixing_steps = _tarn_chain_params(model, spec)
    last_active = fixing_steps[spec.weighting_horizon_fixings - 1]
    active = np.zeros(n_steps + 1, dtype=bool)
    active[1 : last_active + 1] = True
    ref = tarn_reference_log_pdf(spec, model, s0, crude_sigma)

    def evaluator(step: int, s: Array) -> Array:
        return tarn_weight_density_corrected(s[..., 0], s0, ref(step, s))

    return WeightingFunction(horizon=n_steps, active=active, log_evaluator=evaluator, label="tarn_corrected")


def mixture_target(
    pilot: PilotTarget,
    spec: TarnSpec,
    model: VolatilityModel,
    s0: float,
    crude_sigma: float = 0.04,
) -> WeightingFunction:
    """Two-sided Gaussian mixture over escaper marginals, divided by p_n."""
    if pilot.mode != "escapers":
        raise ConfigurationError("mixture_target needs an escaper pilot")
    if not (0.0 <= pilot.w_left <= 1.0) or abs(pilot.w_left + pilot.w_right - 1.0) > 1e-9:
        raise ConfigurationError("mixture weights must be proportions summing to 1")
    n_steps, _, _ = _tarn_chain_params(model, spec)
    active = np.zeros(n_steps + 1, dtype=bool)
    pos = {}
    for i, step in enumerate(pilot.steps):
        active[step] = True
        pos[step] = i
    use_left = pilot.w_left > 0.0
    if (pilot.right_std[list(pos.values())] <= 0).any() or (
        use_left and (pilot.left_std[list(pos.values())] <= 0).any()
    ):
        raise ConfigurationError("degenerate mixture component standard deviation")
    ref = tarn_reference_log_pdf(spec, model, s0, crude_sigma)
    log_wl = math.log(pilot.w_left) if use_left else -math.inf
    log_wr = math.log(pilot.w_right)

    def evaluator(step: int, s: Array) -> Array:
        i = pos[step]
        x = s[..., 0]
        right = log_wr + gaussian_log_pdf(x, pilot.right_mean[i], pilot.right_std[i])
        if not use_left:
            mix = right
        else:
            left = log_wl + gaussian_log_pdf(x, pilot.left_mean[i], pilot.left_std[i])
            mix = np.logaddexp(left, right)
        return mix - ref(step, s)

    return WeightingFunction(horizon=n_steps, active=active, log_evaluator=evaluator, label="tarn_mixture")


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSequence:
    """The per-step multiplicative weights G_n fed to the particle engine.

    G_n = h_n(s_n) / h_{n-1}(s_{n-1}) everywhere except right after a reset
    step r, where G_{r+1} = h_{r+1}(s_{r+1}).  Barrier monitoring steps fold
    the corridor indicator into h, so knocked-out paths get weight zero.
    The telescoped product times any terminal correction reproduces the raw
    payoff weight pathwise.
    """

    horizon: int
    weighting: WeightingFunction
    reset_after: frozenset[int] = frozenset()
    option: BarrierOption | None = None

    def __post_init__(self) -> None:
        if self.weighting.horizon != self.horizon:
            raise ConfigurationError("weighting horizon must match the chain")
        if self.option is not None:
            for step in self.option.monitoring_steps:
                if self.weighting.active[step]:
                    raise ConfigurationError(
                        "smooth weights must be inactive at monitoring steps; "
                        "the corridor indicator is the whole weight there"
                    )

    def log_h(self, step: int, s: Array) -> Array:
        """Full log h at ``step`` including any monitoring indicator."""
        out = self.weighting.log_h(step, s)
        if self.option is not None and step in self.option.monitoring_steps:
            ind = barrier_indicator(self.option, self.option.monitor_index(step), np.atleast_2d(s))
            out = out + np.where(ind > 0.0, 0.0, -np.inf)
        return out

    def potential_active(self, step: int) -> bool:
        """Whether G_step can differ from 1 (engine skips inactive steps)."""
        if self.option is not None and step in self.option.monitoring_steps:
            return True
        if self.weighting.active[step]:
            return True
        prev = step - 1
        return prev >= 0 and prev not in self.reset_after and bool(self.weighting.active[prev])

    def log_potential(
        self,
        step: int,
        prev_states: Array,
        states: Array,
        prev_log_h: Array | None = None,
    ) -> tuple[Array, Array]:
        """Return (log G_step, log h_step); ``prev_log_h`` reuses the last h."""
        log_h_now = self.log_h(step, states)
        if (step - 1) in self.reset_after:
            return log_h_now, log_h_now
        if prev_log_h is None:
            prev_log_h = self.log_h(step - 1, prev_states)
        return log_h_now - prev_log_h, log_h_now


def build_potentials(weighting: WeightingFunction, option: BarrierOption, horizon: int) -> PotentialSequence:
    """Barrier potentials: indicator at each monitoring date, ratios elsewhere.

    Resets fire after every monitoring date but the last, so each monitored
    segment telescopes to its own indicator.
    """
    return PotentialSequence(
        horizon=horizon,
        weighting=weighting,
        reset_after=frozenset(option.monitoring_steps[:-1]),
        option=option,
    )


def build_tarn_potentials(weighting: WeightingFunction, spec: TarnSpec, model: VolatilityModel) -> PotentialSequence:
    """TARN potentials: pure ratios through the last guided fixing, then 1.

    The leftover 1 / h at the last guided fixing is applied to the payoff by
    the pricing layer, so the product still telescopes to the raw payoff.
    """
    n_steps, _, fixing_steps = _tarn_chain_params(model, spec)
    last_active = fixing_steps[spec.weighting_horizon_fixings - 1]
    return PotentialSequence(
        horizon=n_steps,
        weighting=weighting,
        reset_after=frozenset({last_active}),
        option=None,
    )
