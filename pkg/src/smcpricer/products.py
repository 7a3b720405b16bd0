"""Product definitions and payoffs: knock-out barrier options and TARNs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import ConfigurationError

Array = np.ndarray

TARN_BAND = (90.0, 110.0)  # prices inside pay the fixed negative cashflow


@dataclass(frozen=True)
class BarrierOption:
    """Discretely monitored knock-out option on a d-asset basket.

    The option dies if any asset leaves its open corridor (L, U) at a
    monitoring step; if alive at expiry it pays a vanilla call or put on the
    arithmetic mean of the terminal prices.  Barriers are stored in log
    space, one (lower, upper) pair per monitoring date and asset.
    """

    monitoring_steps: tuple[int, ...]
    log_lower: Array  # (m, d)
    log_upper: Array  # (m, d)
    strike_price: float
    option_kind: str = "call"

    def __post_init__(self) -> None:
        lo = np.atleast_2d(np.asarray(self.log_lower, dtype=float))
        hi = np.atleast_2d(np.asarray(self.log_upper, dtype=float))
        if lo.shape != hi.shape or lo.shape[0] != len(self.monitoring_steps):
            raise ConfigurationError("barrier arrays must be (m, d) matching the schedule")
        if not (lo < hi).all():
            raise ConfigurationError("lower barriers must lie below upper barriers")
        if self.option_kind not in ("call", "put"):
            raise ConfigurationError("option_kind must be 'call' or 'put'")
        object.__setattr__(self, "log_lower", lo)
        object.__setattr__(self, "log_upper", hi)
        object.__setattr__(self, "monitoring_steps", tuple(self.monitoring_steps))

    @classmethod
    def from_prices(
        cls,
        monitoring_steps: tuple[int, ...],
        lower_price: float,
        upper_price: float,
        strike_price: float,
        d: int = 1,
        option_kind: str = "call",
    ) -> "BarrierOption":
        """Same corridor for every asset and monitoring date."""
        m = len(monitoring_steps)
        lo = np.full((m, d), np.log(lower_price))
        hi = np.full((m, d), np.log(upper_price))
        return cls(monitoring_steps, lo, hi, strike_price, option_kind)

    @property
    def d(self) -> int:
        return self.log_lower.shape[1]

    @property
    def log_mid(self) -> Array:
        """Corridor midpoints in log space, shape (m, d)."""
        return 0.5 * (self.log_lower + self.log_upper)

    def monitor_index(self, step: int) -> int:
        return self.monitoring_steps.index(step)


def barrier_indicator(option: BarrierOption, monitor_index: int, s: Array) -> Array:
    """1 where every asset lies strictly inside its corridor, else 0.

    Boundary hits count as knocked out (open intervals).
    """
    lo = option.log_lower[monitor_index]
    hi = option.log_upper[monitor_index]
    inside = (s > lo) & (s < hi)
    return inside.all(axis=-1).astype(float)


def barrier_payoff(terminal_log: Array, alive: Array | float, option: BarrierOption) -> Array:
    """Knock-out payoff: alive flag times the vanilla payoff on the basket mean."""
    mean_price = np.exp(np.atleast_2d(terminal_log)).mean(axis=-1)
    if option.option_kind == "call":
        vanilla = np.maximum(mean_price - option.strike_price, 0.0)
    else:
        vanilla = np.maximum(option.strike_price - mean_price, 0.0)
    out = np.asarray(alive, dtype=float) * vanilla
    return out if out.size > 1 else float(out[0])


# ---------------------------------------------------------------------------
# TARN
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TarnSpec:
    """Target accrual redemption note on a single underlying.

    Cashflows accrue at monthly fixings until accumulated gains reach
    ``gain_cutoff`` or accumulated losses reach ``loss_cutoff`` (both
    compared with >=), or the last fixing is reached.  The payoff is
    ``payoff_shift`` plus the accrued cashflows up to the stopping fixing.
    """

    n_fixings: int = 24
    fixing_interval_days: int = 30
    gain_cutoff: float = 200.0
    loss_cutoff: float = 100.0
    payoff_shift: float = 100.0
    weighting_horizon_fixings: int = 5  # fixings over which guiding weights act

    def __post_init__(self) -> None:
        if self.gain_cutoff <= 0 or self.loss_cutoff <= 0:
            raise ConfigurationError("cashflow cutoffs must be positive")
        if not 1 <= self.weighting_horizon_fixings <= self.n_fixings:
            raise ConfigurationError("weighting horizon must lie within the fixing schedule")

    @property
    def fixing_steps(self) -> tuple[int, ...]:
        return tuple(self.fixing_interval_days * (i + 1) for i in range(self.n_fixings))

    @property
    def horizon_days(self) -> int:
        return self.n_fixings * self.fixing_interval_days


def tarn_f(price: float | Array) -> float | Array:
    """Fixing cashflow: -20 inside [90, 110], linear with jumps of ~20 outside.

        f(r) = 2 (r - 110) + 20   for r > 110
        f(r) = 2 (80 - r) + 20    for r < 90
        f(r) = -20                for 90 <= r <= 110
    """
    r = np.asarray(price, dtype=float)
    out = np.where(
        r > TARN_BAND[1],
        2.0 * (r - 110.0) + 20.0,
        np.where(r < TARN_BAND[0], 2.0 * (80.0 - r) + 20.0, -20.0),
    )
    return float(out) if np.isscalar(price) else out


@dataclass(frozen=True)
class CashflowState:
    """Accrued gains/losses after ``fixings_seen`` fixings; ``tau`` once stopped."""

    gains: float = 0.0
    losses: float = 0.0
    fixings_seen: int = 0
    tau: int | None = None


def tarn_update(state: CashflowState, k: int, price: float, spec: TarnSpec) -> CashflowState:
    """Accrue the fixing-k cashflow and stop if a cutoff or the horizon is hit."""
    if state.tau is not None:
        raise ValueError(f"cashflows already stopped at fixing {state.tau}")
    if k != state.fixings_seen + 1:
        raise ValueError(f"expected fixing {state.fixings_seen + 1}, got {k}")
    f = tarn_f(price)
    gains = state.gains + max(f, 0.0)
    losses = state.losses + max(-f, 0.0)
    tau = k if (gains >= spec.gain_cutoff or losses >= spec.loss_cutoff or k == spec.n_fixings) else None
    return CashflowState(gains=gains, losses=losses, fixings_seen=k, tau=tau)


def tarn_payoff(fixing_prices: Array, spec: TarnSpec) -> float:
    """Payoff of one path from its fixing prices, accrued fixing by fixing."""
    state = CashflowState()
    total = 0.0
    for k, price in enumerate(np.asarray(fixing_prices, dtype=float), start=1):
        state = tarn_update(state, k, float(price), spec)
        total += float(tarn_f(float(price)))
        if state.tau is not None:
            break
    return spec.payoff_shift + total


def tarn_payoff_batch(fixing_prices: Array, spec: TarnSpec) -> Array:
    """Vectorized payoff over paths; ``fixing_prices`` has shape (n, m)."""
    f = tarn_f(np.asarray(fixing_prices, dtype=float))
    gains = np.cumsum(np.maximum(f, 0.0), axis=1)
    losses = np.cumsum(np.maximum(-f, 0.0), axis=1)
    stopped = (gains >= spec.gain_cutoff) | (losses >= spec.loss_cutoff)
    # first stopping fixing, horizon if no cutoff is hit
    any_stop = stopped.any(axis=1)
    first = np.where(any_stop, np.argmax(stopped, axis=1), spec.n_fixings - 1)
    cum_f = np.cumsum(f, axis=1)
    return spec.payoff_shift + cum_f[np.arange(f.shape[0]), first]
