"""Log-price dynamics for a basket of assets under zero-drift diffusion.

All state lives in log space: a path is the vector of log asset values on a
daily grid, advanced by the explicit Euler scheme

    s_{n+1} = s_n + (mu - sigma^2(n, s_n) / 2) dt + sigma(n, s_n) sqrt(dt) z_n,

with ``z_n`` jointly normal with the basket correlation.  Volatility is
either a per-asset constant or a piecewise-linear function of the price.
The module also provides the Gaussian step-n marginals (exact for constant
volatility, iteratively approximated for local volatility) that the
weighting functions divide by.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import PROPOSAL, SeedKey, substream

Array = np.ndarray

DAYS_PER_YEAR = 360  # FX convention: one daily step is 1/360 years

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_log_pdf(x: Array | float, mean: Array | float, std: Array | float) -> Array:
    """Elementwise normal log density, broadcast over all arguments."""
    z = (np.asarray(x, dtype=float) - mean) / std
    return -0.5 * z * z - np.log(std) - 0.5 * LOG_2PI


class ConfigurationError(ValueError):
    """Inconsistent model, grid, or product configuration."""


@dataclass(frozen=True)
class TimeGrid:
    """Daily simulation grid with monitoring dates.

    ``step_days`` is the horizon N in days; ``monitoring_steps`` are the day
    indices T_1 < ... < T_m <= N at which product conditions are checked.
    """

    step_days: int
    monitoring_steps: tuple[int, ...]
    dt_years: float = 1.0 / DAYS_PER_YEAR

    def __post_init__(self) -> None:
        if self.step_days <= 0:
            raise ConfigurationError("step_days must be positive")
        if self.dt_years <= 0:
            raise ConfigurationError("dt_years must be positive")
        steps = self.monitoring_steps
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigurationError("monitoring_steps must be strictly increasing")
        if steps and (steps[0] < 1 or steps[-1] > self.step_days):
            raise ConfigurationError("monitoring_steps must lie in [1, step_days]")

    @classmethod
    def regular(cls, interval_days: int, n_periods: int) -> "TimeGrid":
        """Grid monitored every ``interval_days`` for ``n_periods`` periods."""
        steps = tuple(interval_days * (i + 1) for i in range(n_periods))
        return cls(step_days=interval_days * n_periods, monitoring_steps=steps)

    def t(self, step: int) -> float:
        """Year fraction of step ``step``."""
        return step * self.dt_years


@dataclass(frozen=True)
class VolatilityModel:
    """Constant per-asset volatility or a piecewise-linear local-vol curve.

    The local curve interpolates (price, vol) knots linearly in price; its
    outermost knots act as sentinels and queries outside them are rejected.
    ``drift`` is an annualized constant, zero in every studied configuration.
    """

    kind: str  # "constant" | "local"
    sigma: Array | None = None
    knot_prices: Array | None = None
    knot_vols: Array | None = None
    drift: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "constant":
            sig = np.atleast_1d(np.asarray(self.sigma, dtype=float))
            if (sig < 0).any():
                raise ConfigurationError("constant volatility must be >= 0")
            object.__setattr__(self, "sigma", sig)
        elif self.kind == "local":
            rp = np.asarray(self.knot_prices, dtype=float)
            rv = np.asarray(self.knot_vols, dtype=float)
            if rp.ndim != 1 or rp.shape != rv.shape or rp.size < 2:
                raise ConfigurationError("local vol needs matching 1-d knot arrays")
            if (np.diff(rp) <= 0).any():
                raise ConfigurationError("knot prices must be strictly increasing")
            if (rv <= 0).any():
                raise ConfigurationError("knot vols must be positive")
            object.__setattr__(self, "knot_prices", rp)
            object.__setattr__(self, "knot_vols", rv)
        else:
            raise ConfigurationError(f"unknown volatility kind {self.kind!r}")

    @classmethod
    def constant(cls, sigma: float | Array) -> "VolatilityModel":
        return cls(kind="constant", sigma=np.atleast_1d(np.asarray(sigma, dtype=float)))

    @classmethod
    def local(cls, knots: list[tuple[float, float]] | Array) -> "VolatilityModel":
        arr = np.asarray(knots, dtype=float)
        return cls(kind="local", knot_prices=arr[:, 0], knot_vols=arr[:, 1])

    def vol_at_log(self, logprices: Array) -> Array:
        """Volatility evaluated at the current state, broadcast to its shape."""
        if self.kind == "constant":
            return np.broadcast_to(self.sigma, logprices.shape)
        return local_vol(self, np.exp(logprices))


def local_vol(model: VolatilityModel, price: float | Array) -> float | Array:
    """Piecewise-linear interpolation of the vol curve at ``price``.

    Prices outside the knot range are an error; the sentinel knots at 1e-6
    and 1e6 used in practice make that unreachable for simulated paths.
    """
    if model.kind != "local":
        raise ConfigurationError("local_vol requires a local-volatility model")
    p = np.asarray(price, dtype=float)
    lo, hi = model.knot_prices[0], model.knot_prices[-1]
    if (p < lo).any() or (p > hi).any():
        raise ConfigurationError(f"price outside knot range [{lo}, {hi}]")
    out = np.interp(p, model.knot_prices, model.knot_vols)
    return float(out) if np.isscalar(price) else out


@dataclass(frozen=True)
class AssetBasket:
    """Initial log prices and correlation of the d underlying assets."""

    s0: Array
    correlation: Array
    chol: Array = field(repr=False, default=None)  # square-root factor, set on init

    def __post_init__(self) -> None:
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        corr = np.asarray(self.correlation, dtype=float)
        if corr.shape != (s0.size, s0.size):
            raise ConfigurationError("correlation shape must be (d, d)")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise ConfigurationError("correlation must be symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ConfigurationError("correlation must have unit diagonal")
        try:
            chol = np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            # PSD but singular: fall back to an eigenvalue square root.
            vals, vecs = np.linalg.eigh(corr)
            if (vals < -1e-10).any():
                raise ConfigurationError("correlation is not positive semi-definite")
            chol = vecs * np.sqrt(np.clip(vals, 0.0, None))
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "correlation", corr)
        object.__setattr__(self, "chol", chol)

    @property
    def d(self) -> int:
        return self.s0.size

    @classmethod
    def from_prices(cls, prices: float | Array, d: int = 1, correlation: Array | None = None) -> "AssetBasket":
        """Basket with the given initial prices, independent by default."""
        p = np.atleast_1d(np.asarray(prices, dtype=float))
        if p.size == 1:
            p = np.full(d, p[0])
        if correlation is None:
            correlation = np.eye(p.size)
        return cls(s0=np.log(p), correlation=correlation)

    def correlated_normals(self, rng: np.random.Generator, n: int) -> Array:
        """Draw n correlated standard-normal vectors, shape (n, d)."""
        return rng.standard_normal((n, self.d)) @ self.chol.T


@dataclass(frozen=True)
class PathState:
    """One path at one step: the step index and the log-price vector."""

    step: int
    logprices: Array

    def __post_init__(self) -> None:
        lp = np.atleast_1d(np.asarray(self.logprices, dtype=float))
        object.__setattr__(self, "logprices", lp)


def euler_update(logprices: Array, model: VolatilityModel, dt: float, z: Array) -> Array:
    """Vectorized one-step update; ``z`` must already carry the correlation."""
    sig = model.vol_at_log(logprices)
    return logprices + (model.drift - 0.5 * sig * sig) * dt + sig * math.sqrt(dt) * z


def euler_step(
    state: PathState,
    model: VolatilityModel,
    basket: AssetBasket,
    grid: TimeGrid,
    z: Array,
) -> PathState:
    """Advance a single path by one grid step given a correlated draw ``z``."""
    if state.step >= grid.step_days:
        raise ValueError(f"step {state.step} is already at the horizon {grid.step_days}")
    if not np.isfinite(state.logprices).all():
        raise ValueError("non-finite path state")
    z = np.broadcast_to(np.asarray(z, dtype=float), (basket.d,))
    nxt = euler_update(state.logprices, model, grid.dt_years, z)
    return PathState(step=state.step + 1, logprices=nxt)


def simulate_path(
    basket: AssetBasket,
    model: VolatilityModel,
    grid: TimeGrid,
    seed: SeedKey,
    n_paths: int = 1,
) -> Array:
    """Simulate full paths, shape (n_paths, N + 1, d).

    The step-n draw for path i is row i of the (seed, step n) substream, so
    a run is reproducible for fixed (seed, n_paths) and path i sees the same
    increments whether simulated here or inside the particle engine.
    """
    states = np.tile(basket.s0, (n_paths, 1))
    out = np.empty((n_paths, grid.step_days + 1, basket.d))
    out[:, 0] = states
    for n in range(1, grid.step_days + 1):
        z = basket.correlated_normals(substream(seed, PROPOSAL, n), n_paths)
        states = euler_update(states, model, grid.dt_years, z)
        out[:, n] = states
    return out


def marginal_density_constant_vol(
    basket: AssetBasket,
    sigma: float | Array,
    grid: TimeGrid,
    n: int,
    s: Array,
) -> float:
    """Exact step-n marginal density under constant volatility.

    The log price of asset j at step n is N(s0_j - sigma_j^2 t_n / 2,
    sigma_j^2 t_n); the joint density is the product over assets.
    """
    if n <= 0:
        raise ValueError("marginal density is a point mass at step 0")
    sig = np.broadcast_to(np.atleast_1d(np.asarray(sigma, dtype=float)), (basket.d,))
    if (sig <= 0).any():
        raise ConfigurationError("marginal density requires positive volatility")
    t = grid.t(n)
    mean = basket.s0 - 0.5 * sig * sig * t
    std = sig * math.sqrt(t)
    s = np.broadcast_to(np.asarray(s, dtype=float), (basket.d,))
    return float(np.exp(gaussian_log_pdf(s, mean, std).sum()))


@dataclass(frozen=True)
class LocalVolMarginal:
    """Gaussian approximation of the step-n marginals under local volatility.

    The mean path m_n follows m_n = m_{n-1} - sigma^2(exp(m_{n-1})) dt / 2
    from m_0 = s0, and the step-n density uses variance
    sigma^2(exp(m_{n-1})) * t_n.  One shared 1-d schedule is applied to every
    asset (the studied baskets use one curve and one initial price).
    """

    mean: Array       # (N + 1,), per-step approximate E s_n
    step_vol: Array   # (N + 1,), step_vol[n] = sigma(exp(mean[n - 1])), step_vol[0] = sigma(exp(s0))
    dt_years: float

    def log_pdf(self, n: int, s: Array) -> Array:
        """Log density at step n >= 1, summed over the last axis of ``s``."""
        if n <= 0:
            raise ValueError("marginal density is a point mass at step 0")
        std = self.step_vol[n] * math.sqrt(n * self.dt_years)
        return gaussian_log_pdf(s, self.mean[n], std).sum(axis=-1)

    def std(self, n: int) -> float:
        return float(self.step_vol[n] * math.sqrt(n * self.dt_years))


def approx_marginal_local_vol(
    model: VolatilityModel,
    grid: TimeGrid,
    s0: float,
) -> LocalVolMarginal:
    """Iterate the mean-path recursion and return the density approximation."""
    if model.kind != "local":
        raise ConfigurationError("approx_marginal_local_vol requires a local model")
    n_steps = grid.step_days
    mean = np.empty(n_steps + 1)
    step_vol = np.empty(n_steps + 1)
    mean[0] = s0
    step_vol[0] = local_vol(model, math.exp(s0))
    for n in range(1, n_steps + 1):
        sig = local_vol(model, math.exp(mean[n - 1]))
        step_vol[n] = sig
        mean[n] = mean[n - 1] - 0.5 * sig * sig * grid.dt_years
    return LocalVolMarginal(mean=mean, step_vol=step_vol, dt_years=grid.dt_years)
