"""Default study configurations: volatility curves and product parameters.

The local-volatility curves are piecewise-linear in the underlying price
with far-out sentinel knots so interpolation never leaves the table.  The
barrier defaults put the corridor at (95, 105) around an initial price of
100 with a single monitoring date after 540 days, which gives a
one-dimensional survival probability of about 0.39 at sigma = 0.08.
"""

from __future__ import annotations

from .diffusion import AssetBasket, TimeGrid, VolatilityModel
from .products import BarrierOption, TarnSpec

# (price, vol) knots used for barrier experiments
BARRIER_LOCAL_VOL_KNOTS = (
    (1e-6, 0.12),
    (60.0, 0.11),
    (70.0, 0.105),
    (80.0, 0.101),
    (90.0, 0.097),
    (100.0, 0.093),
    (110.0, 0.098),
    (120.0, 0.10),
    (130.0, 0.105),
    (140.0, 0.11),
    (1e6, 0.17),
)

# (price, vol) knots used for TARN experiments: minimal at 100, below 0.04
# inside the payoff band, higher outside so escaped paths roam
TARN_LOCAL_VOL_KNOTS = (
    (1e-6, 0.055),
    (60.0, 0.051),
    (90.0, 0.045),
    (93.0, 0.041),
    (98.0, 0.037),
    (100.0, 0.035),
    (103.0, 0.038),
    (107.0, 0.04),
    (110.0, 0.045),
    (140.0, 0.05),
    (1e6, 0.055),
)

DEFAULT_S0_PRICE = 100.0
DEFAULT_BARRIER_LOWER = 95.0
DEFAULT_BARRIER_UPPER = 105.0
DEFAULT_BARRIER_STRIKE = 100.0
DEFAULT_BARRIER_INTERVAL_DAYS = 540
DEFAULT_BARRIER_PERIODS = 1
DEFAULT_BARRIER_SIGMA = 0.08
PILOT_SIGMA = 0.08  # one-dimensional pilot volatility, reused across targets


def default_barrier_option(d: int = 1) -> BarrierOption:
    steps = tuple(
        DEFAULT_BARRIER_INTERVAL_DAYS * (i + 1) for i in range(DEFAULT_BARRIER_PERIODS)
    )
    return BarrierOption.from_prices(
        monitoring_steps=steps,
        lower_price=DEFAULT_BARRIER_LOWER,
        upper_price=DEFAULT_BARRIER_UPPER,
        strike_price=DEFAULT_BARRIER_STRIKE,
        d=d,
    )


def default_barrier_grid() -> TimeGrid:
    return TimeGrid.regular(DEFAULT_BARRIER_INTERVAL_DAYS, DEFAULT_BARRIER_PERIODS)


def default_basket(d: int = 1, s0_price: float = DEFAULT_S0_PRICE) -> AssetBasket:
    return AssetBasket.from_prices(s0_price, d=d)


def default_tarn_spec() -> TarnSpec:
    return TarnSpec()


def barrier_local_vol_model() -> VolatilityModel:
    return VolatilityModel.local(list(BARRIER_LOCAL_VOL_KNOTS))


def tarn_local_vol_model() -> VolatilityModel:
    return VolatilityModel.local(list(TARN_LOCAL_VOL_KNOTS))
