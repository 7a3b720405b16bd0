"""Replication harness: run methods side by side and compare their spread.

A plan fixes a base pricing request, a sweep axis (dimension or volatility),
a method list, and a replicate count.  Every (method, sweep value,
replicate) triple gets its own counter-derived seed, so results do not
depend on execution order or on how many worker processes run the tasks.
The headline statistic is the relative standard deviation: the spread of
the first-listed method's estimates over the spread of each other method's.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import AssetBasket, ConfigurationError, VolatilityModel
from .products import BarrierOption, TarnSpec
from .pricing import PricingRequest, PricingResult, WeightingChoice, price

Array = np.ndarray


@dataclass(frozen=True)
class MethodSpec:
    """One compared estimator: the method plus its weighting choice."""

    method: str
    weighting: WeightingChoice = WeightingChoice()

    @property
    def label(self) -> str:
        if self.weighting.name == "none":
            return self.method
        return f"{self.method}[{self.weighting.name}]"


@dataclass(frozen=True)
class MethodStats:
    mean: float
    sd: float
    rel_sd: float
    runtime_s: float
    n_extinct: int


@dataclass(frozen=True)
class ComparisonRow:
    sweep_value: float | int
    stats: dict[str, MethodStats]


@dataclass(frozen=True)
class ExperimentPlan:
    base: PricingRequest
    methods: tuple[MethodSpec, ...]
    replicates: int
    master_seed: int = 0
    sweep_param: str = "none"  # none | dimension | sigma
    sweep_values: tuple[float | int, ...] = (0,)
    workers: int = 1
    output_csv: str | None = None
    manifest_path: str | None = None

    def __post_init__(self) -> None:
        if self.replicates < 2:
            raise ConfigurationError("a comparison needs at least 2 replicates")
        if not self.methods:
            raise ConfigurationError("no methods to compare")
        if not self.sweep_values:
            raise ConfigurationError("empty sweep")
        if self.sweep_param not in ("none", "dimension", "sigma"):
            raise ConfigurationError(f"unknown sweep parameter {self.sweep_param!r}")
        if self.sweep_param == "dimension" and isinstance(self.base.product, TarnSpec):
            raise ConfigurationError("TARNs are one-dimensional; sweep sigma instead")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))

    def describe(self) -> dict:
        """JSON-friendly summary used for hashing and the run manifest."""
        product = self.base.product
        return {
            "product": type(product).__name__,
            "model": self.base.model.kind,
            "methods": [m.label for m in self.methods],
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "sweep_param": self.sweep_param,
            "sweep_values": list(self.sweep_values),
            "n_particles": self.base.smc.n_particles,
        }


def apply_sweep(request: PricingRequest, param: str, value: float | int) -> PricingRequest:
    """Rebuild the request at one sweep point."""
    if param == "none":
        return request
    if param == "sigma":
        if request.model.kind != "constant":
            raise ConfigurationError("volatility sweeps require a constant-vol model")
        return replace(request, model=VolatilityModel.constant(float(value)))
    # dimension sweep: independent assets, the same corridor in every one
    d = int(value)
    if d < 1:
        raise ConfigurationError("dimension must be positive")
    option = request.product
    if not isinstance(option, BarrierOption):
        raise ConfigurationError("dimension sweeps apply to barrier options")
    s0_price = float(np.exp(request.basket.s0[0]))
    basket = AssetBasket.from_prices(s0_price, d=d)
    new_option = BarrierOption.from_prices(
        option.monitoring_steps,
        float(np.exp(option.log_lower[0, 0])),
        float(np.exp(option.log_upper[0, 0])),
        option.strike_price,
        d=d,
        option_kind=option.option_kind,
    )
    return replace(request, basket=basket, product=new_option)


def _run_one(request: PricingRequest, method: MethodSpec, seed: tuple[int, ...]) -> PricingResult:
    req = replace(request, method=method.method, weighting=method.weighting)
    return price(req, seed)


def _task(args: tuple[PricingRequest, MethodSpec, tuple[int, ...]]) -> tuple[float, bool, float]:
    result = _run_one(*args)
    return result.estimate, result.extinct, result.wall_time_s


def relative_sd(baseline_sd: float, baseline_all_zero: bool, method_sd: float) -> float:
    """Spread ratio baseline / method.

    Undefined (NaN) when the method's spread is zero.  A baseline whose
    replicates are all exactly zero estimates resolved nothing at all; its
    ratio is reported as +inf rather than 0 so a collapsed baseline reads as
    the strongest possible variance-reduction signal, not the weakest.
    """
    if method_sd == 0.0:
        return math.nan
    if baseline_sd == 0.0:
        return math.inf if baseline_all_zero else 0.0
    return baseline_sd / method_sd


def method_salt(label: str) -> int:
    """Stable stream identifier for a method, independent of list order."""
    return zlib.crc32(label.encode()) & 0x7FFFFFFF


def run_plan(plan: ExperimentPlan) -> list[ComparisonRow]:
    """Run the full plan and return one row per sweep value.

    Task seeds are (master_seed, method salt, sweep index, replicate), so
    any worker count or method ordering yields identical estimates; results
    are reduced in deterministic order.
    """
    tasks = []
    index = []
    for j, method in enumerate(plan.methods):
        salt = method_salt(method.label)
        for i, value in enumerate(plan.sweep_values):
            request = apply_sweep(plan.base, plan.sweep_param, value)
            for r in range(plan.replicates):
                seed = (plan.master_seed, salt, i, r)
                tasks.append((request, method, seed))
                index.append((i, j, r))

    n_sweep, n_methods = len(plan.sweep_values), len(plan.methods)
    estimates = np.zeros((n_sweep, n_methods, plan.replicates))
    extinct = np.zeros((n_sweep, n_methods, plan.replicates), dtype=bool)
    runtimes = np.zeros((n_sweep, n_methods))
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            outcomes = list(pool.map(_task, tasks, chunksize=8))
    else:
        outcomes = [_task(t) for t in tasks]
    for (i, j, r), (est, ext, wall) in zip(index, outcomes):
        estimates[i, j, r] = est
        extinct[i, j, r] = ext
        runtimes[i, j] += wall

    rows: list[ComparisonRow] = []
    for i, value in enumerate(plan.sweep_values):
        sds = estimates[i].std(axis=1, ddof=1)
        base_all_zero = bool((estimates[i, 0] == 0.0).all())
        stats = {}
        for j, method in enumerate(plan.methods):
            stats[method.label] = MethodStats(
                mean=float(estimates[i, j].mean()),
                sd=float(sds[j]),
                rel_sd=relative_sd(float(sds[0]), base_all_zero, float(sds[j])),
                runtime_s=float(runtimes[i, j]),
                n_extinct=int(extinct[i, j].sum()),
            )
        rows.append(ComparisonRow(sweep_value=value, stats=stats))

    if plan.output_csv:
        emit_plot_data(rows, plan.output_csv)
    if plan.manifest_path:
        write_manifest(plan.manifest_path, plan, rows)
    return rows


def emit_plot_data(rows: list[ComparisonRow], path: str) -> str:
    """Write the comparison table as CSV, one line per (sweep, method).

    Floats are written with ``repr`` so identical runs produce byte-identical
    files; wall times are deliberately left to the manifest because they can
    never be reproducible.
    """
    if not rows:
        raise ValueError("nothing to write: empty comparison table")
    lines = ["sweep,method,mean,sd,rel_sd,n_extinct"]
    for row in rows:
        for label, s in row.stats.items():
            lines.append(
                f"{row.sweep_value!r},{label},{s.mean!r},{s.sd!r},{s.rel_sd!r},{s.n_extinct}"
            )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(path: str, plan: ExperimentPlan, rows: list[ComparisonRow]) -> str:
    """Run manifest: configuration hash, seed, versions, runtimes, extinctions."""
    import scipy

    from . import __version__

    description = plan.describe()
    manifest = {
        "config_hash": config_hash(description),
        "config": description,
        "master_seed": plan.master_seed,
        "versions": {
            "smcpricer": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "rows": [
            {
                "sweep": row.sweep_value,
                "methods": {
                    label: {
                        "mean": s.mean,
                        "sd": s.sd,
                        "rel_sd": None if math.isnan(s.rel_sd) else s.rel_sd,
                        "runtime_s": s.runtime_s,
                        "n_extinct": s.n_extinct,
                    }
                    for label, s in row.stats.items()
                },
            }
            for row in rows
        ],
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, allow_nan=True)
    return path
