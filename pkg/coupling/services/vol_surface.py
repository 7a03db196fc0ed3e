"""
Local volatility surfaces: representation, bilinear evaluation and
extraction of local variance from call prices (Dupire).

A ``VolSurface`` houses any of sigma(t, x), eta_j(t, x) or sqrt(v_loc(t, x)).
Stock surfaces are usually gridded in moneyness (level / reference level),
index surfaces in absolute level; ``at_level`` hides the difference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from coupling.constants import (
    BUTTERFLY_FLOOR,
    DEFAULT_VOL_CAP,
    PRICE_SURFACE_TOLERANCE,
    VARIANCE_FLOOR,
)
from coupling.exceptions import (
    ArbitrageViolationError,
    InvalidPriceSurfaceError,
    InvalidSurfaceError,
    SurfaceCapError,
)

logger = logging.getLogger(__name__)


def _frozen(values: Sequence[float] | np.ndarray, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=float, ndmin=ndim)
    array.setflags(write=False)
    return array


def _check_grid(name: str, grid: np.ndarray) -> None:
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidSurfaceError(f"{name} must be a non-empty 1-d grid.")
    if not np.all(np.isfinite(grid)):
        raise InvalidSurfaceError(f"{name} contains non-finite values.")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise InvalidSurfaceError(f"{name} must be strictly increasing.")


def _bracket(grid: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cell indices and interpolation weight, with flat extrapolation."""
    x = np.clip(x, grid[0], grid[-1])
    if grid.size == 1:
        zero = np.zeros(np.shape(x), dtype=np.intp)
        return zero, zero, np.zeros(np.shape(x))
    lo = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, grid.size - 2)
    hi = lo + 1
    weight = (x - grid[lo]) / (grid[hi] - grid[lo])
    return lo, hi, weight


# ---------------------------------------------------------------------------
# VolSurface
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VolSurface:
    """
    Time x level grid of volatilities (per sqrt-year).

    Evaluation is bilinear inside the grid hull and flat outside it, so the
    surface stays bounded by ``cap`` everywhere (the K_b hypothesis).
    """

    time_grid: np.ndarray
    level_grid: np.ndarray
    values: np.ndarray
    moneyness: bool = False
    reference_level: float = 1.0
    cap: float = DEFAULT_VOL_CAP
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "time_grid", _frozen(self.time_grid, 1))
        object.__setattr__(self, "level_grid", _frozen(self.level_grid, 1))
        object.__setattr__(self, "values", _frozen(self.values, 2))

        _check_grid("time_grid", self.time_grid)
        _check_grid("level_grid", self.level_grid)
        if self.time_grid[0] < 0:
            raise InvalidSurfaceError("time_grid must start at or after 0.")
        if self.level_grid[0] <= 0:
            raise InvalidSurfaceError("level_grid must be positive.")
        if self.values.shape != (self.time_grid.size, self.level_grid.size):
            raise InvalidSurfaceError(
                f"values shape {self.values.shape} does not match grids "
                f"({self.time_grid.size}, {self.level_grid.size})."
            )
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise InvalidSurfaceError("values must be finite and non-negative.")
        if self.reference_level <= 0:
            raise InvalidSurfaceError("reference_level must be positive.")
        if self.values.max() > self.cap:
            raise SurfaceCapError(
                f"Surface {self.name or '<unnamed>'} reaches {self.values.max():.6g} "
                f"above its cap K_b={self.cap:.6g}."
            )

    # -- evaluation ---------------------------------------------------------

    def eval(self, t, x):
        """Bilinear value at grid coordinates (t, x); flat outside the grid."""
        t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        t0, t1, wt = _bracket(self.time_grid, t_arr)
        x0, x1, wx = _bracket(self.level_grid, x_arr)
        v = self.values
        value = (1.0 - wt) * ((1.0 - wx) * v[t0, x0] + wx * v[t0, x1]) + wt * (
            (1.0 - wx) * v[t1, x0] + wx * v[t1, x1]
        )
        return value if value.ndim else float(value)

    def at_level(self, t, level):
        """Evaluate at an absolute level, converting to moneyness when needed."""
        if self.moneyness:
            return self.eval(t, np.asarray(level, dtype=float) / self.reference_level)
        return self.eval(t, level)

    # -- descriptors ------------------------------------------------------------

    @property
    def absolute_levels(self) -> np.ndarray:
        if self.moneyness:
            return self.level_grid * self.reference_level
        return self.level_grid

    @property
    def max_value(self) -> float:
        return float(self.values.max())

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values.flat[0]))

    def squared(self) -> np.ndarray:
        return self.values ** 2


class LipschitzEstimate(NamedTuple):
    """Grid estimates of the Lipschitz constants, in absolute level units."""

    vol: float  # max |d sigma / dx|
    level_times_vol: float  # max |d (x sigma) / dx|


def discrete_lipschitz(surface: VolSurface) -> LipschitzEstimate:
    """
    Largest finite-difference slopes of sigma and x*sigma over the grid.

    A gridded surface is only approximately Lipschitz in the sense of the
    convergence theorems; this reports the discrete estimate, it does not
    enforce anything.
    """
    levels = surface.absolute_levels
    if levels.size < 2:
        return LipschitzEstimate(0.0, float(surface.values.max()))
    dx = np.diff(levels)
    vol_slope = np.abs(np.diff(surface.values, axis=1)) / dx
    scaled = surface.values * levels
    scaled_slope = np.abs(np.diff(scaled, axis=1)) / dx
    return LipschitzEstimate(float(vol_slope.max()), float(scaled_slope.max()))


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_surface_from_function(
    f: Callable[[float, float], float],
    time_grid: Sequence[float],
    level_grid: Sequence[float],
    *,
    moneyness: bool = False,
    reference_level: float = 1.0,
    cap: float = DEFAULT_VOL_CAP,
    name: str = "",
) -> VolSurface:
    """Sample ``f`` at every grid node. Evaluation at the nodes reproduces ``f`` exactly."""
    times = np.asarray(time_grid, dtype=float)
    levels = np.asarray(level_grid, dtype=float)
    values = np.array([[float(f(t, x)) for x in levels] for t in times])
    negative = np.argwhere(values < 0)
    if negative.size:
        i, k = negative[0]
        raise InvalidSurfaceError(
            f"Function is negative ({values[i, k]:.6g}) at node t={times[i]:.6g}, x={levels[k]:.6g}."
        )
    return VolSurface(
        time_grid=times,
        level_grid=levels,
        values=values,
        moneyness=moneyness,
        reference_level=reference_level,
        cap=cap,
        name=name,
    )


def constant_surface(
    value: float,
    *,
    horizon: float = 1.0,
    moneyness: bool = True,
    reference_level: float = 1.0,
    cap: float = DEFAULT_VOL_CAP,
    name: str = "",
) -> VolSurface:
    """Two-by-two constant surface; flat extrapolation makes it constant everywhere."""
    return build_surface_from_function(
        lambda t, x: value,
        [0.0, horizon],
        [0.5, 2.0] if moneyness else [0.5 * reference_level, 2.0 * reference_level],
        moneyness=moneyness,
        reference_level=reference_level,
        cap=cap,
        name=name,
    )


def skewed_surface(
    *,
    atm: float,
    slope: float,
    reference_level: float,
    horizon: float = 1.0,
    floor: float = 0.05,
    ceiling: float = 1.5,
    moneyness_range: tuple[float, float] = (0.2, 3.0),
    points: int = 57,
    time_points: int = 5,
    term_slope: float = 0.0,
    cap: float = DEFAULT_VOL_CAP,
    name: str = "",
) -> VolSurface:
    """
    Synthetic equity-style surface used in place of a market-fitted index surface.

    sigma(t, m) = clip(atm + term_slope * t + slope * ln(m), floor, ceiling),
    gridded in moneyness m = level / reference_level. A negative ``slope``
    gives the usual downward index skew.
    """
    levels = np.geomspace(moneyness_range[0], moneyness_range[1], points)
    times = np.linspace(0.0, horizon, time_points)

    def sigma(t: float, m: float) -> float:
        return min(max(atm + term_slope * t + slope * np.log(m), floor), ceiling)

    return build_surface_from_function(
        sigma,
        times,
        levels,
        moneyness=True,
        reference_level=reference_level,
        cap=cap,
        name=name,
    )


# ---------------------------------------------------------------------------
# Call-price surfaces and Dupire
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PriceSurface:
    """Call prices C(t, K) on a time x strike grid."""

    time_grid: np.ndarray
    strike_grid: np.ndarray
    call_prices: np.ndarray
    spot: float
    rate: float
    dividend_yield: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "time_grid", _frozen(self.time_grid, 1))
        object.__setattr__(self, "strike_grid", _frozen(self.strike_grid, 1))
        object.__setattr__(self, "call_prices", _frozen(self.call_prices, 2))

        for name, grid in (("time_grid", self.time_grid), ("strike_grid", self.strike_grid)):
            if grid.ndim != 1 or grid.size == 0 or (grid.size > 1 and np.any(np.diff(grid) <= 0)):
                raise InvalidPriceSurfaceError(f"{name} must be a strictly increasing 1-d grid.")
        if self.call_prices.shape != (self.time_grid.size, self.strike_grid.size):
            raise InvalidPriceSurfaceError("call_prices shape does not match the grids.")
        if self.spot <= 0:
            raise InvalidPriceSurfaceError("spot must be positive.")
        if np.any(self.call_prices < -PRICE_SURFACE_TOLERANCE):
            raise InvalidPriceSurfaceError("call prices must be non-negative.")

        tol = PRICE_SURFACE_TOLERANCE * self.spot
        if np.any(np.diff(self.call_prices, axis=1) > tol):
            raise InvalidPriceSurfaceError("call prices must be non-increasing in strike.")
        t = self.time_grid[:, None]
        k = self.strike_grid[None, :]
        intrinsic = np.maximum(
            np.exp(-self.dividend_yield * t) * self.spot - np.exp(-self.rate * t) * k, 0.0
        )
        below = np.argwhere(self.call_prices < intrinsic - tol)
        if below.size:
            i, j = below[0]
            raise InvalidPriceSurfaceError(
                f"call price below intrinsic at t={self.time_grid[i]:.6g}, K={self.strike_grid[j]:.6g}."
            )


def lognormal_price_surface(
    *,
    spot: float,
    rate: float,
    dividend_yield: float,
    sigma: float,
    time_grid: Sequence[float],
    strike_grid: Sequence[float],
) -> PriceSurface:
    """Closed-form constant-volatility call prices on a grid."""
    from coupling.services.pricing import lognormal_call

    times = np.asarray(time_grid, dtype=float)
    strikes = np.asarray(strike_grid, dtype=float)
    prices = lognormal_call(spot, strikes[None, :], times[:, None], rate, dividend_yield, sigma)
    return PriceSurface(
        time_grid=times,
        strike_grid=strikes,
        call_prices=prices,
        spot=spot,
        rate=rate,
        dividend_yield=dividend_yield,
    )


def _node_index(grid: np.ndarray, value: float, name: str) -> int:
    idx = int(np.argmin(np.abs(grid - value)))
    if not np.isclose(grid[idx], value, rtol=1e-12, atol=1e-12):
        raise InvalidPriceSurfaceError(f"{name}={value:.6g} is not a node of the price grid.")
    return idx


def _dupire_at(prices: PriceSurface, i: int, k: int, cap: float) -> float:
    times, strikes, c = prices.time_grid, prices.strike_grid, prices.call_prices
    if k == 0 or k == strikes.size - 1:
        raise InvalidPriceSurfaceError(
            f"K={strikes[k]:.6g} has no central strike stencil (first or last strike)."
        )
    if times.size < 2:
        raise InvalidPriceSurfaceError("Dupire needs at least two maturities.")

    # Time derivative: forward at the first slice, backward at the last, central elsewhere.
    if i == 0:
        dc_dt = (c[1, k] - c[0, k]) / (times[1] - times[0])
    elif i == times.size - 1:
        dc_dt = (c[i, k] - c[i - 1, k]) / (times[i] - times[i - 1])
    else:
        dc_dt = (c[i + 1, k] - c[i - 1, k]) / (times[i + 1] - times[i - 1])

    h_lo = strikes[k] - strikes[k - 1]
    h_hi = strikes[k + 1] - strikes[k]
    dc_dk = (c[i, k + 1] - c[i, k - 1]) / (h_lo + h_hi)
    d2c_dk2 = 2.0 * (
        c[i, k + 1] * h_lo - c[i, k] * (h_lo + h_hi) + c[i, k - 1] * h_hi
    ) / (h_lo * h_hi * (h_lo + h_hi))

    strike = strikes[k]
    denominator = strike ** 2 * d2c_dk2
    if denominator <= BUTTERFLY_FLOOR * prices.spot:
        raise ArbitrageViolationError(
            f"Butterfly arbitrage at t={times[i]:.6g}, K={strike:.6g}: "
            f"d2C/dK2={d2c_dk2:.3g}."
        )
    q = prices.dividend_yield
    numerator = dc_dt + (prices.rate - q) * strike * dc_dk + q * c[i, k]
    local_variance = 2.0 * numerator / denominator
    return float(np.clip(local_variance, VARIANCE_FLOOR, cap ** 2))


def dupire_local_variance(
    prices: PriceSurface,
    t: float,
    K: float,
    *,
    cap: float = DEFAULT_VOL_CAP,
) -> float:
    """
    Dupire local variance at a grid node (t, K) from finite differences.

    Central second-order differences in strike, forward differences in time at
    the first slice and central ones elsewhere. The ratio is clamped to
    [VARIANCE_FLOOR, cap**2]; calendar-arbitrage bumps therefore land on the floor.
    """
    i = _node_index(prices.time_grid, t, "t")
    k = _node_index(prices.strike_grid, K, "K")
    return _dupire_at(prices, i, k, cap)


def dupire_surface(
    prices: PriceSurface,
    *,
    cap: float = DEFAULT_VOL_CAP,
    moneyness: bool = False,
) -> VolSurface:
    """Local volatility on every interior strike of the price grid."""
    interior = range(1, prices.strike_grid.size - 1)
    values = np.array(
        [
            [np.sqrt(_dupire_at(prices, i, k, cap)) for k in interior]
            for i in range(prices.time_grid.size)
        ]
    )
    levels = prices.strike_grid[1:-1]
    if moneyness:
        levels = levels / prices.spot
    logger.info(
        "Dupire surface on %d maturities x %d strikes (spot %.6g)",
        prices.time_grid.size, levels.size, prices.spot,
    )
    return VolSurface(
        time_grid=prices.time_grid,
        level_grid=levels,
        values=values,
        moneyness=moneyness,
        reference_level=prices.spot if moneyness else 1.0,
        cap=cap,
        name="dupire",
    )
