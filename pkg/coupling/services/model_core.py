"""
Domain types of the coupled index/stock model and its closed-form scalars.

Each stock follows

    dS_j / S_j = (r - delta_j) dt + beta_j sigma(t, I) dB + eta_j(t, S_j) dW_j

with the index I = sum_j w_j S_j. ``LimitSpec`` carries the constants of the
limiting index dynamics the model collapses to when sum_j w_j**2 is small.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from coupling.exceptions import DegenerateCorrelationError, ModelSpecError
from coupling.services.vol_surface import VolSurface

logger = logging.getLogger(__name__)


def _vector(name: str, values, size: int | None = None) -> np.ndarray:
    array = np.array(values, dtype=float, ndmin=1)
    if array.ndim != 1:
        raise ModelSpecError(f"{name} must be one-dimensional.")
    if size is not None and array.size != size:
        raise ModelSpecError(f"{name} has {array.size} entries, expected {size}.")
    if not np.all(np.isfinite(array)):
        raise ModelSpecError(f"{name} contains non-finite values.")
    array.setflags(write=False)
    return array


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full parameterization of the M-stock coupled model."""

    weights: np.ndarray
    betas: np.ndarray
    dividends: np.ndarray
    rate: float
    initial_stocks: np.ndarray
    index_vol: VolSurface
    idio_vols: tuple[VolSurface, ...]
    horizon: float

    def __post_init__(self) -> None:
        weights = _vector("weights", self.weights)
        count = weights.size
        if count < 1:
            raise ModelSpecError("At least one stock is required.")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "betas", _vector("betas", self.betas, count))
        object.__setattr__(self, "dividends", _vector("dividends", self.dividends, count))
        object.__setattr__(self, "initial_stocks", _vector("initial_stocks", self.initial_stocks, count))

        idio = self.idio_vols
        if isinstance(idio, VolSurface):
            idio = (idio,) * count
        idio = tuple(idio)
        if len(idio) != count:
            raise ModelSpecError(f"idio_vols has {len(idio)} surfaces, expected {count}.")
        object.__setattr__(self, "idio_vols", idio)

        if np.any(self.weights <= 0):
            raise ModelSpecError("All weights must be positive.")
        if np.any(self.initial_stocks <= 0):
            raise ModelSpecError("All initial stock values must be positive.")
        if np.any(self.dividends < 0):
            raise ModelSpecError("Dividend rates must be non-negative.")
        if not self.horizon > 0:
            raise ModelSpecError("horizon must be positive.")
        if not np.isfinite(self.rate):
            raise ModelSpecError("rate must be finite.")

    @property
    def count(self) -> int:
        return int(self.weights.size)

    @property
    def initial_index(self) -> float:
        return float(self.weights @ self.initial_stocks)


@dataclass(frozen=True)
class LimitSpec:
    """Constants of the limiting index dynamics and the simplified model."""

    beta: float
    delta: float
    delta_index: float
    i0: float
    index_vol: VolSurface
    rate: float = 0.0
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if not self.i0 > 0:
            raise ModelSpecError("i0 must be positive.")
        if not self.horizon > 0:
            raise ModelSpecError("horizon must be positive.")


@dataclass(frozen=True)
class StockSpec:
    """One stock of the simplified model."""

    s0: float
    beta: float
    dividend: float
    idio_vol: VolSurface

    def __post_init__(self) -> None:
        if not self.s0 > 0:
            raise ModelSpecError("s0 must be positive.")
        if self.dividend < 0:
            raise ModelSpecError("dividend must be non-negative.")


class ProximityMetrics(NamedTuple):
    p_w: float
    p_beta: float
    p_delta: float


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_model_spec(
    *,
    weights: Sequence[float],
    betas: Sequence[float] | float,
    dividends: Sequence[float] | float,
    rate: float,
    initial_stocks: Sequence[float] | float,
    index_vol: VolSurface,
    idio_vols: Sequence[VolSurface] | VolSurface,
    horizon: float,
) -> ModelSpec:
    """Build a ``ModelSpec``, broadcasting scalar betas/dividends/levels to every stock."""
    count = len(weights)

    def broadcast(values):
        if np.ndim(values) == 0:
            return np.full(count, float(values))
        return values

    return ModelSpec(
        weights=weights,
        betas=broadcast(betas),
        dividends=broadcast(dividends),
        rate=float(rate),
        initial_stocks=broadcast(initial_stocks),
        index_vol=index_vol,
        idio_vols=idio_vols,
        horizon=float(horizon),
    )


def equal_weight_spec(
    count: int,
    *,
    s0: float,
    beta: float,
    dividend: float,
    rate: float,
    index_vol: VolSurface,
    idio_vol: VolSurface,
    horizon: float,
) -> ModelSpec:
    """Homogeneous basket with weights 1/M."""
    return build_model_spec(
        weights=np.full(count, 1.0 / count),
        betas=beta,
        dividends=dividend,
        rate=rate,
        initial_stocks=s0,
        index_vol=index_vol,
        idio_vols=idio_vol,
        horizon=horizon,
    )


def limit_from_model(
    spec: ModelSpec,
    *,
    beta: float = 1.0,
    delta: float | None = None,
    delta_index: float | None = None,
) -> LimitSpec:
    """
    Limit constants for ``spec``.

    beta defaults to 1 (keeps beta_j interpretable as a regression
    coefficient); pass ``optimal_constant(spec.weights, spec.betas)`` to
    minimize P_beta instead. delta defaults to the weighted median of the
    dividends and delta_index defaults to delta.
    """
    if delta is None:
        delta = optimal_constant(spec.weights, spec.dividends)
    if delta_index is None:
        delta_index = delta
    return LimitSpec(
        beta=float(beta),
        delta=float(delta),
        delta_index=float(delta_index),
        i0=spec.initial_index,
        index_vol=spec.index_vol,
        rate=spec.rate,
        horizon=spec.horizon,
    )


def stock_specs_from_model(spec: ModelSpec) -> list[StockSpec]:
    return [
        StockSpec(
            s0=float(spec.initial_stocks[j]),
            beta=float(spec.betas[j]),
            dividend=float(spec.dividends[j]),
            idio_vol=spec.idio_vols[j],
        )
        for j in range(spec.count)
    ]


# ---------------------------------------------------------------------------
# Closed-form quantities
# ---------------------------------------------------------------------------

def cross_correlation(
    spec: ModelSpec,
    i: int,
    j: int,
    t: float,
    index_level: float,
    s_i: float,
    s_j: float,
) -> float:
    """Instantaneous correlation between stocks i and j at the given levels."""
    if i == j:
        raise ModelSpecError("cross_correlation needs two distinct stocks.")
    for k in (i, j):
        if not 0 <= k < spec.count:
            raise ModelSpecError(f"Stock index {k} out of range for M={spec.count}.")

    sigma = spec.index_vol.at_level(t, index_level)
    eta_i = spec.idio_vols[i].at_level(t, s_i)
    eta_j = spec.idio_vols[j].at_level(t, s_j)
    beta_i, beta_j = spec.betas[i], spec.betas[j]

    var_i = beta_i ** 2 * sigma ** 2 + eta_i ** 2
    var_j = beta_j ** 2 * sigma ** 2 + eta_j ** 2
    if var_i == 0 or var_j == 0:
        degenerate = i if var_i == 0 else j
        raise DegenerateCorrelationError(
            f"Stock {degenerate} has zero systemic and idiosyncratic volatility at t={t:.6g}."
        )
    rho = beta_i * beta_j * sigma ** 2 / np.sqrt(var_i * var_j)
    return float(np.clip(rho, -1.0, 1.0))


def optimal_constant(weights: Sequence[float], values: Sequence[float]) -> float:
    """
    Weighted median: minimizes sum_j w_j |values_j - m|.

    Among several minimizers the smallest data value is returned.
    """
    w = np.asarray(weights, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ModelSpecError("optimal_constant needs at least one value.")
    if w.shape != v.shape:
        raise ModelSpecError("weights and values must have the same length.")
    if np.any(w <= 0):
        raise ModelSpecError("weights must be positive.")

    order = np.argsort(v, kind="stable")
    cumulative = np.cumsum(w[order])
    half = 0.5 * cumulative[-1]
    # an exact half-weight split must survive float summation
    reached = (cumulative >= half) | np.isclose(cumulative, half, rtol=1e-12, atol=0.0)
    return float(v[order][int(np.argmax(reached))])


def proximity_metrics(spec: ModelSpec, beta: float, delta: float) -> ProximityMetrics:
    """P_w = sqrt(sum w^2), P_beta = sum w|beta_j - beta|, P_delta = sum w|delta_j - delta|."""
    w = spec.weights
    return ProximityMetrics(
        p_w=float(np.sqrt(np.sum(w ** 2))),
        p_beta=float(np.sum(w * np.abs(spec.betas - beta))),
        p_delta=float(np.sum(w * np.abs(spec.dividends - delta))),
    )
