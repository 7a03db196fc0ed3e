"""
Monte Carlo pricing of vanilla and worst-of payoffs, lognormal closed forms,
implied volatility inversion and the three-model comparison.

Price sources are duck-typed: a ``PathEnsemble`` or a ``ParticleCloud``,
anything with ``terminal``, ``initial_level``, ``dividend``, ``time_grid``
and ``rate``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.stats import norm

from coupling.constants import (
    IMPLIED_VOL_BRACKET,
    IMPLIED_VOL_PRICE_TOLERANCE,
    IMPLIED_VOL_WIDE_BRACKET,
    MODEL_DIFFERENCE_COLUMNS,
    MODEL_SMILE_COLUMNS,
    SMILE_COLUMNS,
    SMILE_STATUS_ABOVE_SPOT,
    SMILE_STATUS_BELOW_INTRINSIC,
    SMILE_STATUS_OK,
    WORST_OF_COLUMNS,
)
from coupling.exceptions import ImpliedVolBandError, MissingPathsError, ModelSpecError, SimulationError
from coupling.services.calibration import ParticleCloud, reconstruct_market_vloc
from coupling.services.model_core import LimitSpec, ModelSpec, stock_specs_from_model
from coupling.services.regression import smoothed_bandwidth
from coupling.services.sde_engine import (
    NoisePlan,
    simulate_market_model,
    simulate_original,
    simulate_simplified,
)
from coupling.services.vol_surface import VolSurface

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Closed form and inversion
# ---------------------------------------------------------------------------

def lognormal_call(S0, K, T, r, q, sigma):
    """Black-Scholes call with continuous dividend yield; broadcasts over array inputs."""
    S0, K, T, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (S0, K, T, sigma)))
    forward = S0 * np.exp(-q * T)
    discounted_strike = K * np.exp(-r * T)
    total_vol = sigma * np.sqrt(T)

    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(forward / discounted_strike) + 0.5 * total_vol ** 2) / total_vol
        d2 = d1 - total_vol
        price = forward * norm.cdf(d1) - discounted_strike * norm.cdf(d2)

    degenerate = (total_vol <= 0) | (K <= 0)
    price = np.where(degenerate, np.maximum(forward - discounted_strike, 0.0), price)
    return price if price.ndim else float(price)


def no_arbitrage_band(S0: float, K: float, T: float, r: float, q: float) -> tuple[float, float]:
    forward = S0 * np.exp(-q * T)
    return max(forward - K * np.exp(-r * T), 0.0), float(forward)


def implied_vol(price: float, S0: float, K: float, T: float, r: float, q: float = 0.0) -> float:
    """
    Lognormal volatility reproducing ``price``.

    Brent's method on [1e-4, 5]; when the root lies outside that bracket the
    search widens once, with a warning.
    """
    if not (S0 > 0 and K > 0 and T > 0):
        raise ModelSpecError("implied_vol needs S0, K and T positive.")
    lower, upper = no_arbitrage_band(S0, K, T, r, q)
    if not price > lower:
        raise ImpliedVolBandError(
            f"price {price:.10g} at or below intrinsic {lower:.10g} (K={K:.6g}).",
            code=SMILE_STATUS_BELOW_INTRINSIC,
        )
    if not price < upper:
        raise ImpliedVolBandError(
            f"price {price:.10g} at or above discounted spot {upper:.10g} (K={K:.6g}).",
            code=SMILE_STATUS_ABOVE_SPOT,
        )

    def objective(sigma: float) -> float:
        return lognormal_call(S0, K, T, r, q, sigma) - price

    low, high = IMPLIED_VOL_BRACKET
    if objective(low) > 0 or objective(high) < 0:
        logger.warning(
            "implied_vol: root outside [%g, %g] at K=%.6g, T=%.6g; widening bracket",
            low, high, K, T,
        )
        low, high = IMPLIED_VOL_WIDE_BRACKET
        if objective(low) > 0:
            raise ImpliedVolBandError(
                f"price {price:.10g} indistinguishable from intrinsic (K={K:.6g}).",
                code=SMILE_STATUS_BELOW_INTRINSIC,
            )
        if objective(high) < 0:
            raise ImpliedVolBandError(
                f"price {price:.10g} indistinguishable from discounted spot (K={K:.6g}).",
                code=SMILE_STATUS_ABOVE_SPOT,
            )

    sigma = brentq(objective, low, high, xtol=1e-15, rtol=1e-15, maxiter=500)
    residual = abs(objective(sigma))
    if residual > IMPLIED_VOL_PRICE_TOLERANCE * S0:
        logger.debug("implied_vol: residual %.3g above tolerance at K=%.6g", residual, K)
    return float(sigma)


def band_status(exc: ImpliedVolBandError) -> str:
    code = exc.get_codes()
    return code if isinstance(code, str) else SMILE_STATUS_BELOW_INTRINSIC


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------

class MCEstimate(NamedTuple):
    price: float
    stderr: float


def _step_for(source, T: float | None) -> tuple[int, float]:
    if T is None:
        return -1, float(source.time_grid[-1])
    hits = np.flatnonzero(np.isclose(source.time_grid, T, rtol=0.0, atol=1e-12))
    if hits.size == 0:
        raise ModelSpecError(f"T={T:.6g} is not on the simulation grid.")
    return int(hits[0]), float(source.time_grid[hits[0]])


def _estimate(discounted: np.ndarray) -> MCEstimate:
    if discounted.size == 0:
        raise MissingPathsError("Cannot price on an empty ensemble.")
    stderr = discounted.std(ddof=1) / np.sqrt(discounted.size) if discounted.size > 1 else 0.0
    return MCEstimate(float(discounted.mean()), float(stderr))


def euler_forward(source, underlying: str, step: int = -1) -> float:
    """Exact mean of a stock's Euler level at ``step``: S_0 * prod(1 + (r - delta) dt)."""
    if not underlying.startswith("stock"):
        raise ModelSpecError(f"No closed-form Euler mean for '{underlying}'; use a stock.")
    grid = source.time_grid if step == -1 else source.time_grid[: step + 1]
    drift = source.rate - source.dividend(underlying)
    return float(source.initial_level(underlying) * np.prod(1.0 + drift * np.diff(grid)))


def _controlled(payoff: np.ndarray, control: np.ndarray, mean: float) -> np.ndarray:
    """payoff - b (control - mean) with the regression coefficient b."""
    centered = control - control.mean()
    spread = float(centered @ centered)
    b = float(centered @ (payoff - payoff.mean())) / spread if spread > 0 else 0.0
    return payoff - b * (control - mean)


def mc_vanilla(
    source,
    underlying: str,
    K: float,
    r: float | None = None,
    T: float | None = None,
    *,
    control: bool = False,
) -> MCEstimate:
    """
    Discounted mean of (S_T - K)+ over the source's paths.

    With ``control`` the discounted terminal level serves as a control
    variate, its mean taken from ``euler_forward``. Stocks only.
    """
    step, maturity = _step_for(source, T)
    r = source.rate if r is None else r
    discount = np.exp(-r * maturity)
    terminal = source.terminal(underlying, step)
    payoff = discount * np.maximum(terminal - K, 0.0)
    if control:
        payoff = _controlled(payoff, discount * terminal, discount * euler_forward(source, underlying, step))
    return _estimate(payoff)


def martingale_gap(source, underlying: str, r: float | None = None, T: float | None = None) -> MCEstimate:
    """mean(e^{-(r - delta) T} S_T) - S_0 with its standard error."""
    step, maturity = _step_for(source, T)
    r = source.rate if r is None else r
    growth = np.exp(-(r - source.dividend(underlying)) * maturity)
    estimate = _estimate(growth * source.terminal(underlying, step))
    return MCEstimate(estimate.price - source.initial_level(underlying), estimate.stderr)


def _stock_names(source) -> list[str]:
    if isinstance(source, ParticleCloud):
        return [f"stock:{j}" for j in range(source.stock_count)]
    names = source.stock_names
    expected = source.metadata.get("M")
    if expected is not None and len(names) < expected:
        raise MissingPathsError(f"Ensemble records {len(names)} of {expected} stocks; worst-of needs all.")
    return names


def worst_of_price(
    source,
    K: float,
    r: float | None = None,
    T: float | None = None,
    stocks: Sequence[str] | None = None,
) -> MCEstimate:
    """Discounted mean of (min_j S_T^j / S_0^j - K)+."""
    names = _stock_names(source) if stocks is None else list(stocks)
    if not names:
        raise MissingPathsError("Worst-of needs at least one stock.")
    step, maturity = _step_for(source, T)
    r = source.rate if r is None else r
    performance = np.stack(
        [source.terminal(name, step) / source.initial_level(name) for name in names], axis=1
    )
    return _estimate(np.exp(-r * maturity) * np.maximum(performance.min(axis=1) - K, 0.0))


# ---------------------------------------------------------------------------
# Smiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmileCurve:
    """Implied volatilities by moneyness; failed inversions are NaN with a status."""

    underlying: str
    maturity: float
    moneyness: np.ndarray
    implied_vols: np.ndarray
    prices: np.ndarray
    stderrs: np.ndarray
    statuses: tuple[str, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "moneyness": self.moneyness,
                "implied_vol": self.implied_vols,
                "price": self.prices,
                "stderr": self.stderrs,
                "status": list(self.statuses),
            },
            columns=SMILE_COLUMNS,
        )

    def vol_at(self, moneyness: float) -> float:
        hits = np.flatnonzero(np.isclose(self.moneyness, moneyness))
        if hits.size == 0:
            raise ModelSpecError(f"Moneyness {moneyness} not on the smile grid.")
        return float(self.implied_vols[hits[0]])


def smile(
    source,
    underlying: str,
    moneyness: Sequence[float],
    r: float | None = None,
    q: float | None = None,
    T: float | None = None,
    *,
    control: bool = False,
) -> SmileCurve:
    """
    MC price then implied vol per strike K = m * S_0.

    q defaults to the underlying's dividend (delta_j for stocks, delta_I for the index).
    ``control`` is passed to ``mc_vanilla``.
    """
    grid = np.asarray(moneyness, dtype=float)
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ModelSpecError("Smile moneyness must be strictly increasing.")
    _, maturity = _step_for(source, T)
    r = source.rate if r is None else r
    q = source.dividend(underlying) if q is None else q
    s0 = source.initial_level(underlying)

    vols = np.full(grid.size, np.nan)
    prices = np.empty(grid.size)
    stderrs = np.empty(grid.size)
    statuses = []
    for i, m in enumerate(grid):
        estimate = mc_vanilla(source, underlying, m * s0, r, T, control=control)
        prices[i], stderrs[i] = estimate
        try:
            vols[i] = implied_vol(estimate.price, s0, m * s0, maturity, r, q)
            statuses.append(SMILE_STATUS_OK)
        except ImpliedVolBandError as exc:
            statuses.append(band_status(exc))
    missing = len(statuses) - statuses.count(SMILE_STATUS_OK)
    if missing:
        logger.info("smile %s: %d of %d strike(s) outside the no-arbitrage band", underlying, missing, grid.size)
    return SmileCurve(underlying, maturity, grid, vols, prices, stderrs, tuple(statuses))


# ---------------------------------------------------------------------------
# Market-model correlation
# ---------------------------------------------------------------------------

def calibrate_equicorrelation(
    v_locs: Sequence[VolSurface],
    target_vol: float,
    *,
    initial_stocks: Sequence[float],
    weights: Sequence[float],
    rate: float,
    horizon: float,
    n_steps: int,
    n_paths: int,
    noise: NoisePlan,
    dividends: Sequence[float] | None = None,
    index_dividend: float = 0.0,
    moneyness: float = 1.0,
    bracket: tuple[float, float] = (0.0, 0.999),
    threads: int | None = 1,
) -> float:
    """
    rho such that the market model's index implied vol at ``moneyness`` equals ``target_vol``.

    Every trial rho reuses the same noise, so the objective is smooth in rho.
    """

    def index_vol(rho: float) -> float:
        ensemble = simulate_market_model(
            v_locs,
            rho,
            rate,
            initial_stocks=initial_stocks,
            horizon=horizon,
            n_steps=n_steps,
            n_paths=n_paths,
            noise=noise,
            dividends=dividends,
            weights=weights,
            threads=threads,
        )
        curve = smile(ensemble, "index", [moneyness], rate, index_dividend)
        if curve.statuses[0] != SMILE_STATUS_OK:
            raise SimulationError(f"Index smile inversion failed at rho={rho:.6g}: {curve.statuses[0]}.")
        return curve.implied_vols[0] - target_vol

    low, high = bracket
    f_low, f_high = index_vol(low), index_vol(high)
    if f_low > 0 or f_high < 0:
        raise SimulationError(
            f"Target index vol {target_vol:.6g} outside the attainable range "
            f"[{f_low + target_vol:.6g}, {f_high + target_vol:.6g}] for rho in [{low}, {high}]."
        )
    rho = brentq(index_vol, low, high, xtol=1e-6)
    logger.info("equicorrelation: rho=%.6g matches index vol %.6g", rho, target_vol)
    return float(rho)


# ---------------------------------------------------------------------------
# Three-model comparison
# ---------------------------------------------------------------------------

class ModelComparison(NamedTuple):
    smiles: pd.DataFrame
    differences: pd.DataFrame
    worst_of: pd.DataFrame
    rho: float
    market_vols: list[VolSurface]


def smile_rows(curve: SmileCurve, model: str) -> pd.DataFrame:
    frame = curve.to_frame()
    frame.insert(0, "model", model)
    frame.insert(0, "underlying", curve.underlying)
    return frame[MODEL_SMILE_COLUMNS]


def compare_models(
    spec: ModelSpec,
    limit: LimitSpec,
    *,
    moneyness: Sequence[float],
    strikes: Sequence[float],
    n_steps: int,
    n_paths: int,
    noise: NoisePlan,
    rho: float | None = None,
    stock: int = 0,
    threads: int | None = 1,
) -> ModelComparison:
    """
    Original, simplified and market models side by side.

    The market model's local volatilities are rebuilt from the simplified
    paths so both share single-stock smiles; rho is matched to the simplified
    ATM index vol unless given. All three use the same noise plan.
    """
    original = simulate_original(spec, n_steps=n_steps, n_paths=n_paths, noise=noise, threads=threads)
    simplified = simulate_simplified(
        limit,
        stock_specs_from_model(spec),
        n_steps=n_steps,
        n_paths=n_paths,
        noise=noise,
        weights=spec.weights,
        threads=threads,
    )

    cloud = ParticleCloud.from_ensemble(
        simplified,
        index_vol=spec.index_vol,
        betas=spec.betas,
        bandwidth=smoothed_bandwidth(n_paths),
    )
    rebuilt: dict[tuple, VolSurface] = {}
    market_vols = []
    for j in range(spec.count):
        key = (id(spec.idio_vols[j]), float(spec.betas[j]), float(spec.initial_stocks[j]))
        if key not in rebuilt:
            rebuilt[key] = reconstruct_market_vloc(
                spec.idio_vols[j], cloud, stock=j, threads=threads or 1
            ).surface
        market_vols.append(rebuilt[key])

    index_q = limit.delta_index
    simplified_index = smile(simplified, "index", moneyness, spec.rate, index_q)
    if rho is None:
        rho = calibrate_equicorrelation(
            market_vols,
            smile(simplified, "index", [1.0], spec.rate, index_q).implied_vols[0],
            initial_stocks=spec.initial_stocks,
            weights=spec.weights,
            rate=spec.rate,
            horizon=spec.horizon,
            n_steps=n_steps,
            n_paths=n_paths,
            noise=noise,
            dividends=spec.dividends,
            index_dividend=index_q,
            threads=threads,
        )
    market = simulate_market_model(
        market_vols,
        rho,
        spec.rate,
        initial_stocks=spec.initial_stocks,
        horizon=spec.horizon,
        n_steps=n_steps,
        n_paths=n_paths,
        noise=noise,
        dividends=spec.dividends,
        weights=spec.weights,
        threads=threads,
    )

    stock_name = f"stock:{stock}"
    curves = {
        ("index", "original"): smile(original, "index", moneyness, spec.rate, index_q),
        ("index", "simplified"): simplified_index,
        ("reconstructed", "simplified"): smile(simplified, "reconstructed", moneyness, spec.rate, index_q),
        ("index", "market"): smile(market, "index", moneyness, spec.rate, index_q),
        (stock_name, "original"): smile(original, stock_name, moneyness),
        (stock_name, "simplified"): smile(simplified, stock_name, moneyness),
        (stock_name, "market"): smile(market, stock_name, moneyness),
    }
    smiles = pd.concat([smile_rows(curve, model) for (_, model), curve in curves.items()], ignore_index=True)

    differences = []
    for (underlying, model), curve in curves.items():
        reference = curves.get((underlying, "simplified")) if underlying != "reconstructed" else curves[("index", "simplified")]
        if reference is None or reference is curve:
            continue
        for m, vol, ref in zip(curve.moneyness, curve.implied_vols, reference.implied_vols):
            differences.append(
                {
                    "underlying": underlying,
                    "moneyness": m,
                    "model": model,
                    "reference_model": "simplified",
                    "difference_bp": 1e4 * abs(vol - ref),
                }
            )
    differences = pd.DataFrame(differences, columns=MODEL_DIFFERENCE_COLUMNS)

    worst = [
        {"strike": K, "model": model, "price": estimate.price, "stderr": estimate.stderr}
        for K in strikes
        for model, source in (("original", original), ("simplified", simplified), ("market", market))
        for estimate in [worst_of_price(source, K)]
    ]
    logger.info("model comparison: M=%d, N=%d, rho=%.6g", spec.count, n_paths, rho)
    return ModelComparison(
        smiles=smiles,
        differences=differences,
        worst_of=pd.DataFrame(worst, columns=WORST_OF_COLUMNS),
        rho=float(rho),
        market_vols=market_vols,
    )
