"""
Explicit constants of the L^{2p} convergence bounds between the coupled model
and its limit, and the coupled-simulation study that checks them.

Bounds assume:
  bounded vols       |sigma| + |eta_j| <= K_b
  level-Lipschitz    x sigma(t, x) is K_sigma-Lipschitz, x eta_j(t, x) is K_eta-Lipschitz
  index-Lipschitz    sigma(t, x) is K_lip-Lipschitz
Gridded surfaces satisfy the Lipschitz conditions only approximately; the defaults are the
discrete estimates of ``vol_surface.discrete_lipschitz`` and the report says so.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from coupling.constants import (
    BOUND_REPORT_COLUMNS,
    SLOPE_COLUMNS,
    STUDY_COLUMNS,
    STUDY_STDERR_RATIO_LIMIT,
)
from coupling.exceptions import ModelSpecError
from coupling.services.model_core import (
    LimitSpec,
    ModelSpec,
    limit_from_model,
    optimal_constant,
    proximity_metrics,
)
from coupling.services.sde_engine import NoisePlan, simulate_original
from coupling.services.vol_surface import discrete_lipschitz

logger = logging.getLogger(__name__)


def _check_order(p: int) -> int:
    if int(p) != p or p < 1:
        raise ModelSpecError(f"Bound order p must be an integer >= 1, got {p}.")
    return int(p)


def universal_bdg_constant(p: int) -> float:
    """
    K_p with E[sup_t |int_0^t X dB|^{2p}] <= K_p T^{p-1} E[int_0^T |X|^{2p} dt].

    Doob's maximal inequality, (2p / (2p - 1))^{2p}, times the moment bound
    (p (2p - 1))^p for stochastic integrals (Karatzas & Shreve, Brownian Motion
    and Stochastic Calculus, Proposition 3.26). p = 1 gives 4.
    """
    p = _check_order(p)
    return (2 * p / (2 * p - 1)) ** (2 * p) * (p * (2 * p - 1)) ** p


def _grow(prefactor: float, exponent: float) -> float:
    """prefactor * exp(exponent); inf when the exponential overflows a double."""
    if prefactor == 0:
        return 0.0
    try:
        return prefactor * math.exp(exponent)
    except OverflowError:
        logger.warning("bound constant overflows (exponent %.6g); reporting inf", exponent)
        return math.inf


def surface_cap(spec: ModelSpec) -> float:
    """Smallest vol bound K_b on the grids: sup sigma + max_j sup eta_j."""
    return spec.index_vol.max_value + max(surface.max_value for surface in spec.idio_vols)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

def lemma1_bound(spec: ModelSpec, K_b: float, p: int) -> float:
    """C_p = max_j s0_j^{2p} exp((2r + (2p - 1)(max beta_j^2 + 1) K_b^2) p T)."""
    p = _check_order(p)
    observed = surface_cap(spec)
    if K_b < observed:
        raise ModelSpecError(f"K_b={K_b:.6g} is below the surfaces' sup sigma + sup eta = {observed:.6g}.")
    exponent = (2.0 * spec.rate + (2 * p - 1) * (np.max(spec.betas ** 2) + 1.0) * K_b ** 2) * p * spec.horizon
    return _grow(float(np.max(spec.initial_stocks)) ** (2 * p), exponent)


def theorem1_constant(spec: ModelSpec, limit: LimitSpec, K_b: float, K_sigma: float, p: int) -> float:
    p = _check_order(p)
    T, r = spec.horizon, spec.rate
    K_p = universal_bdg_constant(p)
    C_p = lemma1_bound(spec, K_b, p)
    prefactor = 8 ** (2 * p - 1) * T ** p * (T ** p + K_p * K_b ** (2 * p)) * C_p
    rate = 4 ** (2 * p - 1) * T * (
        2 ** (2 * p - 1) * K_p * T ** (p - 1) * (limit.beta * K_sigma) ** (2 * p)
        + (2 * T) ** (2 * p - 1) * limit.delta ** (2 * p)
        + r ** (2 * p) * T ** (2 * p - 1)
    )
    return _grow(prefactor, rate)


def _metric_sum(spec: ModelSpec, limit: LimitSpec, p: int) -> float:
    metrics = proximity_metrics(spec, limit.beta, limit.delta)
    return metrics.p_w ** (2 * p) + metrics.p_beta ** (2 * p) + metrics.p_delta ** (2 * p)


def _default_k_sigma(spec: ModelSpec) -> float:
    return discrete_lipschitz(spec.index_vol).level_times_vol


def _default_k_eta(spec: ModelSpec) -> float:
    return max(discrete_lipschitz(surface).level_times_vol for surface in spec.idio_vols)


def _default_k_lip(spec: ModelSpec) -> float:
    return discrete_lipschitz(spec.index_vol).vol


def theorem1_bound(
    spec: ModelSpec,
    limit: LimitSpec,
    K_b: float | None = None,
    K_sigma: float | None = None,
    p: int = 1,
) -> float:
    """E[sup |I^M - I|^{2p}] <= C_T (P_w^{2p} + P_beta^{2p} + P_delta^{2p})."""
    p = _check_order(p)
    K_b = surface_cap(spec) if K_b is None else K_b
    K_sigma = _default_k_sigma(spec) if K_sigma is None else K_sigma
    return theorem1_constant(spec, limit, K_b, K_sigma, p) * _metric_sum(spec, limit, p)


def theorem2_constant(
    spec: ModelSpec,
    limit: LimitSpec,
    stock: int,
    K_b: float,
    K_eta: float,
    K_lip: float,
    p: int,
) -> float:
    """C~^j_T of the single-stock bound."""
    p = _check_order(p)
    if not 0 <= stock < spec.count:
        raise ModelSpecError(f"Stock index {stock} out of range for M={spec.count}.")
    T, r = spec.horizon, spec.rate
    K_p = universal_bdg_constant(p)
    beta_j, delta_j = float(spec.betas[stock]), float(spec.dividends[stock])
    C_2p = lemma1_bound(spec, K_b, 2 * p)
    prefactor = 6 ** (2 * p - 1) * K_p * T ** p * beta_j ** (2 * p) * math.sqrt(C_2p) * K_lip ** (2 * p)
    rate = 3 ** (2 * p - 1) * (
        (r - delta_j) ** (2 * p) * T ** (2 * p - 1)
        + K_p * T ** (p - 1) * K_eta ** (2 * p)
        + 2 ** (2 * p - 1) * K_p * T ** (p - 1) * beta_j ** (2 * p) * K_b ** (2 * p)
    ) * T
    return _grow(prefactor, rate)


def _index_factor(spec: ModelSpec, limit: LimitSpec, K_b: float, K_sigma: float, p: int) -> float:
    # sqrt(E sup |I^M - I|^{4p}) <= sqrt(C_T at order 2p) * (metric sum at order p)
    return math.sqrt(theorem1_constant(spec, limit, K_b, K_sigma, 2 * p))


def theorem2_bound(
    spec: ModelSpec,
    limit: LimitSpec,
    stock: int = 0,
    K_b: float | None = None,
    K_sigma: float | None = None,
    K_eta: float | None = None,
    K_lip: float | None = None,
    p: int = 1,
) -> float:
    """
    E[sup |S^{j,M} - S^j|^{2p}] bound.

    The stock distance is controlled by C~^j_T sqrt(E sup |I^M - I|^{4p}); the
    index term is bounded with the order-2p index constant, so the result is
    C~^j_T sqrt(C_T^{(2p)}) (P_w^{2p} + P_beta^{2p} + P_delta^{2p}).

    Values exceed the compact form C~^j_T (P_w^{2p} + P_beta^{2p} + P_delta^{2p})
    by exactly sqrt(C_T^{(2p)}), which that form folds into its constant.
    """
    p = _check_order(p)
    K_b = surface_cap(spec) if K_b is None else K_b
    K_sigma = _default_k_sigma(spec) if K_sigma is None else K_sigma
    K_eta = _default_k_eta(spec) if K_eta is None else K_eta
    K_lip = _default_k_lip(spec) if K_lip is None else K_lip
    constant = theorem2_constant(spec, limit, stock, K_b, K_eta, K_lip, p)
    if constant == 0:
        return 0.0
    return constant * _index_factor(spec, limit, K_b, K_sigma, p) * _metric_sum(spec, limit, p)


def reconstructed_index_bound(
    spec: ModelSpec,
    limit: LimitSpec,
    K_b: float | None = None,
    K_sigma: float | None = None,
    K_eta: float | None = None,
    K_lip: float | None = None,
    p: int = 1,
) -> float:
    """E[sup |I^M - sum_j w_j S^j|^{2p}] <= max_j (stock bound) * (sum_j w_j)^{2p}."""
    p = _check_order(p)
    per_stock = [
        theorem2_bound(spec, limit, j, K_b, K_sigma, K_eta, K_lip, p) for j in range(spec.count)
    ]
    return max(per_stock) * float(np.sum(spec.weights)) ** (2 * p)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    M: int
    p: int
    K_p: float
    C_p: float
    C_T: float
    C_tilde: tuple[float, ...]
    p_w: float
    p_beta: float
    p_delta: float
    theorem1: float
    theorem2: tuple[float, ...]
    reconstructed: float
    K_b: float
    K_sigma: float
    K_eta: float
    K_lip: float

    @property
    def C_tilde_T(self) -> float:
        return max(self.C_tilde)

    def as_row(self) -> dict:
        row = {name: getattr(self, name) for name in BOUND_REPORT_COLUMNS if name not in ("C_tilde_T", "theorem2")}
        row["C_tilde_T"] = self.C_tilde_T
        row["theorem2"] = max(self.theorem2)
        return row


def bound_report(
    spec: ModelSpec,
    limit: LimitSpec,
    *,
    p: int = 1,
    K_b: float | None = None,
    K_sigma: float | None = None,
    K_eta: float | None = None,
    K_lip: float | None = None,
) -> BoundReport:
    """Every constant and bound for (spec, limit) at order p."""
    p = _check_order(p)
    estimated = [name for name, value in (("K_sigma", K_sigma), ("K_eta", K_eta), ("K_lip", K_lip)) if value is None]
    if estimated:
        logger.info("bound report M=%d p=%d: %s are discrete grid estimates", spec.count, p, ", ".join(estimated))
    K_b = surface_cap(spec) if K_b is None else K_b
    K_sigma = _default_k_sigma(spec) if K_sigma is None else K_sigma
    K_eta = _default_k_eta(spec) if K_eta is None else K_eta
    K_lip = _default_k_lip(spec) if K_lip is None else K_lip
    metrics = proximity_metrics(spec, limit.beta, limit.delta)

    stock_bounds = tuple(
        theorem2_bound(spec, limit, j, K_b, K_sigma, K_eta, K_lip, p) for j in range(spec.count)
    )
    return BoundReport(
        M=spec.count,
        p=p,
        K_p=universal_bdg_constant(p),
        C_p=lemma1_bound(spec, K_b, p),
        C_T=theorem1_constant(spec, limit, K_b, K_sigma, p),
        C_tilde=tuple(
            theorem2_constant(spec, limit, j, K_b, K_eta, K_lip, p) for j in range(spec.count)
        ),
        p_w=metrics.p_w,
        p_beta=metrics.p_beta,
        p_delta=metrics.p_delta,
        theorem1=theorem1_bound(spec, limit, K_b, K_sigma, p),
        theorem2=stock_bounds,
        reconstructed=max(stock_bounds) * float(np.sum(spec.weights)) ** (2 * p),
        K_b=K_b,
        K_sigma=K_sigma,
        K_eta=K_eta,
        K_lip=K_lip,
    )


def bound_frame(reports: Sequence[BoundReport]) -> pd.DataFrame:
    return pd.DataFrame([report.as_row() for report in reports], columns=BOUND_REPORT_COLUMNS)


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyResult:
    table: pd.DataFrame
    slopes: pd.DataFrame


def _sup_moment(a: np.ndarray, b: np.ndarray, p: int) -> tuple[float, float]:
    """Mean and stderr over paths of sup_k |a - b|^{2p} (sup over Euler times)."""
    values = np.max(np.abs(a - b), axis=1) ** (2 * p)
    stderr = values.std(ddof=1) / np.sqrt(values.size) if values.size > 1 else 0.0
    return float(values.mean()), float(stderr)


def _study_limit(spec: ModelSpec, limit: LimitSpec | None) -> LimitSpec:
    if limit is None:
        return limit_from_model(spec, beta=optimal_constant(spec.weights, spec.betas))
    return dataclasses.replace(
        limit,
        i0=spec.initial_index,
        index_vol=spec.index_vol,
        rate=spec.rate,
        horizon=spec.horizon,
    )


def _slope(ms: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    usable = values > 0
    if np.count_nonzero(usable) < 2:
        return math.nan, math.nan
    slope, intercept = np.polyfit(np.log(ms[usable]), np.log(values[usable]), 1)
    return float(slope), float(intercept)


def convergence_study(
    family: Callable[[int], ModelSpec],
    m_grid: Sequence[int],
    *,
    p: int = 1,
    n_paths: int,
    n_steps: int,
    noise: NoisePlan,
    limit: LimitSpec | None = None,
    threads: int | None = 1,
) -> StudyResult:
    """
    Coupled simulation of the original model and its limit for each M.

    Per row: empirical E[sup |I^M - I|^{2p}], the same for stock 0 and for the
    reconstructed index, with MC standard errors and the theoretical bounds.
    Rows whose stderr exceeds half the index estimate are flagged. Each row
    draws from ``noise.derive(M)``.
    """
    p = _check_order(p)
    rows = []
    for m in m_grid:
        spec = family(int(m))
        row_limit = _study_limit(spec, limit)
        ensemble = simulate_original(
            spec,
            n_steps=n_steps,
            n_paths=n_paths,
            noise=noise.derive(int(m)),
            with_companion=True,
            limit=row_limit,
            record_stocks=[0],
            threads=threads,
        )
        index_d = _sup_moment(ensemble.paths("index"), ensemble.paths("companion_index"), p)
        stock_d = _sup_moment(ensemble.paths("stock:0"), ensemble.paths("companion_stock:0"), p)
        recon_d = _sup_moment(ensemble.paths("index"), ensemble.paths("companion_reconstructed"), p)
        report = bound_report(spec, row_limit, p=p)
        flagged = index_d[1] > STUDY_STDERR_RATIO_LIMIT * index_d[0]
        if flagged:
            logger.warning("convergence study M=%d: stderr %.3g above half the estimate %.3g", m, index_d[1], index_d[0])
        rows.append(
            {
                "M": spec.count,
                "p_w": report.p_w,
                "p_beta": report.p_beta,
                "p_delta": report.p_delta,
                "index_distance": index_d[0],
                "index_stderr": index_d[1],
                "stock_distance": stock_d[0],
                "stock_stderr": stock_d[1],
                "reconstructed_distance": recon_d[0],
                "reconstructed_stderr": recon_d[1],
                "theorem1": report.theorem1,
                "theorem2": report.theorem2[0],
                "reconstructed_bound": report.reconstructed,
                "flagged": bool(flagged),
            }
        )
        logger.info("convergence study M=%d: E sup|I^M - I|^%d = %.6g", spec.count, 2 * p, index_d[0])

    table = pd.DataFrame(rows, columns=STUDY_COLUMNS)
    ms = table["M"].to_numpy(dtype=float)
    slopes = []
    for quantity in ("index_distance", "stock_distance", "reconstructed_distance"):
        slope, intercept = _slope(ms, table[quantity].to_numpy(dtype=float))
        slopes.append({"quantity": quantity, "slope": slope, "intercept": intercept})
    return StudyResult(table=table, slopes=pd.DataFrame(slopes, columns=SLOPE_COLUMNS))
