"""
Particle calibration of the simplified and original models.

The stock dynamics are nonlinear in the sense of McKean:

    dS / S = (r - delta) dt + beta sigma(t, I) dB
             + sqrt(v_loc(t, S) - beta^2 E[sigma^2(t, I) | S]) dW

The conditional expectation is replaced by an estimate over N interacting
particles (Nadaraya-Watson or least squares), which makes the single-stock
marginals match v_loc. The extracted eta surface can then drive independent
simplified-model paths.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import pandas as pd
from django.conf import settings

from coupling.constants import CALIBRATION_REPORT_COLUMNS, COVERAGE_COLUMNS, ETA_MONEYNESS_GRID, POSITIVITY_FLOOR
from coupling.exceptions import (
    BudgetExceededError,
    InvalidSurfaceError,
    KernelDegenerateError,
    MissingPathsError,
    ModelSpecError,
)
from coupling.services.model_core import LimitSpec, ModelSpec, StockSpec, optimal_constant
from coupling.services.regression import (
    BasisSpec,
    KernelConfig,
    evaluate_parametric,
    fit_parametric,
    kernel_regression,
    log_moneyness_basis,
    smoothed_bandwidth,
)
from coupling.services.sde_engine import (
    NoisePlan,
    PathEnsemble,
    clamp_positive,
    euler_growth,
    eval_surfaces,
    simulate_simplified,
    uniform_grid,
)
from coupling.services.vol_surface import VolSurface

logger = logging.getLogger(__name__)

ESTIMATOR_KERNEL = "kernel"
ESTIMATOR_PARAMETRIC = "parametric"


# ---------------------------------------------------------------------------
# Particle cloud
# ---------------------------------------------------------------------------

@dataclass
class ParticleCloud:
    """
    Snapshots of N particles on the Euler grid.

    ``stocks`` is (n + 1, J, N), ``index`` (n + 1, N). ``variance`` and
    ``conditional`` are (n, J, N): the clamped idiosyncratic variance and the
    estimate of E[sigma^2 | S_j] used at each step.
    """

    family: str
    time_grid: np.ndarray
    stocks: np.ndarray
    index: np.ndarray
    index_vol: VolSurface
    betas: np.ndarray
    initial_stocks: np.ndarray
    dividends: np.ndarray
    delta_index: float
    rate: float
    bandwidth: float
    variance: np.ndarray | None = None
    conditional: np.ndarray | None = None
    clamp_counts: np.ndarray | None = None
    clamp_mass: np.ndarray | None = None
    interactions: np.ndarray | None = None
    fallbacks: np.ndarray | None = None
    weights: np.ndarray | None = None
    positivity_clamps: int = 0
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_ensemble(
        cls,
        ensemble: PathEnsemble,
        *,
        index_vol: VolSurface,
        betas: Sequence[float],
        bandwidth: float,
    ) -> "ParticleCloud":
        """View independent simplified-model paths as a cloud (no estimation history)."""
        names = ensemble.stock_names
        if not names:
            raise MissingPathsError("Ensemble has no stock paths.")
        stocks = np.stack([ensemble.paths(name).T for name in names], axis=1)
        return cls(
            family=f"{ensemble.family}-paths",
            time_grid=ensemble.time_grid,
            stocks=stocks,
            index=ensemble.paths("index").T,
            index_vol=index_vol,
            betas=np.asarray(betas, dtype=float),
            initial_stocks=np.array([ensemble.initial_level(name) for name in names]),
            dividends=np.array([ensemble.dividend(name) for name in names]),
            delta_index=ensemble.dividend("index"),
            rate=ensemble.rate,
            bandwidth=bandwidth,
            seed=ensemble.seed,
        )

    @property
    def n_particles(self) -> int:
        return int(self.index.shape[1])

    @property
    def n_paths(self) -> int:
        return self.n_particles

    @property
    def n_steps(self) -> int:
        return int(self.time_grid.size - 1)

    @property
    def stock_count(self) -> int:
        return int(self.stocks.shape[1])

    def _stock(self, underlying: str) -> int:
        if underlying == "stock":
            return 0
        if underlying.startswith("stock:"):
            j = int(underlying.split(":")[1])
            if 0 <= j < self.stock_count:
                return j
        raise MissingPathsError(f"Particle cloud has no paths for '{underlying}'.")

    def terminal(self, underlying: str, step: int | None = None) -> np.ndarray:
        k = -1 if step is None else step
        if underlying == "index":
            return self.index[k]
        if underlying == "reconstructed" and self.weights is not None:
            return self.weights @ self.stocks[k]
        return self.stocks[k, self._stock(underlying)]

    def initial_level(self, underlying: str) -> float:
        if underlying == "index":
            return float(self.index[0, 0])
        if underlying == "reconstructed" and self.weights is not None:
            return float(self.weights @ self.initial_stocks)
        return float(self.initial_stocks[self._stock(underlying)])

    def dividend(self, underlying: str) -> float:
        if underlying in ("index", "reconstructed"):
            return self.delta_index
        return float(self.dividends[self._stock(underlying)])

    def report(self) -> pd.DataFrame:
        """Per-step clamp, eta range and interaction diagnostics."""
        if self.variance is None:
            raise MissingPathsError("Cloud carries no estimation history.")
        eta = np.sqrt(self.variance)
        return pd.DataFrame(
            {
                "step": np.arange(self.n_steps),
                "time": self.time_grid[:-1],
                "clamp_count": self.clamp_counts.sum(axis=1),
                "clamp_mass": self.clamp_mass.sum(axis=1),
                "eta_min": eta.min(axis=(1, 2)),
                "eta_max": eta.max(axis=(1, 2)),
                "interactions": self.interactions,
                "fallbacks": self.fallbacks,
            },
            columns=CALIBRATION_REPORT_COLUMNS,
        )


# ---------------------------------------------------------------------------
# Beta selection
# ---------------------------------------------------------------------------

def _moneyness_nodes(surface: VolSurface, reference: float) -> np.ndarray:
    return surface.level_grid if surface.moneyness else surface.level_grid / reference


def select_beta(
    v_loc: VolSurface,
    index_vol: VolSurface,
    s0: float,
    i0: float,
    beta_hist: float,
) -> float:
    """
    min(beta_hist, inf_{t, m} sqrt(v_loc)(t, s0 m) / sigma(t, i0 m)).

    The infimum is scanned over the union of both surfaces' time nodes and
    moneyness nodes. Keeps v_loc - beta^2 sigma^2 non-negative wherever both
    surfaces are evaluated at the same moneyness.
    """
    times = np.union1d(v_loc.time_grid, index_vol.time_grid)
    moneyness = np.union1d(_moneyness_nodes(v_loc, s0), _moneyness_nodes(index_vol, i0))
    t, m = np.meshgrid(times, moneyness, indexing="ij")

    sigma = index_vol.at_level(t, m * i0)
    if np.any(sigma <= 0):
        k = np.argwhere(sigma <= 0)[0]
        raise InvalidSurfaceError(
            f"Index volatility vanishes at t={t[tuple(k)]:.6g}, moneyness={m[tuple(k)]:.6g}."
        )
    ratio = v_loc.at_level(t, m * s0) / sigma
    beta = min(float(beta_hist), float(ratio.min()))
    logger.info("select_beta: beta_hist=%.6g, surface infimum=%.6g -> %.6g", beta_hist, ratio.min(), beta)
    return beta


# ---------------------------------------------------------------------------
# Interacting particles
# ---------------------------------------------------------------------------

class _Estimate(NamedTuple):
    values: np.ndarray
    interactions: int
    fallbacks: int


def _conditional_variance(
    stock_levels: np.ndarray,
    index_variance: np.ndarray,
    *,
    estimator: str,
    kernel: KernelConfig,
    bandwidth: float,
    basis: BasisSpec | None,
    threads: int,
) -> _Estimate:
    """Estimate E[sigma^2(t, I) | S = S_i] at every particle."""
    if estimator == ESTIMATOR_PARAMETRIC:
        if np.ptp(stock_levels) == 0:
            # a cloud at a single level (t = 0) identifies only the constant
            return _Estimate(np.full_like(index_variance, index_variance.mean()), stock_levels.size, 0)
        coefficients = fit_parametric(stock_levels, index_variance, basis)
        values = evaluate_parametric(coefficients, basis, stock_levels)
        values = np.clip(values, index_variance.min(), index_variance.max())
        return _Estimate(values, stock_levels.size * basis.size, 0)

    order = np.argsort(stock_levels, kind="stable")
    xs = stock_levels[order]
    threshold = kernel.resolved_threshold(xs.size)
    estimate = kernel_regression(xs, index_variance[order], xs, bandwidth, threshold=threshold, threads=threads)
    values = np.empty_like(estimate.values)
    values[order] = estimate.values
    return _Estimate(values, estimate.interactions, estimate.fallbacks)


def _run_particles(
    *,
    family: str,
    grid: np.ndarray,
    index_vol: VolSurface,
    v_locs: Sequence[VolSurface],
    betas: np.ndarray,
    dividends: np.ndarray,
    initial_stocks: np.ndarray,
    rate: float,
    n_particles: int,
    kernel: KernelConfig,
    noise: NoisePlan,
    estimator: str,
    bases: Sequence[BasisSpec | None],
    threads: int,
    weights: np.ndarray | None = None,
    limit: LimitSpec | None = None,
) -> ParticleCloud:
    """
    Shared Euler loop. With ``weights`` the index is the exact weighted sum of
    the stocks; otherwise it follows the autonomous limit dynamics of ``limit``.
    """
    if n_particles < 2:
        raise ModelSpecError("The particle system needs at least 2 particles.")
    if estimator not in (ESTIMATOR_KERNEL, ESTIMATOR_PARAMETRIC):
        raise ModelSpecError(f"Unknown estimator '{estimator}'.")

    count = betas.size
    n_steps = grid.size - 1
    dt = grid[1] - grid[0]
    sqdt = np.sqrt(dt)
    bandwidth = kernel.bandwidth(n_particles)
    channels = 1 + count

    stocks = np.repeat(initial_stocks[:, None], n_particles, axis=1)
    floor = POSITIVITY_FLOOR * initial_stocks[:, None]
    if weights is not None:
        index = weights @ stocks
        i0 = float(weights @ initial_stocks)
    else:
        i0 = limit.i0
        index = np.full(n_particles, i0)

    stock_history = np.empty((n_steps + 1, count, n_particles))
    index_history = np.empty((n_steps + 1, n_particles))
    variance = np.empty((n_steps, count, n_particles))
    conditional = np.empty((n_steps, count, n_particles))
    clamp_counts = np.zeros((n_steps, count), dtype=np.int64)
    clamp_mass = np.zeros((n_steps, count))
    interactions = np.zeros(n_steps, dtype=np.int64)
    fallbacks = np.zeros(n_steps, dtype=np.int64)
    stock_history[0], index_history[0] = stocks, index
    positivity = 0

    for k in range(n_steps):
        t = grid[k]
        sigma = index_vol.at_level(t, index)
        index_variance = sigma * sigma
        local = eval_surfaces(v_locs, t, stocks)

        for j in range(count):
            estimate = _conditional_variance(
                stocks[j],
                index_variance,
                estimator=estimator,
                kernel=kernel,
                bandwidth=bandwidth,
                basis=bases[j],
                threads=threads,
            )
            raw = local[j] * local[j] - betas[j] ** 2 * estimate.values
            negative = raw < 0
            clamp_counts[k, j] = np.count_nonzero(negative)
            clamp_mass[k, j] = -raw[negative].sum()
            variance[k, j] = np.where(negative, 0.0, raw)
            conditional[k, j] = estimate.values
            interactions[k] += estimate.interactions
            fallbacks[k] += estimate.fallbacks

        z = noise.normals(k, n_particles, channels)
        common, own = z[0], z[1:]
        stocks = stocks * (
            euler_growth((rate - dividends)[:, None], dt, betas[:, None] * sigma, sqdt, common)
            + np.sqrt(variance[k]) * sqdt * own
        )
        stocks, c = clamp_positive(stocks, floor)
        positivity += c
        if weights is not None:
            index = weights @ stocks
        else:
            index = index * euler_growth(rate - limit.delta_index, dt, sigma, sqdt, common)
            index, c = clamp_positive(index, POSITIVITY_FLOOR * i0)
            positivity += c
        stock_history[k + 1], index_history[k + 1] = stocks, index

        if clamp_counts[k].any():
            logger.debug("%s step %d: %d negative-variance clamp(s)", family, k, clamp_counts[k].sum())

    total = int(clamp_counts.sum())
    if total:
        logger.warning(
            "%s: %d negative idiosyncratic variance(s) clamped to 0 (mass %.6g)",
            family, total, clamp_mass.sum(),
        )
    if fallbacks.any():
        logger.warning("%s: %d kernel estimate(s) fell back to the nearest particle", family, fallbacks.sum())
    if positivity:
        logger.warning("%s: %d non-positive Euler level(s) clamped to the positivity floor", family, positivity)

    return ParticleCloud(
        family=family,
        time_grid=grid,
        stocks=stock_history,
        index=index_history,
        index_vol=index_vol,
        betas=betas,
        initial_stocks=initial_stocks,
        dividends=dividends,
        delta_index=limit.delta_index if limit is not None else optimal_constant(weights, dividends),
        rate=rate,
        bandwidth=bandwidth,
        variance=variance,
        conditional=conditional,
        clamp_counts=clamp_counts,
        clamp_mass=clamp_mass,
        interactions=interactions,
        fallbacks=fallbacks,
        weights=weights,
        positivity_clamps=positivity,
        seed=noise.seed,
        metadata={"estimator": estimator, "mode": kernel.mode, "exponent": kernel.exponent},
    )


def simulate_particle_system(
    limit: LimitSpec,
    v_loc: VolSurface,
    beta: float,
    *,
    dividend: float,
    s0: float,
    n_particles: int,
    n_steps: int,
    kernel: KernelConfig,
    noise: NoisePlan,
    estimator: str = ESTIMATOR_KERNEL,
    basis: BasisSpec | None = None,
    threads: int = 1,
) -> ParticleCloud:
    """
    N interacting (stock, index) particles of the single-stock nonlinear SDE.

    Each particle's index follows the autonomous limit dynamics with the same
    Gaussian G as its stock; the stock's own noise is an independent G~.
    """
    if not s0 > 0:
        raise ModelSpecError("s0 must be positive.")
    if estimator == ESTIMATOR_PARAMETRIC and basis is None:
        basis = log_moneyness_basis(s0)
    grid = uniform_grid(limit.horizon, n_steps)
    logger.info(
        "particle system: N=%d, n=%d, beta=%.6g, estimator=%s, mode=%s",
        n_particles, n_steps, beta, estimator, kernel.mode,
    )
    return _run_particles(
        family="particles",
        grid=grid,
        index_vol=limit.index_vol,
        v_locs=[v_loc],
        betas=np.array([float(beta)]),
        dividends=np.array([float(dividend)]),
        initial_stocks=np.array([float(s0)]),
        rate=limit.rate,
        n_particles=n_particles,
        kernel=kernel,
        noise=noise,
        estimator=estimator,
        bases=[basis],
        threads=threads,
        limit=limit,
    )


def simulate_original_calibrated(
    spec: ModelSpec,
    v_locs: Sequence[VolSurface],
    betas: Sequence[float],
    *,
    n_particles: int,
    n_steps: int,
    kernel: KernelConfig,
    noise: NoisePlan,
    estimator: str = ESTIMATOR_KERNEL,
    budget: float | None = None,
    allow_over_budget: bool = False,
    threads: int = 1,
) -> ParticleCloud:
    """
    N interacting (M + 1)-dimensional particles of the calibrated original model.

    The index of every particle is the exact weighted sum of its stocks. For
    stock j, E[sigma^2(t, I) | S_j] is estimated across the cloud and
    eta_j^2 = v_loc_j^2 - beta_j^2 * estimate. ``spec.idio_vols`` is ignored.
    """
    v_locs = list(v_locs)
    betas = np.asarray(betas, dtype=float)
    if len(v_locs) != spec.count or betas.size != spec.count:
        raise ModelSpecError(
            f"Need one v_loc surface and one beta per stock (M={spec.count}), "
            f"got {len(v_locs)} and {betas.size}."
        )
    if budget is None:
        budget = settings.COUPLING_INTERACTION_BUDGET
    work = spec.count * n_particles * n_steps
    if work > budget and not allow_over_budget:
        raise BudgetExceededError(
            f"M*N*n = {work:.3g} exceeds the interaction budget {budget:.3g}; "
            "reduce the cloud or allow the overrun explicitly."
        )
    if work > budget:
        logger.warning("calibrated original: M*N*n = %.3g above budget %.3g (override)", work, budget)

    bases = [log_moneyness_basis(float(s)) for s in spec.initial_stocks] if estimator == ESTIMATOR_PARAMETRIC else [None] * spec.count
    grid = uniform_grid(spec.horizon, n_steps)
    logger.info("calibrated original: M=%d, N=%d, n=%d", spec.count, n_particles, n_steps)
    return _run_particles(
        family="calibrated-original",
        grid=grid,
        index_vol=spec.index_vol,
        v_locs=v_locs,
        betas=betas,
        dividends=np.asarray(spec.dividends, dtype=float),
        initial_stocks=np.asarray(spec.initial_stocks, dtype=float),
        rate=spec.rate,
        n_particles=n_particles,
        kernel=kernel,
        noise=noise,
        estimator=estimator,
        bases=bases,
        threads=threads,
        weights=np.asarray(spec.weights, dtype=float),
    )


# ---------------------------------------------------------------------------
# Surface extraction
# ---------------------------------------------------------------------------

class SurfaceExtraction(NamedTuple):
    surface: VolSurface
    coverage: pd.DataFrame


def _grid_conditional(
    cloud: ParticleCloud,
    stock: int,
    time_grid: np.ndarray,
    levels: np.ndarray,
    h: float,
    threads: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Kernel estimates of E[sigma^2 | S_stock = level] on (time, level) nodes."""
    estimates = np.empty((time_grid.size, levels.size))
    covered = np.empty((time_grid.size, levels.size), dtype=bool)
    for row, t in enumerate(time_grid):
        k = int(np.argmin(np.abs(cloud.time_grid - t)))
        sigma = cloud.index_vol.at_level(cloud.time_grid[k], cloud.index[k])
        order = np.argsort(cloud.stocks[k, stock], kind="stable")
        result = kernel_regression(
            cloud.stocks[k, stock][order], (sigma * sigma)[order], levels, h, threads=threads
        )
        estimates[row], covered[row] = result.values, result.covered
    return _flat_fill(estimates, covered), covered


def _flat_fill(values: np.ndarray, covered: np.ndarray) -> np.ndarray:
    """Replace uncovered nodes by the nearest covered node (same time row first)."""
    if not covered.any():
        raise KernelDegenerateError("No grid node is covered by the particle cloud.")
    filled = values.copy()
    rows_covered = covered.any(axis=1)
    columns = np.arange(values.shape[1])
    for row in np.flatnonzero(rows_covered):
        inside = np.flatnonzero(covered[row])
        nearest = inside[np.abs(columns[:, None] - inside[None, :]).argmin(axis=1)]
        filled[row] = values[row, nearest]
    populated = np.flatnonzero(rows_covered)
    for row in np.flatnonzero(~rows_covered):
        filled[row] = filled[populated[np.abs(populated - row).argmin()]]
    return filled


def _default_grids(cloud: ParticleCloud, time_grid, level_grid) -> tuple[np.ndarray, np.ndarray]:
    times = cloud.time_grid if time_grid is None else np.asarray(time_grid, dtype=float)
    if level_grid is None:
        low, high, points = ETA_MONEYNESS_GRID
        moneyness = np.linspace(low, high, points)
    else:
        moneyness = np.asarray(level_grid, dtype=float)
    return times, moneyness


def _coverage_frame(times: np.ndarray, moneyness: np.ndarray, covered: np.ndarray) -> pd.DataFrame:
    t, m = np.meshgrid(times, moneyness, indexing="ij")
    return pd.DataFrame(dict(zip(COVERAGE_COLUMNS, (t.ravel(), m.ravel(), covered.ravel()))))


def extract_eta_surface(
    cloud: ParticleCloud,
    time_grid: Sequence[float] | None = None,
    level_grid: Sequence[float] | None = None,
    h_interp: float | None = None,
    *,
    v_loc: VolSurface,
    beta: float | None = None,
    stock: int = 0,
    threads: int = 1,
) -> SurfaceExtraction:
    """
    eta(t, x) = sqrt(max(v_loc(t, x)^2 - beta^2 E[sigma^2 | S = x], 0)) on a moneyness grid.

    h_interp defaults to N ** -1/10. Times map to the nearest Euler snapshot.
    Nodes the cloud does not reach reuse the conditional estimate of the
    nearest covered node.
    """
    times, moneyness = _default_grids(cloud, time_grid, level_grid)
    s0 = float(cloud.initial_stocks[stock])
    h = smoothed_bandwidth(cloud.n_particles) if h_interp is None else float(h_interp)
    beta = float(cloud.betas[stock]) if beta is None else float(beta)

    conditional, covered = _grid_conditional(cloud, stock, times, moneyness * s0, h, threads)
    t, m = np.meshgrid(times, moneyness, indexing="ij")
    local = v_loc.at_level(t, m * s0)
    eta = np.sqrt(np.maximum(local * local - beta ** 2 * conditional, 0.0))

    gaps = int(np.count_nonzero(~covered))
    if gaps:
        logger.warning("extract_eta_surface: %d of %d node(s) flat-filled", gaps, covered.size)
    surface = VolSurface(
        time_grid=times,
        level_grid=moneyness,
        values=eta,
        moneyness=True,
        reference_level=s0,
        cap=v_loc.cap,
        name=f"eta[{stock}]",
    )
    return SurfaceExtraction(surface, _coverage_frame(times, moneyness, covered))


def reconstruct_market_vloc(
    eta: VolSurface,
    cloud: ParticleCloud,
    time_grid: Sequence[float] | None = None,
    level_grid: Sequence[float] | None = None,
    h_interp: float | None = None,
    *,
    beta: float | None = None,
    stock: int = 0,
    threads: int = 1,
) -> SurfaceExtraction:
    """
    sqrt(v_loc)(t, x) = sqrt(eta^2(t, x) + beta^2 E[sigma^2(t, I) | S = x]).

    A market model using this surface shares the single-stock marginals of the
    model that produced ``cloud``. beta defaults to the cloud's beta.
    """
    times, moneyness = _default_grids(cloud, time_grid, level_grid)
    s0 = float(cloud.initial_stocks[stock])
    h = smoothed_bandwidth(cloud.n_particles) if h_interp is None else float(h_interp)
    beta = float(cloud.betas[stock]) if beta is None else float(beta)

    conditional, covered = _grid_conditional(cloud, stock, times, moneyness * s0, h, threads)
    t, m = np.meshgrid(times, moneyness, indexing="ij")
    idio = eta.at_level(t, m * s0)
    vol = np.sqrt(idio * idio + beta ** 2 * conditional)
    surface = VolSurface(
        time_grid=times,
        level_grid=moneyness,
        values=vol,
        moneyness=True,
        reference_level=s0,
        cap=max(eta.cap, float(vol.max())),
        name=f"v_loc[{stock}]",
    )
    return SurfaceExtraction(surface, _coverage_frame(times, moneyness, covered))


# ---------------------------------------------------------------------------
# Two-stage procedure
# ---------------------------------------------------------------------------

class TwoStageResult(NamedTuple):
    cloud: ParticleCloud
    eta: SurfaceExtraction
    ensemble: PathEnsemble


def two_stage_calibration(
    limit: LimitSpec,
    v_loc: VolSurface,
    beta: float,
    *,
    dividend: float,
    s0: float,
    n_particles: int,
    n_paths: int,
    n_steps: int,
    kernel: KernelConfig,
    noise: NoisePlan,
    estimator: str = ESTIMATOR_KERNEL,
    h_interp: float | None = None,
    time_grid: Sequence[float] | None = None,
    level_grid: Sequence[float] | None = None,
    threads: int = 1,
) -> TwoStageResult:
    """
    N1 interacting particles -> eta surface -> N2 independent simplified-model paths.

    The second stage draws from ``noise.derive(1)`` so it never reuses the
    particle draws.
    """
    cloud = simulate_particle_system(
        limit,
        v_loc,
        beta,
        dividend=dividend,
        s0=s0,
        n_particles=n_particles,
        n_steps=n_steps,
        kernel=kernel,
        noise=noise,
        estimator=estimator,
        threads=threads,
    )
    eta = extract_eta_surface(
        cloud, time_grid, level_grid, h_interp, v_loc=v_loc, beta=beta, threads=threads
    )
    ensemble = simulate_simplified(
        limit,
        [StockSpec(s0=s0, beta=beta, dividend=dividend, idio_vol=eta.surface)],
        n_steps=n_steps,
        n_paths=n_paths,
        noise=noise.derive(1),
        threads=threads,
    )
    logger.info("two-stage calibration: N1=%d particles, N2=%d independent paths", n_particles, n_paths)
    return TwoStageResult(cloud, eta, ensemble)
