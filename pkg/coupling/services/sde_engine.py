"""
Euler simulation of the three model families:

* the original coupled model, optionally with companion limit paths driven
  by the same Brownian increments (the coupling used by the convergence theorems);
* the simplified model, an autonomous local-volatility index plus stocks
  whose systemic volatility reads the index;
* the constantly correlated "market" model of local-volatility stocks.

Every scheme is multiplicative Euler on the uniform grid t_k = k T / n.
Noise comes from a ``NoisePlan`` keyed by (block of paths, step), so results
do not depend on how paths are sharded across workers.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from coupling.constants import NOISE_BLOCK_SIZE, POSITIVITY_FLOOR
from coupling.exceptions import MissingPathsError, ModelSpecError, SimulationError
from coupling.services.model_core import LimitSpec, ModelSpec, StockSpec
from coupling.services.vol_surface import VolSurface

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoisePlan:
    """
    Deterministic map (path, step, channel) -> standard normal draw.

    Paths are grouped in blocks of ``block_size``; the draws of block b at
    step k come from a Philox stream keyed by (seed, b, k) and are laid out
    as a (channels, block length) array.
    """

    seed: int
    block_size: int = NOISE_BLOCK_SIZE

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2 ** 64:
            raise ModelSpecError("seed must be an unsigned 64-bit integer.")
        if self.block_size < 1:
            raise ModelSpecError("block_size must be positive.")

    def block(self, step: int, block_index: int, channels: int, size: int) -> np.ndarray:
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(block_index, step))
        generator = np.random.Generator(np.random.Philox(sequence))
        return generator.standard_normal((channels, size))

    def normals(self, step: int, n_paths: int, channels: int) -> np.ndarray:
        """All draws of one step for paths 0..n_paths-1, shape (channels, n_paths)."""
        blocks = [
            self.block(step, b, channels, min(self.block_size, n_paths - start))
            for b, start in enumerate(range(0, n_paths, self.block_size))
        ]
        return np.concatenate(blocks, axis=1)

    def derive(self, *key: int) -> "NoisePlan":
        """Independent plan for a sub-experiment (e.g. one study row)."""
        state = np.random.SeedSequence(entropy=self.seed, spawn_key=key).generate_state(1, np.uint64)
        return NoisePlan(seed=int(state[0]), block_size=self.block_size)


def resolve_threads(threads: int | None) -> int:
    if not threads:
        return os.cpu_count() or 1
    return max(1, int(threads))


# ---------------------------------------------------------------------------
# Path ensembles
# ---------------------------------------------------------------------------

@dataclass
class PathEnsemble:
    """
    N simulated paths on the grid ``time_grid`` (n + 1 points).

    ``series`` maps an underlying name to an (N, n + 1) array. Names:
    ``index``, ``stock:j``, ``reconstructed``, ``companion_index``,
    ``companion_stock:j``, ``companion_reconstructed``.
    """

    family: str
    time_grid: np.ndarray
    series: dict[str, np.ndarray]
    initial_levels: dict[str, float]
    dividends: dict[str, float]
    rate: float
    seed: int
    clamp_count: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return next(iter(self.series.values())).shape[0]

    @property
    def n_steps(self) -> int:
        return self.time_grid.size - 1

    @property
    def horizon(self) -> float:
        return float(self.time_grid[-1])

    @property
    def stock_names(self) -> list[str]:
        return sorted(
            (name for name in self.series if name.startswith("stock:")),
            key=lambda name: int(name.split(":")[1]),
        )

    def paths(self, underlying: str) -> np.ndarray:
        name = _canonical(underlying)
        try:
            return self.series[name]
        except KeyError:
            raise MissingPathsError(f"Ensemble has no paths for '{underlying}'.")

    def terminal(self, underlying: str, step: int | None = None) -> np.ndarray:
        return self.paths(underlying)[:, -1 if step is None else step]

    def initial_level(self, underlying: str) -> float:
        return self.initial_levels[_canonical(underlying)]

    def dividend(self, underlying: str) -> float:
        return self.dividends.get(_canonical(underlying), 0.0)


def _canonical(underlying: str) -> str:
    return "stock:0" if underlying == "stock" else underlying


# ---------------------------------------------------------------------------
# Euler helpers
# ---------------------------------------------------------------------------

def euler_growth(drift: float | np.ndarray, dt: float, vol, sqdt: float, gauss: np.ndarray) -> np.ndarray:
    """1 + drift dt + vol sqrt(dt) G: the shared part of every multiplicative Euler step."""
    return 1.0 + drift * dt + vol * sqdt * gauss


def clamp_positive(levels: np.ndarray, floor: np.ndarray | float) -> tuple[np.ndarray, int]:
    bad = ~(levels > 0)
    count = int(np.count_nonzero(bad))
    if count:
        levels = np.where(bad, floor, levels)
    return levels, count


def eval_surfaces(surfaces: Sequence[VolSurface], t: float, levels: np.ndarray) -> np.ndarray:
    """Evaluate per-stock surfaces on an (M, B) level array, grouping shared surfaces."""
    out = np.empty_like(levels)
    groups: dict[int, list[int]] = {}
    for j, surface in enumerate(surfaces):
        groups.setdefault(id(surface), []).append(j)
    for rows in groups.values():
        out[rows] = surfaces[rows[0]].at_level(t, levels[rows])
    return out


def uniform_grid(horizon: float, n_steps: int) -> np.ndarray:
    if n_steps < 1:
        raise ModelSpecError("n_steps must be at least 1.")
    return horizon * np.arange(n_steps + 1) / n_steps


def check_paths(n_paths: int) -> None:
    if n_paths < 1:
        raise ModelSpecError("n_paths must be at least 1.")


def _shard(
    noise: NoisePlan,
    n_paths: int,
    threads: int | None,
    run_block: Callable[[int, int], dict[str, np.ndarray]],
) -> tuple[dict[str, np.ndarray], int]:
    """Run ``run_block(block_index, size)`` over noise blocks and stitch the results by path."""
    starts = list(range(0, n_paths, noise.block_size))
    jobs = [(b, min(noise.block_size, n_paths - start)) for b, start in enumerate(starts)]
    workers = min(resolve_threads(threads), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: run_block(*job), jobs))
    else:
        results = [run_block(*job) for job in jobs]

    clamps = sum(int(r.pop("_clamps")) for r in results)
    merged = {name: np.concatenate([r[name] for r in results], axis=0) for name in results[0]}
    return merged, clamps


def _report_clamps(family: str, clamps: int) -> None:
    if clamps:
        logger.warning("%s: %d non-positive Euler level(s) clamped to the positivity floor", family, clamps)


# ---------------------------------------------------------------------------
# Original model
# ---------------------------------------------------------------------------

def simulate_original(
    spec: ModelSpec,
    *,
    n_steps: int,
    n_paths: int,
    noise: NoisePlan,
    with_companion: bool = False,
    limit: LimitSpec | None = None,
    record_stocks: Sequence[int] | None = None,
    threads: int | None = 1,
) -> PathEnsemble:
    """
    Euler scheme of the coupled model; the index is recomputed as sum_j w_j S_j each step.

    With ``with_companion`` the limit index (dI = (r - delta) I dt + beta I sigma(t, I) dB)
    and the stocks driven by it are evolved on the same draws. ``record_stocks``
    limits which stock paths are kept (all by default).
    """
    check_paths(n_paths)
    grid = uniform_grid(spec.horizon, n_steps)
    if with_companion and limit is None:
        raise ModelSpecError("Companion paths need a LimitSpec.")
    count = spec.count
    recorded = list(range(count)) if record_stocks is None else [int(j) for j in record_stocks]
    for j in recorded:
        if not 0 <= j < count:
            raise ModelSpecError(f"record_stocks entry {j} out of range for M={count}.")

    dt = spec.horizon / n_steps
    sqdt = np.sqrt(dt)
    w, betas = spec.weights, spec.betas[:, None]
    stock_drift = (spec.rate - spec.dividends)[:, None]
    s0 = spec.initial_stocks[:, None]
    floor = POSITIVITY_FLOOR * s0
    i0 = spec.initial_index
    channels = 1 + count

    def run_block(block_index: int, size: int) -> dict[str, np.ndarray]:
        stocks = np.repeat(s0, size, axis=1)
        index = w @ stocks
        out = {"index": np.empty((size, n_steps + 1))}
        out["index"][:, 0] = index
        for j in recorded:
            out[f"stock:{j}"] = np.empty((size, n_steps + 1))
            out[f"stock:{j}"][:, 0] = stocks[j]
        if with_companion:
            lim_index = np.full(size, limit.i0)
            lim_stocks = stocks.copy()
            out["companion_index"] = np.empty((size, n_steps + 1))
            out["companion_index"][:, 0] = lim_index
            out["companion_reconstructed"] = np.empty((size, n_steps + 1))
            out["companion_reconstructed"][:, 0] = w @ lim_stocks
            for j in recorded:
                out[f"companion_stock:{j}"] = np.empty((size, n_steps + 1))
                out[f"companion_stock:{j}"][:, 0] = lim_stocks[j]

        clamps = 0
        for k in range(n_steps):
            t = grid[k]
            z = noise.block(k, block_index, channels, size)
            common, own = z[0], z[1:]
            try:
                sigma = spec.index_vol.at_level(t, index)
                eta = eval_surfaces(spec.idio_vols, t, stocks)
            except Exception as exc:
                raise SimulationError(
                    f"Surface evaluation failed at step {k} (block {block_index}): {exc}"
                ) from exc
            stocks = stocks * (euler_growth(stock_drift, dt, betas * sigma, sqdt, common) + eta * sqdt * own)
            stocks, c = clamp_positive(stocks, floor)
            clamps += c
            index = w @ stocks
            out["index"][:, k + 1] = index
            for j in recorded:
                out[f"stock:{j}"][:, k + 1] = stocks[j]

            if with_companion:
                lim_sigma = spec.index_vol.at_level(t, lim_index)
                lim_eta = eval_surfaces(spec.idio_vols, t, lim_stocks)
                lim_index = lim_index * euler_growth(
                    spec.rate - limit.delta, dt, limit.beta * lim_sigma, sqdt, common
                )
                lim_index, c = clamp_positive(lim_index, POSITIVITY_FLOOR * limit.i0)
                clamps += c
                lim_stocks = lim_stocks * (
                    euler_growth(stock_drift, dt, betas * lim_sigma, sqdt, common) + lim_eta * sqdt * own
                )
                lim_stocks, c = clamp_positive(lim_stocks, floor)
                clamps += c
                out["companion_index"][:, k + 1] = lim_index
                out["companion_reconstructed"][:, k + 1] = w @ lim_stocks
                for j in recorded:
                    out[f"companion_stock:{j}"][:, k + 1] = lim_stocks[j]

        out["_clamps"] = clamps
        return out

    series, clamps = _shard(noise, n_paths, threads, run_block)
    _report_clamps("original", clamps)

    initial = {"index": i0, "reconstructed": i0}
    dividends = {}
    for j in range(count):
        initial[f"stock:{j}"] = float(spec.initial_stocks[j])
        initial[f"companion_stock:{j}"] = float(spec.initial_stocks[j])
        dividends[f"stock:{j}"] = float(spec.dividends[j])
        dividends[f"companion_stock:{j}"] = float(spec.dividends[j])
    if with_companion:
        initial["companion_index"] = limit.i0
        initial["companion_reconstructed"] = i0
        dividends["companion_index"] = limit.delta

    logger.info("original: simulated %d paths x %d steps, M=%d", n_paths, n_steps, count)
    return PathEnsemble(
        family="original",
        time_grid=grid,
        series=series,
        initial_levels=initial,
        dividends=dividends,
        rate=spec.rate,
        seed=noise.seed,
        clamp_count=clamps,
        metadata={"M": count, "channels": ["B"] + [f"W{j + 1}" for j in range(count)]},
    )


# ---------------------------------------------------------------------------
# Simplified model
# ---------------------------------------------------------------------------

def simulate_simplified(
    limit: LimitSpec,
    stock_specs: Sequence[StockSpec],
    *,
    n_steps: int,
    n_paths: int,
    noise: NoisePlan,
    weights: Sequence[float] | None = None,
    threads: int | None = 1,
) -> PathEnsemble:
    """
    Euler scheme of the simplified model: dI / I = (r - delta_I) dt + sigma(t, I) dB and,
    per stock, dS / S = (r - delta_j) dt + beta_j sigma(t, I) dB + eta_j(t, S) dW_j.

    With ``weights`` the reconstructed index sum_j w_j S_j is emitted as ``reconstructed``.
    """
    check_paths(n_paths)
    grid = uniform_grid(limit.horizon, n_steps)
    count = len(stock_specs)
    if weights is not None and len(weights) != count:
        raise ModelSpecError(f"weights has {len(weights)} entries for {count} stocks.")

    dt = limit.horizon / n_steps
    sqdt = np.sqrt(dt)
    s0 = np.array([s.s0 for s in stock_specs], dtype=float)[:, None]
    betas = np.array([s.beta for s in stock_specs], dtype=float)[:, None]
    drift = np.array([limit.rate - s.dividend for s in stock_specs], dtype=float)[:, None]
    surfaces = [s.idio_vol for s in stock_specs]
    w = None if weights is None else np.asarray(weights, dtype=float)
    floor = POSITIVITY_FLOOR * s0
    channels = 1 + count

    def run_block(block_index: int, size: int) -> dict[str, np.ndarray]:
        index = np.full(size, limit.i0)
        stocks = np.repeat(s0, size, axis=1)
        out = {"index": np.empty((size, n_steps + 1))}
        out["index"][:, 0] = index
        for j in range(count):
            out[f"stock:{j}"] = np.empty((size, n_steps + 1))
            out[f"stock:{j}"][:, 0] = stocks[j]
        if w is not None:
            out["reconstructed"] = np.empty((size, n_steps + 1))
            out["reconstructed"][:, 0] = w @ stocks

        clamps = 0
        for k in range(n_steps):
            t = grid[k]
            z = noise.block(k, block_index, channels, size)
            common, own = z[0], z[1:]
            try:
                sigma = limit.index_vol.at_level(t, index)
                eta = eval_surfaces(surfaces, t, stocks) if count else stocks
            except Exception as exc:
                raise SimulationError(
                    f"Surface evaluation failed at step {k} (block {block_index}): {exc}"
                ) from exc
            index = index * euler_growth(limit.rate - limit.delta_index, dt, sigma, sqdt, common)
            index, c = clamp_positive(index, POSITIVITY_FLOOR * limit.i0)
            clamps += c
            if count:
                stocks = stocks * (euler_growth(drift, dt, betas * sigma, sqdt, common) + eta * sqdt * own)
                stocks, c = clamp_positive(stocks, floor)
                clamps += c
            out["index"][:, k + 1] = index
            for j in range(count):
                out[f"stock:{j}"][:, k + 1] = stocks[j]
            if w is not None:
                out["reconstructed"][:, k + 1] = w @ stocks

        out["_clamps"] = clamps
        return out

    series, clamps = _shard(noise, n_paths, threads, run_block)
    _report_clamps("simplified", clamps)

    initial = {"index": limit.i0}
    dividends = {"index": limit.delta_index}
    for j, stock in enumerate(stock_specs):
        initial[f"stock:{j}"] = stock.s0
        dividends[f"stock:{j}"] = stock.dividend
    if w is not None:
        initial["reconstructed"] = float(w @ s0[:, 0])

    logger.info("simplified: simulated %d paths x %d steps, %d stock(s)", n_paths, n_steps, count)
    return PathEnsemble(
        family="simplified",
        time_grid=grid,
        series=series,
        initial_levels=initial,
        dividends=dividends,
        rate=limit.rate,
        seed=noise.seed,
        clamp_count=clamps,
        metadata={"channels": ["B"] + [f"W{j + 1}" for j in range(count)]},
    )


# ---------------------------------------------------------------------------
# Constantly correlated market model
# ---------------------------------------------------------------------------

def simulate_market_model(
    v_locs: Sequence[VolSurface],
    rho: float,
    rate: float,
    *,
    initial_stocks: Sequence[float],
    horizon: float,
    n_steps: int,
    n_paths: int,
    noise: NoisePlan,
    dividends: Sequence[float] | None = None,
    weights: Sequence[float] | None = None,
    threads: int | None = 1,
) -> PathEnsemble:
    """
    Local-volatility stocks with pairwise Brownian correlation rho.

    Correlated draws use the exact equicorrelation factorization
    W_j = sqrt(rho) Z_0 + sqrt(1 - rho) Z_j. ``v_locs`` are sqrt(v_loc) surfaces.
    With ``weights`` the index sum_j w_j S_j is emitted as ``index``.
    """
    if not 0.0 <= rho < 1.0:
        raise ModelSpecError(f"rho={rho} outside [0, 1): equicorrelation factorization invalid.")
    check_paths(n_paths)
    grid = uniform_grid(horizon, n_steps)
    count = len(v_locs)
    s0 = np.asarray(initial_stocks, dtype=float)
    if s0.size != count or np.any(s0 <= 0):
        raise ModelSpecError("initial_stocks must give one positive level per surface.")
    q = np.zeros(count) if dividends is None else np.asarray(dividends, dtype=float)
    w = None if weights is None else np.asarray(weights, dtype=float)
    if w is not None and w.size != count:
        raise ModelSpecError(f"weights has {w.size} entries for {count} stocks.")

    dt = horizon / n_steps
    sqdt = np.sqrt(dt)
    drift = (rate - q)[:, None]
    floor = POSITIVITY_FLOOR * s0[:, None]
    common_load, own_load = np.sqrt(rho), np.sqrt(1.0 - rho)
    channels = 1 + count

    def run_block(block_index: int, size: int) -> dict[str, np.ndarray]:
        stocks = np.repeat(s0[:, None], size, axis=1)
        out = {}
        for j in range(count):
            out[f"stock:{j}"] = np.empty((size, n_steps + 1))
            out[f"stock:{j}"][:, 0] = stocks[j]
        if w is not None:
            out["index"] = np.empty((size, n_steps + 1))
            out["index"][:, 0] = w @ stocks

        clamps = 0
        for k in range(n_steps):
            z = noise.block(k, block_index, channels, size)
            correlated = common_load * z[0] + own_load * z[1:]
            try:
                vol = eval_surfaces(v_locs, grid[k], stocks)
            except Exception as exc:
                raise SimulationError(
                    f"Surface evaluation failed at step {k} (block {block_index}): {exc}"
                ) from exc
            stocks = stocks * euler_growth(drift, dt, vol, sqdt, correlated)
            stocks, c = clamp_positive(stocks, floor)
            clamps += c
            for j in range(count):
                out[f"stock:{j}"][:, k + 1] = stocks[j]
            if w is not None:
                out["index"][:, k + 1] = w @ stocks

        out["_clamps"] = clamps
        return out

    series, clamps = _shard(noise, n_paths, threads, run_block)
    _report_clamps("market", clamps)

    initial = {f"stock:{j}": float(s0[j]) for j in range(count)}
    divs = {f"stock:{j}": float(q[j]) for j in range(count)}
    if w is not None:
        initial["index"] = float(w @ s0)

    logger.info("market: simulated %d paths x %d steps, rho=%.6g", n_paths, n_steps, rho)
    return PathEnsemble(
        family="market",
        time_grid=grid,
        series=series,
        initial_levels=initial,
        dividends=divs,
        rate=rate,
        seed=noise.seed,
        clamp_count=clamps,
        metadata={"rho": rho, "channels": ["Z0"] + [f"Z{j + 1}" for j in range(count)]},
    )
