"""
Command bodies: validated recipe data in, ``{filename: DataFrame}`` out.

Everything here is a pure function of the recipe and its seed; the
management commands only parse flags and write the frames.
"""

from __future__ import annotations

import logging

import numpy as np
import pandas as pd

from coupling.constants import (
    DEFAULT_SMILE_MONEYNESS,
    MARKET_RHO_COLUMNS,
    MODEL_SMILE_COLUMNS,
    PATH_SUMMARY_COLUMNS,
)
from coupling.services.calibration import (
    ParticleCloud,
    extract_eta_surface,
    select_beta,
    simulate_original_calibrated,
    simulate_particle_system,
    two_stage_calibration,
)
from coupling.services.model_core import (
    LimitSpec,
    ModelSpec,
    equal_weight_spec,
    limit_from_model,
    optimal_constant,
    stock_specs_from_model,
)
from coupling.services.pricing import compare_models, smile, smile_rows
from coupling.services.sde_engine import (
    NoisePlan,
    PathEnsemble,
    simulate_market_model,
    simulate_original,
    simulate_simplified,
)
from coupling.services.theory import bound_frame, bound_report, convergence_study
from coupling.services.vol_surface import dupire_surface
from coupling.utils import surface_frame

logger = logging.getLogger(__name__)


def _limit(spec: ModelSpec, data: dict | None) -> LimitSpec:
    data = data or {}
    beta = data.get("beta")
    if beta is None:
        beta = optimal_constant(spec.weights, spec.betas) if data.get("beta_rule") == "median" else 1.0
    return limit_from_model(spec, beta=beta, delta=data.get("delta"), delta_index=data.get("delta_index"))


def _stock_label(name: str) -> str:
    """``stock:0`` -> ``stock_1``."""
    kind, _, position = name.partition(":")
    return f"{kind}_{int(position) + 1}" if position else kind


# ---------------------------------------------------------------------------
# simulate / smile
# ---------------------------------------------------------------------------

def _simulate(data: dict, threads: int) -> PathEnsemble:
    spec = data["model"]["spec"]
    noise = NoisePlan(seed=data["seed"])
    family = data["family"]
    if family == "original":
        return simulate_original(
            spec,
            n_steps=data["n_steps"],
            n_paths=data["n_paths"],
            noise=noise,
            with_companion=data.get("with_companion", False),
            limit=_limit(spec, data.get("limit")),
            threads=threads,
        )
    if family == "simplified":
        return simulate_simplified(
            _limit(spec, data.get("limit")),
            stock_specs_from_model(spec),
            n_steps=data["n_steps"],
            n_paths=data["n_paths"],
            noise=noise,
            weights=spec.weights,
            threads=threads,
        )
    return simulate_market_model(
        spec.idio_vols,
        data["rho"],
        spec.rate,
        initial_stocks=spec.initial_stocks,
        horizon=spec.horizon,
        n_steps=data["n_steps"],
        n_paths=data["n_paths"],
        noise=noise,
        dividends=spec.dividends,
        weights=spec.weights,
        threads=threads,
    )


def path_summary(ensemble: PathEnsemble) -> pd.DataFrame:
    """Terminal statistics per recorded underlying; discounted at r - q so martingales average to S_0."""
    def stderr(values: np.ndarray) -> float:
        return float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0

    rows = []
    horizon = ensemble.horizon
    for name, paths in ensemble.series.items():
        terminal = paths[:, -1]
        discounted = np.exp(-(ensemble.rate - ensemble.dividend(name)) * horizon) * terminal
        rows.append(
            {
                "asset": name,
                "initial": ensemble.initial_level(name),
                "mean": terminal.mean(),
                "stderr": stderr(terminal),
                "discounted_mean": discounted.mean(),
                "discounted_stderr": stderr(discounted),
                "min": terminal.min(),
                "max": terminal.max(),
                "clamp_count": ensemble.clamp_count,
            }
        )
    return pd.DataFrame(rows, columns=PATH_SUMMARY_COLUMNS)


def path_dump(ensemble: PathEnsemble) -> pd.DataFrame:
    """Long-format dump: one row per (path, step) with the index and every stock."""
    n_paths, points = ensemble.n_paths, ensemble.time_grid.size
    frame = pd.DataFrame(
        {
            "path": np.repeat(np.arange(n_paths), points),
            "step": np.tile(np.arange(points), n_paths),
            "time": np.tile(ensemble.time_grid, n_paths),
            "index": ensemble.paths("index").ravel(),
        }
    )
    for name in ensemble.stock_names:
        frame[_stock_label(name)] = ensemble.paths(name).ravel()
    return frame


def run_simulate(data: dict, *, threads: int = 1) -> dict[str, pd.DataFrame]:
    ensemble = _simulate(data, threads)
    outputs = {"path_summary.csv": path_summary(ensemble)}
    if data.get("dump_paths"):
        outputs["paths.csv"] = path_dump(ensemble)
    return outputs


def run_smile(data: dict, *, threads: int = 1) -> dict[str, pd.DataFrame]:
    ensemble = _simulate(data, threads)
    moneyness = data.get("moneyness") or list(DEFAULT_SMILE_MONEYNESS)
    curve = smile(ensemble, data["underlying"], moneyness, T=data.get("maturity"))
    return {"smile.csv": curve.to_frame()}


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def _cloud_smiles(cloud: ParticleCloud, model: str, underlyings: list[str], moneyness) -> list[pd.DataFrame]:
    return [smile_rows(smile(cloud, name, moneyness), model) for name in underlyings]


def _calibrate_stock(data: dict, threads: int) -> dict[str, pd.DataFrame]:
    stock = data["stock"]
    noise = NoisePlan(seed=data["seed"])
    kernel = data["kernel"]["config"]
    limit = LimitSpec(
        beta=1.0,
        delta=stock["dividend"],
        delta_index=stock["delta_index"],
        i0=stock["i0"],
        index_vol=stock["index_surface"],
        rate=stock["rate"],
        horizon=stock["horizon"],
    )
    v_loc = stock["v_loc_surface"]
    beta = stock["beta"]
    if beta is None:
        beta = select_beta(v_loc, limit.index_vol, stock["s0"], stock["i0"], stock["beta_hist"])

    common = dict(
        dividend=stock["dividend"],
        s0=stock["s0"],
        n_particles=stock["n_particles"],
        n_steps=data["n_steps"],
        kernel=kernel,
        noise=noise,
        estimator=data["estimator"],
        threads=threads,
    )
    ensemble = None
    if stock["independent_paths"]:
        result = two_stage_calibration(
            limit,
            v_loc,
            beta,
            n_paths=stock["independent_paths"],
            h_interp=data.get("h_interp"),
            time_grid=data.get("eta_time_grid"),
            level_grid=data.get("eta_level_grid"),
            **common,
        )
        cloud, eta, ensemble = result
    else:
        cloud = simulate_particle_system(limit, v_loc, beta, **common)
        eta = extract_eta_surface(
            cloud,
            data.get("eta_time_grid"),
            data.get("eta_level_grid"),
            data.get("h_interp"),
            v_loc=v_loc,
            beta=beta,
            threads=threads,
        )

    outputs = {
        "eta_surface.csv": surface_frame(eta.surface),
        "calibration_report.csv": cloud.report(),
        "eta_coverage.csv": eta.coverage,
    }
    if data["smile_moneyness"]:
        frames = _cloud_smiles(cloud, "particles", ["stock:0"], data["smile_moneyness"])
        if ensemble is not None:
            frames.append(smile_rows(smile(ensemble, "stock:0", data["smile_moneyness"]), "independent"))
        outputs["smiles.csv"] = pd.concat(frames, ignore_index=True)[MODEL_SMILE_COLUMNS]
    logger.info("calibrate: beta=%.6g, N=%d", beta, stock["n_particles"])
    return outputs


def _calibrate_basket(data: dict, threads: int) -> dict[str, pd.DataFrame]:
    basket = data["basket"]
    spec = basket["model"]["spec"]
    v_locs = basket["v_loc_surfaces"]
    betas = basket["betas"]
    if betas is None:
        betas = [
            select_beta(v_locs[j], spec.index_vol, float(spec.initial_stocks[j]), spec.initial_index, basket["beta_hist"][j])
            for j in range(spec.count)
        ]
    cloud = simulate_original_calibrated(
        spec,
        v_locs,
        betas,
        n_particles=basket["n_particles"],
        n_steps=data["n_steps"],
        kernel=data["kernel"]["config"],
        noise=NoisePlan(seed=data["seed"]),
        estimator=data["estimator"],
        budget=basket["budget"],
        allow_over_budget=basket["allow_over_budget"],
        threads=threads,
    )

    outputs = {"calibration_report.csv": cloud.report()}
    for j in range(spec.count):
        eta = extract_eta_surface(
            cloud,
            data.get("eta_time_grid"),
            data.get("eta_level_grid"),
            data.get("h_interp"),
            v_loc=v_locs[j],
            stock=j,
            threads=threads,
        )
        outputs[f"eta_surface_{j + 1}.csv"] = surface_frame(eta.surface)
        outputs[f"eta_coverage_{j + 1}.csv"] = eta.coverage
    if data["smile_moneyness"]:
        names = ["index"] + [f"stock:{j}" for j in range(spec.count)]
        frames = _cloud_smiles(cloud, "calibrated-original", names, data["smile_moneyness"])
        outputs["smiles.csv"] = pd.concat(frames, ignore_index=True)[MODEL_SMILE_COLUMNS]
    return outputs


def run_calibrate(data: dict, *, threads: int = 1) -> dict[str, pd.DataFrame]:
    if "stock" in data:
        return _calibrate_stock(data, threads)
    return _calibrate_basket(data, threads)


# ---------------------------------------------------------------------------
# worst-of / dupire / theorems
# ---------------------------------------------------------------------------

def run_worst_of(data: dict, *, threads: int = 1) -> dict[str, pd.DataFrame]:
    spec = data["model"]["spec"]
    comparison = compare_models(
        spec,
        _limit(spec, data.get("limit")),
        moneyness=data["moneyness"],
        strikes=data["strikes"],
        n_steps=data["n_steps"],
        n_paths=data["n_paths"],
        noise=NoisePlan(seed=data["seed"]),
        rho=data.get("rho"),
        stock=data["stock"],
        threads=threads,
    )
    return {
        "worst_of.csv": comparison.worst_of,
        "model_smiles.csv": comparison.smiles,
        "model_differences.csv": comparison.differences,
        "market_rho.csv": pd.DataFrame({"rho": [comparison.rho]}, columns=MARKET_RHO_COLUMNS),
    }


def run_dupire(data: dict, *, threads: int = 1) -> dict[str, pd.DataFrame]:
    surface = dupire_surface(data["prices"], cap=data["cap"], moneyness=data["moneyness"])
    return {"local_vol.csv": surface_frame(surface)}


def run_theorems(data: dict, *, threads: int = 1) -> dict[str, pd.DataFrame]:
    family_data = data["family"]

    def family(count: int) -> ModelSpec:
        return equal_weight_spec(
            count,
            s0=family_data["s0"],
            beta=family_data["beta"],
            dividend=family_data["dividend"],
            rate=family_data["rate"],
            index_vol=family_data["index_surface"],
            idio_vol=family_data["idio_surface"],
            horizon=family_data["horizon"],
        )

    overrides = {name: data.get(name) for name in ("K_b", "K_sigma", "K_eta", "K_lip")}
    reports = []
    for count in data["m_grid"]:
        spec = family(count)
        limit = limit_from_model(spec, beta=optimal_constant(spec.weights, spec.betas))
        reports.extend(bound_report(spec, limit, p=p, **overrides) for p in data["orders"])
    outputs = {"bound_report.csv": bound_frame(reports)}

    if data["run_study"]:
        study = convergence_study(
            family,
            data["m_grid"],
            p=data["study_order"],
            n_paths=data["n_paths"],
            n_steps=data["n_steps"],
            noise=NoisePlan(seed=data["seed"]),
            threads=threads,
        )
        outputs["study.csv"] = study.table
        outputs["slopes.csv"] = study.slopes
    return outputs
