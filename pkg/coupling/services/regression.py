"""
Conditional expectation estimators used by the particle calibration:
Nadaraya-Watson with a Gaussian kernel (naive or sorted-window accelerated)
and least-squares regression on a finite basis.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from coupling.constants import (
    DEFAULT_BANDWIDTH_EXPONENT,
    DEFAULT_BASIS_DEGREE,
    DESIGN_CONDITION_LIMIT,
    KERNEL_CHUNK_ELEMENTS,
    NW_DENOMINATOR_FLOOR,
    SMOOTHED_BANDWIDTH_EXPONENT,
)
from coupling.exceptions import KernelDegenerateError, ModelSpecError, RankDeficiencyError

logger = logging.getLogger(__name__)

KERNEL_NORMALIZATION = 1.0 / math.sqrt(2.0 * math.pi)

MODE_NAIVE = "naive"
MODE_ACCELERATED = "accelerated"


def gaussian_kernel(u):
    """Standard normal density."""
    return KERNEL_NORMALIZATION * np.exp(-0.5 * np.square(u))


# ---------------------------------------------------------------------------
# Kernel configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelConfig:
    """
    Bandwidth rule h_N = scale * N ** -exponent and the acceleration threshold.

    ``exponent=None`` means 1/5 for naive runs and 1/10 for accelerated ones.
    ``threshold=None`` means 1/N, resolved against the cloud size.
    """

    exponent: float | None = None
    threshold: float | None = None
    mode: str = MODE_NAIVE
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.exponent is None:
            default = SMOOTHED_BANDWIDTH_EXPONENT if self.mode == MODE_ACCELERATED else DEFAULT_BANDWIDTH_EXPONENT
            object.__setattr__(self, "exponent", default)
        if not 0.0 < self.exponent < 1.0:
            raise ModelSpecError(f"Bandwidth exponent {self.exponent} outside (0, 1).")
        if self.threshold is not None and self.threshold < 0:
            raise ModelSpecError("Kernel threshold must be non-negative.")
        if self.mode not in (MODE_NAIVE, MODE_ACCELERATED):
            raise ModelSpecError(f"Unknown kernel mode '{self.mode}'.")
        if not self.scale > 0:
            raise ModelSpecError("Bandwidth scale must be positive.")

    def bandwidth(self, n_particles: int) -> float:
        return self.scale * float(n_particles) ** -self.exponent

    def resolved_threshold(self, n_particles: int) -> float:
        if self.mode == MODE_NAIVE:
            return 0.0
        return 1.0 / n_particles if self.threshold is None else float(self.threshold)


def smoothed_bandwidth(n_particles: int) -> float:
    """h = N ** -1/10, the wider bandwidth used to read surfaces off a cloud."""
    return float(n_particles) ** -SMOOTHED_BANDWIDTH_EXPONENT


def window_radius(h: float, threshold: float) -> float:
    """Distance beyond which a particle's kernel contribution drops below ``threshold``."""
    if threshold <= 0:
        return math.inf
    ratio = threshold / KERNEL_NORMALIZATION
    if ratio >= 1.0:
        return 0.0
    return h * math.sqrt(-2.0 * math.log(ratio))


# ---------------------------------------------------------------------------
# Nadaraya-Watson
# ---------------------------------------------------------------------------

def nadaraya_watson(xs: Sequence[float], ys: Sequence[float], x: float, h: float) -> float:
    """Single-query estimator sum y_i K((x - x_i) / h) / sum K((x - x_i) / h)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size == 0 or xs.shape != ys.shape:
        raise ModelSpecError("xs and ys must be non-empty and of equal length.")
    if not h > 0:
        raise ModelSpecError("Bandwidth must be positive.")

    weights = gaussian_kernel((x - xs) / h)
    denominator = weights.sum()
    if not denominator > 0:
        raise KernelDegenerateError(f"All kernel weights underflow at x={x:.6g} (h={h:.6g}).")
    estimate = float((weights * ys).sum() / denominator)
    return min(max(estimate, float(ys.min())), float(ys.max()))


class KernelEstimate(NamedTuple):
    values: np.ndarray
    interactions: int
    fallbacks: int
    covered: np.ndarray


def kernel_regression(
    sorted_xs: np.ndarray,
    ys: np.ndarray,
    queries: np.ndarray,
    h: float,
    *,
    threshold: float = 0.0,
    threads: int = 1,
) -> KernelEstimate:
    """
    Nadaraya-Watson estimates at ``queries`` over a cloud sorted by x.

    Each query only sums particles within ``window_radius(h, threshold)``;
    threshold 0 gives the full sum. Work is split in fixed row chunks, so the
    output does not depend on ``threads``. Queries whose denominator falls
    below the floor take the value of the nearest particle and are reported
    as uncovered.
    """
    n = sorted_xs.size
    radius = window_radius(h, threshold)
    lo = np.searchsorted(sorted_xs, queries - radius, side="left")
    hi = np.searchsorted(sorted_xs, queries + radius, side="right")
    if not math.isinf(radius):
        # the query's own position always contributes
        nearest = _nearest(sorted_xs, queries)
        lo = np.minimum(lo, nearest)
        hi = np.maximum(hi, nearest + 1)

    rows = max(1, KERNEL_CHUNK_ELEMENTS // max(n, 1))
    chunks = [(start, min(start + rows, queries.size)) for start in range(0, queries.size, rows)]
    values = np.empty(queries.size)
    denominators = np.empty(queries.size)

    def run(chunk: tuple[int, int]) -> None:
        a, b = chunk
        left, right = int(lo[a:b].min()), int(hi[a:b].max())
        u = (queries[a:b, None] - sorted_xs[None, left:right]) / h
        weights = np.exp(-0.5 * u * u)
        columns = np.arange(left, right)
        inside = (columns[None, :] >= lo[a:b, None]) & (columns[None, :] < hi[a:b, None])
        weights = np.where(inside, weights, 0.0)
        denominator = weights.sum(axis=1)
        numerator = (weights * ys[None, left:right]).sum(axis=1)
        denominators[a:b] = denominator
        with np.errstate(invalid="ignore", divide="ignore"):
            values[a:b] = numerator / denominator

    if chunks:
        workers = min(max(1, threads), len(chunks))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run, chunks))
        else:
            for chunk in chunks:
                run(chunk)

    # normalization constant dropped above; compare the normalized denominator
    covered = denominators * KERNEL_NORMALIZATION >= NW_DENOMINATOR_FLOOR
    fallbacks = int(np.count_nonzero(~covered))
    if fallbacks:
        values[~covered] = ys[_nearest(sorted_xs, queries[~covered])]
    if n:
        np.clip(values, ys.min(), ys.max(), out=values)
    interactions = int(np.sum(hi - lo))
    return KernelEstimate(values, interactions, fallbacks, covered)


def accelerated_nw_all(
    sorted_xs: np.ndarray,
    ys: np.ndarray,
    h: float,
    threshold: float,
    *,
    threads: int = 1,
) -> KernelEstimate:
    """Estimates at every particle of a sorted cloud, truncating sums below ``threshold``."""
    sorted_xs = np.asarray(sorted_xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if sorted_xs.size and np.any(np.diff(sorted_xs) < 0):
        raise ModelSpecError("Particle values must be sorted ascending.")
    if threshold < 0:
        raise ModelSpecError("Kernel threshold must be non-negative.")
    return kernel_regression(sorted_xs, ys, sorted_xs, h, threshold=threshold, threads=threads)


def _nearest(sorted_xs: np.ndarray, queries: np.ndarray) -> np.ndarray:
    right = np.clip(np.searchsorted(sorted_xs, queries, side="left"), 0, sorted_xs.size - 1)
    left = np.clip(right - 1, 0, sorted_xs.size - 1)
    take_left = np.abs(queries - sorted_xs[left]) <= np.abs(sorted_xs[right] - queries)
    return np.where(take_left, left, right)


# ---------------------------------------------------------------------------
# Parametric estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisSpec:
    """Basis functions f_1..f_L of the stock level with display names."""

    functions: tuple[Callable[[np.ndarray], np.ndarray], ...]
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.functions) < 1:
            raise ModelSpecError("A basis needs at least one function.")
        if len(self.functions) != len(self.names):
            raise ModelSpecError("Every basis function needs a name.")

    @property
    def size(self) -> int:
        return len(self.functions)

    def design(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return np.column_stack([np.broadcast_to(f(xs), xs.shape).astype(float) for f in self.functions])


def polynomial_basis(degree: int) -> BasisSpec:
    """Monomials {1, x, ..., x^degree}."""
    functions = tuple((lambda x, k=k: x ** k) for k in range(degree + 1))
    names = tuple("1" if k == 0 else ("x" if k == 1 else f"x^{k}") for k in range(degree + 1))
    return BasisSpec(functions, names)


def log_moneyness_basis(reference_level: float, degree: int = DEFAULT_BASIS_DEGREE) -> BasisSpec:
    """Monomials in z = log(S / reference_level)."""
    if not reference_level > 0:
        raise ModelSpecError("reference_level must be positive.")
    functions = tuple(
        (lambda x, k=k: np.log(x / reference_level) ** k) for k in range(degree + 1)
    )
    names = tuple("1" if k == 0 else ("z" if k == 1 else f"z^{k}") for k in range(degree + 1))
    return BasisSpec(functions, names)


def fit_parametric(xs, ys, basis: BasisSpec) -> np.ndarray:
    """Least-squares coefficients alpha of ys on the basis evaluated at xs."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ModelSpecError("xs and ys must be 1-d arrays of equal length.")
    if xs.size < basis.size:
        raise RankDeficiencyError(f"{xs.size} sample(s) cannot identify {basis.size} basis functions.")

    design = basis.design(xs)
    coefficients, _, rank, singular = np.linalg.lstsq(design, ys, rcond=None)
    condition = singular[0] / singular[-1] if singular[-1] > 0 else math.inf
    if rank < basis.size or condition > DESIGN_CONDITION_LIMIT:
        offending = _dependent_columns(design, basis.names)
        raise RankDeficiencyError(
            f"Design matrix rank {rank} < {basis.size} (condition {condition:.3g}); "
            f"dependent basis functions: {', '.join(offending)}."
        )
    return coefficients


def evaluate_parametric(coefficients: np.ndarray, basis: BasisSpec, xs) -> np.ndarray:
    return basis.design(xs) @ coefficients


def _dependent_columns(design: np.ndarray, names: Sequence[str]) -> list[str]:
    """Columns that add no rank when appended left to right."""
    kept: list[int] = []
    offending: list[str] = []
    for k, name in enumerate(names):
        trial = design[:, kept + [k]]
        singular = np.linalg.svd(trial, compute_uv=False)
        if singular[-1] <= singular[0] / DESIGN_CONDITION_LIMIT:
            offending.append(name)
        else:
            kept.append(k)
    return offending or list(names)
