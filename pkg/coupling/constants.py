"""
Constants for the coupling app.
"""

# ---------------------------------------------------------------------------
# Surfaces
# ---------------------------------------------------------------------------

# Default bound K_b on |sigma| + |eta| (per sqrt-year). Surfaces above it are rejected.
DEFAULT_VOL_CAP = 5.0

# Local variances produced by Dupire are clamped to [VARIANCE_FLOOR, cap**2].
VARIANCE_FLOOR = 1e-6

# d2C/dK2 at or below this is a butterfly-arbitrage violation.
BUTTERFLY_FLOOR = 1e-12

# Tolerance used when validating call-price monotonicity and intrinsic bounds.
PRICE_SURFACE_TOLERANCE = 1e-8

# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

# Non-positive Euler levels are clamped to POSITIVITY_FLOOR * initial level.
POSITIVITY_FLOOR = 1e-12

# Paths per noise block. Part of the noise layout: changing it changes every draw.
NOISE_BLOCK_SIZE = 2048

# ---------------------------------------------------------------------------
# Conditional expectation estimation
# ---------------------------------------------------------------------------

# h_N = scale * N ** -exponent
DEFAULT_BANDWIDTH_EXPONENT = 0.2
SMOOTHED_BANDWIDTH_EXPONENT = 0.1

# Denominators below this fall back to the nearest particle value.
NW_DENOMINATOR_FLOOR = 1e-300

# Upper bound on the number of kernel evaluations held in memory at once.
KERNEL_CHUNK_ELEMENTS = 2 ** 22

# Default monomial degree of the log-moneyness basis for parametric estimation.
DEFAULT_BASIS_DEGREE = 3

# Condition number above which a least-squares design is treated as rank deficient.
DESIGN_CONDITION_LIMIT = 1e12

# Moneyness grid of extracted eta surfaces: (low, high, points).
ETA_MONEYNESS_GRID = (0.3, 2.0, 41)

# ---------------------------------------------------------------------------
# Pricing
# ---------------------------------------------------------------------------

IMPLIED_VOL_BRACKET = (1e-4, 5.0)
IMPLIED_VOL_WIDE_BRACKET = (1e-8, 20.0)

# Target accuracy of implied-vol inversion, relative to spot.
IMPLIED_VOL_PRICE_TOLERANCE = 1e-10

SMILE_STATUS_OK = "ok"
SMILE_STATUS_BELOW_INTRINSIC = "below_intrinsic"
SMILE_STATUS_ABOVE_SPOT = "above_spot"

DEFAULT_SMILE_MONEYNESS = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3)
DEFAULT_WORST_OF_MONEYNESS = (0.8, 0.9, 1.0, 1.1, 1.2)

# ---------------------------------------------------------------------------
# Theory bench
# ---------------------------------------------------------------------------

DEFAULT_BOUND_ORDERS = (1, 2)

# A study row is flagged when its MC stderr exceeds this share of the estimate.
STUDY_STDERR_RATIO_LIMIT = 0.5

# ---------------------------------------------------------------------------
# Command-line surface
# ---------------------------------------------------------------------------

CSV_FLOAT_FORMAT = "%.17g"

# HTTP-style status of an exception → process exit code.
EXIT_CODES: dict[int, int] = {
    400: 2,  # validation
    422: 3,  # numerical failure
    429: 4,  # budget guardrail
}

PATH_SUMMARY_COLUMNS = [
    "asset",
    "initial",
    "mean",
    "stderr",
    "discounted_mean",
    "discounted_stderr",
    "min",
    "max",
    "clamp_count",
]

SMILE_COLUMNS = ["moneyness", "implied_vol", "price", "stderr", "status"]

MODEL_SMILE_COLUMNS = ["underlying", "model", *SMILE_COLUMNS]

MODEL_DIFFERENCE_COLUMNS = ["underlying", "moneyness", "model", "reference_model", "difference_bp"]

CALIBRATION_REPORT_COLUMNS = [
    "step",
    "time",
    "clamp_count",
    "clamp_mass",
    "eta_min",
    "eta_max",
    "interactions",
    "fallbacks",
]

COVERAGE_COLUMNS = ["time", "level", "covered"]

WORST_OF_COLUMNS = ["strike", "model", "price", "stderr"]

BOUND_REPORT_COLUMNS = [
    "M",
    "p",
    "K_p",
    "C_p",
    "C_T",
    "C_tilde_T",
    "p_w",
    "p_beta",
    "p_delta",
    "theorem1",
    "theorem2",
    "reconstructed",
    "K_b",
    "K_sigma",
    "K_eta",
    "K_lip",
]

STUDY_COLUMNS = [
    "M",
    "p_w",
    "p_beta",
    "p_delta",
    "index_distance",
    "index_stderr",
    "stock_distance",
    "stock_stderr",
    "reconstructed_distance",
    "reconstructed_stderr",
    "theorem1",
    "theorem2",
    "reconstructed_bound",
    "flagged",
]

SLOPE_COLUMNS = ["quantity", "slope", "intercept"]

MARKET_RHO_COLUMNS = ["rho"]
