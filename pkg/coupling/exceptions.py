"""
Custom exceptions for the coupling app.

Status codes group the failures: 400 for invalid inputs, 422 for numerical
failures, 429 for the interaction budget. ``constants.EXIT_CODES`` turns
them into process exit codes.
"""

from rest_framework.exceptions import APIException
from rest_framework import status


class ModelSpecError(APIException):
    status_code = status.HTTP_400_BAD_REQUEST
    default_detail = "Invalid model specification."
    default_code = "invalid_model_spec"


class InvalidSurfaceError(APIException):
    status_code = status.HTTP_400_BAD_REQUEST
    default_detail = "Invalid volatility surface."
    default_code = "invalid_surface"


class SurfaceCapError(APIException):
    status_code = status.HTTP_400_BAD_REQUEST
    default_detail = "Volatility surface exceeds its declared cap K_b."
    default_code = "surface_cap_exceeded"


class InvalidPriceSurfaceError(APIException):
    status_code = status.HTTP_400_BAD_REQUEST
    default_detail = "Call-price surface violates static bounds."
    default_code = "invalid_price_surface"


class ArbitrageViolationError(APIException):
    status_code = status.HTTP_422_UNPROCESSABLE_ENTITY
    default_detail = "Butterfly arbitrage: non-positive second strike derivative."
    default_code = "butterfly_arbitrage"


class DegenerateCorrelationError(APIException):
    status_code = status.HTTP_422_UNPROCESSABLE_ENTITY
    default_detail = "Correlation undefined: a stock has zero total volatility."
    default_code = "degenerate_correlation"


class ImpliedVolBandError(APIException):
    status_code = status.HTTP_422_UNPROCESSABLE_ENTITY
    default_detail = "Price outside the no-arbitrage band."
    default_code = "implied_vol_band"


class KernelDegenerateError(APIException):
    status_code = status.HTTP_422_UNPROCESSABLE_ENTITY
    default_detail = "All kernel weights underflow: query too far from the sample."
    default_code = "kernel_degenerate"


class RankDeficiencyError(APIException):
    status_code = status.HTTP_422_UNPROCESSABLE_ENTITY
    default_detail = "Least-squares design matrix is rank deficient."
    default_code = "rank_deficient"


class SimulationError(APIException):
    status_code = status.HTTP_422_UNPROCESSABLE_ENTITY
    default_detail = "Simulation failed."
    default_code = "simulation_failed"


class MissingPathsError(APIException):
    status_code = status.HTTP_422_UNPROCESSABLE_ENTITY
    default_detail = "Requested paths are not present in the ensemble."
    default_code = "missing_paths"


class BudgetExceededError(APIException):
    status_code = status.HTTP_429_TOO_MANY_REQUESTS
    default_detail = "Interaction work exceeds the configured budget."
    default_code = "budget_exceeded"
