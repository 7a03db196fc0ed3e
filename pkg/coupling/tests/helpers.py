"""Small builders shared by the coupling test modules."""

from coupling.services.model_core import LimitSpec, build_model_spec
from coupling.services.vol_surface import constant_surface


def flat_spec(
    count=3,
    *,
    sigma=0.2,
    eta=0.25,
    s0=100.0,
    betas=1.0,
    dividends=0.0,
    rate=0.0,
    weights=None,
    horizon=1.0,
):
    weights = [1.0 / count] * count if weights is None else weights
    index_vol = constant_surface(sigma, horizon=horizon, reference_level=s0, name="sigma")
    idio = constant_surface(eta, horizon=horizon, reference_level=s0, name="eta")
    return build_model_spec(
        weights=weights,
        betas=betas,
        dividends=dividends,
        rate=rate,
        initial_stocks=s0,
        index_vol=index_vol,
        idio_vols=idio,
        horizon=horizon,
    )


def flat_limit(*, sigma=0.2, i0=100.0, beta=1.0, delta=0.0, rate=0.0, horizon=1.0):
    return LimitSpec(
        beta=beta,
        delta=delta,
        delta_index=delta,
        i0=i0,
        index_vol=constant_surface(sigma, horizon=horizon, reference_level=i0),
        rate=rate,
        horizon=horizon,
    )
