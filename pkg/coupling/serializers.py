"""
DRF serializers for the coupling app.

Every command recipe is validated here; ``validate`` hooks build the domain
objects (surfaces, ModelSpec, KernelConfig) so construction failures come
back as field-level errors.
"""

from pathlib import Path

import numpy as np
from rest_framework import serializers
from rest_framework.exceptions import APIException

from coupling.constants import (
    DEFAULT_BOUND_ORDERS,
    DEFAULT_VOL_CAP,
    DEFAULT_WORST_OF_MONEYNESS,
)
from coupling.services.model_core import ModelSpec, build_model_spec
from coupling.services.regression import MODE_ACCELERATED, MODE_NAIVE, KernelConfig
from coupling.services.vol_surface import (
    PriceSurface,
    VolSurface,
    constant_surface,
    lognormal_price_surface,
    skewed_surface,
)
from coupling.utils import read_grid_csv


def _detail(exc: Exception) -> str:
    return str(exc.detail) if isinstance(exc, APIException) else str(exc)


class ScalarOrListField(serializers.Field):
    """A float, or a list of floats broadcast against the stock count later."""

    default_error_messages = {
        "invalid": "Expected a number or a list of numbers.",
        "empty": "The list must not be empty.",
    }

    def to_internal_value(self, data):
        if isinstance(data, bool):
            self.fail("invalid")
        if isinstance(data, (int, float)):
            return float(data)
        if isinstance(data, list):
            if not data:
                self.fail("empty")
            if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in data):
                self.fail("invalid")
            return [float(v) for v in data]
        self.fail("invalid")

    def to_representation(self, value):
        return value


# ---------------------------------------------------------------------------
# Surfaces
# ---------------------------------------------------------------------------

class SkewSerializer(serializers.Serializer):
    atm = serializers.FloatField(min_value=0)
    slope = serializers.FloatField()
    floor = serializers.FloatField(min_value=0, default=0.05)
    ceiling = serializers.FloatField(min_value=0, default=1.5)
    term_slope = serializers.FloatField(default=0.0)
    moneyness_range = serializers.ListField(
        child=serializers.FloatField(min_value=0), min_length=2, max_length=2, default=[0.2, 3.0]
    )
    points = serializers.IntegerField(min_value=2, default=57)
    time_points = serializers.IntegerField(min_value=1, default=5)


class GridSerializer(serializers.Serializer):
    time_grid = serializers.ListField(child=serializers.FloatField(), min_length=1)
    level_grid = serializers.ListField(child=serializers.FloatField(), min_length=1)
    values = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()))


class SurfaceRefSerializer(serializers.Serializer):
    """
    One of ``{"constant": v}``, ``{"skew": {...}}``, ``{"file": path}`` or
    ``{"grid": {...}}``, plus optional ``moneyness``, ``reference_level``,
    ``cap`` and ``name``. Relative file paths resolve against ``base_dir``
    in the serializer context.
    """

    SOURCES = ("constant", "skew", "file", "grid")

    constant = serializers.FloatField(min_value=0, required=False)
    skew = SkewSerializer(required=False)
    file = serializers.CharField(required=False)
    grid = GridSerializer(required=False)
    moneyness = serializers.BooleanField(required=False, allow_null=True, default=None)
    reference_level = serializers.FloatField(required=False, allow_null=True, default=None)
    cap = serializers.FloatField(min_value=0, default=DEFAULT_VOL_CAP)
    name = serializers.CharField(required=False, allow_blank=True, default="")

    def validate_file(self, value):
        path = Path(value)
        if not path.is_absolute():
            path = Path(self.context.get("base_dir", ".")) / path
        if not path.is_file():
            raise serializers.ValidationError(f"Surface file not found: {path}")
        return str(path)

    def validate(self, attrs):
        given = [source for source in self.SOURCES if source in attrs]
        if len(given) != 1:
            raise serializers.ValidationError(
                f"Give exactly one of {', '.join(self.SOURCES)} (got {', '.join(given) or 'none'})."
            )
        return attrs


def build_surface(ref: dict, *, reference_level: float, horizon: float, moneyness: bool) -> VolSurface:
    """Materialize a validated surface reference; ``reference_level`` applies to moneyness grids."""
    flag = moneyness if ref.get("moneyness") is None else ref["moneyness"]
    reference = ref.get("reference_level") or reference_level
    cap, name = ref["cap"], ref.get("name", "")

    if "constant" in ref:
        return constant_surface(
            ref["constant"], horizon=horizon, moneyness=True, reference_level=reference, cap=cap, name=name
        )
    if "skew" in ref:
        skew = ref["skew"]
        return skewed_surface(
            atm=skew["atm"],
            slope=skew["slope"],
            reference_level=reference,
            horizon=horizon,
            floor=skew["floor"],
            ceiling=skew["ceiling"],
            moneyness_range=tuple(skew["moneyness_range"]),
            points=skew["points"],
            time_points=skew["time_points"],
            term_slope=skew["term_slope"],
            cap=cap,
            name=name,
        )
    if "file" in ref:
        time_grid, level_grid, values = read_grid_csv(ref["file"])
    else:
        grid = ref["grid"]
        time_grid, level_grid, values = grid["time_grid"], grid["level_grid"], grid["values"]
    return VolSurface(
        time_grid=time_grid,
        level_grid=level_grid,
        values=values,
        moneyness=flag,
        reference_level=reference if flag else 1.0,
        cap=cap,
        name=name,
    )


def surface_to_ref(surface: VolSurface) -> dict:
    """Inline grid form of a surface."""
    return {
        "grid": {
            "time_grid": surface.time_grid.tolist(),
            "level_grid": surface.level_grid.tolist(),
            "values": surface.values.tolist(),
        },
        "moneyness": surface.moneyness,
        "reference_level": surface.reference_level,
        "cap": surface.cap,
        "name": surface.name,
    }


def _validate_refs(data, context) -> list:
    items = data if isinstance(data, list) else [data]
    refs = []
    for position, item in enumerate(items):
        serializer = SurfaceRefSerializer(data=item, context=context)
        if not serializer.is_valid():
            raise serializers.ValidationError({position: serializer.errors} if isinstance(data, list) else serializer.errors)
        refs.append(serializer.validated_data)
    return refs


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

def _broadcast(name: str, value, count: int) -> list:
    if isinstance(value, list):
        if len(value) != count:
            raise serializers.ValidationError({name: f"Expected {count} entries, got {len(value)}."})
        return value
    return [value] * count


class ModelSpecSerializer(serializers.Serializer):
    """
    The coupled model. Scalars broadcast to ``count`` stocks; weights
    default to 1/M. ``idio_vols`` is one surface reference or one per stock.
    The validated data carries the built ``spec``.
    """

    count = serializers.IntegerField(min_value=1, required=False)
    weights = ScalarOrListField(required=False)
    betas = ScalarOrListField(default=1.0)
    dividends = ScalarOrListField(default=0.0)
    rate = serializers.FloatField(default=0.0)
    initial_stocks = ScalarOrListField()
    index_vol = serializers.JSONField()
    idio_vols = serializers.JSONField()
    horizon = serializers.FloatField(default=1.0)

    def validate_horizon(self, value):
        if value <= 0:
            raise serializers.ValidationError("horizon must be positive.")
        return value

    def validate_index_vol(self, value):
        if isinstance(value, list):
            raise serializers.ValidationError("index_vol takes a single surface reference.")
        return _validate_refs(value, self.context)[0]

    def validate_idio_vols(self, value):
        return _validate_refs(value, self.context)

    def validate(self, attrs):
        lengths = {
            name: len(attrs[name])
            for name in ("weights", "betas", "dividends", "initial_stocks")
            if isinstance(attrs.get(name), list)
        }
        if len(attrs["idio_vols"]) > 1:
            lengths["idio_vols"] = len(attrs["idio_vols"])
        count = attrs.get("count") or (max(lengths.values()) if lengths else None)
        if count is None:
            raise serializers.ValidationError({"count": "Give count or at least one per-stock list."})

        weights = attrs.get("weights", 1.0 / count)
        weights = _broadcast("weights", weights, count)
        betas = _broadcast("betas", attrs["betas"], count)
        dividends = _broadcast("dividends", attrs["dividends"], count)
        initial = _broadcast("initial_stocks", attrs["initial_stocks"], count)
        refs = attrs["idio_vols"]
        if len(refs) not in (1, count):
            raise serializers.ValidationError({"idio_vols": f"Expected 1 or {count} surfaces, got {len(refs)}."})
        if any(s <= 0 for s in initial):
            raise serializers.ValidationError({"initial_stocks": "All initial stock values must be positive."})

        horizon = attrs["horizon"]
        i0 = float(np.dot(weights, initial))
        try:
            index_vol = build_surface(attrs["index_vol"], reference_level=i0, horizon=horizon, moneyness=False)
        except APIException as exc:
            raise serializers.ValidationError({"index_vol": _detail(exc)})

        built: dict[tuple, VolSurface] = {}
        idio = []
        for j in range(count):
            position = 0 if len(refs) == 1 else j
            key = (position, initial[j])
            if key not in built:
                try:
                    built[key] = build_surface(refs[position], reference_level=initial[j], horizon=horizon, moneyness=True)
                except APIException as exc:
                    raise serializers.ValidationError({"idio_vols": _detail(exc)})
            idio.append(built[key])

        try:
            attrs["spec"] = build_model_spec(
                weights=weights,
                betas=betas,
                dividends=dividends,
                rate=attrs["rate"],
                initial_stocks=initial,
                index_vol=index_vol,
                idio_vols=idio,
                horizon=horizon,
            )
        except APIException as exc:
            raise serializers.ValidationError({"model": _detail(exc)})
        return attrs


def model_spec_to_config(spec: ModelSpec) -> dict:
    """Recipe form of a ModelSpec; parses back through ``ModelSpecSerializer``."""
    return {
        "weights": spec.weights.tolist(),
        "betas": spec.betas.tolist(),
        "dividends": spec.dividends.tolist(),
        "rate": spec.rate,
        "initial_stocks": spec.initial_stocks.tolist(),
        "index_vol": surface_to_ref(spec.index_vol),
        "idio_vols": [surface_to_ref(surface) for surface in spec.idio_vols],
        "horizon": spec.horizon,
    }


class LimitSerializer(serializers.Serializer):
    """Limit constants; ``beta_rule: median`` picks the weighted median of the betas."""

    beta = serializers.FloatField(required=False, allow_null=True, default=None)
    beta_rule = serializers.ChoiceField(choices=["one", "median"], default="one")
    delta = serializers.FloatField(required=False, allow_null=True, default=None)
    delta_index = serializers.FloatField(required=False, allow_null=True, default=None)


class KernelSerializer(serializers.Serializer):
    exponent = serializers.FloatField(required=False, allow_null=True, default=None)
    threshold = serializers.FloatField(required=False, allow_null=True, default=None)
    mode = serializers.ChoiceField(choices=[MODE_NAIVE, MODE_ACCELERATED], default=MODE_NAIVE)
    scale = serializers.FloatField(default=1.0)

    def validate(self, attrs):
        try:
            attrs["config"] = KernelConfig(
                exponent=attrs["exponent"],
                threshold=attrs["threshold"],
                mode=attrs["mode"],
                scale=attrs["scale"],
            )
        except APIException as exc:
            raise serializers.ValidationError(_detail(exc))
        return attrs


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

class SeededRunSerializer(serializers.Serializer):
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1)
    n_steps = serializers.IntegerField(min_value=1)


class SimulateSerializer(SeededRunSerializer):
    family = serializers.ChoiceField(choices=["original", "simplified", "market"], default="original")
    model = ModelSpecSerializer()
    limit = LimitSerializer(required=False)
    rho = serializers.FloatField(required=False, allow_null=True, default=None)
    n_paths = serializers.IntegerField(min_value=1)
    with_companion = serializers.BooleanField(default=False)
    dump_paths = serializers.BooleanField(default=False)

    def validate(self, attrs):
        if attrs["family"] == "market" and attrs["rho"] is None:
            raise serializers.ValidationError({"rho": "The market family needs rho."})
        if attrs["rho"] is not None and not 0.0 <= attrs["rho"] < 1.0:
            raise serializers.ValidationError({"rho": "rho must lie in [0, 1)."})
        return attrs


class SmileSerializer(SimulateSerializer):
    underlying = serializers.CharField(default="stock:0")
    moneyness = serializers.ListField(child=serializers.FloatField(min_value=0), default=list)
    maturity = serializers.FloatField(required=False, allow_null=True, default=None)

    def validate_moneyness(self, value):
        if any(b <= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError("moneyness must be strictly increasing.")
        return value


class SingleStockCalibrationSerializer(serializers.Serializer):
    index_vol = serializers.JSONField()
    i0 = serializers.FloatField()
    rate = serializers.FloatField(default=0.0)
    horizon = serializers.FloatField(default=1.0)
    delta_index = serializers.FloatField(default=0.0)
    s0 = serializers.FloatField()
    dividend = serializers.FloatField(min_value=0, default=0.0)
    v_loc = serializers.JSONField()
    beta = serializers.FloatField(required=False, allow_null=True, default=None)
    beta_hist = serializers.FloatField(required=False, allow_null=True, default=None)
    n_particles = serializers.IntegerField(min_value=2)
    independent_paths = serializers.IntegerField(min_value=0, default=0)

    def validate_index_vol(self, value):
        return _validate_refs(value, self.context)[0]

    def validate_v_loc(self, value):
        return _validate_refs(value, self.context)[0]

    def validate(self, attrs):
        for name in ("i0", "s0", "horizon"):
            if attrs[name] <= 0:
                raise serializers.ValidationError({name: f"{name} must be positive."})
        if attrs["beta"] is None and attrs["beta_hist"] is None:
            raise serializers.ValidationError({"beta": "Give beta, or beta_hist to select it from the surfaces."})
        try:
            attrs["index_surface"] = build_surface(
                attrs["index_vol"], reference_level=attrs["i0"], horizon=attrs["horizon"], moneyness=False
            )
        except APIException as exc:
            raise serializers.ValidationError({"index_vol": _detail(exc)})
        try:
            attrs["v_loc_surface"] = build_surface(
                attrs["v_loc"], reference_level=attrs["s0"], horizon=attrs["horizon"], moneyness=True
            )
        except APIException as exc:
            raise serializers.ValidationError({"v_loc": _detail(exc)})
        return attrs


class BasketCalibrationSerializer(serializers.Serializer):
    model = ModelSpecSerializer()
    v_locs = serializers.JSONField()
    betas = ScalarOrListField(required=False, allow_null=True, default=None)
    beta_hist = ScalarOrListField(required=False, allow_null=True, default=None)
    n_particles = serializers.IntegerField(min_value=2)
    budget = serializers.FloatField(required=False, allow_null=True, default=None)
    allow_over_budget = serializers.BooleanField(default=False)

    def validate_v_locs(self, value):
        return _validate_refs(value, self.context)

    def validate(self, attrs):
        spec = attrs["model"]["spec"]
        refs = attrs["v_locs"]
        if len(refs) not in (1, spec.count):
            raise serializers.ValidationError({"v_locs": f"Expected 1 or {spec.count} surfaces, got {len(refs)}."})
        if attrs["betas"] is None and attrs["beta_hist"] is None:
            raise serializers.ValidationError({"betas": "Give betas, or beta_hist to select them."})
        surfaces = []
        for j in range(spec.count):
            try:
                surfaces.append(
                    build_surface(
                        refs[0 if len(refs) == 1 else j],
                        reference_level=float(spec.initial_stocks[j]),
                        horizon=spec.horizon,
                        moneyness=True,
                    )
                )
            except APIException as exc:
                raise serializers.ValidationError({"v_locs": _detail(exc)})
        attrs["v_loc_surfaces"] = surfaces
        for name in ("betas", "beta_hist"):
            if attrs[name] is not None:
                attrs[name] = _broadcast(name, attrs[name], spec.count)
        return attrs


class CalibrateSerializer(SeededRunSerializer):
    stock = SingleStockCalibrationSerializer(required=False)
    basket = BasketCalibrationSerializer(required=False)
    kernel = KernelSerializer(required=False)
    estimator = serializers.ChoiceField(choices=["kernel", "parametric"], default="kernel")
    eta_time_grid = serializers.ListField(child=serializers.FloatField(min_value=0), required=False)
    eta_level_grid = serializers.ListField(child=serializers.FloatField(min_value=0), required=False)
    h_interp = serializers.FloatField(required=False, allow_null=True, default=None)
    smile_moneyness = serializers.ListField(child=serializers.FloatField(min_value=0), default=list)

    def validate(self, attrs):
        if ("stock" in attrs) == ("basket" in attrs):
            raise serializers.ValidationError("Give exactly one of 'stock' or 'basket'.")
        if "kernel" not in attrs:
            attrs["kernel"] = {"config": KernelConfig()}
        return attrs


class WorstOfSerializer(SeededRunSerializer):
    model = ModelSpecSerializer()
    limit = LimitSerializer(required=False)
    n_paths = serializers.IntegerField(min_value=1)
    strikes = serializers.ListField(child=serializers.FloatField(min_value=0), min_length=1)
    moneyness = serializers.ListField(
        child=serializers.FloatField(min_value=0), default=lambda: list(DEFAULT_WORST_OF_MONEYNESS)
    )
    rho = serializers.FloatField(required=False, allow_null=True, default=None)
    stock = serializers.IntegerField(min_value=0, default=0)


class SyntheticPricesSerializer(serializers.Serializer):
    sigma = serializers.FloatField(min_value=0)
    time_grid = serializers.ListField(child=serializers.FloatField(min_value=0), min_length=2)
    strike_grid = serializers.ListField(child=serializers.FloatField(min_value=0), min_length=3)


class DupireSerializer(serializers.Serializer):
    spot = serializers.FloatField()
    rate = serializers.FloatField(default=0.0)
    dividend_yield = serializers.FloatField(default=0.0)
    synthetic = SyntheticPricesSerializer(required=False)
    file = serializers.CharField(required=False)
    cap = serializers.FloatField(min_value=0, default=DEFAULT_VOL_CAP)
    moneyness = serializers.BooleanField(default=False)
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, required=False)

    def validate_file(self, value):
        path = Path(value)
        if not path.is_absolute():
            path = Path(self.context.get("base_dir", ".")) / path
        if not path.is_file():
            raise serializers.ValidationError(f"Price file not found: {path}")
        return str(path)

    def validate(self, attrs):
        if ("synthetic" in attrs) == ("file" in attrs):
            raise serializers.ValidationError("Give exactly one of 'synthetic' or 'file'.")
        try:
            if "synthetic" in attrs:
                synthetic = attrs["synthetic"]
                attrs["prices"] = lognormal_price_surface(
                    spot=attrs["spot"],
                    rate=attrs["rate"],
                    dividend_yield=attrs["dividend_yield"],
                    sigma=synthetic["sigma"],
                    time_grid=synthetic["time_grid"],
                    strike_grid=synthetic["strike_grid"],
                )
            else:
                time_grid, strike_grid, prices = read_grid_csv(attrs["file"])
                attrs["prices"] = PriceSurface(
                    time_grid=time_grid,
                    strike_grid=strike_grid,
                    call_prices=prices,
                    spot=attrs["spot"],
                    rate=attrs["rate"],
                    dividend_yield=attrs["dividend_yield"],
                )
        except APIException as exc:
            raise serializers.ValidationError({"prices": _detail(exc)})
        return attrs


class TheoremFamilySerializer(serializers.Serializer):
    """Equal-weight basket w_j = 1/M of identical stocks."""

    s0 = serializers.FloatField()
    beta = serializers.FloatField(default=1.0)
    dividend = serializers.FloatField(min_value=0, default=0.0)
    rate = serializers.FloatField(default=0.0)
    horizon = serializers.FloatField(default=1.0)
    index_vol = serializers.JSONField()
    idio_vol = serializers.JSONField()

    def validate_index_vol(self, value):
        return _validate_refs(value, self.context)[0]

    def validate_idio_vol(self, value):
        return _validate_refs(value, self.context)[0]

    def validate(self, attrs):
        if attrs["s0"] <= 0 or attrs["horizon"] <= 0:
            raise serializers.ValidationError("s0 and horizon must be positive.")
        try:
            # equal weights: i0 = s0
            attrs["index_surface"] = build_surface(
                attrs["index_vol"], reference_level=attrs["s0"], horizon=attrs["horizon"], moneyness=False
            )
            attrs["idio_surface"] = build_surface(
                attrs["idio_vol"], reference_level=attrs["s0"], horizon=attrs["horizon"], moneyness=True
            )
        except APIException as exc:
            raise serializers.ValidationError({"family": _detail(exc)})
        return attrs


class TheoremsSerializer(SeededRunSerializer):
    family = TheoremFamilySerializer()
    m_grid = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1)
    orders = serializers.ListField(
        child=serializers.IntegerField(min_value=1), default=lambda: list(DEFAULT_BOUND_ORDERS)
    )
    study_order = serializers.IntegerField(min_value=1, default=1)
    n_paths = serializers.IntegerField(min_value=1)
    run_study = serializers.BooleanField(default=True)
    K_b = serializers.FloatField(required=False, allow_null=True, default=None)
    K_sigma = serializers.FloatField(required=False, allow_null=True, default=None)
    K_eta = serializers.FloatField(required=False, allow_null=True, default=None)
    K_lip = serializers.FloatField(required=False, allow_null=True, default=None)
