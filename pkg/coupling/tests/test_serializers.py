import json
import tempfile
from pathlib import Path

from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from coupling.serializers import (
    CalibrateSerializer,
    DupireSerializer,
    KernelSerializer,
    ModelSpecSerializer,
    SimulateSerializer,
    SmileSerializer,
    SurfaceRefSerializer,
    TheoremsSerializer,
    model_spec_to_config,
)
from coupling.services.vol_surface import PriceSurface
from coupling.tests.helpers import flat_spec

MODEL = {
    "initial_stocks": [100.0, 50.0],
    "index_vol": {"constant": 0.2},
    "idio_vols": {"constant": 0.25},
}


class SurfaceRefTests(SimpleTestCase):
    def test_exactly_one_source(self):
        serializer = SurfaceRefSerializer(data={"constant": 0.2, "skew": {"atm": 0.2, "slope": -0.1}})
        self.assertFalse(serializer.is_valid())
        self.assertIn("non_field_errors", serializer.errors)
        self.assertFalse(SurfaceRefSerializer(data={"name": "x"}).is_valid())

    def test_missing_file_names_the_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            serializer = SurfaceRefSerializer(data={"file": "missing.csv"}, context={"base_dir": tmp})
            self.assertFalse(serializer.is_valid())
            self.assertIn(str(Path(tmp) / "missing.csv"), serializer.errors["file"][0])

    def test_relative_file_resolves_against_base_dir(self):
        with tempfile.TemporaryDirectory() as tmp:
            (Path(tmp) / "eta.csv").write_text("time,1\n0,0.2\n")
            serializer = SurfaceRefSerializer(data={"file": "eta.csv"}, context={"base_dir": tmp})
            self.assertTrue(serializer.is_valid(), serializer.errors)
            self.assertEqual(serializer.validated_data["file"], str(Path(tmp) / "eta.csv"))


class ModelSpecSerializerTests(SimpleTestCase):
    def test_broadcasts_scalars(self):
        serializer = ModelSpecSerializer(data=MODEL)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        spec = serializer.validated_data["spec"]
        self.assertEqual(spec.count, 2)
        assert_allclose(spec.weights, [0.5, 0.5])
        assert_allclose(spec.betas, [1.0, 1.0])
        self.assertAlmostEqual(spec.initial_index, 75.0)
        self.assertEqual(spec.idio_vols[1].reference_level, 50.0)

    def test_length_mismatch(self):
        serializer = ModelSpecSerializer(data={**MODEL, "betas": [1.0, 1.0, 1.0]})
        self.assertFalse(serializer.is_valid())
        self.assertIn("initial_stocks", serializer.errors)

    def test_needs_a_count(self):
        serializer = ModelSpecSerializer(data={**MODEL, "initial_stocks": 100.0})
        self.assertFalse(serializer.is_valid())
        self.assertIn("count", serializer.errors)

    def test_rejects_boolean_scalar(self):
        serializer = ModelSpecSerializer(data={**MODEL, "betas": True})
        self.assertFalse(serializer.is_valid())
        self.assertIn("betas", serializer.errors)

    def test_surface_errors_are_field_errors(self):
        serializer = ModelSpecSerializer(data={**MODEL, "idio_vols": {"constant": 0.8, "cap": 0.5}})
        self.assertFalse(serializer.is_valid())
        self.assertIn("idio_vols", serializer.errors)

    def test_missing_nested_file_reported(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = {**MODEL, "idio_vols": [{"constant": 0.2}, {"file": "nope.csv"}]}
            serializer = ModelSpecSerializer(data=data, context={"base_dir": tmp})
            self.assertFalse(serializer.is_valid())
            self.assertIn("nope.csv", json.dumps(serializer.errors))

    def test_config_round_trip(self):
        spec = flat_spec(count=2, weights=[0.3, 0.7], betas=[0.8, 1.2], dividends=[0.0, 0.01], rate=0.02)
        serializer = ModelSpecSerializer(data=model_spec_to_config(spec))
        self.assertTrue(serializer.is_valid(), serializer.errors)
        rebuilt = serializer.validated_data["spec"]
        assert_allclose(rebuilt.weights, spec.weights)
        assert_allclose(rebuilt.betas, spec.betas)
        assert_allclose(rebuilt.dividends, spec.dividends)
        assert_allclose(rebuilt.index_vol.values, spec.index_vol.values)
        assert_allclose(rebuilt.idio_vols[1].values, spec.idio_vols[1].values)
        self.assertEqual(rebuilt.idio_vols[0].reference_level, spec.idio_vols[0].reference_level)


class KernelSerializerTests(SimpleTestCase):
    def test_builds_config(self):
        serializer = KernelSerializer(data={"mode": "accelerated", "exponent": 0.1})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        config = serializer.validated_data["config"]
        self.assertEqual(config.mode, "accelerated")
        self.assertEqual(config.exponent, 0.1)

    def test_exponent_defaults_by_mode(self):
        for mode, exponent in (("naive", 0.2), ("accelerated", 0.1)):
            serializer = KernelSerializer(data={"mode": mode})
            self.assertTrue(serializer.is_valid(), serializer.errors)
            self.assertEqual(serializer.validated_data["config"].exponent, exponent)

    def test_invalid_exponent(self):
        serializer = KernelSerializer(data={"exponent": 1.5})
        self.assertFalse(serializer.is_valid())
        self.assertIn("non_field_errors", serializer.errors)


class CommandSerializerTests(SimpleTestCase):
    def test_n_paths_must_be_positive(self):
        serializer = SimulateSerializer(data={"seed": 1, "n_steps": 4, "n_paths": 0, "model": MODEL})
        self.assertFalse(serializer.is_valid())
        self.assertIn("n_paths", serializer.errors)

    def test_seed_range(self):
        serializer = SimulateSerializer(data={"seed": -1, "n_steps": 4, "n_paths": 1, "model": MODEL})
        self.assertFalse(serializer.is_valid())
        self.assertIn("seed", serializer.errors)

    def test_market_needs_rho_in_range(self):
        base = {"seed": 1, "n_steps": 4, "n_paths": 10, "model": MODEL, "family": "market"}
        for extra in ({}, {"rho": 1.0}):
            serializer = SimulateSerializer(data={**base, **extra})
            self.assertFalse(serializer.is_valid())
            self.assertIn("rho", serializer.errors)
        self.assertTrue(SimulateSerializer(data={**base, "rho": 0.3}).is_valid())

    def test_smile_moneyness_increasing(self):
        data = {"seed": 1, "n_steps": 4, "n_paths": 10, "model": MODEL, "moneyness": [1.0, 0.9]}
        serializer = SmileSerializer(data=data)
        self.assertFalse(serializer.is_valid())
        self.assertIn("moneyness", serializer.errors)

    def test_calibrate_needs_exactly_one_target(self):
        serializer = CalibrateSerializer(data={"seed": 1, "n_steps": 4})
        self.assertFalse(serializer.is_valid())
        self.assertIn("non_field_errors", serializer.errors)

    def test_calibrate_stock_defaults(self):
        data = {
            "seed": 1,
            "n_steps": 4,
            "stock": {
                "index_vol": {"constant": 0.2},
                "i0": 100.0,
                "s0": 100.0,
                "v_loc": {"constant": 0.3},
                "beta_hist": 0.9,
                "n_particles": 100,
            },
        }
        serializer = CalibrateSerializer(data=data)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        validated = serializer.validated_data
        self.assertEqual(validated["kernel"]["config"].mode, "naive")
        self.assertEqual(validated["stock"]["v_loc_surface"].reference_level, 100.0)

    def test_calibrate_stock_needs_beta_source(self):
        data = {
            "seed": 1,
            "n_steps": 4,
            "stock": {"index_vol": {"constant": 0.2}, "i0": 100.0, "s0": 100.0, "v_loc": {"constant": 0.3}, "n_particles": 10},
        }
        serializer = CalibrateSerializer(data=data)
        self.assertFalse(serializer.is_valid())
        self.assertIn("beta", serializer.errors["stock"])

    def test_dupire_synthetic(self):
        data = {"spot": 100.0, "synthetic": {"sigma": 0.2, "time_grid": [0.5, 1.0], "strike_grid": [90.0, 100.0, 110.0]}}
        serializer = DupireSerializer(data=data)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertIsInstance(serializer.validated_data["prices"], PriceSurface)
        self.assertFalse(DupireSerializer(data={"spot": 100.0}).is_valid())

    def test_theorem_defaults(self):
        data = {
            "seed": 1,
            "n_steps": 10,
            "n_paths": 100,
            "m_grid": [4, 16],
            "family": {"s0": 100.0, "index_vol": {"constant": 0.2}, "idio_vol": {"constant": 0.25}},
        }
        serializer = TheoremsSerializer(data=data)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.validated_data["orders"], [1, 2])
        self.assertTrue(serializer.validated_data["run_study"])
