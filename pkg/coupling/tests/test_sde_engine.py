import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from coupling.exceptions import MissingPathsError, ModelSpecError
from coupling.services.model_core import limit_from_model, stock_specs_from_model
from coupling.services.pricing import martingale_gap
from coupling.services.sde_engine import (
    NoisePlan,
    clamp_positive,
    simulate_market_model,
    simulate_original,
    simulate_simplified,
    uniform_grid,
)
from coupling.services.vol_surface import constant_surface
from coupling.tests.helpers import flat_limit, flat_spec


class NoisePlanTests(SimpleTestCase):
    def test_same_seed_same_draws(self):
        a = NoisePlan(seed=17).normals(3, 5000, 2)
        b = NoisePlan(seed=17).normals(3, 5000, 2)
        assert_array_equal(a, b)
        self.assertEqual(a.shape, (2, 5000))

    def test_prefix_stable_across_path_counts(self):
        plan = NoisePlan(seed=5, block_size=64)
        assert_array_equal(plan.normals(0, 100, 3)[:, :64], plan.normals(0, 64, 3))

    def test_steps_and_derived_plans_differ(self):
        plan = NoisePlan(seed=5)
        self.assertFalse(np.array_equal(plan.normals(0, 10, 1), plan.normals(1, 10, 1)))
        self.assertNotEqual(plan.derive(4).seed, plan.derive(16).seed)
        self.assertEqual(plan.derive(4).seed, NoisePlan(seed=5).derive(4).seed)

    def test_seed_range(self):
        with self.assertRaises(ModelSpecError):
            NoisePlan(seed=-1)
        with self.assertRaises(ModelSpecError):
            NoisePlan(seed=2 ** 64)


class HelperTests(SimpleTestCase):
    def test_uniform_grid(self):
        assert_allclose(uniform_grid(2.0, 4), [0.0, 0.5, 1.0, 1.5, 2.0])
        with self.assertRaises(ModelSpecError):
            uniform_grid(1.0, 0)

    def test_clamp_positive(self):
        levels, count = clamp_positive(np.array([1.0, -2.0, 0.0, 3.0]), 1e-9)
        self.assertEqual(count, 2)
        assert_array_equal(levels, [1.0, 1e-9, 1e-9, 3.0])


class OriginalModelTests(SimpleTestCase):
    def test_results_do_not_depend_on_threads(self):
        spec = flat_spec(count=3, dividends=[0.0, 0.01, 0.02], rate=0.03)
        kwargs = dict(n_steps=8, n_paths=5000, noise=NoisePlan(seed=2024))
        single = simulate_original(spec, threads=1, **kwargs)
        many = simulate_original(spec, threads=4, **kwargs)
        for name in single.series:
            assert_array_equal(single.paths(name), many.paths(name))

    def test_index_is_weighted_sum(self):
        spec = flat_spec(count=3, weights=[0.2, 0.3, 0.5], rate=0.01)
        ensemble = simulate_original(spec, n_steps=5, n_paths=200, noise=NoisePlan(seed=1))
        stocks = np.stack([ensemble.paths(name) for name in ensemble.stock_names])
        assert_allclose(ensemble.paths("index"), np.tensordot(spec.weights, stocks, axes=1))

    def test_zero_vol_is_deterministic_growth(self):
        spec = flat_spec(count=2, sigma=0.0, eta=0.0, rate=0.05, dividends=[0.0, 0.02])
        ensemble = simulate_original(spec, n_steps=10, n_paths=3, noise=NoisePlan(seed=3))
        assert_allclose(ensemble.terminal("stock:0"), 100.0 * 1.005 ** 10)
        assert_allclose(ensemble.terminal("stock:1"), 100.0 * 1.003 ** 10)

    def test_discounted_stock_is_martingale(self):
        spec = flat_spec(count=2, rate=0.05, dividends=0.01)
        ensemble = simulate_original(spec, n_steps=20, n_paths=20000, noise=NoisePlan(seed=11))
        gap = martingale_gap(ensemble, "stock:0")
        self.assertLess(abs(gap.price), 4.0 * gap.stderr)

    def test_companion_requires_limit(self):
        with self.assertRaises(ModelSpecError):
            simulate_original(flat_spec(), n_steps=2, n_paths=2, noise=NoisePlan(seed=0), with_companion=True)

    def test_companion_series_and_recording(self):
        spec = flat_spec(count=4)
        ensemble = simulate_original(
            spec,
            n_steps=4,
            n_paths=10,
            noise=NoisePlan(seed=0),
            with_companion=True,
            limit=limit_from_model(spec),
            record_stocks=[0],
        )
        self.assertEqual(ensemble.stock_names, ["stock:0"])
        self.assertEqual(ensemble.metadata["M"], 4)
        for name in ("companion_index", "companion_reconstructed", "companion_stock:0"):
            self.assertEqual(ensemble.paths(name).shape, (10, 5))
        with self.assertRaises(MissingPathsError):
            ensemble.paths("stock:1")

    def test_companion_matches_model_without_idiosyncratic_vol(self):
        # with eta = 0 and identical betas the basket moves exactly like the limit index
        spec = flat_spec(count=3, eta=0.0, betas=1.0)
        ensemble = simulate_original(
            spec,
            n_steps=10,
            n_paths=50,
            noise=NoisePlan(seed=8),
            with_companion=True,
            limit=limit_from_model(spec),
        )
        assert_allclose(ensemble.paths("index"), ensemble.paths("companion_index"), rtol=1e-12)


class SimplifiedModelTests(SimpleTestCase):
    def test_martingale_and_reconstructed_index(self):
        spec = flat_spec(count=2, rate=0.04, dividends=0.0, weights=[0.5, 0.5])
        ensemble = simulate_simplified(
            limit_from_model(spec),
            stock_specs_from_model(spec),
            n_steps=20,
            n_paths=20000,
            noise=NoisePlan(seed=21),
            weights=spec.weights,
        )
        for name in ("index", "stock:1", "reconstructed"):
            gap = martingale_gap(ensemble, name)
            self.assertLess(abs(gap.price), 4.0 * gap.stderr, msg=name)

    def test_index_ignores_stocks(self):
        limit = flat_limit()
        one = simulate_simplified(limit, [], n_steps=5, n_paths=100, noise=NoisePlan(seed=4))
        spec = flat_spec(count=2)
        two = simulate_simplified(
            limit, stock_specs_from_model(spec), n_steps=5, n_paths=100, noise=NoisePlan(seed=4)
        )
        assert_array_equal(one.paths("index"), two.paths("index"))


class MarketModelTests(SimpleTestCase):
    def _ensemble(self, rho, n_paths=20000):
        vol = constant_surface(0.2, reference_level=100.0)
        return simulate_market_model(
            [vol, vol],
            rho,
            0.0,
            initial_stocks=[100.0, 100.0],
            horizon=1.0,
            n_steps=10,
            n_paths=n_paths,
            noise=NoisePlan(seed=31),
            weights=[0.5, 0.5],
        )

    def test_terminal_correlation(self):
        for rho in (0.0, 0.6):
            ensemble = self._ensemble(rho)
            returns = np.log(np.stack([ensemble.terminal("stock:0"), ensemble.terminal("stock:1")]))
            self.assertAlmostEqual(np.corrcoef(returns)[0, 1], rho, delta=0.03)

    def test_near_unit_correlation_is_comonotone(self):
        spreads = []
        for eps in (1e-2, 1e-4):
            ensemble = self._ensemble(1.0 - eps, n_paths=2000)
            first, second = ensemble.paths("stock:0"), ensemble.paths("stock:1")
            spreads.append(float(np.max(np.abs(first - second) / first)))
        self.assertLess(spreads[1], 0.2 * spreads[0])
        self.assertLess(spreads[1], 0.02)

    def test_rho_range(self):
        with self.assertRaises(ModelSpecError):
            self._ensemble(1.0, n_paths=10)
        with self.assertRaises(ModelSpecError):
            self._ensemble(-0.1, n_paths=10)
