import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from coupling.constants import (
    MODEL_DIFFERENCE_COLUMNS,
    MODEL_SMILE_COLUMNS,
    SMILE_COLUMNS,
    SMILE_STATUS_ABOVE_SPOT,
    SMILE_STATUS_BELOW_INTRINSIC,
    SMILE_STATUS_OK,
    WORST_OF_COLUMNS,
)
from coupling.exceptions import ImpliedVolBandError, MissingPathsError, ModelSpecError, SimulationError
from coupling.services.model_core import StockSpec, limit_from_model
from coupling.services.pricing import (
    band_status,
    calibrate_equicorrelation,
    compare_models,
    euler_forward,
    implied_vol,
    lognormal_call,
    mc_vanilla,
    no_arbitrage_band,
    smile,
    worst_of_price,
)
from coupling.services.sde_engine import NoisePlan, simulate_market_model, simulate_original, simulate_simplified
from coupling.services.vol_surface import constant_surface
from coupling.tests.helpers import flat_limit, flat_spec


def _market(vol=0.2, *, count=1, rho=0.0, n_paths=20000, n_steps=10, seed=7, rate=0.0):
    surface = constant_surface(vol, reference_level=100.0)
    return simulate_market_model(
        [surface] * count,
        rho,
        rate,
        initial_stocks=[100.0] * count,
        horizon=1.0,
        n_steps=n_steps,
        n_paths=n_paths,
        noise=NoisePlan(seed=seed),
        weights=[1.0 / count] * count,
    )


class LognormalTests(SimpleTestCase):
    def test_reference_value(self):
        self.assertAlmostEqual(lognormal_call(100.0, 100.0, 1.0, 0.0, 0.0, 0.2), 7.965567455405804, places=10)

    def test_zero_vol_is_discounted_intrinsic(self):
        price = lognormal_call(100.0, 90.0, 1.0, 0.05, 0.0, 0.0)
        self.assertAlmostEqual(price, 100.0 - 90.0 * np.exp(-0.05))

    def test_broadcasts(self):
        prices = lognormal_call(100.0, [90.0, 100.0, 110.0], 1.0, 0.0, 0.0, 0.2)
        self.assertEqual(prices.shape, (3,))
        self.assertTrue(np.all(np.diff(prices) < 0))

    def test_band(self):
        low, high = no_arbitrage_band(100.0, 80.0, 1.0, 0.05, 0.02)
        self.assertAlmostEqual(low, 100.0 * np.exp(-0.02) - 80.0 * np.exp(-0.05))
        self.assertAlmostEqual(high, 100.0 * np.exp(-0.02))


class ImpliedVolTests(SimpleTestCase):
    def test_round_trip_sweep(self):
        strikes = np.linspace(80.0, 120.0, 10)
        vols = np.linspace(0.1, 0.8, 5)
        for K in strikes:
            for sigma in vols:
                price = lognormal_call(100.0, K, 1.0, 0.03, 0.01, sigma)
                self.assertLess(abs(implied_vol(price, 100.0, K, 1.0, 0.03, 0.01) - sigma), 1e-7, msg=f"K={K}, sigma={sigma}")

    def test_below_intrinsic(self):
        with self.assertRaises(ImpliedVolBandError) as ctx:
            implied_vol(5.0, 100.0, 90.0, 1.0, 0.0)
        self.assertEqual(band_status(ctx.exception), SMILE_STATUS_BELOW_INTRINSIC)

    def test_above_spot(self):
        with self.assertRaises(ImpliedVolBandError) as ctx:
            implied_vol(100.0, 100.0, 90.0, 1.0, 0.0)
        self.assertEqual(band_status(ctx.exception), SMILE_STATUS_ABOVE_SPOT)

    def test_bad_inputs(self):
        with self.assertRaises(ModelSpecError):
            implied_vol(1.0, 100.0, 0.0, 1.0, 0.0)

    def test_wide_bracket(self):
        price = lognormal_call(100.0, 100.0, 1.0, 0.0, 0.0, 7.0)
        self.assertAlmostEqual(implied_vol(price, 100.0, 100.0, 1.0, 0.0), 7.0, places=5)


class MonteCarloTests(SimpleTestCase):
    def test_vanilla_matches_lognormal_on_constant_vols(self):
        limit = flat_limit(sigma=0.2, rate=0.03)
        stock = StockSpec(s0=100.0, beta=1.0, dividend=0.01, idio_vol=constant_surface(0.25, reference_level=100.0))
        ensemble = simulate_simplified(limit, [stock], n_steps=20, n_paths=20000, noise=NoisePlan(seed=12))
        total = np.sqrt(0.2 ** 2 + 0.25 ** 2)
        for K in (90.0, 100.0, 110.0):
            estimate = mc_vanilla(ensemble, "stock:0", K)
            exact = lognormal_call(100.0, K, 1.0, 0.03, 0.01, total)
            self.assertLess(abs(estimate.price - exact), 4.0 * estimate.stderr + 0.05, msg=f"K={K}")

    def test_control_variate_tightens_the_estimate(self):
        ensemble = _market(n_paths=20000, rate=0.05)
        self.assertAlmostEqual(euler_forward(ensemble, "stock:0"), 100.0 * 1.005 ** 10)
        exact = lognormal_call(100.0, 100.0, 1.0, 0.05, 0.0, 0.2)
        plain = mc_vanilla(ensemble, "stock:0", 100.0)
        controlled = mc_vanilla(ensemble, "stock:0", 100.0, control=True)
        self.assertLess(controlled.stderr, 0.6 * plain.stderr)
        self.assertLess(abs(controlled.price - exact), 4.0 * controlled.stderr + 0.02)

    def test_control_variate_needs_a_stock(self):
        with self.assertRaises(ModelSpecError):
            mc_vanilla(_market(n_paths=10), "index", 100.0, control=True)

    def test_maturity_must_be_on_grid(self):
        ensemble = _market(n_paths=10, n_steps=4)
        self.assertGreaterEqual(mc_vanilla(ensemble, "stock:0", 100.0, T=0.5).stderr, 0.0)
        with self.assertRaises(ModelSpecError):
            mc_vanilla(ensemble, "stock:0", 100.0, T=0.3)

    def test_single_stock_worst_of_is_vanilla_on_performance(self):
        ensemble = _market(n_paths=500)
        worst = worst_of_price(ensemble, 1.0, stocks=["stock:0"])
        vanilla = mc_vanilla(ensemble, "stock:0", 100.0)
        self.assertAlmostEqual(100.0 * worst.price, vanilla.price, places=9)

    def test_worst_of_below_each_vanilla(self):
        ensemble = _market(count=3, rho=0.5, n_paths=2000)
        worst = worst_of_price(ensemble, 0.9)
        for j in range(3):
            self.assertLessEqual(100.0 * worst.price, mc_vanilla(ensemble, f"stock:{j}", 90.0).price + 1e-9)

    def test_vanilla_non_increasing_in_strike(self):
        ensemble = _market(n_paths=3000)
        prices = [mc_vanilla(ensemble, "stock:0", K).price for K in np.linspace(60.0, 160.0, 41)]
        self.assertTrue(np.all(np.diff(prices) <= 0.0), msg=str(prices))

    def test_comonotone_worst_of_is_single_stock_price(self):
        ensemble = _market(count=3, rho=1.0 - 1e-6, n_paths=20000)
        worst = worst_of_price(ensemble, 1.0)
        single = worst_of_price(ensemble, 1.0, stocks=["stock:0"])
        self.assertLessEqual(abs(worst.price - single.price), 3.0 * np.hypot(worst.stderr, single.stderr))

    def test_worst_of_needs_every_stock(self):
        spec = flat_spec(count=4)
        ensemble = simulate_original(spec, n_steps=2, n_paths=10, noise=NoisePlan(seed=0), record_stocks=[0])
        with self.assertRaises(MissingPathsError):
            worst_of_price(ensemble, 1.0)


class SmileTests(SimpleTestCase):
    def test_flat_for_constant_vol(self):
        curve = smile(_market(), "stock:0", [0.9, 1.0, 1.1])
        self.assertEqual(curve.statuses, (SMILE_STATUS_OK,) * 3)
        assert_allclose(curve.implied_vols, 0.2, atol=0.01)
        self.assertEqual(curve.vol_at(1.0), curve.implied_vols[1])
        self.assertEqual(list(curve.to_frame().columns), SMILE_COLUMNS)

    def test_out_of_band_strike_is_marked(self):
        # 10 paths of a 5% vol stock never finish far out of the money
        curve = smile(_market(0.05, n_paths=10), "stock:0", [1.0, 3.0])
        self.assertEqual(curve.statuses[1], SMILE_STATUS_BELOW_INTRINSIC)
        self.assertTrue(np.isnan(curve.implied_vols[1]))

    def test_moneyness_must_increase(self):
        with self.assertRaises(ModelSpecError):
            smile(_market(n_paths=10), "stock:0", [1.0, 0.9])


class EquicorrelationTests(SimpleTestCase):
    def _calibrate(self, target):
        surface = constant_surface(0.2, reference_level=100.0)
        return calibrate_equicorrelation(
            [surface, surface],
            target,
            initial_stocks=[100.0, 100.0],
            weights=[0.5, 0.5],
            rate=0.0,
            horizon=1.0,
            n_steps=10,
            n_paths=5000,
            noise=NoisePlan(seed=4),
        )

    def test_matches_basket_vol(self):
        # two equal 20% stocks: basket vol ~ 0.2 sqrt((1 + rho) / 2)
        self.assertAlmostEqual(self._calibrate(0.16), 0.28, delta=0.1)

    def test_unreachable_target(self):
        with self.assertRaises(SimulationError):
            self._calibrate(0.9)


class CompareModelsTests(SimpleTestCase):
    def test_frames(self):
        spec = flat_spec(count=3, rate=0.02)
        result = compare_models(
            spec,
            limit_from_model(spec),
            moneyness=[0.9, 1.0, 1.1],
            strikes=[0.9, 1.0],
            n_steps=5,
            n_paths=2000,
            noise=NoisePlan(seed=6),
            rho=0.5,
        )
        self.assertEqual(list(result.smiles.columns), MODEL_SMILE_COLUMNS)
        self.assertEqual(len(result.smiles), 21)
        self.assertEqual(list(result.differences.columns), MODEL_DIFFERENCE_COLUMNS)
        self.assertEqual(len(result.differences), 15)
        self.assertTrue((result.differences["difference_bp"] >= 0).all())
        self.assertEqual(list(result.worst_of.columns), WORST_OF_COLUMNS)
        self.assertEqual(len(result.worst_of), 6)
        self.assertEqual(result.rho, 0.5)
        self.assertEqual(len(result.market_vols), 3)
