import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from coupling.exceptions import DegenerateCorrelationError, ModelSpecError
from coupling.services.model_core import (
    cross_correlation,
    limit_from_model,
    optimal_constant,
    proximity_metrics,
    stock_specs_from_model,
)
from coupling.tests.helpers import flat_spec


def _l1(weights, values, m):
    return float(np.sum(np.asarray(weights) * np.abs(np.asarray(values) - m)))


class OptimalConstantTests(SimpleTestCase):
    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=1e-3, max_value=10.0),
                st.floats(min_value=-5.0, max_value=5.0),
            ),
            min_size=1,
            max_size=50,
        )
    )
    def test_matches_brute_force_minimum(self, pairs):
        weights, values = zip(*pairs)
        best = min(_l1(weights, values, v) for v in values)
        chosen = optimal_constant(weights, values)
        self.assertIn(chosen, values)
        self.assertLessEqual(_l1(weights, values, chosen), best + 1e-9 * (1.0 + abs(best)))

    def test_tie_returns_smallest_minimizer(self):
        self.assertEqual(optimal_constant([1.0, 1.0], [3.0, 1.0]), 1.0)

    def test_decimal_weight_tie_returns_smallest_minimizer(self):
        # cumulative weight hits half the total only up to rounding
        weights = [0.2, 0.6, 0.7, 0.1, 0.2, 0.6]
        values = [0.86, 0.08, 0.38, 0.16, 0.38, 0.01]
        self.assertEqual(optimal_constant(weights, values), 0.08)
        self.assertAlmostEqual(_l1(weights, values, 0.08), _l1(weights, values, 0.16))

    def test_weighted_examples(self):
        self.assertEqual(optimal_constant([1.0, 1.0, 1.0], [0.7, 1.1, 1.4]), 1.1)
        self.assertEqual(optimal_constant([3.0, 1.0, 1.0], [0.7, 1.1, 1.4]), 0.7)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.integers(min_value=1, max_value=9), min_size=1, max_size=12),
        st.sampled_from([0.1, 0.3, 0.7, 2.5]),
    )
    def test_scaling_weights_keeps_the_median(self, tenths, factor):
        weights = [t / 10.0 for t in tenths]
        values = [float(i % 5) for i in range(len(tenths))]
        expected = optimal_constant([float(t) for t in tenths], values)
        self.assertEqual(optimal_constant(weights, values), expected)
        self.assertEqual(optimal_constant([w * factor for w in weights], values), expected)

    def test_single_value(self):
        self.assertEqual(optimal_constant([0.3], [1.7]), 1.7)

    def test_rejects_non_positive_weights(self):
        with self.assertRaises(ModelSpecError):
            optimal_constant([1.0, 0.0], [1.0, 2.0])

    def test_rejects_empty(self):
        with self.assertRaises(ModelSpecError):
            optimal_constant([], [])


class ProximityMetricsTests(SimpleTestCase):
    def test_equal_weights_homogeneous_basket(self):
        spec = flat_spec(count=16, betas=0.9, dividends=0.01)
        metrics = proximity_metrics(spec, 0.9, 0.01)
        self.assertAlmostEqual(metrics.p_w, 0.25)
        self.assertEqual(metrics.p_beta, 0.0)
        self.assertEqual(metrics.p_delta, 0.0)

    def test_weighted_deviations(self):
        spec = flat_spec(count=2, weights=[0.25, 0.75], betas=[0.5, 1.5], dividends=[0.0, 0.04])
        metrics = proximity_metrics(spec, 1.0, 0.02)
        self.assertAlmostEqual(metrics.p_beta, 0.5)
        self.assertAlmostEqual(metrics.p_delta, 0.02)
        self.assertAlmostEqual(metrics.p_w, np.sqrt(0.25 ** 2 + 0.75 ** 2))

    def test_scaling_weights_scales_deviations(self):
        kwargs = dict(count=3, betas=[0.6, 1.0, 1.3], dividends=[0.0, 0.01, 0.05])
        base = proximity_metrics(flat_spec(weights=[0.2, 0.5, 0.3], **kwargs), 1.0, 0.02)
        scaled = proximity_metrics(flat_spec(weights=[0.6, 1.5, 0.9], **kwargs), 1.0, 0.02)
        self.assertAlmostEqual(scaled.p_beta, 3.0 * base.p_beta)
        self.assertAlmostEqual(scaled.p_delta, 3.0 * base.p_delta)


class ModelSpecTests(SimpleTestCase):
    def test_broadcast_and_initial_index(self):
        spec = flat_spec(count=4, s0=50.0)
        self.assertEqual(spec.count, 4)
        self.assertAlmostEqual(spec.initial_index, 50.0)
        self.assertEqual(len(spec.idio_vols), 4)

    def test_rejects_non_positive_weight(self):
        with self.assertRaises(ModelSpecError):
            flat_spec(count=2, weights=[0.5, -0.5])

    def test_rejects_length_mismatch(self):
        with self.assertRaises(ModelSpecError):
            flat_spec(count=3, betas=[1.0, 1.0])

    def test_rejects_negative_dividend(self):
        with self.assertRaises(ModelSpecError):
            flat_spec(count=2, dividends=-0.01)

    def test_limit_defaults(self):
        spec = flat_spec(count=3, weights=[0.2, 0.5, 0.3], dividends=[0.0, 0.02, 0.03])
        limit = limit_from_model(spec)
        self.assertEqual(limit.beta, 1.0)
        self.assertEqual(limit.delta, 0.02)
        self.assertEqual(limit.delta_index, limit.delta)
        self.assertAlmostEqual(limit.i0, spec.initial_index)

    def test_stock_specs(self):
        spec = flat_spec(count=2, betas=[0.8, 1.2])
        stocks = stock_specs_from_model(spec)
        self.assertEqual([s.beta for s in stocks], [0.8, 1.2])
        self.assertIs(stocks[0].idio_vol, spec.idio_vols[0])


class CrossCorrelationTests(SimpleTestCase):
    def test_closed_form_on_flat_surfaces(self):
        spec = flat_spec(count=2, sigma=0.2, eta=0.3, betas=[0.5, 1.5])
        rho = cross_correlation(spec, 0, 1, 0.5, 100.0, 100.0, 100.0)
        var_0 = 0.25 * 0.04 + 0.09
        var_1 = 2.25 * 0.04 + 0.09
        self.assertAlmostEqual(rho, 0.75 * 0.04 / np.sqrt(var_0 * var_1))

    def test_worked_example(self):
        spec = flat_spec(count=2, sigma=0.3, eta=0.4, betas=1.0)
        self.assertAlmostEqual(cross_correlation(spec, 0, 1, 0.0, 100.0, 100.0, 100.0), 0.36)

    def test_non_decreasing_in_index_vol(self):
        rhos = [
            cross_correlation(flat_spec(count=2, sigma=sigma, eta=0.3, betas=[0.6, 1.4]), 0, 1, 0.0, 100.0, 100.0, 100.0)
            for sigma in np.linspace(0.01, 1.0, 40)
        ]
        self.assertTrue(np.all(np.diff(rhos) >= 0.0), msg=str(rhos))

    def test_no_systemic_exposure_means_no_correlation(self):
        spec = flat_spec(count=2, sigma=0.3, eta=0.2, betas=[0.0, 1.0])
        self.assertEqual(cross_correlation(spec, 0, 1, 0.0, 100.0, 100.0, 100.0), 0.0)

    def test_no_idiosyncratic_vol_means_perfect_correlation(self):
        spec = flat_spec(count=2, eta=0.0, betas=[0.7, 1.3])
        self.assertAlmostEqual(cross_correlation(spec, 0, 1, 0.0, 100.0, 100.0, 100.0), 1.0)

    def test_same_stock_rejected(self):
        with self.assertRaises(ModelSpecError):
            cross_correlation(flat_spec(count=2), 1, 1, 0.0, 100.0, 100.0, 100.0)

    def test_zero_total_vol_is_degenerate(self):
        spec = flat_spec(count=2, eta=0.0, betas=[0.0, 1.0])
        with self.assertRaises(DegenerateCorrelationError):
            cross_correlation(spec, 0, 1, 0.0, 100.0, 100.0, 100.0)
