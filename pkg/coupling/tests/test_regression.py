import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from coupling.exceptions import KernelDegenerateError, ModelSpecError, RankDeficiencyError
from coupling.services.regression import (
    BasisSpec,
    KernelConfig,
    accelerated_nw_all,
    evaluate_parametric,
    fit_parametric,
    kernel_regression,
    nadaraya_watson,
    polynomial_basis,
    smoothed_bandwidth,
    window_radius,
)

finite = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False)


class NadarayaWatsonTests(SimpleTestCase):
    @settings(max_examples=1000, deadline=None)
    @given(
        st.lists(st.tuples(finite, finite), min_size=1, max_size=30),
        finite,
        st.floats(min_value=20.0, max_value=50.0),
    )
    def test_convex_combination_bounds(self, pairs, x, h):
        xs, ys = zip(*pairs)
        estimate = nadaraya_watson(xs, ys, x, h)
        self.assertGreaterEqual(estimate, min(ys))
        self.assertLessEqual(estimate, max(ys))

    def test_constant_response(self):
        self.assertAlmostEqual(nadaraya_watson([1.0, 2.0, 5.0], [0.3, 0.3, 0.3], 2.5, 0.7), 0.3)

    def test_symmetric_pair(self):
        self.assertAlmostEqual(nadaraya_watson([-1.0, 1.0], [0.0, 2.0], 0.0, 1.0), 1.0)

    def test_underflow(self):
        with self.assertRaises(KernelDegenerateError):
            nadaraya_watson([0.0], [1.0], 1e3, 1e-3)

    def test_bad_inputs(self):
        with self.assertRaises(ModelSpecError):
            nadaraya_watson([], [], 0.0, 1.0)
        with self.assertRaises(ModelSpecError):
            nadaraya_watson([0.0], [1.0], 0.0, 0.0)


class KernelRegressionTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.xs = np.sort(100.0 * np.exp(0.6 * rng.standard_normal(5000)))
        self.ys = 0.04 + 0.001 * np.sin(self.xs / 10.0)

    def test_full_sum_matches_single_query_estimator(self):
        h = 5000 ** -0.2
        queries = self.xs[::500]
        result = kernel_regression(self.xs, self.ys, queries, h)
        expected = [nadaraya_watson(self.xs, self.ys, q, h) for q in queries]
        assert_allclose(result.values, expected, rtol=1e-12)
        self.assertEqual(result.interactions, queries.size * self.xs.size)

    def test_zero_threshold_is_bit_identical_to_naive(self):
        h = 5000 ** -0.1
        naive = kernel_regression(self.xs, self.ys, self.xs, h)
        accelerated = accelerated_nw_all(self.xs, self.ys, h, 0.0)
        assert_array_equal(naive.values, accelerated.values)
        self.assertEqual(naive.interactions, accelerated.interactions)

    def test_threads_do_not_change_values(self):
        h = 5000 ** -0.1
        one = accelerated_nw_all(self.xs, self.ys, h, 1.0 / 5000, threads=1)
        four = accelerated_nw_all(self.xs, self.ys, h, 1.0 / 5000, threads=4)
        assert_array_equal(one.values, four.values)
        self.assertEqual(one.interactions, four.interactions)

    def test_threshold_reduces_interactions(self):
        rng = np.random.default_rng(1)
        n = 10_000
        xs = np.sort(100.0 * np.exp(0.6 * rng.standard_normal(n)))
        ys = 0.04 * np.ones(n)
        h = n ** -0.1
        naive = accelerated_nw_all(xs, ys, h, 0.0)
        accelerated = accelerated_nw_all(xs, ys, h, 1.0 / n)
        self.assertGreaterEqual(naive.interactions, 5 * accelerated.interactions)
        assert_allclose(accelerated.values, 0.04, rtol=1e-12)

    def test_uncovered_query_falls_back_to_nearest_particle(self):
        xs = np.array([0.0, 1.0, 2.0])
        ys = np.array([10.0, 20.0, 30.0])
        result = kernel_regression(xs, ys, np.array([1.0, 1e4]), 0.01)
        self.assertEqual(result.fallbacks, 1)
        assert_array_equal(result.covered, [True, False])
        self.assertEqual(result.values[1], 30.0)

    def test_three_particles_by_hand(self):
        xs = np.array([0.0, 1.0, 2.0])
        ys = np.array([0.0, 1.0, 4.0])
        near, far = math.exp(-0.5), math.exp(-2.0)
        expected = [
            (near + 4.0 * far) / (1.0 + near + far),
            (1.0 + 4.0 * near) / (1.0 + 2.0 * near),
            (near + 4.0) / (1.0 + near + far),
        ]
        result = accelerated_nw_all(xs, ys, 1.0, 0.0)
        assert_allclose(result.values, expected, rtol=1e-12)
        self.assertEqual(result.interactions, 9)

    def test_threshold_severs_distant_clusters(self):
        h = 1.0
        left = np.linspace(0.0, 0.4, 5)
        right = 20.0 * h + np.linspace(0.0, 0.4, 5)
        xs = np.concatenate([left, right])
        ys = np.array([1.0, 2.0, 0.5, 3.0, 1.5, 10.0, 12.0, 11.0, 9.0, 13.0])
        result = accelerated_nw_all(xs, ys, h, 1e-3)
        expected = [nadaraya_watson(left, ys[:5], x, h) for x in left]
        expected += [nadaraya_watson(right, ys[5:], x, h) for x in right]
        assert_allclose(result.values, expected, rtol=1e-12)
        self.assertEqual(result.interactions, 2 * 5 * 5)

    def test_unsorted_input_rejected(self):
        with self.assertRaises(ModelSpecError):
            accelerated_nw_all(np.array([2.0, 1.0]), np.array([0.0, 0.0]), 1.0, 0.0)


class KernelConfigTests(SimpleTestCase):
    def test_bandwidth_and_threshold(self):
        config = KernelConfig(exponent=0.2, mode="accelerated")
        self.assertAlmostEqual(config.bandwidth(100_000), 100_000 ** -0.2)
        self.assertAlmostEqual(config.resolved_threshold(1000), 1e-3)
        self.assertEqual(KernelConfig().resolved_threshold(1000), 0.0)

    def test_default_exponent_follows_mode(self):
        self.assertEqual(KernelConfig().exponent, 0.2)
        accelerated = KernelConfig(mode="accelerated")
        self.assertEqual(accelerated.exponent, 0.1)
        self.assertAlmostEqual(accelerated.bandwidth(1000), 1000 ** -0.1)
        self.assertAlmostEqual(smoothed_bandwidth(1000), 0.501187, places=6)

    def test_validation(self):
        for kwargs in ({"exponent": 1.5}, {"threshold": -1.0}, {"mode": "fast"}, {"scale": 0.0}):
            with self.assertRaises(ModelSpecError, msg=str(kwargs)):
                KernelConfig(**kwargs)

    def test_window_radius(self):
        self.assertTrue(math.isinf(window_radius(0.5, 0.0)))
        self.assertEqual(window_radius(0.5, 1.0), 0.0)
        # kernel value at the radius equals the threshold
        radius = window_radius(0.5, 1e-3)
        self.assertAlmostEqual(math.exp(-0.5 * (radius / 0.5) ** 2) / math.sqrt(2 * math.pi), 1e-3)


class ParametricTests(SimpleTestCase):
    def test_recovers_polynomial(self):
        xs = np.linspace(-2.0, 2.0, 50)
        ys = 1.0 + 2.0 * xs + 3.0 * xs ** 2
        basis = polynomial_basis(2)
        coefficients = fit_parametric(xs, ys, basis)
        assert_allclose(coefficients, [1.0, 2.0, 3.0], atol=1e-9)
        assert_allclose(evaluate_parametric(coefficients, basis, [0.5]), [2.75], atol=1e-9)

    def test_residual_orthogonal_to_basis(self):
        rng = np.random.default_rng(4)
        xs = rng.uniform(0.5, 1.5, 400)
        ys = np.exp(-xs) + 0.05 * rng.standard_normal(400)
        basis = polynomial_basis(3)
        coefficients = fit_parametric(xs, ys, basis)
        design = np.column_stack([f(xs) for f in basis.functions])
        residual = ys - design @ coefficients
        scale = np.linalg.norm(design, axis=0) * np.linalg.norm(ys)
        self.assertTrue(np.all(np.abs(design.T @ residual) <= 1e-8 * scale))

    def test_names_dependent_function(self):
        basis = BasisSpec(
            functions=(lambda x: np.ones_like(x), lambda x: x, lambda x: 2.0 * x),
            names=("1", "x", "2x"),
        )
        with self.assertRaisesMessage(RankDeficiencyError, "2x"):
            fit_parametric(np.linspace(0.0, 1.0, 10), np.zeros(10), basis)

    def test_too_few_samples(self):
        with self.assertRaises(RankDeficiencyError):
            fit_parametric([1.0, 2.0], [0.0, 1.0], polynomial_basis(3))
