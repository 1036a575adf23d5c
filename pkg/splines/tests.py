import numpy as np
from django.test import SimpleTestCase

from kanscope.exceptions import OutOfDomainError, UnderdeterminedFitError
from .bspline import (
    Grid,
    SplineCurve,
    basis_eval,
    curve_eval,
    fit_least_squares,
    refine_grid,
)


def recursive_basis(i, k, t, x):
    """Textbook Cox-de Boor recursion, one basis function at a time."""
    if k == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = 0.0
    if t[i + k] != t[i]:
        left = (x - t[i]) / (t[i + k] - t[i]) * recursive_basis(i, k - 1, t, x)
    right = 0.0
    if t[i + k + 1] != t[i + 1]:
        right = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * recursive_basis(i + 1, k - 1, t, x)
    return left + right


class GridTest(SimpleTestCase):
    """Test cases for grid construction."""

    def test_uniform_grid_basis_count(self):
        """Test that a uniform grid carries G + k basis functions."""
        grid = Grid.uniform(5, 3, -1.0, 1.0)
        self.assertEqual(grid.num_basis, 8)
        self.assertEqual(grid.num_intervals, 5)
        self.assertEqual(grid.knots.size, 5 + 2 * 3 + 1)
        self.assertEqual(grid.domain, (-1.0, 1.0))

    def test_adaptive_grid_is_increasing(self):
        """Test that quantile knots stay strictly increasing on clustered samples."""
        samples = np.concatenate([np.zeros(50), np.linspace(-1, 1, 50)])
        grid = Grid.adaptive(samples, 10, 3)
        self.assertTrue(np.all(np.diff(grid.knots) > 0))

    def test_invalid_grid(self):
        """Test that a nonpositive interval count is rejected."""
        with self.assertRaises(ValueError):
            Grid.uniform(0, 3, -1.0, 1.0)


class BasisEvalTest(SimpleTestCase):
    """Test cases for basis evaluation."""

    def setUp(self):
        self.grid = Grid.uniform(5, 3, -1.0, 1.0)

    def test_degree_zero_is_indicator(self):
        """Test that order-0 bases are interval indicators."""
        grid = Grid.uniform(4, 0, 0.0, 1.0)
        np.testing.assert_array_equal(basis_eval(0.25, grid), [0.0, 1.0, 0.0, 0.0])

    def test_partition_of_unity(self):
        """Test that cubic bases sum to one across the domain."""
        xs = np.linspace(-1.0, 1.0, 401)
        sums = basis_eval(xs, self.grid).sum(axis=-1)
        self.assertLess(np.max(np.abs(sums - 1.0)), 1e-12)

    def test_local_support(self):
        """Test that at most k + 1 bases are nonzero."""
        xs = np.linspace(-1.0, 1.0, 101)
        values = basis_eval(xs, self.grid)
        self.assertTrue(np.all(values >= 0))
        self.assertLessEqual(int((values > 0).sum(axis=-1).max()), 4)

    def test_matches_recursive_oracle(self):
        """Test the single interior cubic basis against the recursive definition."""
        knots = np.arange(5.0)
        grid = Grid(knots, 3)
        values = basis_eval(2.0, grid)
        self.assertEqual(values.shape, (1,))
        self.assertAlmostEqual(values[0], recursive_basis(0, 3, knots, 2.0), places=14)
        self.assertAlmostEqual(values[0], 2.0 / 3.0, places=14)

    def test_full_grid_matches_oracle(self):
        """Test every basis function of an extended grid against the oracle."""
        xs = np.linspace(-0.95, 0.95, 23)
        values = basis_eval(xs, self.grid)
        for row, x in zip(values, xs):
            expected = [recursive_basis(i, 3, self.grid.knots, x) for i in range(self.grid.num_basis)]
            np.testing.assert_allclose(row, expected, atol=1e-13)

    def test_out_of_domain(self):
        """Test strict mode errors and training mode clamps."""
        lo, hi = self.grid.span
        with self.assertRaises(OutOfDomainError):
            basis_eval(hi + 1.0, self.grid)
        clamped = basis_eval(hi + 1.0, self.grid, strict=False)
        np.testing.assert_allclose(clamped, basis_eval(hi, self.grid))


class CurveEvalTest(SimpleTestCase):
    """Test cases for curve evaluation and derivatives."""

    def setUp(self):
        self.grid = Grid.uniform(10, 3, -1.0, 1.0)
        self.xs = np.linspace(-1.0, 1.0, 400)

    def test_zero_curve(self):
        """Test that a zero curve and its derivatives vanish."""
        curve = SplineCurve(self.grid)
        for order in (0, 1, 2):
            np.testing.assert_array_equal(curve_eval(curve, self.xs, order), 0.0)

    def test_linearity_in_coefficients(self):
        """Test that evaluation is linear in the coefficient vector."""
        rng = np.random.default_rng(0)
        c1, c2 = rng.normal(size=(2, self.grid.num_basis))
        combined = curve_eval(SplineCurve(self.grid, 2.0 * c1 - 3.0 * c2), self.xs)
        separate = 2.0 * curve_eval(SplineCurve(self.grid, c1), self.xs) - 3.0 * curve_eval(SplineCurve(self.grid, c2), self.xs)
        np.testing.assert_allclose(combined, separate, atol=1e-12)

    def test_identity_fit(self):
        """Test a fit of f(x) = x evaluated at 0.5."""
        curve = fit_least_squares(self.xs, self.xs, self.grid)
        self.assertAlmostEqual(curve_eval(curve, 0.5), 0.5, delta=1e-6)

    def test_sine_derivative(self):
        """Test the analytic first derivative of a sine fit."""
        curve = fit_least_squares(self.xs, np.sin(self.xs), self.grid)
        self.assertAlmostEqual(curve_eval(curve, 0.0, 1), 1.0, delta=1e-3)

    def test_derivatives_match_finite_differences(self):
        """Test first and second derivatives against central differences."""
        rng = np.random.default_rng(1)
        curve = SplineCurve(self.grid, rng.normal(size=self.grid.num_basis))
        xs = np.linspace(-0.87, 0.87, 30)
        h = 1e-5
        fd1 = (curve(xs + h) - curve(xs - h)) / (2 * h)
        fd2 = (curve(xs + h, 1) - curve(xs - h, 1)) / (2 * h)
        scale1 = np.maximum(np.abs(fd1), 1.0)
        scale2 = np.maximum(np.abs(fd2), 1.0)
        self.assertLess(np.max(np.abs(curve(xs, 1) - fd1) / scale1), 1e-4)
        self.assertLess(np.max(np.abs(curve(xs, 2) - fd2) / scale2), 1e-4)


class FitLeastSquaresTest(SimpleTestCase):
    """Test cases for least-squares spline fitting."""

    def setUp(self):
        self.xs = np.linspace(-1.0, 1.0, 500)

    def test_constant_is_exact(self):
        """Test that constants are reproduced exactly."""
        grid = Grid.uniform(7, 3, -1.0, 1.0)
        curve = fit_least_squares(self.xs, np.full_like(self.xs, 2.5), grid)
        self.assertLess(np.max(np.abs(curve(self.xs) - 2.5)), 1e-10)

    def test_cubic_is_exact(self):
        """Test that cubic polynomials lie in the spline space."""
        ys = 0.3 * self.xs ** 3 - self.xs ** 2 + 2 * self.xs - 0.7
        for G in (1, 3, 8):
            curve = fit_least_squares(self.xs, ys, Grid.uniform(G, 3, -1.0, 1.0))
            self.assertLess(np.max(np.abs(curve(self.xs) - ys)), 1e-9)

    def test_too_few_samples(self):
        """Test that fewer samples than bases is rejected."""
        grid = Grid.uniform(10, 3, -1.0, 1.0)
        with self.assertRaises(UnderdeterminedFitError):
            fit_least_squares(self.xs[:5], self.xs[:5], grid)

    def test_empty_cells_use_ridge(self):
        """Test that samples missing whole cells still give a finite fit."""
        xs = np.concatenate([np.linspace(-1.0, -0.6, 40), np.linspace(0.6, 1.0, 40)])
        curve = fit_least_squares(xs, np.sin(xs), Grid.uniform(10, 3, -1.0, 1.0))
        self.assertTrue(np.all(np.isfinite(curve.coef)))
        self.assertLess(np.max(np.abs(curve(xs) - np.sin(xs))), 1e-3)

    def _sine_mse(self, G):
        curve = fit_least_squares(self.xs, np.sin(self.xs), Grid.uniform(G, 3, -1.0, 1.0))
        probe = np.linspace(-1.0, 1.0, 2001)
        return np.mean((curve(probe) - np.sin(probe)) ** 2)

    def test_doubling_grid_ratio(self):
        """Test that doubling G divides the error by about 2^8."""
        ratio = self._sine_mse(10) / self._sine_mse(20)
        self.assertGreater(ratio, 2 ** 8 / 4)
        self.assertLess(ratio, 2 ** 8 * 4)

    def test_convergence_slope(self):
        """Test the log-log slope of MSE against G for cubic splines."""
        grids = np.array([5, 10, 20, 40])
        mses = np.array([self._sine_mse(G) for G in grids])
        slope = np.polyfit(np.log(grids), np.log(mses), 1)[0]
        self.assertGreaterEqual(slope, -9.0)
        self.assertLessEqual(slope, -7.0)


class RefineGridTest(SimpleTestCase):
    """Test cases for grid refinement."""

    def setUp(self):
        self.xs = np.linspace(-1.0, 1.0, 300)
        self.coarse = fit_least_squares(self.xs, np.sin(3 * self.xs), Grid.uniform(5, 3, -1.0, 1.0))
        self.residual = np.max(np.abs(self.coarse(self.xs) - np.sin(3 * self.xs)))

    def test_constant_stays_constant(self):
        """Test refining a constant curve from 5 to 50 intervals."""
        constant = fit_least_squares(self.xs, np.full_like(self.xs, -1.25), Grid.uniform(5, 3, -1.0, 1.0))
        refined = refine_grid(constant, 50, self.xs)
        self.assertEqual(refined.grid.num_intervals, 50)
        self.assertLess(np.max(np.abs(refined(self.xs) + 1.25)), 1e-10)

    def test_refinement_reproduces_coarse_curve(self):
        """Test that a finer grid reproduces the coarse curve."""
        refined = refine_grid(self.coarse, 40, self.xs)
        self.assertLess(np.max(np.abs(refined(self.xs) - self.coarse(self.xs))), self.residual)

    def test_round_trip(self):
        """Test refining up then back down."""
        back = refine_grid(refine_grid(self.coarse, 40, self.xs), 5, self.xs)
        self.assertLessEqual(np.max(np.abs(back(self.xs) - self.coarse(self.xs))), 2 * self.residual)

    def test_adaptive_refinement(self):
        """Test that quantile knots follow the sample range."""
        refined = refine_grid(self.coarse, 10, self.xs * 0.5, adaptive=True)
        self.assertAlmostEqual(refined.grid.domain[0], -0.5)
        self.assertAlmostEqual(refined.grid.domain[1], 0.5)

    def test_empty_samples(self):
        """Test that refinement needs samples."""
        with self.assertRaises(UnderdeterminedFitError):
            refine_grid(self.coarse, 10, [])
