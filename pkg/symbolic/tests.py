import numpy as np
from django.test import tag

from attribution.pruning import prune
from attribution.scores import compute_attribution
from kanpiler.compiler import compile_to_kan
from kanpiler.corpus import FORMULA_CORPUS
from kanpiler.expressions import PRODUCT, eval_expr
from kanpiler.parser import parse_formula
from kanscope.exceptions import (
    DegenerateInputError,
    EvaluationDomainError,
    MissingCacheError,
    NotFullySymbolicError,
    UnknownPrimitiveError,
)
from networks.models import MultKanModel
from networks.test_base import BaseTestCase
from training.trainer import Dataset, TrainConfig, train
from workspace.tasks import builtin_task, gen_dataset
from .fitting import fit_primitive, score_samples, suggest_for_samples, suggest_symbolic
from .fixing import auto_symbolic, fix_symbolic, set_edge_zero, spline_edges, unfix_symbolic
from .formula import MAX_DIGITS, extract_formula, formula_error, formula_text
from .library import LIBRARY, get_primitive, resolve_library


class LibraryTest(BaseTestCase):
    """Test cases for the primitive library."""

    def test_aliases(self):
        """Test lookup by alias."""
        self.assertEqual(get_primitive('square').name, 'x^2')
        self.assertEqual(get_primitive('inverse_sqrt').name, 'x^-0.5')

    def test_unknown_primitive(self):
        """Test that unknown names are rejected."""
        with self.assertRaises(UnknownPrimitiveError):
            get_primitive('sinh')

    def test_resolve_orders_by_complexity(self):
        """Test that subsets come back simplest first."""
        names = [p.name for p in resolve_library(['sin', 'identity', 'exp'])]
        self.assertEqual(names, ['x', 'exp', 'sin'])
        self.assertEqual(len(resolve_library()), len(LIBRARY))

    def test_strict_and_guarded_evaluation(self):
        """Test strict domains and guarded evaluation."""
        log = get_primitive('log')
        with self.assertRaises(EvaluationDomainError):
            log.evaluate(np.array([-1.0, 1.0]))
        self.assertTrue(np.all(np.isfinite(log.evaluate(np.array([-1.0, 0.0]), strict=False))))

    def test_derivatives(self):
        """Test library derivatives against central differences."""
        u = np.linspace(0.2, 0.8, 7)
        h = 1e-6
        for primitive in LIBRARY.values():
            if primitive.name == 'abs':
                continue
            with self.subTest(primitive=primitive.name):
                numeric = (primitive.evaluate(u + h) - primitive.evaluate(u - h)) / (2 * h)
                self.assertAllClose(primitive.evaluate(u, 1), numeric, atol=1e-5, rtol=1e-6)


class FitPrimitiveTest(BaseTestCase):
    """Test cases for fitting samples against primitives."""

    def test_cosine_in_top_two(self):
        """Test that cosine samples rank cos among the two best matches."""
        x = np.linspace(-np.pi, np.pi, 200)
        ranked = suggest_for_samples(x, np.cos(x))
        self.assertIn('cos', [result.name for result in ranked[:2]])
        self.assertGreater(ranked[0].r2, 0.999)

    def test_linear_ranks_identity_first(self):
        """Test that a linear edge prefers the identity."""
        x = np.linspace(-1.0, 1.0, 100)
        best = suggest_for_samples(x, 2 * x + 1)[0]
        self.assertEqual(best.name, 'x')
        self.assertAllClose(best.affine, (1.0, 0.0, 2.0, 1.0), atol=1e-12)

    def test_affine_recovery(self):
        """Test recovering 2 sin(3x + 1) - 0.5."""
        x = np.linspace(-1.0, 1.0, 200)
        result = fit_primitive(x, 2 * np.sin(3 * x + 1) - 0.5, get_primitive('sin'))
        self.assertAllClose(result.affine, (3.0, 1.0, 2.0, -0.5), rtol=0.05)
        self.assertGreater(result.r2, 0.9999)

    def test_r2_recomputation(self):
        """Test that the reported r2 matches an independent computation."""
        rng = np.random.default_rng(3)
        x = rng.uniform(-1.0, 1.0, 150)
        y = np.exp(x) + 0.05 * rng.normal(size=150)
        result = fit_primitive(x, y, get_primitive('exp'))
        prediction = result.c * np.exp(result.a * x + result.b) + result.d
        expected = 1 - np.sum((y - prediction) ** 2) / np.sum((y - y.mean()) ** 2)
        self.assertAlmostEqual(result.r2, expected, delta=1e-9)
        self.assertAlmostEqual(score_samples(x, y, 'exp', *result.affine), result.r2, delta=1e-12)

    def test_pole_outside_samples(self):
        """Test fitting an inverse whose pole lies off the sample range."""
        x = np.linspace(-1.0, 1.0, 100)
        result = fit_primitive(x, 1.0 / (x + 2.0), get_primitive('1/x'))
        self.assertGreater(result.r2, 0.999)

    def test_ranking_order(self):
        """Test ranking by rounded r2, then complexity."""
        x = np.linspace(-1.0, 1.0, 100)
        ranked = suggest_for_samples(x, x ** 2, top_k=None)
        keys = [result.rank_key() for result in ranked]
        self.assertEqual(keys, sorted(keys))

    def test_degenerate_input(self):
        """Test that constant edge inputs are rejected."""
        with self.assertRaises(DegenerateInputError):
            suggest_for_samples(np.ones(20), np.arange(20.0))


class SuggestSymbolicTest(BaseTestCase):
    """Test cases for suggestions on network edges."""

    def test_requires_cache(self):
        """Test that suggestions need cached activations."""
        model = self.create_test_model()
        with self.assertRaises(MissingCacheError):
            suggest_symbolic(model, (0, 0, 0))

    def test_cached_edge(self):
        """Test suggestions from a cached forward pass."""
        model = self.create_test_model()
        model.propagate(self.probe)
        ranked = suggest_symbolic(model, (0, 1, 2), top_k=3)
        self.assertEqual(len(ranked), 3)
        self.assertEqual(ranked, sorted(ranked, key=lambda result: result.rank_key()))


class FixSymbolicTest(BaseTestCase):
    """Test cases for switching edge modes."""

    def setUp(self):
        super().setUp()
        self.model = self.create_test_model()
        self.model.propagate(self.probe)

    def test_fix_then_unfix_is_exact(self):
        """Test that unfixing restores the network bit for bit."""
        fixed = fix_symbolic(self.model, (0, 1, 2), 'sin')
        self.assertEqual(fixed.edge(0, 1, 2).mode, 'symbolic')
        restored = unfix_symbolic(fixed, (0, 1, 2))
        self.assertTrue(np.array_equal(restored.forward(self.probe), self.model.forward(self.probe)))

    def test_other_edges_untouched(self):
        """Test that fixing one edge leaves every other edge alone."""
        fixed = fix_symbolic(self.model, (0, 1, 2), 'x^2')
        before = self.model.propagate(self.probe, keep_cache=False)[2].records[0].y
        after = fixed.propagate(self.probe, keep_cache=False)[2].records[0].y
        others = np.ones(before.shape[1:], dtype=bool)
        others[1, 2] = False
        self.assertTrue(np.array_equal(after[:, others], before[:, others]))
        self.assertEqual(self.model.edge(0, 1, 2).mode, 'spline')

    def test_identity_fix(self):
        """Test that an unfitted identity edge returns its input exactly."""
        fixed = fix_symbolic(self.model, (0, 0, 0), 'identity', fit_affine=False)
        x = np.linspace(-1.0, 1.0, 11)
        self.assertTrue(np.array_equal(fixed.edge(0, 0, 0)(x), x))

    def test_freeze(self):
        """Test freezing a fixed edge."""
        fixed = fix_symbolic(self.model, (1, 0, 0), 'tanh', freeze=True)
        self.assertTrue(fixed.edge(1, 0, 0).frozen)

    def test_set_edge_zero(self):
        """Test zeroing an edge."""
        zeroed = set_edge_zero(self.model, (0, 0, 1))
        self.assertFalse(np.any(zeroed.edge(0, 0, 1)(np.linspace(-1.0, 1.0, 9))))


class AutoSymbolicTest(BaseTestCase):
    """Test cases for fixing every edge at once."""

    def setUp(self):
        super().setUp()
        self.model = self.create_test_model()
        self.model.propagate(self.probe)

    def test_floor_above_one(self):
        """Test that an unreachable floor resolves nothing."""
        result, report = auto_symbolic(self.model, library=['x', 'sin'], r2_floor=1.1)
        self.assertEqual(len(report.unresolved), 9)
        self.assertEqual(report.resolved, [])
        self.assertFunctionPreserved(self.model, result, self.probe, atol=0.0)

    def test_zero_floor(self):
        """Test that a zero floor fixes every edge."""
        result, report = auto_symbolic(self.model, library=['x', 'x^2', 'sin'], r2_floor=0.0)
        self.assertEqual(len(report.resolved), 9)
        self.assertEqual(list(spline_edges(result)), [])
        self.assertEqual(len(extract_formula(result, X=self.probe)), 1)

    def test_already_symbolic(self):
        """Test that a symbolic network gives an empty report."""
        model = compile_to_kan('sin(x)+x^2', ['x'])
        _, report = auto_symbolic(model)
        self.assertEqual(report.entries, [])


class ExtractFormulaTest(BaseTestCase):
    """Test cases for reading formulas off networks."""

    def test_single_identity(self):
        """Test the formula of a lone identity edge."""
        self.assertEqual(formula_text(extract_formula(self.create_identity_model(1))), 'x1')

    def test_corpus_round_trip(self):
        """Test that extracting a compiled formula gives an equivalent one."""
        for entry in FORMULA_CORPUS:
            with self.subTest(formula=entry.name):
                tree = parse_formula(entry.text, entry.input_names)
                X = entry.sample(60)
                extracted = extract_formula(compile_to_kan(tree, entry.input_names), X=X)
                binding = dict(zip(entry.input_names, X.T))
                self.assertRelativeError(eval_expr(extracted[0], binding),
                                         eval_expr(tree, binding), 1e-9)

    def test_product_structure(self):
        """Test that a multiplication node comes back as a product."""
        tree = extract_formula(compile_to_kan('x*y', ['x', 'y']))[0]
        self.assertEqual(tree.kind, PRODUCT)
        self.assertEqual(str(tree), 'x*y')

    def test_lossy_rounding_rejected(self):
        """Test that rounding which changes the function is not applied."""
        model = compile_to_kan('1.23456789*sin(x)', ['x'])
        self.assertEqual(formula_text(extract_formula(model)), '1.23456789*sin(x)')
        self.assertEqual(formula_text(extract_formula(model, digits=15)), '1.23456789*sin(x)')

    def test_rounding_within_float_resolution(self):
        """Test that coefficients one ulp off a short decimal are rounded."""
        model = compile_to_kan('0.5*sin(x)+2*x', ['x'])
        expected = formula_text(extract_formula(model))
        nudged = model.copy()
        for layer in nudged.layers:
            layer.affine = np.where(layer.affine != 0, np.nextafter(layer.affine, np.inf), layer.affine)
        self.assertNotEqual(formula_text(extract_formula(nudged, digits=MAX_DIGITS)), expected)
        self.assertEqual(formula_text(extract_formula(nudged)), expected)

    def test_rounding_error_bound(self):
        """Test that the rounded formula stays within twice the unrounded error."""
        model = compile_to_kan('exp(-(x^2+y^2)/0.7)/1.3', ['x', 'y'])
        X = self.probe
        trees = extract_formula(model, X=X)
        unrounded = extract_formula(model, digits=MAX_DIGITS, X=X)
        scale = 1 + np.max(np.abs(model.forward(X)))
        bound = max(2 * formula_error(unrounded, model, ['x', 'y'], X), 1e-15 * scale)
        self.assertLessEqual(formula_error(trees, model, ['x', 'y'], X), bound)

    def test_spline_edges_rejected(self):
        """Test that remaining spline edges are listed."""
        with self.assertRaises(NotFullySymbolicError) as context:
            extract_formula(self.create_test_model())
        self.assertEqual(len(context.exception.offenders), 9)

    def test_multiple_outputs(self):
        """Test one formula per output."""
        trees = extract_formula(compile_to_kan('x+y; sin(x)', ['x', 'y']))
        self.assertEqual(formula_text(trees), 'x+y; sin(x)')


class TrainedSymbolicTest(BaseTestCase):
    """Test cases for symbolic fitting on trained networks."""

    def rmse(self, trees, names, X, Y):
        values = eval_expr(trees[0], dict(zip(names, X.T)))
        return float(np.sqrt(np.mean((np.broadcast_to(values, Y[:, 0].shape) - Y[:, 0]) ** 2)))

    @tag('slow')
    def test_inverse_square_root_suggested(self):
        """Test that the second edge of a kinetic-energy network suggests x^-0.5."""
        v = self.random_inputs(1000, 1, seed=0, low=-0.9, high=0.9)
        dataset = Dataset.split(v, 1 / np.sqrt(1 - v ** 2) - 1, test_fraction=0.2, seed=0)
        model = MultKanModel.create([1, 1, 1], grid=20, seed=0)
        model = fix_symbolic(model, (0, 0, 0), 'square', fit_affine=False, freeze=True)
        log = train(model, dataset, TrainConfig(steps=100, optimizer='lbfgs'))
        self.assertLess(log.final['train_loss'], 1e-2)
        ranked = suggest_symbolic(model, (1, 0, 0), X=dataset.train_inputs)
        self.assertIn('x^-0.5', [result.name for result in ranked])

    @tag('slow')
    def test_trained_product(self):
        """Test train, prune and auto_symbolic on f = xy."""
        X = self.random_inputs(1000, 2, seed=0)
        dataset = Dataset.split(X, X[:, 0] * X[:, 1], test_fraction=0.2, seed=0)
        model = MultKanModel.create([(2, 0), (0, 1), (1, 0)], grid=5, seed=0)
        train(model, dataset, TrainConfig(steps=200, optimizer='lbfgs'))
        pruned = prune(model, compute_attribution(model, dataset.train_inputs))
        train(pruned, dataset, TrainConfig(steps=50, optimizer='lbfgs'))
        result, report = auto_symbolic(pruned, X=dataset.train_inputs)
        self.assertEqual(len(report.resolved), 3)
        self.assertEqual(report.unresolved, [])
        trees = extract_formula(result, X=dataset.train_inputs)
        self.assertLess(self.rmse(trees, result.input_names, dataset.test_inputs, dataset.test_labels), 1e-2)

    @tag('slow')
    def test_neo_hookean_shear(self):
        """Test that the recovered P12 formula has a coefficient in [0.40, 0.44] per product."""
        dataset = gen_dataset(builtin_task('neo-hookean-p12', n_samples=1000, seed=0))
        model = MultKanModel.create([(9, 0), (0, 3), (1, 0)], grid=5, seed=0, grid_range=(-1.3, 1.3),
                                    input_names=dataset.input_names)
        first = model.layers[0]
        first.mask[...] = 0.0
        for k in range(3):
            left, right = model.mult_layer(0).subnodes_of(k)
            first.mask[k, left] = 1.0
            first.mask[3 + k, right] = 1.0
        log = train(model, dataset, TrainConfig(steps=200, optimizer='lbfgs'))
        self.assertLess(log.final['train_loss'], 1e-3)
        pruned = prune(model, compute_attribution(model, dataset.train_inputs))
        result, report = auto_symbolic(pruned, X=dataset.train_inputs)
        self.assertEqual(report.unresolved, [])
        tree = extract_formula(result, X=dataset.train_inputs)[0]

        X = dataset.test_inputs
        values = np.broadcast_to(eval_expr(tree, dict(zip(dataset.input_names, X.T))), (len(X),))
        products = X[:, :3] * X[:, 3:6]
        design = np.column_stack([products, X, np.ones(len(X))])
        coefficients, *_ = np.linalg.lstsq(design, values, rcond=None)
        for c in coefficients[:3]:
            self.assertGreaterEqual(c, 0.40)
            self.assertLessEqual(c, 0.44)
