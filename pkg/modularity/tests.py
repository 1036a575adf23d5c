import os
import tempfile

import numpy as np
from django.test import tag
from rest_framework import serializers

from attribution.pruning import prune
from attribution.scores import compute_attribution
from kanpiler.compiler import compile_to_kan
from kanscope.exceptions import (
    EvaluationDomainError,
    InconclusiveTestError,
    ModuleSpecError,
    OutOfDomainError,
    WidthSpecError,
)
from networks.models import MultKanModel
from networks.test_base import BaseTestCase
from training.trainer import TrainConfig, train
from workspace.tasks import builtin_task, gen_dataset
from .detection import test_general_separability, test_separability, test_symmetry
from .functions import FunctionHandle, TestConfig, estimate_hessian
from .serializers import TestConfigSerializer, load_test_config
from .swapping import auto_swap, block_crossing_share, connection_cost
from .tree import GENERALIZED, SEPARABLE, tree_convert

POSITIVE_BOX = (0.5, 1.5)


class ModularityTestMixin:
    """Mixin providing formula handles."""

    def formula(self, text, n, domain=None):
        names = [f'x{k + 1}' for k in range(n)]
        return FunctionHandle.from_formula(text, names, domain)


class EstimateHessianTest(ModularityTestMixin, BaseTestCase):
    """Test cases for finite-difference Hessians."""

    def test_bilinear(self):
        """Test the Hessian of x1 x2."""
        H = estimate_hessian(self.formula('x1*x2', 2), [0.3, -0.2])
        self.assertAlmostEqual(H[0, 1], 1.0, delta=1e-5)
        self.assertAllClose(np.diag(H), [0.0, 0.0], atol=1e-5)

    def test_additive_cross_term(self):
        """Test that an additive function has no cross term."""
        f = self.formula('sin(x1)+x2^3', 2)
        for x in self.random_inputs(20, 2, seed=4, low=-0.9, high=0.9):
            self.assertLess(abs(estimate_hessian(f, x)[0, 1]), 1e-6)

    def test_analytic_hessian(self):
        """Test sin(x1 + x2) against its analytic Hessian."""
        x = np.array([0.4, -0.1])
        expected = -np.sin(x.sum()) * np.ones((2, 2))
        self.assertAllClose(estimate_hessian(self.formula('sin(x1+x2)', 2), x), expected, atol=1e-4)

    def test_symmetric(self):
        """Test that the estimate is symmetric."""
        H = estimate_hessian(self.formula('exp(x1*x2)+x2*x3^2', 3), [0.1, 0.2, 0.3])
        self.assertTrue(np.array_equal(H, H.T))

    def test_domain_errors(self):
        """Test points near the boundary and stencils leaving the domain."""
        with self.assertRaises(OutOfDomainError):
            estimate_hessian(self.formula('x1*x2', 2), [0.999, 0.0])
        with self.assertRaises(EvaluationDomainError):
            estimate_hessian(self.formula('log(x1)+x2', 2), [0.001, 0.0])


class SeparabilityTest(ModularityTestMixin, BaseTestCase):
    """Test cases for additive and multiplicative separability."""

    def test_additive(self):
        """Test an additively separable function."""
        passed, score = test_separability(self.formula('sin(x1)+x2^2', 2), [[0], [1]])
        self.assertTrue(passed)
        self.assertLess(score, 1e-3)

    def test_product(self):
        """Test that a product is multiplicatively but not additively separable."""
        f = self.formula('x1*x2', 2)
        self.assertTrue(test_separability(f, [[0], [1]], 'multiplicative')[0])
        self.assertFalse(test_separability(f, [[0], [1]], 'additive')[0])

    def test_entangled(self):
        """Test that sin(x1 + x2) is separable in neither mode."""
        f = self.formula('sin(x1+x2)', 2)
        self.assertFalse(test_separability(f, [[0], [1]], 'additive')[0])
        self.assertFalse(test_separability(f, [[0], [1]], 'multiplicative')[0])

    def test_network_handle(self):
        """Test separability of a compiled product network."""
        f = FunctionHandle.from_model(compile_to_kan('x*y', ['x', 'y']))
        self.assertTrue(test_separability(f, [[0], [1]], 'mul')[0])
        self.assertFalse(test_separability(f, [[0], [1]], 'add')[0])

    def test_zero_function(self):
        """Test that a function vanishing everywhere is inconclusive."""
        f = FunctionHandle.from_callable(lambda X: np.zeros(len(X)), 2)
        with self.assertRaises(InconclusiveTestError):
            test_separability(f, [[0], [1]], 'multiplicative')

    def test_bad_groups(self):
        """Test that groups must partition the variables."""
        f = self.formula('x1+x2+x3', 3)
        with self.assertRaises(ModuleSpecError):
            test_separability(f, [[0], [1]])
        with self.assertRaises(ModuleSpecError):
            test_separability(f, [[0, 1], [1, 2]])
        with self.assertRaises(ModuleSpecError):
            test_separability(f, [[0], [1, 2]], 'sideways')


class GeneralSeparabilityTest(ModularityTestMixin, BaseTestCase):
    """Test cases for generalized separability."""

    def test_square_of_sum(self):
        """Test (x1^2 + x2^2)^2."""
        f = self.formula('(x1^2+x2^2)^2', 2, POSITIVE_BOX)
        self.assertTrue(test_general_separability(f, 1)[0])

    def test_plain_sum(self):
        """Test that a plain sum is also generally separable."""
        self.assertTrue(test_general_separability(self.formula('x1+x2', 2), 1)[0])

    def test_not_separable(self):
        """Test a function whose partial ratio mixes both variables."""
        f = self.formula('x1*x2+x1^2', 2, POSITIVE_BOX)
        self.assertFalse(test_general_separability(f, 1)[0])

    def test_product_inside_function(self):
        """Test that sin(x1 (x2 + 1)) is generally separable on a positive box."""
        f = self.formula('sin(x1*x2+x1)', 2, POSITIVE_BOX)
        self.assertTrue(test_general_separability(f, 1)[0])

    def test_explicit_groups(self):
        """Test a split given as two index lists."""
        f = self.formula('exp(x1+x3^2)+x2', 3, POSITIVE_BOX)
        self.assertTrue(test_general_separability(f, ([0, 2], [1]))[0])

    def test_bad_split(self):
        """Test that the split must leave both sides non-empty."""
        with self.assertRaises(ModuleSpecError):
            test_general_separability(self.formula('x1+x2', 2), 2)


class SymmetryTest(ModularityTestMixin, BaseTestCase):
    """Test cases for generalized symmetry."""

    def test_radial_group(self):
        """Test sin(x1) / sqrt(x2^2 + x3^2) in (x2, x3)."""
        f = self.formula('sin(x1)/sqrt(x2^2+x3^2)', 3, POSITIVE_BOX)
        self.assertTrue(test_symmetry(f, [1, 2])[0])

    def test_all_variables(self):
        """Test that the full set is always symmetric."""
        self.assertEqual(test_symmetry(self.formula('x1*x2+x3', 3), [0, 1, 2]), (True, 0.0))

    def test_asymmetric(self):
        """Test that x1 x2 + x3 is not symmetric in (x1, x3)."""
        self.assertFalse(test_symmetry(self.formula('x1*x2+x3', 3), [0, 2])[0])

    def test_small_group(self):
        """Test that a symmetry group needs two variables."""
        with self.assertRaises(ModuleSpecError):
            test_symmetry(self.formula('x1+x2', 2), [0])

    def test_hierarchy(self):
        """Test separability implies generalized separability implies symmetry."""
        config = TestConfig()
        for text in ('x1+x2+x3^2', 'x1*x2*x3', '(x1^2+x2^2)^2+x3', 'exp(x1+x2)+x3', 'x1*x3+x2'):
            with self.subTest(formula=text):
                f = self.formula(text, 3, POSITIVE_BOX)
                separable = (test_separability(f, [[0, 1], [2]], 'add', config)[0]
                             or test_separability(f, [[0, 1], [2]], 'mul', config)[0])
                general = test_general_separability(f, 2, 'add', config)[0]
                symmetric = test_symmetry(f, [0, 1], config)[0]
                if separable:
                    self.assertTrue(general)
                if general:
                    self.assertTrue(symmetric)

    def test_deterministic(self):
        """Test that a fixed seed repeats the score."""
        f = self.formula('x1*x2+x3', 3)
        self.assertEqual(test_symmetry(f, [0, 2])[1], test_symmetry(f, [0, 2])[1])


class TreeConvertTest(ModularityTestMixin, BaseTestCase):
    """Test cases for tree conversion."""

    def test_two_pairs(self):
        """Test (x1^2 + x2^2)^2 + (x3^2 + x4^2)^2."""
        f = self.formula('(x1^2+x2^2)^2+(x3^2+x4^2)^2', 4, POSITIVE_BOX)
        tree = tree_convert(f)
        self.assertEqual(tree.groups(), {frozenset({0, 1}), frozenset({2, 3}), frozenset({0, 1, 2, 3})})
        self.assertEqual(tree.annotation, 'separable(add)')
        for child in tree.children:
            self.assertEqual(child.kind, GENERALIZED)

    def test_relabeling(self):
        """Test that renaming variables renames the tree."""
        f = self.formula('(x3^2+x1^2)^2+(x4^2+x2^2)^2', 4, POSITIVE_BOX)
        self.assertEqual(tree_convert(f).groups(),
                         {frozenset({0, 2}), frozenset({1, 3}), frozenset({0, 1, 2, 3})})

    def test_sum_of_two(self):
        """Test that x1 + x2 is one additive root."""
        tree = tree_convert(self.formula('x1+x2', 2))
        self.assertEqual((tree.kind, tree.annotation), (SEPARABLE, 'separable(add)'))
        self.assertEqual(len(tree.children), 2)

    def test_radial_tree(self):
        """Test sin(x1) / sqrt(x2^2 + x3^2)."""
        tree = tree_convert(self.formula('sin(x1)/sqrt(x2^2+x3^2)', 3, POSITIVE_BOX))
        self.assertEqual(tree.groups(), {frozenset({1, 2}), frozenset({0, 1, 2})})
        self.assertEqual(tree.annotation, 'separable(mul)')

    @tag('slow')
    def test_nested_groups(self):
        """Test pairs, then quadruples, then the root on eight variables."""
        text = ('((x1^2+x2^2)^2+(x3^2+x4^2)^2)^2'
                '+((x5^2+x6^2)^2+(x7^2+x8^2)^2)^2')
        tree = tree_convert(self.formula(text, 8, POSITIVE_BOX))
        expected = {frozenset(group) for group in
                    [(0, 1), (2, 3), (4, 5), (6, 7), (0, 1, 2, 3), (4, 5, 6, 7), tuple(range(8))]}
        self.assertEqual(tree.groups(), expected)

    def test_exports(self):
        """Test the box and DOT renderings."""
        tree = tree_convert(self.formula('(x1^2+x2^2)^2+(x3^2+x4^2)^2', 4, POSITIVE_BOX))
        box = tree.to_box(['a', 'b', 'c', 'd'])
        self.assertTrue(box.startswith('[a b c d: separable(add)]'))
        self.assertIn('  [a b: generalized-separable(add)]', box)
        source = tree.to_dot(['a', 'b', 'c', 'd']).source
        self.assertIn('digraph', source)
        self.assertEqual(source.count('->'), 6)


class AutoSwapTest(BaseTestCase):
    """Test cases for neuron swapping."""

    def create_routed_model(self, crossed):
        """Two inputs, two hidden nodes, two outputs; optionally wired across."""
        model = self.create_test_model(width=[2, 2, 2], seed=1, noise=1.0)
        wiring = np.fliplr(np.eye(2)) if crossed else np.eye(2)
        for layer in model.layers:
            layer.mask[...] = wiring
        return model

    def test_sorted_model(self):
        """Test that an already sorted model keeps its order."""
        model = self.create_routed_model(crossed=False)
        swapped, orders, trace = auto_swap(model, self.probe)
        self.assertEqual([list(order) for order in orders], [[0, 1]] * 3)
        self.assertEqual(len(trace), 1)
        self.assertFunctionPreserved(model, swapped, self.probe, atol=0.0)

    def test_crossed_model(self):
        """Test that crossed wiring is straightened."""
        model = self.create_routed_model(crossed=True)
        scores = compute_attribution(model, self.probe)
        self.assertAlmostEqual(block_crossing_share(model, scores), 1.0)
        swapped, orders, trace = auto_swap(model, scores=scores)
        self.assertEqual(list(orders[1]), [1, 0])
        self.assertAlmostEqual(trace[-1], 0.0, delta=1e-12)
        self.assertFunctionPreserved(model, swapped, self.probe, atol=1e-12)
        swapped_scores = compute_attribution(swapped, self.probe)
        self.assertAlmostEqual(block_crossing_share(swapped, swapped_scores), 0.0)
        self.assertAlmostEqual(connection_cost(swapped, swapped_scores), trace[-1], delta=1e-12)

    def test_function_preserved(self):
        """Test that swapping never changes outputs and never raises the cost."""
        model = self.create_test_model(width=[(2, 0), (3, 2), (2, 0)], seed=6, noise=1.0)
        swapped, _, trace = auto_swap(model, self.probe)
        self.assertFunctionPreserved(model, swapped, self.probe, atol=1e-12)
        self.assertTrue(all(b <= a for a, b in zip(trace, trace[1:])))

    def test_requires_hidden_layer(self):
        """Test that a single-layer network cannot be swapped."""
        with self.assertRaises(WidthSpecError):
            auto_swap(self.create_test_model(width=[2, 2]), self.probe)

    @tag('slow')
    def test_trained_parity_tasks(self):
        """Test that five independent parity tasks end up in five blocks."""
        dataset = gen_dataset(builtin_task('multitask-parity', n_samples=1000, seed=0))
        X = dataset.train_inputs
        model = MultKanModel.create([10, 5, 5], grid=3, seed=0, input_names=dataset.input_names)
        config = TrainConfig(steps=200, optimizer='lbfgs', lambda_l1=1e-2, lambda_entropy=1e-2,
                             grid_update_steps=())
        train(model, dataset, config)
        pruned = prune(model, compute_attribution(model, X))
        swapped, _, trace = auto_swap(pruned, X)
        self.assertTrue(all(b <= a for a, b in zip(trace, trace[1:])))
        self.assertFunctionPreserved(pruned, swapped, X, atol=1e-12)
        self.assertLess(block_crossing_share(swapped, compute_attribution(swapped, X)), 0.10)


class TestConfigTest(BaseTestCase):
    """Test cases for modularity test settings."""

    def test_defaults(self):
        """Test the default settings."""
        config = load_test_config()
        self.assertEqual((config.num_probe_points, config.fd_step, config.threshold), (100, 1e-3, 1e-2))

    def test_invalid_threshold(self):
        """Test that thresholds outside (0, 1) are rejected."""
        serializer = TestConfigSerializer(data={'threshold': 1.5})
        self.assertFalse(serializer.is_valid())
        self.assertIn('threshold', serializer.errors)
        with self.assertRaises(ValueError):
            TestConfig(fd_step=0.0)

    def test_config_file(self):
        """Test loading settings from a file."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'tree.env')
            with open(path, 'w') as handle:
                handle.write('NUM_PROBE_POINTS=20\nTHRESHOLD=0.05\n')
            config = load_test_config(path, seed=3)
        self.assertEqual((config.num_probe_points, config.threshold, config.seed), (20, 0.05, 3))
        with self.assertRaises(serializers.ValidationError):
            load_test_config(fd_step=-1.0)
