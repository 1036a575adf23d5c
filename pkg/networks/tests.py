import json
import os
import tempfile

import numpy as np
from rest_framework import serializers

from kanscope.exceptions import (
    DimensionMismatchError,
    ModuleSpecError,
    NonFiniteActivationError,
    OutOfDomainError,
    WidthSpecError,
)
from .editing import (
    apply_module_constraint,
    expand,
    perturb,
    refine,
    remove_nodes,
    update_grid,
    zero_edges,
)
from .models import MultKanModel, init_model, parse_width
from .serializers import build_model, dump_model, dumps_model, load_model, loads_model, save_model
from .test_base import BaseTestCase


class WidthSpecTest(BaseTestCase):
    """Test cases for width spec parsing."""

    def test_plain_integers(self):
        """Test that integer entries become addition-only levels."""
        levels, arities = parse_width([3, 4, 1])
        self.assertEqual(levels, [(3, 0), (4, 0), (1, 0)])
        self.assertEqual(arities, [[], [], []])

    def test_per_level_arities(self):
        """Test explicit arity lists."""
        levels, arities = parse_width([(3, 0), (1, 2), (1, 0)], mult_arity=[[], [2, 3], []])
        self.assertEqual(levels[1], (1, 2))
        self.assertEqual(arities[1], [2, 3])

    def test_arity_count_mismatch(self):
        """Test that arity lists must match the multiplication node count."""
        with self.assertRaises(WidthSpecError):
            parse_width([(2, 0), (0, 2), (1, 0)], mult_arity=[[], [2], []])

    def test_arity_below_two(self):
        """Test that unary multiplication nodes are rejected."""
        with self.assertRaises(WidthSpecError):
            parse_width([(2, 0), (0, 1), (1, 0)], mult_arity=1)

    def test_single_level(self):
        """Test that a network needs at least two levels."""
        with self.assertRaises(WidthSpecError):
            parse_width([3])


class InitModelTest(BaseTestCase):
    """Test cases for network initialization."""

    def test_single_layer_shape(self):
        """Test a 2 -> 1 network without multiplication nodes."""
        model = init_model([(2, 0), (1, 0)], grid_G=5, order_k=3)
        self.assertEqual(model.depth, 1)
        self.assertEqual(model.layers[0].coef.shape, (2, 1, 8))
        self.assertTrue(model.is_plain_kan)

    def test_multiplication_node_shape(self):
        """Test that one product node consumes two subnodes."""
        model = init_model([(2, 0), (0, 1), (1, 0)], grid_G=5, order_k=3)
        self.assertEqual(model.layers[0].n_out, 2)
        self.assertEqual(model.mult_layer(0).n_nodes, 1)
        self.assertEqual(model.layers[1].n_in, 1)
        self.assertFalse(model.is_plain_kan)

    def test_sparse_init(self):
        """Test that sparse init keeps at most half of the dense edges."""
        model = init_model([(5, 0), (5, 0), (1, 0)], grid_G=5, order_k=3, sparse=True)
        kept = sum(layer.mask.sum() for layer in model.layers)
        dense = sum(layer.mask.size for layer in model.layers)
        self.assertLessEqual(kept, 0.5 * dense)
        for layer in model.layers:
            self.assertTrue(np.all(layer.mask.sum(axis=0) >= 1))

    def test_coefficient_scale(self):
        """Test the initial coefficient noise scale."""
        model = init_model([(10, 0), (40, 0)], grid_G=5, order_k=3, seed=4)
        std = model.layers[0].coef.std()
        expected = 0.1 / np.sqrt(10 * 8)
        self.assertGreater(std, 0.8 * expected)
        self.assertLess(std, 1.2 * expected)

    def test_seed_determinism(self):
        """Test that equal seeds give equal parameters."""
        a = init_model([2, 3, 1], grid_G=5, order_k=3, seed=9)
        b = init_model([2, 3, 1], grid_G=5, order_k=3, seed=9)
        np.testing.assert_array_equal(a.layers[1].coef, b.layers[1].coef)

    def test_default_input_names(self):
        """Test generated input names."""
        model = init_model([3, 1])
        self.assertEqual(model.input_names, ['x1', 'x2', 'x3'])


class ForwardTest(BaseTestCase):
    """Test cases for the forward pass."""

    def test_all_edges_masked(self):
        """Test that a fully masked network outputs zero."""
        model = self.create_test_model()
        for layer in model.layers:
            layer.mask[...] = 0.0
        np.testing.assert_array_equal(model.forward(self.probe), 0.0)

    def test_matches_scalar_interpreter(self):
        """Test a three-layer network with products against edge-by-edge evaluation."""
        model = MultKanModel.create(
            [(3, 0), (2, 2), (1, 1), (2, 0)],
            grid=5, order=3, seed=7,
            mult_arity=[[], [2, 3], [2], []],
        )
        X = self.random_inputs(100, 3, seed=1)
        vectorized = model.forward(X)
        reference = np.array([self.scalar_forward(model, x) for x in X])
        self.assertLess(np.max(np.abs(vectorized - reference)), 1e-10)

    def test_plain_kan_matches_scalar_interpreter(self):
        """Test a network without product nodes against edge-by-edge evaluation."""
        model = self.create_test_model(width=[(2, 0), (4, 0), (3, 0), (1, 0)], seed=2)
        vectorized = model.forward(self.probe)
        reference = np.array([self.scalar_forward(model, x) for x in self.probe])
        self.assertLess(np.max(np.abs(vectorized - reference)), 1e-12)

    def test_dimension_mismatch(self):
        """Test that the input width is checked."""
        model = self.create_test_model()
        with self.assertRaises(DimensionMismatchError):
            model.forward(np.zeros((4, 3)))

    def test_non_finite_activation(self):
        """Test that NaN activations name their layer."""
        model = self.create_test_model(width=[2, 2, 1])
        model.layers[1].coef[0, 0, :] = np.nan
        with self.assertRaises(NonFiniteActivationError) as ctx:
            model.forward(self.probe)
        self.assertEqual(ctx.exception.layer, 1)

    def test_strict_mode_rejects_out_of_span(self):
        """Test that strict evaluation refuses inputs outside the knot span."""
        model = self.create_test_model()
        with self.assertRaises(OutOfDomainError):
            model.forward(np.array([[5.0, 0.0]]), strict=True)
        self.assertTrue(np.all(np.isfinite(model.forward(np.array([[5.0, 0.0]])))))

    def test_cache_shapes(self):
        """Test activation cache contents after a cached forward pass."""
        model = self.create_test_model(width=[(2, 0), (1, 1), (1, 0)])
        model.forward(self.probe, keep_cache=True)
        cache = model.cache
        self.assertEqual(cache.batch_size, 100)
        self.assertEqual(cache.edge_outputs(0).shape, (100, 2, 3))
        self.assertEqual(cache.subnode_sums(0).shape, (100, 3))
        self.assertEqual(cache.node_values(1).shape, (100, 2))
        self.assertEqual(cache.outputs.shape, (100, 1))

    def test_forward_without_cache(self):
        """Test that keep_cache=False leaves the cache alone."""
        model = self.create_test_model()
        model.forward(self.probe)
        self.assertIsNone(model.cache)

    def test_input_gradient(self):
        """Test the analytic Jacobian against central differences."""
        model = MultKanModel.create([(3, 0), (1, 1), (2, 0)], grid=5, order=3, seed=3,
                                    mult_arity=[[], [3], []])
        X = self.random_inputs(20, 3, seed=5, low=-0.8, high=0.8)
        jac = model.input_gradient(X)
        h = 1e-5
        for d in range(3):
            step = np.zeros(3)
            step[d] = h
            fd = (model.forward(X + step) - model.forward(X - step)) / (2 * h)
            self.assertRelativeError(jac[:, :, d], fd, 1e-4, floor=1e-6)


class EdgeFunctionTest(BaseTestCase):
    """Test cases for edge views."""

    def test_masked_edge_is_zero(self):
        """Test that a masked edge evaluates to zero."""
        model = self.create_test_model()
        model.layers[0].mask[1, 2] = 0.0
        np.testing.assert_array_equal(model.edge(0, 1, 2)(np.linspace(-1, 1, 9)), 0.0)

    def test_symbolic_only_ignores_spline(self):
        """Test that symbolic-only edges ignore their coefficients."""
        model = self.create_identity_model(1)
        model.layers[0].coef[...] = 5.0
        xs = np.linspace(-2, 2, 9)
        np.testing.assert_array_equal(model.edge(0, 0, 0)(xs), xs)
        np.testing.assert_array_equal(model.forward(xs[:, None])[:, 0], xs)


class ExpandTest(BaseTestCase):
    """Test cases for width and depth expansion."""

    def setUp(self):
        super().setUp()
        self.model = self.create_test_model(width=[(2, 0), (2, 1), (1, 0)], seed=11)

    def test_width_expansion_preserves_function(self):
        """Test that new zero neurons leave outputs unchanged."""
        grown = expand(self.model, 'width', 1, extra_adds=2, extra_mults=1)
        self.assertEqual(grown.width[1], (4, 2))
        self.assertEqual(grown.layers[0].n_out, 4 + 4)
        self.assertFunctionPreserved(self.model, grown, self.probe, atol=1e-12)

    def test_width_expansion_marks_fresh_edges(self):
        """Test that only new edges are marked fresh."""
        grown = expand(self.model, 'width', 1, extra_adds=1)
        self.assertEqual(int(grown.layers[0].fresh.sum()), 2)
        self.assertEqual(int(grown.layers[1].fresh.sum()), 1)

    def test_invalid_level(self):
        """Test that width expansion needs a hidden level."""
        with self.assertRaises(WidthSpecError):
            expand(self.model, 'width', 0, extra_adds=1)
        with self.assertRaises(WidthSpecError):
            expand(self.model, 'width', 5, extra_adds=1)

    def test_depth_expansion_of_identity(self):
        """Test that an identity network stays the identity."""
        model = self.create_identity_model(1)
        deeper = expand(model, 'depth')
        self.assertEqual(deeper.depth, 2)
        X = self.random_inputs(100, 1, seed=3, low=-3, high=3)
        self.assertLess(np.max(np.abs(deeper.forward(X) - X)), 1e-9)

    def test_depth_expansion_preserves_function(self):
        """Test an inserted hidden identity layer."""
        deeper = expand(self.model, 'depth', 1)
        self.assertEqual(deeper.width[2], (3, 0))
        self.assertFunctionPreserved(self.model, deeper, self.probe, atol=1e-12)

    def test_expand_perturb_rezero(self):
        """Test that zeroing perturbed new edges restores the original function."""
        grown = expand(self.model, 'width', 1, extra_adds=1, extra_mults=1)
        noisy = perturb(grown, 0.2, scope='new-only', seed=1)
        self.assertGreater(np.max(np.abs(noisy.forward(self.probe) - self.model.forward(self.probe))), 0)
        restored = zero_edges(noisy, scope='new-only')
        self.assertLess(np.max(np.abs(restored.forward(self.probe) - self.model.forward(self.probe))), 1e-9)


class PerturbTest(BaseTestCase):
    """Test cases for perturbation."""

    def test_zero_magnitude(self):
        """Test that magnitude 0 leaves outputs unchanged."""
        model = self.create_test_model()
        self.assertFunctionPreserved(model, perturb(model, 0.0), self.probe, atol=0.0)

    def test_zero_magnitude_on_symbolic_edges(self):
        """Test that switching symbolic edges to both modes keeps their function."""
        model = self.create_identity_model(2)
        switched = perturb(model, 0.0)
        self.assertEqual(set(switched.layers[0].modes().ravel()), {'both', 'spline'})
        X = self.random_inputs(50, 2, low=-0.9, high=0.9)
        np.testing.assert_allclose(switched.forward(X), model.forward(X), atol=1e-15)

    def test_perturb_zero_model(self):
        """Test that noise on the zero network yields a bounded nonzero signal."""
        model = zero_edges(self.create_test_model(), scope='all')
        np.testing.assert_array_equal(model.forward(self.probe), 0.0)
        noisy = perturb(model, 0.1, seed=2)
        std = noisy.forward(self.probe).std()
        self.assertGreater(std, 0.0)
        self.assertLess(std, 1.0)

    def test_frozen_edges_untouched(self):
        """Test that frozen edges keep their parameters."""
        model = apply_module_constraint(self.create_test_model(width=[3, 3, 1]), 0, '[0]->[0]')
        noisy = perturb(model, 0.5)
        frozen = model.layers[0].frozen
        np.testing.assert_array_equal(noisy.layers[0].coef[frozen], model.layers[0].coef[frozen])
        np.testing.assert_array_equal(noisy.layers[0].mask[frozen], 0.0)

    def test_negative_magnitude(self):
        """Test that magnitudes must be nonnegative."""
        with self.assertRaises(ValueError):
            perturb(self.create_test_model(), -1.0)


class ModuleConstraintTest(BaseTestCase):
    """Test cases for module constraints."""

    def test_single_node_module(self):
        """Test that a one-node module is cut off from the other nodes."""
        model = apply_module_constraint(self.create_test_model(width=[4, 4, 1]), 0, '[0]->[0]')
        mask = model.layers[0].mask
        self.assertEqual(mask[0, 0], 1.0)
        np.testing.assert_array_equal(mask[0, 1:], 0.0)
        np.testing.assert_array_equal(mask[1:, 0], 0.0)
        np.testing.assert_array_equal(mask[1:, 1:], 1.0)
        np.testing.assert_array_equal(model.layers[0].frozen, mask == 0)

    def test_hierarchical_module(self):
        """Test a module spanning two layers."""
        model = self.create_test_model(width=[4, 4, 4, 1])
        model = apply_module_constraint(model, 0, '[0,1]->[0,1]->[0,1]->[0,1]')
        for l in (0, 1):
            mask = model.layers[l].mask
            np.testing.assert_array_equal(mask[:2, 2:], 0.0)
            np.testing.assert_array_equal(mask[2:, :2], 0.0)
            np.testing.assert_array_equal(mask[:2, :2], 1.0)
        np.testing.assert_array_equal(model.layers[2].mask, 1.0)

    def test_narrowing_module(self):
        """Test a module that narrows to a single subnode."""
        model = self.create_test_model(width=[4, 4, 4, 1])
        model = apply_module_constraint(model, 0, '[0,1]->[0,1]->[0,1]->[0]')
        mask = model.layers[1].mask
        np.testing.assert_array_equal(mask[:2, 1:], 0.0)
        np.testing.assert_array_equal(mask[2:, 0], 0.0)

    def test_whole_layer_module(self):
        """Test that a module covering everything masks nothing."""
        model = apply_module_constraint(self.create_test_model(width=[3, 2, 1]), 0, '[0,1,2]->[0,1]')
        np.testing.assert_array_equal(model.layers[0].mask, 1.0)

    def test_parse_errors(self):
        """Test malformed module specs."""
        model = self.create_test_model(width=[3, 2, 1])
        for spec in ('[0]', '[0->[1]', '0->1', '[a]->[0]'):
            with self.assertRaises(ModuleSpecError):
                apply_module_constraint(model, 0, spec)

    def test_index_out_of_range(self):
        """Test that module indices are range-checked."""
        with self.assertRaises(ModuleSpecError):
            apply_module_constraint(self.create_test_model(width=[3, 2, 1]), 0, '[0]->[5]')


class RemoveNodesTest(BaseTestCase):
    """Test cases for node removal."""

    def test_remove_dead_hidden_node(self):
        """Test that removing a node with zero outgoing edges keeps the function."""
        model = self.create_test_model(width=[(2, 0), (2, 1), (1, 0)])
        model.layers[1].mask[1, :] = 0.0
        smaller = remove_nodes(model, 1, [0, 2])
        self.assertEqual(smaller.width[1], (1, 1))
        self.assertEqual(smaller.layers[0].n_out, 3)
        self.assertFunctionPreserved(model, smaller, self.probe, atol=1e-12)

    def test_remove_input(self):
        """Test that removing an input renames the input list."""
        model = self.create_test_model(width=[3, 2, 1])
        smaller = remove_nodes(model, 0, [0, 2])
        self.assertEqual(smaller.input_names, ['x1', 'x3'])
        self.assertEqual(smaller.n_inputs, 2)

    def test_cannot_remove_everything(self):
        """Test that at least one node survives."""
        with self.assertRaises(WidthSpecError):
            remove_nodes(self.create_test_model(), 1, [])


class GridAdaptationTest(BaseTestCase):
    """Test cases for grid updates and refinement."""

    def test_update_grid_tracks_function(self):
        """Test that re-placing knots keeps outputs close."""
        model = self.create_test_model(width=[2, 3, 1], seed=5)
        X = self.random_inputs(400, 2, seed=8, low=-0.5, high=0.5)
        updated = update_grid(model, X)
        self.assertLess(np.max(np.abs(updated.forward(X) - model.forward(X))), 1e-3)
        self.assertAlmostEqual(updated.layers[0].knots[0, 0, 3], X[:, 0].min(), places=6)

    def test_update_grid_skips_frozen_edges(self):
        """Test that frozen edges keep their knots and coefficients."""
        model = apply_module_constraint(self.create_test_model(width=[2, 2, 1]), 0, '[0]->[0]')
        updated = update_grid(model, self.probe)
        frozen = model.layers[0].frozen
        np.testing.assert_array_equal(updated.layers[0].knots[frozen], model.layers[0].knots[frozen])

    def test_refine_increases_resolution(self):
        """Test model-level refinement."""
        model = self.create_test_model(width=[2, 2, 1], seed=6)
        refined = refine(model, 20, self.probe)
        self.assertEqual(refined.layers[0].num_intervals, 20)
        self.assertLess(np.max(np.abs(refined.forward(self.probe) - model.forward(self.probe))), 1e-3)


class SerializationTest(BaseTestCase):
    """Test cases for the model file format."""

    def test_round_trip_is_bit_exact(self):
        """Test save then load on a network with mixed edge modes."""
        model = self.create_test_model(width=[(2, 0), (1, 1), (1, 0)], seed=13)
        model.layers[0].symbolic[0, 1] = 1.0
        model.layers[0].fn_names[0, 1] = 'sin'
        model.layers[0].affine[0, 1] = (0.1, 1.0 / 3.0, np.pi, -0.25)
        model.layers[1].mask[1, 0] = 0.0
        restored = loads_model(dumps_model(model))
        np.testing.assert_array_equal(restored.forward(self.probe), model.forward(self.probe))
        for before, after in zip(model.layers, restored.layers):
            np.testing.assert_array_equal(before.coef, after.coef)
            np.testing.assert_array_equal(before.knots, after.knots)
        self.assertEqual(dumps_model(restored), dumps_model(model))

    def test_save_and_load_file(self):
        """Test writing a model to disk."""
        model = self.create_test_model()
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'model.json')
            save_model(model, path)
            restored = load_model(path)
        np.testing.assert_array_equal(restored.forward(self.probe), model.forward(self.probe))

    def test_document_fields(self):
        """Test the top-level and per-edge document keys."""
        document = dump_model(self.create_test_model())
        self.assertContainsKeys(document, ['format_version', 'width', 'arities', 'input_names', 'layers'])
        edge = document['layers'][0]['edges'][0]
        self.assertContainsKeys(edge, ['knots', 'coef', 'scale_base', 'scale_sp', 'mask', 'mode', 'symbolic', 'frozen'])

    def test_invalid_document(self):
        """Test that malformed documents fail validation."""
        document = json.loads(dumps_model(self.create_test_model()))
        document['layers'][0]['edges'].pop()
        with self.assertRaises(serializers.ValidationError):
            build_model(document)
        document = json.loads(dumps_model(self.create_test_model()))
        document['format_version'] = 99
        with self.assertRaises(serializers.ValidationError):
            build_model(document)
