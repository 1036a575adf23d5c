import csv
import os
import tempfile

import numpy as np
from django.test import tag

from kanpiler.compiler import compile_to_kan
from kanscope.exceptions import DegenerateInputError, MissingCacheError, PruneError
from networks.editing import expand, remove_nodes
from networks.models import MultKanModel
from networks.test_base import BaseTestCase
from training.trainer import Dataset, TrainConfig, train
from .pruning import prune, prune_inputs
from .scores import compute_attribution, scores_to_csv


class AttributionTestMixin:
    """Mixin building a network with one dead branch."""

    def create_dead_branch_model(self):
        """x1 -> h1 -> out is live; x2 -> h2 is live but h2 -> out is masked."""
        model = self.create_test_model(width=[(2, 0), (2, 0), (1, 0)], seed=7, noise=1.0)
        first, second = model.layers
        first.mask[...] = np.eye(2)
        second.mask[1, 0] = 0.0
        return model


class ComputeAttributionTest(AttributionTestMixin, BaseTestCase):
    """Test cases for node and edge scores."""

    def test_identity_pass_through(self):
        """Test that a lone identity edge scores its input 1."""
        scores = compute_attribution(self.create_identity_model(1), self.probe[:, :1])
        self.assertAlmostEqual(float(scores.input_scores[0]), 1.0, delta=1e-6)

    def test_outputs_score_one(self):
        """Test unit output scores."""
        scores = compute_attribution(self.create_test_model(width=[2, 3, 2]), self.probe)
        self.assertTrue(np.array_equal(scores.node_scores[-1], np.ones(2)))

    def test_dead_branch(self):
        """Test that a branch feeding a zero function gets no score."""
        model = self.create_dead_branch_model()
        scores = compute_attribution(model, self.probe)
        self.assertGreater(scores.edge_std[0][1, 1], 1e-3)
        self.assertLess(scores.input_scores[1], 1e-6)
        self.assertAlmostEqual(float(scores.input_scores[0]), 1.0, delta=1e-9)

    def test_conservation(self):
        """Test that node scores are the sums of their outgoing edge scores."""
        model = self.create_test_model(width=[(2, 0), (2, 1), (1, 0)], seed=3)
        scores = compute_attribution(model, self.probe)
        for l, edge_scores in enumerate(scores.edge_scores):
            self.assertTrue(np.array_equal(scores.node_scores[l], edge_scores.sum(axis=1)))

    def test_scale_covariance(self):
        """Test that scaling the last layer's activations leaves scores unchanged."""
        model = self.create_test_model(width=[2, 3, 1], seed=5)
        scaled = model.copy()
        scaled.layers[-1].scale_base *= 4.0
        scaled.layers[-1].scale_sp *= 4.0
        before = compute_attribution(model, self.probe)
        after = compute_attribution(scaled, self.probe)
        for a, b in zip(before.node_scores, after.node_scores):
            self.assertRelativeError(b, a, 1e-10)

    def test_single_layer_closed_form(self):
        """Test that one layer scores each input by E / N."""
        model = self.create_test_model(width=[2, 1], seed=9)
        _, _, cache = model.propagate(self.probe)
        record = cache.records[0]
        expected = record.y[:, :, 0].std(axis=0) / record.z[:, 0].std()
        scores = compute_attribution(model)
        self.assertAllClose(scores.input_scores, expected, atol=1e-12, rtol=1e-12)

    def test_multiplication_subnodes_inherit(self):
        """Test that both factors of a product score 1."""
        model = compile_to_kan('x*y', ['x', 'y'])
        scores = compute_attribution(model, self.probe)
        self.assertAllClose(scores.input_scores, [1.0, 1.0], atol=1e-12)

    def test_symmetric_importance(self):
        """Test that four symmetric inputs of the compiled function score within a factor of two."""
        names = ['x1', 'x2', 'x3', 'x4']
        model = compile_to_kan('(x1^2+x2^2)^2+(x3^2+x4^2)^2', names)
        X = self.random_inputs(2000, 4, seed=11)
        inputs = compute_attribution(model, X).input_scores
        self.assertLess(inputs.max() / inputs.min(), 2.0)

    def test_missing_cache_and_empty_batch(self):
        """Test the error raised without samples."""
        model = self.create_test_model()
        with self.assertRaises(MissingCacheError):
            compute_attribution(model)
        with self.assertRaises(DegenerateInputError):
            compute_attribution(model, np.zeros((0, 2)))

    def test_csv_export(self):
        """Test the score CSV layout."""
        model = self.create_test_model()
        scores = compute_attribution(model, self.probe)
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'scores.csv')
            scores_to_csv(scores, path)
            with open(path, newline='') as handle:
                rows = list(csv.DictReader(handle))
        self.assertEqual(sum(row['kind'] == 'node' for row in rows), 2 + 3 + 1)
        self.assertEqual(sum(row['kind'] == 'edge' for row in rows), 6 + 3)


class PruneTest(AttributionTestMixin, BaseTestCase):
    """Test cases for score-driven pruning."""

    def test_zero_thresholds(self):
        """Test that zero thresholds keep everything."""
        model = self.create_test_model()
        scores = compute_attribution(model, self.probe)
        pruned = prune(model, scores, 0.0, 0.0)
        self.assertEqual(pruned.width, model.width)
        self.assertFunctionPreserved(model, pruned, self.probe, atol=0.0)

    def test_dead_branch_removed(self):
        """Test that a dead hidden node goes and outputs stay identical."""
        model = self.create_dead_branch_model()
        scores = compute_attribution(model, self.probe)
        pruned = prune(model, scores, node_threshold=1e-6, edge_threshold=0.0)
        self.assertEqual(pruned.width, [(2, 0), (1, 0), (1, 0)])
        self.assertFunctionPreserved(model, pruned, self.probe, atol=1e-12)

    def test_unused_neurons_of_product(self):
        """Test that pruning a padded product network leaves one multiplication node."""
        model = expand(compile_to_kan('x*y', ['x', 'y']), 'width', layer_id=1, extra_adds=2)
        scores = compute_attribution(model, self.probe)
        pruned = prune(model, scores)
        self.assertEqual(pruned.width, [(2, 0), (0, 1), (1, 0)])
        self.assertFunctionPreserved(model, pruned, self.probe, atol=1e-12)

    def test_node_without_consumer(self):
        """Test that a node feeding only a dropped node goes in the same call."""
        model = self.create_test_model(width=[(2, 0), (2, 0), (2, 0), (1, 0)], seed=4)
        model.layers[1].mask[0, 0] = 0.0
        scores = compute_attribution(model, self.probe)
        self.assertGreater(scores.node_scores[1][0], 1e-9)
        scores.node_scores[2][1] = 0.0
        pruned = prune(model, scores, node_threshold=1e-9, edge_threshold=1e-9)
        self.assertEqual(pruned.width, [(2, 0), (1, 0), (1, 0), (1, 0)])
        self.assertFunctionPreserved(remove_nodes(model, 2, [0]), pruned, self.probe, atol=1e-12)

    def test_node_with_masked_outputs(self):
        """Test that a node whose outgoing edges are all masked is dropped."""
        model = self.create_test_model(width=[(2, 0), (2, 0), (1, 0)], seed=6)
        scores = compute_attribution(model, self.probe)
        scores.edge_scores[1][1, 0] = 0.0
        pruned = prune(model, scores, node_threshold=1e-9, edge_threshold=1e-9)
        self.assertEqual(pruned.width, [(2, 0), (1, 0), (1, 0)])
        masked = model.copy()
        masked.layers[1].mask[1, 0] = 0.0
        self.assertFunctionPreserved(masked, pruned, self.probe, atol=1e-12)

    def test_everything_pruned(self):
        """Test that over-eager thresholds fail and leave the model as it was."""
        model = self.create_test_model()
        before = model.forward(self.probe)
        scores = compute_attribution(model, self.probe)
        with self.assertRaises(PruneError):
            prune(model, scores, node_threshold=1e9)
        with self.assertRaises(PruneError):
            prune(model, scores, node_threshold=0.0, edge_threshold=1e9)
        self.assertTrue(np.array_equal(model.forward(self.probe), before))


class PruneInputsTest(AttributionTestMixin, BaseTestCase):
    """Test cases for input selection."""

    def test_keep_all(self):
        """Test that keeping every input changes nothing."""
        model = self.create_test_model()
        scores = compute_attribution(model, self.probe)
        retained, names = prune_inputs(model, scores, keep=['x1', 'x2'])
        self.assertEqual(names, ['x1', 'x2'])
        self.assertFunctionPreserved(model, retained, self.probe, atol=0.0)

    def test_threshold_drops_dead_input(self):
        """Test that a dead input is dropped and the rest rewired."""
        model = self.create_dead_branch_model()
        scores = compute_attribution(model, self.probe)
        retained, names = prune_inputs(model, scores)
        self.assertEqual(names, ['x1'])
        self.assertEqual(retained.width[0], (1, 0))
        self.assertAllClose(retained.forward(self.probe[:, :1]), model.forward(self.probe), atol=1e-12)

    def test_geometric_weights(self):
        """Test the default input threshold on the compiled weighted sum of squares."""
        names = [f'x{i + 1}' for i in range(100)]
        text = '+'.join(f'{0.5 ** i!r}*x{i + 1}^2' for i in range(100))
        model = compile_to_kan(text, names)
        scores = compute_attribution(model, self.random_inputs(2000, 100, seed=2))
        _, retained = prune_inputs(model, scores)
        self.assertEqual(retained, names[:5])

    def test_errors(self):
        """Test unknown names and an unreachable threshold."""
        model = self.create_test_model()
        scores = compute_attribution(model, self.probe)
        with self.assertRaises(PruneError):
            prune_inputs(model, scores, keep=['z'])
        with self.assertRaises(PruneError):
            prune_inputs(model, scores, threshold=10.0)


class TrainedAttributionTest(BaseTestCase):
    """Test cases for attribution on trained networks."""

    def fit(self, width, X, Y, config=None, **options):
        dataset = Dataset.split(X, Y, test_fraction=0.2, seed=0)
        model = MultKanModel.create(width, seed=0, **options)
        log = train(model, dataset, config or TrainConfig(steps=200, optimizer='lbfgs'))
        return model, dataset, log

    @tag('slow')
    def test_symmetric_importance(self):
        """Test that four symmetric inputs of a trained network score within a factor of two."""
        X = self.random_inputs(1000, 4, seed=11)
        Y = (X[:, 0] ** 2 + X[:, 1] ** 2) ** 2 + (X[:, 2] ** 2 + X[:, 3] ** 2) ** 2
        model, dataset, log = self.fit([(4, 0), (2, 0), (1, 0)], X, Y, grid=5)
        self.assertLess(log.final['train_loss'], 0.1)
        inputs = compute_attribution(model, dataset.train_inputs).input_scores
        self.assertLess(inputs.max() / inputs.min(), 2.0)

    @tag('slow')
    def test_geometric_weights(self):
        """Test that the first five of a hundred geometrically weighted inputs survive."""
        names = [f'x{i + 1}' for i in range(100)]
        X = self.random_inputs(2000, 100, seed=2)
        Y = X ** 2 @ (0.5 ** np.arange(100))
        model, dataset, log = self.fit(
            [100, 1], X, Y, TrainConfig(steps=200, optimizer='lbfgs', grid_update_steps=()), grid=3
        )
        self.assertLess(log.final['train_loss'], 2e-3)
        scores = compute_attribution(model, dataset.train_inputs)
        _, retained = prune_inputs(model, scores)
        self.assertEqual(retained, names[:5])

    @tag('slow')
    def test_product_prunes_to_one_multiplication(self):
        """Test that a trained product network keeps one edge per factor."""
        X = self.random_inputs(1000, 2, seed=0)
        model, dataset, log = self.fit([(2, 0), (0, 1), (1, 0)], X, X[:, 0] * X[:, 1], grid=5)
        self.assertLess(log.final['train_loss'], 1e-3)
        pruned = prune(model, compute_attribution(model, dataset.train_inputs))
        self.assertEqual(pruned.width, [(2, 0), (0, 1), (1, 0)])
        first, second = pruned.layers
        np.testing.assert_array_equal(first.mask.sum(axis=0), [1.0, 1.0])
        np.testing.assert_array_equal(first.mask.sum(axis=1), [1.0, 1.0])
        self.assertEqual(second.mask.sum(), 1.0)

    @tag('slow')
    def test_retained_inputs_keep_accuracy(self):
        """Test that dropping distractor inputs costs less than ten percent in test RMSE."""
        X = self.random_inputs(1000, 4, seed=3)
        Y = np.sin(np.pi * X[:, 0]) + X[:, 1] ** 2
        model, dataset, log = self.fit([4, 1], X, Y, grid=10)
        full_error = log.final['test_loss']
        retained, names = prune_inputs(model, compute_attribution(model, dataset.train_inputs))
        self.assertEqual(names, ['x1', 'x2'])
        selected = dataset.select_inputs(names)
        retrained = train(retained, selected, TrainConfig(steps=50, optimizer='lbfgs', grid_update_steps=()))
        self.assertLess(retrained.final['test_loss'], 1.1 * full_error)
