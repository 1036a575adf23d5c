import os
import tempfile

import numpy as np
from django.test import override_settings, tag
from rest_framework import serializers
from scipy.optimize import rosen, rosen_der

from kanscope.exceptions import DivergenceError, MissingCacheError, NonFiniteActivationError
from networks.layers import IDENTITY_AFFINE
from networks.models import MultKanModel
from networks.test_base import BaseTestCase
from .gradients import (
    ParameterSet,
    backpropagate,
    evaluate_objective,
    loss_and_grad,
    regularization,
)
from .optimizers import LBFGS, Adam
from .serializers import TrainConfigSerializer, load_train_config
from .trainer import Dataset, TrainConfig, TrainLog, train


def finite_difference(params, loss, h=1e-5):
    base = params.get()
    grad = np.empty_like(base)
    for k in range(base.size):
        shifted = base.copy()
        shifted[k] += h
        params.set(shifted)
        upper = loss()
        shifted[k] -= 2 * h
        params.set(shifted)
        lower = loss()
        grad[k] = (upper - lower) / (2 * h)
    params.set(base)
    return grad


# (width, mult_arity) pairs with multiplication nodes of arity 2 and 3
GRADIENT_ARCHITECTURES = [
    ([(3, 0), (3, 1), (2, 0)], 2),
    ([(3, 0), (2, 1), (2, 0)], 3),
    ([(3, 0), (1, 2), (1, 0)], [[], [2, 3], []]),
]


class GradientCheckTest(BaseTestCase):
    """Test cases for the reverse pass against finite differences."""

    def setUp(self):
        super().setUp()
        rng = np.random.default_rng(5)
        self.cases = []
        for k, (width, arity) in enumerate(GRADIENT_ARCHITECTURES):
            model = self.create_test_model(width=width, seed=4 + k, noise=1.0, mult_arity=arity)
            X = rng.uniform(-0.5, 0.5, size=(10, model.n_inputs))
            Y = rng.normal(size=(10, model.n_outputs))
            self.cases.append((model, X, Y, ParameterSet(model)))

    def test_enough_parameters(self):
        """Test that every architecture exposes at least 200 parameters."""
        for model, _, _, params in self.cases:
            with self.subTest(width=model.width):
                self.assertGreaterEqual(params.size, 200)

    def test_data_loss_gradient(self):
        """Test analytic gradients of the data loss."""
        for model, X, Y, params in self.cases:
            with self.subTest(width=model.width):
                _, grads = loss_and_grad(model, X, Y)
                analytic = params.flatten(grads)
                numeric = finite_difference(
                    params, lambda: evaluate_objective(model, X, Y, with_grads=False).loss
                )
                self.assertRelativeError(analytic, numeric, 1e-4, floor=1e-5)

    def test_regularized_loss_gradient(self):
        """Test analytic gradients including the l1 and entropy terms."""
        config = TrainConfig(lambda_l1=1e-2, lambda_entropy=1e-2)
        for model, X, Y, params in self.cases:
            with self.subTest(width=model.width):
                _, grads = loss_and_grad(model, X, Y, config)
                analytic = params.flatten(grads)
                numeric = finite_difference(
                    params, lambda: evaluate_objective(model, X, Y, 1e-2, 1e-2, with_grads=False).loss,
                )
                self.assertRelativeError(analytic, numeric, 1e-4, floor=1e-5)

    def test_input_gradient_loss(self):
        """Test parameter gradients of a loss on input derivatives."""
        for model, X, _, params in self.cases:
            with self.subTest(width=model.width):
                n_in, n_out = model.n_inputs, model.n_outputs
                weights = np.random.default_rng(6).normal(size=(n_in, len(X), n_out))
                seed = np.broadcast_to(np.eye(n_in)[:, None, :], (n_in, len(X), n_in))

                def jacobian_loss():
                    _, dout, _ = model.propagate(X, seed, keep_cache=False)
                    return float((weights * dout).sum())

                _, dout, cache = model.propagate(X, seed)
                grads, _, _ = backpropagate(model, cache, np.zeros(cache.outputs.shape), weights)
                analytic = params.flatten(grads)
                numeric = finite_difference(params, jacobian_loss)
                self.assertRelativeError(analytic, numeric, 1e-4, floor=1e-5)

    def test_input_gradient(self):
        """Test the network input gradient against central differences."""
        h = 1e-6
        for model, X, _, _ in self.cases:
            with self.subTest(width=model.width):
                jacobian = model.input_gradient(X)
                for k in range(model.n_inputs):
                    step = np.zeros(model.n_inputs)
                    step[k] = h
                    numeric = (model.forward(X + step) - model.forward(X - step)) / (2 * h)
                    self.assertRelativeError(jacobian[:, :, k], numeric, 1e-4, floor=1e-4)

    def test_input_adjoint(self):
        """Test the adjoint returned for the inputs."""
        for model, X, _, _ in self.cases:
            with self.subTest(width=model.width):
                outputs, _, cache = model.propagate(X)
                _, input_bar, _ = backpropagate(model, cache, np.ones(outputs.shape))
                self.assertAllClose(input_bar, model.input_gradient(X).sum(axis=1), atol=1e-10)


class RegularizationTest(BaseTestCase):
    """Test cases for the sparsity terms."""

    def test_missing_cache(self):
        """Test that regularization needs a forward pass."""
        model = self.create_test_model()
        with self.assertRaises(MissingCacheError):
            regularization(model)

    def test_zero_network(self):
        """Test that an all-zero network has no l1 mass and zero entropy."""
        model = self.create_test_model()
        for layer in model.layers:
            layer.coef[...] = 0.0
            layer.scale_base[...] = 0.0
        model.forward(self.probe, keep_cache=True)
        self.assertEqual(regularization(model), (0.0, 0.0))

    def test_uniform_edges(self):
        """Test that m equal edges give entropy log m."""
        model = MultKanModel.create([1, 4], grid=5, order=3)
        layer = model.layers[0]
        layer.numeric[...] = 0.0
        layer.symbolic[...] = 1.0
        layer.fn_names[...] = 'x'
        layer.affine[...] = IDENTITY_AFFINE
        model.forward(self.probe[:, :1], keep_cache=True)
        l1, entropy = regularization(model)
        self.assertAlmostEqual(entropy, np.log(4), delta=1e-9)
        self.assertAlmostEqual(l1, 4 * np.abs(self.probe[:, 0]).mean(), places=12)

    def test_single_edge(self):
        """Test that a single live edge carries no entropy."""
        model = self.create_test_model(width=[1, 1])
        model.forward(self.probe[:, :1], keep_cache=True)
        _, entropy = regularization(model)
        self.assertEqual(entropy, 0.0)

    def test_l1_homogeneity(self):
        """Test that doubling every activation doubles l1."""
        model = self.create_test_model(width=[2, 3])
        model.forward(self.probe, keep_cache=True)
        l1, _ = regularization(model)
        model.layers[0].scale_base *= 2
        model.layers[0].scale_sp *= 2
        model.forward(self.probe, keep_cache=True)
        doubled, _ = regularization(model)
        self.assertAlmostEqual(doubled, 2 * l1, places=12)


class LossAndGradTest(BaseTestCase):
    """Test cases for loss_and_grad."""

    def test_perfect_fit(self):
        """Test that a perfectly fit model has zero loss and gradients."""
        model = self.create_test_model()
        Y = model.forward(self.probe)
        loss, grads = loss_and_grad(model, self.probe, Y)
        self.assertEqual(loss, 0.0)
        for layer_grads in grads:
            for value in layer_grads.values():
                self.assertFalse(np.any(value))

    def test_non_finite_loss(self):
        """Test that a non-finite loss reports the last layer."""
        model = self.create_test_model()
        Y = np.full((len(self.probe), 1), np.inf)
        with self.assertRaises(NonFiniteActivationError) as ctx:
            loss_and_grad(model, self.probe, Y)
        self.assertEqual(ctx.exception.layer, model.depth - 1)

    def test_parameter_round_trip(self):
        """Test that packing and unpacking parameters is lossless."""
        model = self.create_test_model(seed=8)
        params = ParameterSet(model)
        vector = params.get()
        params.set(vector + 1.0)
        params.set(vector)
        self.assertTrue(np.array_equal(params.get(), vector))

    def test_masked_and_frozen_excluded(self):
        """Test that masked and frozen edges are not trainable."""
        model = self.create_test_model()
        full = ParameterSet(model).size
        model.layers[0].mask[0, 0] = 0.0
        model.layers[1].frozen[1, 0] = True
        per_edge = model.layers[0].num_basis + 2
        self.assertEqual(ParameterSet(model).size, full - 2 * per_edge)


class OptimizerTest(BaseTestCase):
    """Test cases for Adam and LBFGS."""

    def test_adam_quadratic(self):
        """Test that Adam approaches the minimum of a quadratic."""
        optimizer = Adam(lr=0.1)
        x = np.array([3.0, -2.0])
        for _ in range(500):
            x, _ = optimizer.step(x, lambda p: (float(p @ p), 2 * p))
        self.assertLess(np.abs(x).max(), 1e-2)

    def test_lbfgs_rosenbrock(self):
        """Test that LBFGS solves the Rosenbrock problem."""
        optimizer = LBFGS()
        x = np.array([-1.2, 1.0])
        for _ in range(200):
            x, loss = optimizer.step(x, lambda p: (rosen(p), rosen_der(p)))
        self.assertAllClose(x, [1.0, 1.0], atol=1e-5)
        self.assertLess(loss, 1e-10)


class TrainTest(BaseTestCase):
    """Test cases for the training loop."""

    def setUp(self):
        super().setUp()
        X = self.random_inputs(200, 2, seed=1)
        Y = np.sin(np.pi * X[:, :1]) + X[:, 1:] ** 2
        self.dataset = Dataset.split(X, Y, test_fraction=0.25, seed=0)

    def test_zero_steps(self):
        """Test that zero steps leave the model alone and log nothing."""
        model = self.create_test_model(seed=2)
        before = ParameterSet(model).get()
        log = train(model, self.dataset, TrainConfig(steps=0))
        self.assertEqual(len(log), 0)
        self.assertTrue(np.array_equal(ParameterSet(model).get(), before))

    def test_loss_decreases(self):
        """Test that Adam lowers the training loss."""
        model = self.create_test_model(seed=2)
        log = train(model, self.dataset, TrainConfig(steps=60, learning_rate=1e-2))
        losses = log.column('train_loss')
        self.assertEqual(len(losses), 60)
        self.assertLess(losses[-1], losses[0])

    def test_lbfgs_loss_decreases(self):
        """Test that LBFGS lowers the training loss."""
        model = self.create_test_model(seed=2)
        log = train(model, self.dataset, TrainConfig(steps=30, optimizer='lbfgs', grid_update_steps=()))
        losses = log.column('train_loss')
        self.assertLess(losses[-1], 0.5 * losses[0])

    def test_frozen_and_masked_unchanged(self):
        """Test that frozen and masked parameters never move."""
        model = self.create_test_model(seed=2)
        model.layers[0].frozen[0, 1] = True
        model.layers[1].mask[2, 0] = 0.0
        frozen_coef = model.layers[0].coef[0, 1].copy()
        frozen_knots = model.layers[0].knots[0, 1].copy()
        masked_coef = model.layers[1].coef[2, 0].copy()
        train(model, self.dataset, TrainConfig(steps=25, grid_update_steps=(10,)))
        self.assertTrue(np.array_equal(model.layers[0].coef[0, 1], frozen_coef))
        self.assertTrue(np.array_equal(model.layers[0].knots[0, 1], frozen_knots))
        self.assertTrue(np.array_equal(model.layers[1].coef[2, 0], masked_coef))

    def test_deterministic(self):
        """Test that identical seeds and configs give identical logs."""
        config = TrainConfig(steps=15, batch_size=50, seed=3, grid_update_steps=(5,))
        logs = []
        for _ in range(2):
            model = self.create_test_model(seed=2)
            logs.append(train(model, self.dataset, config).rows)
        self.assertEqual(logs[0], logs[1])

    def test_grid_update(self):
        """Test that grids move to the data at the update steps."""
        model = self.create_test_model(seed=2)
        X = self.random_inputs(100, 2, seed=1, low=0.0, high=0.5)
        dataset = Dataset.split(X, X.sum(axis=1), test_fraction=0.2)
        before = model.layers[0].knots.copy()
        train(model, dataset, TrainConfig(steps=3, grid_update_steps=(1,)))
        self.assertFalse(np.array_equal(model.layers[0].knots, before))
        self.assertGreaterEqual(model.layers[0].knots[0, 0, 3], 0.0)

    def test_no_grid_update_with_symbolic_edges(self):
        """Test that symbolic edges freeze the grids."""
        model = self.create_test_model(seed=2)
        layer = model.layers[0]
        layer.symbolic[0, 0] = 1.0
        layer.fn_names[0, 0] = 'x'
        layer.affine[0, 0] = IDENTITY_AFFINE
        before = model.layers[1].knots.copy()
        train(model, self.dataset, TrainConfig(steps=3, grid_update_steps=(1,)))
        self.assertTrue(np.array_equal(model.layers[1].knots, before))

    @override_settings(KAN={'DIVERGENCE_LIMIT': 1e-12})
    def test_divergence(self):
        """Test that a loss above the divergence limit aborts training."""
        model = self.create_test_model(seed=2)
        with self.assertRaises(DivergenceError):
            train(model, self.dataset, TrainConfig(steps=5))

    def test_dataset_width_mismatch(self):
        """Test that the dataset must match the model inputs."""
        model = self.create_test_model(width=[3, 1])
        with self.assertRaises(ValueError):
            train(model, self.dataset, TrainConfig(steps=1))

    def test_log_csv(self):
        """Test CSV export of the training log."""
        log = TrainLog()
        log.record(1, 0.5, 0.25, 2.0, 0.1)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'log.csv')
            log.to_csv(path)
            with open(path) as handle:
                lines = handle.read().splitlines()
        self.assertEqual(lines[0], 'step,train_loss,test_loss,l1,entropy')
        self.assertEqual(lines[1], '1,0.5,0.25,2.0,0.1')

    @tag('slow')
    def test_multiplication_task(self):
        """Test that f = xy is learned through one multiplication node."""
        X = self.random_inputs(1000, 2, seed=0)
        dataset = Dataset.split(X, X[:, 0] * X[:, 1], test_fraction=0.2, seed=0)
        model = MultKanModel.create([(2, 0), (0, 1), (1, 0)], grid=5, order=3, seed=0)
        log = train(model, dataset, TrainConfig(steps=200, optimizer='lbfgs'))
        self.assertLess(log.final['train_loss'], 1e-3)
        cache = model.propagate(dataset.train_inputs)[2]
        record = cache.records[0]
        strongest = np.argsort(np.abs(record.y).mean(axis=0).ravel())[-2:]
        for flat in strongest:
            i, j = np.unravel_index(flat, record.y.shape[1:])
            slope, intercept = np.polyfit(record.x[:, i], record.y[:, i, j], 1)
            residual = record.y[:, i, j] - (slope * record.x[:, i] + intercept)
            r2 = 1 - residual.var() / record.y[:, i, j].var()
            self.assertGreater(r2, 0.99)

    @tag('slow')
    def test_l1_lowers_entropy(self):
        """Test that l1 pressure on f = xy leaves the edge distribution less uniform."""
        X = self.random_inputs(1000, 2, seed=0)
        dataset = Dataset.split(X, X[:, 0] * X[:, 1], test_fraction=0.2, seed=0)
        model = MultKanModel.create([(2, 0), (0, 1), (1, 0)], grid=5, order=3, seed=0)
        model.forward(dataset.train_inputs, keep_cache=True)
        _, initial_entropy = regularization(model)
        log = train(model, dataset, TrainConfig(steps=200, optimizer='lbfgs', lambda_l1=1e-3))
        self.assertLessEqual(log.final['entropy'], initial_entropy)

    @tag('slow')
    def test_sine_plus_square(self):
        """Test that sin(pi x1) + x2^2 reaches a test RMSE below 1e-2."""
        X = self.random_inputs(1000, 2, seed=0)
        Y = np.sin(np.pi * X[:, 0]) + X[:, 1] ** 2
        dataset = Dataset.split(X, Y, test_fraction=0.2, seed=0)
        model = MultKanModel.create([(2, 0), (5, 0), (1, 0)], grid=10, order=3, seed=0)
        log = train(model, dataset, TrainConfig(steps=200, optimizer='lbfgs', lambda_l1=1e-3))
        self.assertLess(log.final['test_loss'], 1e-2)


class TrainConfigTest(BaseTestCase):
    """Test cases for training configuration."""

    def test_negative_lambda(self):
        """Test that negative regularization weights are rejected."""
        with self.assertRaises(ValueError):
            TrainConfig(lambda_l1=-1.0)

    def test_non_finite_lambda(self):
        """Test that infinite regularization weights are rejected."""
        with self.assertRaises(ValueError):
            TrainConfig(lambda_entropy=float('inf'))

    def test_config_file(self):
        """Test loading a key=value config file."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'train.env')
            with open(path, 'w') as handle:
                handle.write('STEPS=7\nOPTIMIZER=lbfgs\nLAMBDA_L1=0.001\nGRID_UPDATE_STEPS=3,5\n')
            config = load_train_config(path, seed=9)
        self.assertEqual(config.steps, 7)
        self.assertEqual(config.optimizer, 'lbfgs')
        self.assertEqual(config.lambda_l1, 0.001)
        self.assertEqual(config.grid_update_steps, (3, 5))
        self.assertEqual(config.seed, 9)

    def test_serializer_rejects_optimizer(self):
        """Test that unknown optimizers fail validation."""
        serializer = TrainConfigSerializer(data={'optimizer': 'sgd'})
        self.assertFalse(serializer.is_valid())
        self.assertIn('optimizer', serializer.errors)

    def test_serializer_defaults(self):
        """Test that an empty document yields the default config."""
        with self.assertRaises(serializers.ValidationError):
            load_train_config(lambda_l1=-1)
        config = load_train_config()
        self.assertEqual(config.optimizer, 'adam')
        self.assertEqual(config.grid_update_steps, (20, 50, 100))
