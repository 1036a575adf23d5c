import os
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import tag
from rest_framework import serializers

from kanpiler.compiler import compile_to_kan
from kanscope.exceptions import (
    DegenerateInputError,
    DimensionMismatchError,
    EvaluationDomainError,
    InconclusiveTestError,
    OutOfDomainError,
)
from networks.models import MultKanModel, init_model
from networks.test_base import BaseTestCase
from symbolic.fitting import suggest_symbolic
from symbolic.fixing import fix_symbolic, set_edge_zero
from training.gradients import ParameterSet
from training.tests import finite_difference
from training.trainer import Dataset, TrainConfig, train
from versions.identifiers import VersionId
from versions.store import CheckpointStore, history
from .conserved import conserved_quantity_loss, gradient_subspace_residual, train_conserved
from .datasets import load_dataset, save_dataset
from .diagrams import model_to_dot
from .layout import Workspace
from .tasks import (
    AUXILIARY_VARIABLES,
    CONSERVED,
    TaskSpec,
    augment_input,
    builtin_task,
    gen_dataset,
    infer_input_names,
)


class TempDirMixin:
    """Mixin providing a temporary directory per test."""

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.tmp = Path(self._tmp.name)


class TaskSpecTest(BaseTestCase):
    """Test cases for task descriptions."""

    def test_inferred_names(self):
        """Test that input names follow their first appearance."""
        self.assertEqual(infer_input_names('sin(x1)+pi*y; x1*z'), ['x1', 'y', 'z'])
        self.assertEqual(TaskSpec(source='b*a').input_names, ['b', 'a'])

    def test_conserved_names(self):
        """Test names of a conserved-quantity task."""
        spec = TaskSpec(kind=CONSERVED, source='harmonic-1d')
        self.assertEqual(spec.input_names, ['x', 'p'])
        self.assertEqual(spec.output_names, ['dx', 'dp'])

    def test_invalid_specs(self):
        """Test rejection of empty samples and degenerate boxes."""
        with self.assertRaises(DegenerateInputError):
            TaskSpec(source='x', n_samples=0)
        with self.assertRaises(OutOfDomainError):
            TaskSpec(source='x', domain=(1.0, 1.0))
        with self.assertRaises(DimensionMismatchError):
            TaskSpec(source='x*y', domain={'x': (0, 1)})


class GenDatasetTest(TempDirMixin, BaseTestCase):
    """Test cases for dataset generation."""

    def test_product_labels(self):
        """Test that noiseless labels are exact products."""
        dataset = gen_dataset(TaskSpec(source='x1*x2', n_samples=1000))
        for X, Y in ((dataset.train_inputs, dataset.train_labels), (dataset.test_inputs, dataset.test_labels)):
            np.testing.assert_array_equal(Y[:, 0], X[:, 0] * X[:, 1])
        self.assertEqual(len(dataset.train_inputs) + len(dataset.test_inputs), 1000)
        self.assertTrue(np.all(np.abs(dataset.train_inputs) <= 1.0))

    def test_comparison_task(self):
        """Test the exp(sin(pi x1) + x2^2) generator."""
        dataset = gen_dataset(TaskSpec(source='exp(sin(pi*x1)+x2^2)', n_samples=200, seed=3))
        X = dataset.train_inputs
        expected = np.exp(np.sin(np.pi * X[:, 0]) + X[:, 1] ** 2)
        self.assertAllClose(dataset.train_labels[:, 0], expected, atol=1e-12)

    def test_same_seed_same_file(self):
        """Test that equal seeds give byte-identical dataset files."""
        paths = [self.tmp / 'a.csv', self.tmp / 'b.csv']
        for path in paths:
            save_dataset(gen_dataset(builtin_task('x*y+sin(x)', n_samples=300, seed=7, noise=0.1)), path)
        self.assertEqual(paths[0].read_bytes(), paths[1].read_bytes())
        save_dataset(gen_dataset(builtin_task('x*y+sin(x)', n_samples=300, seed=8, noise=0.1)), paths[1])
        self.assertNotEqual(paths[0].read_bytes(), paths[1].read_bytes())

    def test_multiple_outputs(self):
        """Test one label column per formula."""
        dataset = gen_dataset(builtin_task('multitask-parity', n_samples=64, seed=1))
        self.assertEqual(dataset.train_labels.shape[1], 5)
        self.assertTrue(set(np.unique(dataset.train_inputs)) <= {0.0, 1.0})
        X, Y = dataset.train_inputs, dataset.train_labels
        np.testing.assert_array_equal(Y[:, 2], (X[:, 4] - X[:, 5]) ** 2)

    def test_vector_field_labels(self):
        """Test that conserved-quantity tasks label states with the flow."""
        dataset = gen_dataset(builtin_task('harmonic-2d', n_samples=50))
        X, Y = dataset.train_inputs, dataset.train_labels
        np.testing.assert_array_equal(Y, np.column_stack([X[:, 2], X[:, 3], -X[:, 0], -X[:, 1]]))

    def test_domain_error(self):
        """Test that labels off a function's domain fail strictly."""
        with self.assertRaises(EvaluationDomainError):
            gen_dataset(TaskSpec(source='log(x)', n_samples=100))

    def test_csv_round_trip(self):
        """Test that a saved dataset reloads to the same floats."""
        dataset = gen_dataset(builtin_task('relativistic-mass', n_samples=120, seed=2))
        path = self.tmp / 'mass.csv'
        save_dataset(dataset, path)
        loaded = load_dataset(path, n_outputs=1, seed=5)
        self.assertEqual(loaded.input_names, ['m0', 'v', 'c'])
        self.assertEqual(loaded.output_names, ['m'])
        for column in range(3):
            original = np.sort(np.concatenate([dataset.train_inputs[:, column], dataset.test_inputs[:, column]]))
            reloaded = np.sort(np.concatenate([loaded.train_inputs[:, column], loaded.test_inputs[:, column]]))
            np.testing.assert_array_equal(reloaded, original)

    def test_bad_file(self):
        """Test that a non-numeric cell is reported."""
        path = self.tmp / 'bad.csv'
        path.write_text('x,y\n1.0,abc\n')
        with self.assertRaises(serializers.ValidationError):
            load_dataset(path)


class AugmentInputTest(BaseTestCase):
    """Test cases for auxiliary input columns."""

    def setUp(self):
        super().setUp()
        self.dataset = gen_dataset(builtin_task('relativistic-mass', n_samples=200, seed=0))

    def test_relativistic_columns(self):
        """Test adding beta and gamma."""
        augmented = augment_input(self.dataset, AUXILIARY_VARIABLES['relativistic-mass'])
        self.assertEqual(augmented.input_names, ['m0', 'v', 'c', 'beta', 'gamma'])
        X = augmented.train_inputs
        self.assertAllClose(X[:, 3], X[:, 1] / X[:, 2], atol=1e-15)
        self.assertAllClose(X[:, 4], 1 / np.sqrt(1 - X[:, 3] ** 2), atol=1e-14)
        np.testing.assert_array_equal(augmented.train_labels, self.dataset.train_labels)

    def test_empty_list(self):
        """Test that no auxiliary formulas leave the dataset unchanged."""
        augmented = augment_input(self.dataset, [])
        self.assertEqual(augmented.input_names, self.dataset.input_names)
        np.testing.assert_array_equal(augmented.train_inputs, self.dataset.train_inputs)
        np.testing.assert_array_equal(augmented.test_inputs, self.dataset.test_inputs)

    def test_determinant_column(self):
        """Test the determinant column against a direct computation."""
        dataset = gen_dataset(builtin_task('neo-hookean-p11', n_samples=100, seed=4))
        augmented = augment_input(dataset, AUXILIARY_VARIABLES['neo-hookean-p11'])
        X = augmented.train_inputs
        direct = np.linalg.det(X[:, :9].reshape(-1, 3, 3))
        self.assertAllClose(X[:, 9], direct, atol=1e-14)

    def test_outside_domain(self):
        """Test that gamma with v >= c is rejected."""
        dataset = Dataset([[1.0, 1.1, 1.0], [1.0, 0.5, 1.0]], [[1.0], [1.0]],
                          [[1.0, 0.2, 1.0]], [[1.0]], ['m0', 'v', 'c'], ['m'])
        with self.assertRaises(EvaluationDomainError):
            augment_input(dataset, AUXILIARY_VARIABLES['relativistic-mass'])

    def test_duplicate_name(self):
        """Test that an existing column name is rejected."""
        with self.assertRaises(DimensionMismatchError):
            augment_input(self.dataset, [('v', 'm0*c')])

    def test_select_restores_original(self):
        """Test that dropping the auxiliary columns reproduces the dataset."""
        augmented = augment_input(self.dataset, {'beta': 'v/c'})
        restored = augmented.select_inputs(self.dataset.input_names)
        np.testing.assert_array_equal(restored.train_inputs, self.dataset.train_inputs)
        np.testing.assert_array_equal(restored.test_inputs, self.dataset.test_inputs)
        self.assertEqual(restored.input_names, self.dataset.input_names)


class ConservedQuantityTest(BaseTestCase):
    """Test cases for the conserved-quantity loss."""

    def setUp(self):
        super().setUp()
        self.states = self.random_inputs(200, 2, seed=1)

    def test_harmonic_energy(self):
        """Test that the oscillator energy is conserved."""
        model = compile_to_kan('(x^2+p^2)/2', ['x', 'p'])
        result = conserved_quantity_loss(model, 'harmonic-1d', self.states)
        self.assertLess(result.loss, 1e-12)
        self.assertEqual(result.used, 200)
        self.assertEqual(result.skipped, 0)

    def test_non_conserved(self):
        """Test that a quantity changing along the flow has a positive loss."""
        model = compile_to_kan('x^2+p', ['x', 'p'])
        self.assertGreater(conserved_quantity_loss(model, 'harmonic-1d', self.states).loss, 1e-2)

    def test_constant_is_inconclusive(self):
        """Test that a constant network skips every state."""
        model = self.create_test_model(width=[2, 1])
        model.layers[0].mask[...] = 0.0
        with self.assertRaises(InconclusiveTestError):
            conserved_quantity_loss(model, 'harmonic-1d', self.states)

    def test_shape_checks(self):
        """Test rejection of mismatched models."""
        with self.assertRaises(DimensionMismatchError):
            conserved_quantity_loss(self.create_test_model(width=[2, 2]), 'harmonic-1d', self.states)
        with self.assertRaises(DimensionMismatchError):
            conserved_quantity_loss(self.create_test_model(width=[2, 1]), 'harmonic-2d', self.states)

    def test_parameter_gradients(self):
        """Test analytic parameter gradients against finite differences."""
        model = self.create_test_model(width=[(2, 0), (2, 1), (1, 0)], seed=3, noise=1.0)
        states = self.random_inputs(20, 2, seed=2, low=-0.8, high=0.8)
        params = ParameterSet(model)
        analytic = params.flatten(conserved_quantity_loss(model, 'harmonic-1d', states).grads)
        numeric = finite_difference(
            params, lambda: conserved_quantity_loss(model, 'harmonic-1d', states, with_grads=False).loss
        )
        self.assertRelativeError(analytic, numeric, 1e-4, floor=1e-5)

    def test_input_gradient(self):
        """Test the network input gradient against finite differences."""
        model = self.create_test_model(width=[(2, 0), (2, 1), (1, 0)], seed=5, noise=1.0)
        states = self.random_inputs(30, 2, seed=4, low=-0.8, high=0.8)
        h = 1e-6
        numeric = np.empty((30, 2))
        for k in range(2):
            step = np.zeros(2)
            step[k] = h
            numeric[:, k] = (model.forward(states + step)[:, 0] - model.forward(states - step)[:, 0]) / (2 * h)
        self.assertRelativeError(model.input_gradient(states)[:, 0, :], numeric, 1e-4, floor=1e-4)

    def test_residual_of_exact_energy(self):
        """Test that the exact energy gradient lies in the invariant span."""
        model = compile_to_kan('(x^2+p^2)/2', ['x', 'p'])
        self.assertLess(gradient_subspace_residual(model, 'harmonic-1d', self.states), 1e-10)

    @tag('slow')
    def test_two_dimensional_oscillator(self):
        """Test learning conserved quantities of the 2D oscillator from random networks."""
        rng = np.random.default_rng(0)
        states = rng.uniform(-1, 1, size=(400, 4))
        states = states[np.linalg.norm(states, axis=1) > 0.3]
        held_out = rng.uniform(-1, 1, size=(200, 4))
        held_out = held_out[np.linalg.norm(held_out, axis=1) > 0.5]
        for seed in range(3):
            with self.subTest(seed=seed):
                model = init_model([4, (0, 2), 1], seed=seed)
                log = train_conserved(model, 'harmonic-2d', states,
                                      TrainConfig(steps=300, optimizer='lbfgs', seed=seed))
                self.assertLess(log.final['train_loss'], 1e-3)
                self.assertLess(gradient_subspace_residual(model, 'harmonic-2d', held_out), 0.05)


class RelativisticWorkflowTest(TempDirMixin, BaseTestCase):
    """Test cases for comparing two hypotheses on checkpoint branches."""

    def rmse(self, model, dataset):
        error = model.forward(dataset.test_inputs) - dataset.test_labels
        return float(np.sqrt(np.mean(error ** 2)))

    def fit_branch(self, model, dataset, fitted_edge):
        """Train, fix ``fitted_edge`` to its best primitive and train again."""
        train(model, dataset, TrainConfig(steps=100, optimizer='lbfgs'))
        best = suggest_symbolic(model, fitted_edge, top_k=1, X=dataset.train_inputs)[0]
        fixed = fix_symbolic(model, fitted_edge, best.name, fit_affine=False, affine=best.affine)
        train(fixed, dataset, TrainConfig(steps=50, optimizer='lbfgs'))
        return fixed, best.name

    @tag('slow')
    def test_gamma_beats_beta(self):
        """Test that the gamma branch fits far better than the beta branch."""
        dataset = augment_input(gen_dataset(builtin_task('relativistic-mass', n_samples=1000, seed=0)),
                                AUXILIARY_VARIABLES['relativistic-mass'])
        store = CheckpointStore(self.tmp / 'checkpoints')
        model = MultKanModel.create([5, (0, 1), 1], grid=5, seed=0, grid_range=(-0.1, 2.5),
                                    input_names=dataset.input_names)
        store.commit(model, 'init')

        shared = fix_symbolic(model, (1, 0, 0), 'x', fit_affine=False)
        shared = fix_symbolic(shared, (0, 0, 0), 'x', fit_affine=False)
        for i, j in [(1, 0), (2, 0), (3, 0), (4, 0), (0, 1), (1, 1), (2, 1)]:
            shared = set_edge_zero(shared, (0, i, j))
        store.commit(shared, 'fix m0')

        beta_branch, _ = self.fit_branch(set_edge_zero(shared, (0, 4, 1)), dataset, (0, 3, 1))
        store.commit(beta_branch, 'fix beta')

        restored, version = store.rewind('0.1')
        self.assertEqual(version, VersionId(1, 1))
        gamma_branch, name = self.fit_branch(set_edge_zero(restored, (0, 3, 1)), dataset, (0, 4, 1))
        self.assertEqual(name, 'x')
        store.commit(gamma_branch, 'fix gamma')

        gamma_error = self.rmse(store.load('1.2'), dataset)
        beta_error = self.rmse(store.load('0.2'), dataset)
        self.assertLess(gamma_error, 1e-4)
        self.assertGreater(beta_error, 10 * gamma_error)
        self.assertEqual(
            [(str(v), None if p is None else str(p), op) for v, p, op in history(store)],
            [('0.0', None, 'init'), ('0.1', '0.0', 'fix m0'), ('0.2', '0.1', 'fix beta'),
             ('1.1', '0.1', 'rewind 0.1'), ('1.2', '1.1', 'fix gamma')],
        )


class DiagramTest(BaseTestCase):
    """Test cases for DOT export."""

    def edge_count(self, model):
        return sum(int((layer.mask > 0).sum()) for layer in model.layers)

    def test_compiled_product(self):
        """Test the diagram of a compiled product network."""
        model = compile_to_kan('x*y', ['x', 'y'])
        source = model_to_dot(model).source
        self.assertIn('digraph', source)
        self.assertIn('rankdir=BT', source)
        self.assertIn('label=x', source)
        self.assertIn('color=red', source)
        self.assertEqual(source.count('->'), self.edge_count(model))

    def test_masked_edges_skipped(self):
        """Test that masked edges are left out."""
        model = self.create_test_model(width=[2, 3, 1])
        full = model_to_dot(model).source.count('->')
        model.layers[0].mask[0, 0] = 0.0
        self.assertEqual(model_to_dot(model).source.count('->'), full - 1)

    def test_scaled_by_attribution(self):
        """Test that scores set pen widths and node sizes."""
        model = self.create_test_model(width=[2, 3, 1])
        source = model_to_dot(model, X=self.probe).source
        self.assertIn('penwidth=4.000', source)
        self.assertIn('width=0.600', source)


class WorkspaceLayoutTest(TempDirMixin, BaseTestCase):
    """Test cases for the workspace directories."""

    def test_ensure(self):
        """Test that the layout directories are created."""
        workspace = Workspace(self.tmp / 'ws').ensure()
        for directory in (workspace.models_dir, workspace.datasets_dir, workspace.checkpoints_dir):
            self.assertTrue(directory.is_dir())
        self.assertEqual(workspace.model_path('m').name, 'm.model.json')
        self.assertEqual(workspace.store().directory, workspace.checkpoints_dir)


class CommandTest(TempDirMixin, BaseTestCase):
    """Test cases for the management commands."""

    def setUp(self):
        super().setUp()
        self.common = {'workspace': str(self.tmp / 'ws'), 'versions': str(self.tmp / 'checkpoints')}

    def call(self, name, *args, **options):
        out = StringIO()
        call_command(name, *args, stdout=out, **self.common, **options)
        return out.getvalue()

    def test_compile_and_inspect(self):
        """Test compiling, generating data and inspecting a network."""
        data = str(self.tmp / 'data.csv')
        self.call('compile', 'x*y', names='x,y')
        self.call('gen_data', 'x*y', out=data, samples=100)
        with open(data) as handle:
            self.assertEqual(handle.readline().strip(), 'x,y,y1')
        self.assertIn('x\t', self.call('attribute', data=data))
        self.assertIn('digraph', self.call('plot', data=data))
        self.assertTrue(self.call('extract').strip())
        listing = self.call('versions', 'list')
        self.assertEqual(listing.strip(), '0.0  compile x*y *')

    def test_mutating_commands_commit(self):
        """Test that network edits are committed in order."""
        data = str(self.tmp / 'data.csv')
        model_path = str(self.tmp / 'model.json')
        self.call('gen_data', 'x1+x2^2', out=data, samples=200)
        self.call('init', '2,3,1', model=model_path)
        self.call('train', data=data, steps=3, model=model_path)
        self.call('symbolify', edge='0,0,0', zero=True, model=model_path)
        store = CheckpointStore(self.common['versions'])
        self.assertEqual([str(v) for v, _, _ in history(store)], ['0.0', '0.1', '0.2'])
        self.assertEqual(history(store)[2][2], 'zero 0,0,0')
        self.assertTrue(os.path.exists(model_path))

        self.call('versions', 'rewind', '0.1')
        self.assertEqual(str(store.active), '1.1')

    def test_augment(self):
        """Test appending auxiliary columns from the command line."""
        data = str(self.tmp / 'data.csv')
        self.call('gen_data', 'relativistic-mass', out=data, samples=50)
        self.call('augment', 'w=m0*v', task='relativistic-mass', data=data)
        with open(data) as handle:
            self.assertEqual(handle.readline().strip(), 'm0,v,c,beta,gamma,w,m')

    def test_exit_codes(self):
        """Test that domain errors map to exit codes."""
        with self.assertRaises(CommandError) as context:
            self.call('versions', 'rewind', '9.9')
        self.assertEqual(context.exception.returncode, 2)
        with self.assertRaises(CommandError) as context:
            self.call('attribute', data=str(self.tmp / 'missing.csv'))
        self.assertEqual(context.exception.returncode, 4)
        with self.assertRaises(CommandError) as context:
            self.call('plot')
        self.assertEqual(context.exception.returncode, 2)
