"""
Base test classes and utilities for network testing.
"""

import numpy as np
from django.test import SimpleTestCase

from .layers import IDENTITY_AFFINE
from .models import MultKanModel


class NetworkTestMixin:
    """Mixin providing network factories and reference evaluators."""

    def create_test_model(self, width=((2, 0), (3, 0), (1, 0)), seed=0, **kwargs):
        """Create a randomly initialized network with small defaults."""
        defaults = {'grid': 5, 'order': 3}
        defaults.update(kwargs)
        return MultKanModel.create(list(width), seed=seed, **defaults)

    def create_identity_model(self, n=1):
        """Create an n -> n network whose diagonal edges are symbolic identities."""
        model = MultKanModel.create([n, n], grid=5, order=3, seed=0)
        layer = model.layers[0]
        layer.mask[...] = 0.0
        diagonal = np.eye(n, dtype=bool)
        layer.mask[diagonal] = 1.0
        layer.numeric[diagonal] = 0.0
        layer.symbolic[diagonal] = 1.0
        layer.fn_names[diagonal] = 'x'
        layer.affine[diagonal] = IDENTITY_AFFINE
        return model

    def random_inputs(self, n_samples, n_inputs, seed=0, low=-1.0, high=1.0):
        rng = np.random.default_rng(seed)
        return rng.uniform(low, high, size=(n_samples, n_inputs))

    def scalar_forward(self, model, x):
        """Walk the network one edge and one sample at a time."""
        nodes = [float(v) for v in x]
        for l in range(model.depth):
            layer = model.layers[l]
            subnodes = []
            for j in range(layer.n_out):
                total = 0.0
                for i in range(layer.n_in):
                    total += float(model.edge(l, i, j)(nodes[i]))
                subnodes.append(total)
            n_add = model.width[l + 1][0]
            nodes = subnodes[:n_add]
            offset = n_add
            for arity in model.arities[l + 1]:
                product = 1.0
                for value in subnodes[offset:offset + arity]:
                    product *= value
                nodes.append(product)
                offset += arity
        return np.array(nodes)


class CustomAssertionsMixin:
    """Mixin providing custom assertions for testing."""

    def assertContainsKeys(self, dictionary, keys):
        """Assert that dictionary contains all specified keys."""
        missing_keys = [key for key in keys if key not in dictionary]
        if missing_keys:
            self.fail(f"Dictionary is missing keys: {missing_keys}")

    def assertAllClose(self, actual, expected, atol=1e-12, rtol=0.0):
        """Assert elementwise closeness of two arrays."""
        np.testing.assert_allclose(actual, expected, atol=atol, rtol=rtol)

    def assertFunctionPreserved(self, before, after, X, atol=1e-12):
        """Assert two networks agree on a probe set."""
        np.testing.assert_allclose(after.forward(X), before.forward(X), atol=atol, rtol=0.0)

    def assertRelativeError(self, actual, expected, bound, floor=1e-8):
        """Assert max relative error between arrays stays under ``bound``."""
        actual = np.asarray(actual, dtype=float)
        expected = np.asarray(expected, dtype=float)
        scale = np.maximum(np.maximum(np.abs(actual), np.abs(expected)), floor)
        error = float(np.max(np.abs(actual - expected) / scale))
        self.assertLess(error, bound, f'max relative error {error:.3e}')


class BaseTestCase(NetworkTestMixin, CustomAssertionsMixin, SimpleTestCase):
    """Base test case with a shared probe set."""

    def setUp(self):
        """Set up common test data."""
        super().setUp()
        self.probe = self.random_inputs(100, 2, seed=123)
