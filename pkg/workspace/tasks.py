"""
Synthetic datasets.

A ``TaskSpec`` describes either a regression target given by formula text
(one ``;``-separated formula per output) or the states of a known vector
field, whose labels are the flow at each state. Inputs are drawn uniformly
from a box, or from its corners for discrete tasks.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from kanpiler.expressions import eval_expr
from kanpiler.parser import CONSTANTS, parse_formula, parse_formulas, tokenize
from kanscope.exceptions import DegenerateInputError, DimensionMismatchError, OutOfDomainError
from symbolic.library import CALLABLE
from training.trainer import Dataset
from .conserved import get_vector_field

logger = logging.getLogger(__name__)

FORMULA = 'formula'
CONSERVED = 'conserved'


def infer_input_names(text):
    """Variables of ``text`` in order of first appearance."""
    names = []
    for part in text.split(';'):
        tokens = tokenize(part)
        for token, following in zip(tokens, tokens[1:]):
            if token.kind != 'name' or following.text == '(':
                continue
            if token.text in CALLABLE or token.text in CONSTANTS or token.text in names:
                continue
            names.append(token.text)
    return names


@dataclass
class TaskSpec:
    kind: str = FORMULA
    source: str = ''
    n_samples: int = 1000
    domain: object = (-1.0, 1.0)
    noise: float = 0.0
    seed: int = 0
    input_names: List[str] = field(default_factory=list)
    output_names: List[str] = field(default_factory=list)
    discrete: bool = False
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in (FORMULA, CONSERVED):
            raise ValueError(f"Unknown task kind '{self.kind}'")
        if self.n_samples < 1:
            raise DegenerateInputError('A dataset needs at least one sample')
        if self.noise < 0:
            raise ValueError('Noise level must be nonnegative')
        if not self.input_names:
            if self.kind == CONSERVED:
                self.input_names = list(get_vector_field(self.source).names)
            else:
                self.input_names = infer_input_names(self.source)
        if self.kind == CONSERVED and not self.output_names:
            self.output_names = [f'd{name}' for name in self.input_names]
        for lo, hi in self.bounds:
            if not hi > lo:
                raise OutOfDomainError(f'Domain interval ({lo}, {hi}) is empty')

    @property
    def bounds(self):
        """One ``(lo, hi)`` pair per input."""
        domain = self.domain
        if isinstance(domain, dict):
            missing = [name for name in self.input_names if name not in domain]
            if missing:
                raise DimensionMismatchError(f"No domain interval for {', '.join(missing)}")
            return [tuple(map(float, domain[name])) for name in self.input_names]
        if len(domain) == 2 and np.isscalar(domain[0]):
            return [(float(domain[0]), float(domain[1]))] * len(self.input_names)
        if len(domain) != len(self.input_names):
            raise DimensionMismatchError('One domain interval per input is required')
        return [tuple(map(float, pair)) for pair in domain]


def sample_inputs(spec, rng):
    bounds = np.array(spec.bounds, dtype=float).reshape(-1, 2)
    lows, highs = bounds[:, 0], bounds[:, 1]
    shape = (spec.n_samples, len(spec.input_names))
    if spec.discrete:
        return np.where(rng.integers(0, 2, size=shape) == 1, highs, lows)
    return rng.uniform(lows, highs, size=shape)


def gen_dataset(spec):
    """Sample a ``Dataset`` for ``spec``; the same seed gives the same data."""
    rng = np.random.default_rng(spec.seed)
    X = sample_inputs(spec, rng)
    if spec.kind == CONSERVED:
        Y = get_vector_field(spec.source)(X)
    else:
        trees = parse_formulas(spec.source, spec.input_names)
        binding = {name: X[:, k] for k, name in enumerate(spec.input_names)}
        Y = np.column_stack([np.broadcast_to(eval_expr(tree, binding), (len(X),)) for tree in trees])
    if spec.noise:
        Y = Y + spec.noise * rng.normal(size=Y.shape)
    dataset = Dataset.split(X, Y, spec.test_fraction, spec.seed, spec.input_names, spec.output_names)
    logger.info(f'Generated {spec.n_samples} samples with inputs {", ".join(spec.input_names)}')
    return dataset


def _append_columns(X, names, aux_trees):
    binding = {name: X[:, k] for k, name in enumerate(names)}
    columns = []
    for name, tree in aux_trees:
        column = np.broadcast_to(eval_expr(tree, binding), (len(X),)).astype(float)
        binding[name] = column
        columns.append(column)
    return np.column_stack([X] + columns) if columns else X.copy()


def augment_input(dataset, aux_formulas):
    """
    Dataset with one extra input column per ``(name, formula)`` pair.

    Formulas may use the existing inputs and any auxiliary column listed
    before them. Evaluation is strict, so a row outside a formula's domain
    raises ``EvaluationDomainError``.
    """
    aux_formulas = list(aux_formulas.items()) if isinstance(aux_formulas, dict) else list(aux_formulas)
    names = list(dataset.input_names)
    aux_trees = []
    for name, text in aux_formulas:
        if name in names:
            raise DimensionMismatchError(f"Column '{name}' already exists")
        aux_trees.append((name, parse_formula(text, names)))
        names.append(name)
    base = list(dataset.input_names)
    augmented = Dataset(
        _append_columns(dataset.train_inputs, base, aux_trees), dataset.train_labels.copy(),
        _append_columns(dataset.test_inputs, base, aux_trees), dataset.test_labels.copy(),
        names, list(dataset.output_names),
    )
    if aux_trees:
        logger.info(f'Added auxiliary inputs {", ".join(name for name, _ in aux_trees)}')
    return augmented


# built-in tasks

NEO_HOOKEAN_MU = 5 / 12
NEO_HOOKEAN_LAMBDA = 5 / 18
DEFORMATION_NAMES = [f'F{i}{j}' for i in range(1, 4) for j in range(1, 4)]
DETERMINANT = ('F11*(F22*F33-F23*F32)-F12*(F21*F33-F23*F31)+F13*(F21*F32-F22*F31)')
NEO_HOOKEAN = {
    'neo-hookean-p11': f'{NEO_HOOKEAN_MU!r}*(F11^2+F12^2+F13^2-1)+{NEO_HOOKEAN_LAMBDA!r}*log({DETERMINANT})',
    'neo-hookean-p12': f'{NEO_HOOKEAN_MU!r}*(F11*F21+F12*F22+F13*F23)',
}


def _deformation_box(width=0.2):
    return {name: (float(name[1] == name[2]) - width, float(name[1] == name[2]) + width)
            for name in DEFORMATION_NAMES}


def _parity_formula(n_pairs):
    return ';'.join(f'(x{2 * k + 1}-x{2 * k + 2})^2' for k in range(n_pairs))


BUILTIN_TASKS: Dict[str, dict] = {
    'harmonic-1d': {'kind': CONSERVED, 'source': 'harmonic-1d'},
    'harmonic-2d': {'kind': CONSERVED, 'source': 'harmonic-2d'},
    'neo-hookean-p11': {'source': NEO_HOOKEAN['neo-hookean-p11'], 'input_names': DEFORMATION_NAMES,
                        'domain': _deformation_box(), 'output_names': ['P11']},
    'neo-hookean-p12': {'source': NEO_HOOKEAN['neo-hookean-p12'], 'input_names': DEFORMATION_NAMES,
                        'domain': _deformation_box(), 'output_names': ['P12']},
    'multitask-parity': {'source': _parity_formula(5), 'input_names': [f'x{k}' for k in range(1, 11)],
                         'domain': (0.0, 1.0), 'discrete': True,
                         'output_names': [f'y{k}' for k in range(1, 6)]},
    'relativistic-mass': {'source': 'm0/sqrt(1-(v/c)^2)', 'input_names': ['m0', 'v', 'c'],
                          'domain': {'m0': (1.0, 2.0), 'v': (0.0, 0.9), 'c': (1.0, 1.2)},
                          'output_names': ['m']},
}

AUXILIARY_VARIABLES = {
    'relativistic-mass': [('beta', 'v/c'), ('gamma', '1/sqrt(1-beta^2)')],
    'neo-hookean-p11': [('detF', DETERMINANT)],
}


def builtin_task(name, n_samples=1000, seed=0, noise=0.0, **overrides):
    """``TaskSpec`` of a built-in task, or of a formula when ``name`` is not one."""
    if name in BUILTIN_TASKS:
        options = dict(BUILTIN_TASKS[name])
    else:
        options = {'source': name}
    options.update({key: value for key, value in overrides.items() if value is not None})
    return TaskSpec(n_samples=n_samples, seed=seed, noise=noise, **options)
