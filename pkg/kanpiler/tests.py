import math

import numpy as np

from kanscope.exceptions import (
    EvaluationDomainError,
    FormulaSyntaxError,
    UnboundVariableError,
    UnknownIdentifierError,
    UnsupportedFeatureError,
)
from networks.test_base import BaseTestCase
from training.gradients import loss_and_grad
from .compiler import compile_to_kan, plan_formula
from .corpus import FORMULA_CORPUS, get_formula
from .expressions import (
    PRODUCT,
    SUM,
    call,
    canonicalize,
    const,
    eval_expr,
    power,
    primitive_expr,
    product_of,
    sum_of,
    to_formula,
    var,
)
from .parser import parse_formula, parse_formulas


def compiled_error(entry, n=100, seed=0):
    """Largest gap between a compiled corpus formula and direct evaluation."""
    tree = parse_formula(entry.text, entry.input_names)
    model = compile_to_kan(tree, entry.input_names)
    X = entry.sample(n, seed)
    expected = eval_expr(tree, dict(zip(entry.input_names, X.T)))
    return float(np.max(np.abs(model.forward(X)[:, 0] - expected)))


def is_flat(tree):
    for child in tree.children:
        if child.kind == tree.kind and tree.kind in (SUM, PRODUCT):
            return False
        if not is_flat(child):
            return False
    return True


class ParseFormulaTest(BaseTestCase):
    """Test cases for the formula parser."""

    def test_product(self):
        """Test a single product."""
        self.assertEqual(parse_formula('x1*x2', ['x1', 'x2']), product_of(var('x1'), var('x2')))

    def test_precedence(self):
        """Test that products bind tighter than sums."""
        tree = parse_formula('x1+x2*x3', ['x1', 'x2', 'x3'])
        self.assertEqual(tree, sum_of(var('x1'), product_of(var('x2'), var('x3'))))

    def test_division(self):
        """Test that division becomes a product with an inverse power."""
        tree = parse_formula('a/b', ['a', 'b'])
        self.assertEqual(tree, product_of(var('a'), power(var('b'), -1.0)))

    def test_relativistic_mass(self):
        """Test a nested formula against hand evaluation."""
        tree = parse_formula('m0/sqrt(1-(v/c)^2)', ['m0', 'v', 'c'])
        value = eval_expr(tree, {'m0': 1.0, 'v': 0.5, 'c': 1.0})
        self.assertAlmostEqual(value, 1 / math.sqrt(0.75), places=12)
        self.assertAlmostEqual(value, 1.1547, places=4)

    def test_power_is_right_associative(self):
        """Test that a^b^c groups to the right."""
        self.assertEqual(eval_expr(parse_formula('2^3^2', []), {}), 512.0)
        self.assertEqual(eval_expr(parse_formula('2**3**2', []), {}), 512.0)

    def test_unary_minus(self):
        """Test unary minus against powers and products."""
        self.assertEqual(eval_expr(parse_formula('-x^2', ['x']), {'x': 3.0}), -9.0)
        self.assertEqual(eval_expr(parse_formula('(-x)^2', ['x']), {'x': 3.0}), 9.0)
        self.assertEqual(eval_expr(parse_formula('-x*y', ['x', 'y']), {'x': 2.0, 'y': 3.0}), -6.0)
        self.assertEqual(eval_expr(parse_formula('x^-1', ['x']), {'x': 4.0}), 0.25)

    def test_flat_sums_and_products(self):
        """Test that nested sums and products are flattened."""
        tree = parse_formula('(a+b)+(c+(a*b)*c)', ['a', 'b', 'c'])
        self.assertEqual(len(tree.children), 4)
        self.assertTrue(is_flat(tree))

    def test_pi(self):
        """Test the built-in constant."""
        self.assertEqual(parse_formula('pi', []), const(math.pi))

    def test_unknown_identifier(self):
        """Test that undeclared names report their position."""
        with self.assertRaises(UnknownIdentifierError) as ctx:
            parse_formula('x1 + foo', ['x1'])
        self.assertEqual(ctx.exception.position, 5)

    def test_missing_parenthesis(self):
        """Test an unclosed parenthesis."""
        with self.assertRaises(FormulaSyntaxError) as ctx:
            parse_formula('(x1+x2', ['x1', 'x2'])
        self.assertEqual(ctx.exception.position, 0)

    def test_extra_parenthesis(self):
        """Test an unmatched closing parenthesis."""
        with self.assertRaises(FormulaSyntaxError) as ctx:
            parse_formula('x1+x2)', ['x1', 'x2'])
        self.assertEqual(ctx.exception.position, 5)

    def test_empty_argument(self):
        """Test a function call without an argument."""
        with self.assertRaises(FormulaSyntaxError) as ctx:
            parse_formula('sin()', [])
        self.assertEqual(ctx.exception.position, 4)

    def test_empty_and_truncated(self):
        """Test empty text and a dangling operator."""
        with self.assertRaises(FormulaSyntaxError) as ctx:
            parse_formula('   ', [])
        self.assertEqual(ctx.exception.position, 0)
        with self.assertRaises(FormulaSyntaxError) as ctx:
            parse_formula('x1 + ', ['x1'])
        self.assertEqual(ctx.exception.position, 5)

    def test_bad_character(self):
        """Test characters outside the grammar."""
        with self.assertRaises(FormulaSyntaxError) as ctx:
            parse_formula('x1 $ x2', ['x1', 'x2'])
        self.assertEqual(ctx.exception.position, 3)

    def test_variable_call(self):
        """Test that variables cannot be called."""
        with self.assertRaises(FormulaSyntaxError):
            parse_formula('x1(2)', ['x1'])

    def test_multiple_formulas(self):
        """Test ;-separated outputs and error offsets."""
        trees = parse_formulas('x+y; x*y', ['x', 'y'])
        self.assertEqual(len(trees), 2)
        with self.assertRaises(UnknownIdentifierError) as ctx:
            parse_formulas('x; z', ['x'])
        self.assertEqual(ctx.exception.position, 3)

    def test_print_round_trip(self):
        """Test that printed trees parse back to identical trees."""
        extra = ['-x^2+2*-y', 'a/b/c', '-(2*x)', '(x-1)^-0.5', '2^x', 'x*-1e-05']
        for text in [entry.text for entry in FORMULA_CORPUS] + extra:
            with self.subTest(text=text):
                names = ['x', 'y', 'a', 'b', 'c']
                for entry in FORMULA_CORPUS:
                    if entry.text == text:
                        names = entry.input_names
                tree = parse_formula(text, names)
                self.assertEqual(parse_formula(to_formula(tree), names), tree)
                canonical = canonicalize(tree)
                self.assertEqual(parse_formula(to_formula(canonical), names), canonical)


class EvalExprTest(BaseTestCase):
    """Test cases for expression evaluation."""

    def test_constant(self):
        """Test a constant tree."""
        self.assertEqual(eval_expr(parse_formula('3.5', []), {}), 3.5)

    def test_library_calls(self):
        """Test function calls at the origin."""
        tree = parse_formula('sin(x1)+exp(x2)', ['x1', 'x2'])
        self.assertEqual(eval_expr(tree, {'x1': 0.0, 'x2': 0.0}), 1.0)

    def test_matches_direct_evaluation(self):
        """Test against a separately written evaluator."""
        names = ['q', 'Ef', 'v', 'B', 'theta']
        tree = parse_formula('q*(Ef+v*B*sin(theta))', names)
        rng = np.random.default_rng(0)
        for _ in range(50):
            q, Ef, v, B, theta = rng.uniform(-3, 3, size=5)
            direct = q * (Ef + v * B * math.sin(theta))
            value = eval_expr(tree, dict(zip(names, (q, Ef, v, B, theta))))
            self.assertLessEqual(abs(value - direct), 1e-14 * max(1.0, abs(direct)))

    def test_vectorized(self):
        """Test evaluation on arrays of bindings."""
        tree = parse_formula('x*y+1', ['x', 'y'])
        values = eval_expr(tree, {'x': np.array([1.0, 2.0]), 'y': np.array([3.0, 4.0])})
        self.assertAllClose(values, [4.0, 9.0])

    def test_unbound_variable(self):
        """Test that every variable needs a value."""
        with self.assertRaises(UnboundVariableError):
            eval_expr(parse_formula('x+y', ['x', 'y']), {'x': 1.0})

    def test_domain_errors(self):
        """Test strict domains of functions and powers."""
        for text in ('log(x)', 'sqrt(x)', 'x^0.5', 'asin(x-2)'):
            with self.subTest(text=text):
                with self.assertRaises(EvaluationDomainError):
                    eval_expr(parse_formula(text, ['x']), {'x': -1.0})
        with self.assertRaises(EvaluationDomainError):
            eval_expr(parse_formula('1/x', ['x']), {'x': 0.0})


class CanonicalizeTest(BaseTestCase):
    """Test cases for constant folding and normalization."""

    def test_folding(self):
        """Test that constant factors collapse into one coefficient."""
        self.assertEqual(canonicalize(parse_formula('2*3*x', ['x'])), product_of(const(6.0), var('x')))
        self.assertEqual(canonicalize(parse_formula('(x+1)+(y+2)', ['x', 'y'])),
                         sum_of(var('x'), var('y'), const(3.0)))

    def test_trivial_operations(self):
        """Test that unit factors, zero offsets and unit powers vanish."""
        for text in ('x+0', '1*x', 'x^1', '(x*2)/2'):
            with self.subTest(text=text):
                self.assertEqual(canonicalize(parse_formula(text, ['x'])), var('x'))
        self.assertEqual(canonicalize(parse_formula('0*sin(x)', ['x'])), const(0.0))

    def test_constant_base(self):
        """Test that a constant base becomes an exponential."""
        tree = canonicalize(parse_formula('2^x', ['x']))
        self.assertEqual(tree, call('exp', product_of(const(math.log(2.0)), var('x'))))

    def test_corpus_stays_flat(self):
        """Test that canonical corpus trees have no nested sums or products."""
        for entry in FORMULA_CORPUS:
            with self.subTest(formula=entry.name):
                self.assertTrue(is_flat(canonicalize(parse_formula(entry.text, entry.input_names))))

    def test_primitive_expr(self):
        """Test trees built from primitive descriptors."""
        tree = primitive_expr('x^2', var('x'), a=2.0, b=1.0, c=3.0, d=-1.0)
        self.assertEqual(eval_expr(tree, {'x': 1.0}), 3.0 * 9.0 - 1.0)
        self.assertEqual(primitive_expr('0', var('x'), d=2.5), const(2.5))
        self.assertEqual(primitive_expr('sin', var('x')), call('sin', var('x')))


class CompileToKanTest(BaseTestCase):
    """Test cases for formula compilation."""

    def test_single_product(self):
        """Test that x*y needs one multiplication node."""
        model = compile_to_kan(parse_formula('x*y', ['x', 'y']), ['x', 'y'])
        self.assertEqual(model.width, [(2, 0), (0, 1), (1, 0)])
        self.assertAlmostEqual(float(model.forward([[3.0, 4.0]])[0, 0]), 12.0, delta=1e-12)

    def test_identity(self):
        """Test that a bare variable compiles to one identity edge."""
        model = compile_to_kan('x', ['x'])
        self.assertEqual(model.width, [(1, 0), (1, 0)])
        X = self.random_inputs(20, 1)
        self.assertTrue(np.array_equal(model.forward(X), X))

    def test_unary_depth(self):
        """Test that a single function of an input is one layer deep."""
        model = compile_to_kan('3*sin(2*x+1)-4', ['x'])
        self.assertEqual(model.depth, 1)
        self.assertEqual(model.edge(0, 0, 0).symbolic, ('sin', 2.0, 1.0, 3.0, -4.0))

    def test_corpus_equivalence(self):
        """Test compiled corpus formulas against direct evaluation."""
        for entry in FORMULA_CORPUS:
            with self.subTest(formula=entry.name):
                self.assertLess(compiled_error(entry), 1e-10)

    def test_named_formulas(self):
        """Test two formulas called out by name."""
        self.assertLess(compiled_error(get_formula('lorentz-force')), 1e-10)
        self.assertLess(compiled_error(get_formula('relativistic-mass')), 1e-10)

    def test_purely_symbolic(self):
        """Test that spline coefficients get exactly zero gradient after compiling."""
        entry = get_formula('rotation')
        model = compile_to_kan(entry.text, entry.input_names)
        for layer in model.layers:
            self.assertFalse(np.any(layer.numeric))
        X = entry.sample(30)
        Y = np.random.default_rng(1).normal(size=(30, 1))
        _, grads = loss_and_grad(model, X, Y)
        for layer_grads in grads:
            self.assertFalse(np.any(layer_grads['coef']))

    def test_repeated_source(self):
        """Test two different edges from one source into one sum."""
        model = compile_to_kan('x+sin(x)+x^2', ['x'])
        X = self.random_inputs(50, 1)
        self.assertAllClose(model.forward(X)[:, 0], X[:, 0] + np.sin(X[:, 0]) + X[:, 0] ** 2, atol=1e-12)

    def test_other_powers(self):
        """Test powers without a dedicated primitive."""
        X = self.random_inputs(50, 1, low=0.5, high=2.0)
        x = X[:, 0]
        for text, expected in (('x^5', x ** 5), ('x^-3', x ** -3.0), ('x^1.5', x ** 1.5)):
            with self.subTest(text=text):
                model = compile_to_kan(text, ['x'])
                self.assertAllClose(model.forward(X)[:, 0], expected, atol=1e-10)

    def test_multiple_outputs(self):
        """Test parallel formulas sharing one input layer."""
        model = compile_to_kan('x+y; x*y; x*y', ['x', 'y'])
        self.assertEqual(model.n_outputs, 3)
        X = self.random_inputs(20, 2)
        out = model.forward(X)
        self.assertAllClose(out[:, 0], X.sum(axis=1))
        self.assertAllClose(out[:, 1], X.prod(axis=1))
        self.assertAllClose(out[:, 2], X.prod(axis=1))

    def test_constant_formula(self):
        """Test a formula without variables."""
        model = compile_to_kan('2*pi', ['x'])
        self.assertAllClose(model.forward(self.random_inputs(5, 1))[:, 0], np.full(5, 2 * math.pi))

    def test_variable_exponent(self):
        """Test that variable exponents are rejected."""
        with self.assertRaises(UnsupportedFeatureError):
            compile_to_kan('x^y', ['x', 'y'])

    def test_undeclared_input(self):
        """Test that a tree may only use declared inputs."""
        tree = parse_formula('x*y', ['x', 'y'])
        with self.assertRaises(UnboundVariableError):
            compile_to_kan(tree, ['x'])

    def test_plan_layout(self):
        """Test the plan's per-level layout."""
        plan = plan_formula([canonicalize(parse_formula('x*y*z', ['x', 'y', 'z']))], ['x', 'y', 'z'])
        width, arities = plan.layout()
        self.assertEqual(width, [(3, 0), (0, 1), (1, 0)])
        self.assertEqual(arities, [[], [3], []])
