"""
First- and quasi-second-order optimizers over a flat parameter vector.

Both optimizers are driven by an objective ``f(params) -> (loss, grad)``.
"""

import logging
from collections import deque

import numpy as np
from scipy.optimize import line_search

logger = logging.getLogger(__name__)


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.reset()

    def reset(self):
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, objective):
        loss, grad = objective(params)
        if self.m is None or self.m.shape != params.shape:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        beta1, beta2 = self.betas
        self.t += 1
        self.m = beta1 * self.m + (1 - beta1) * grad
        self.v = beta2 * self.v + (1 - beta2) * grad ** 2
        m_hat = self.m / (1 - beta1 ** self.t)
        v_hat = self.v / (1 - beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps), loss


class _Memo:
    """Caches the last objective evaluation so value and gradient share one pass."""

    def __init__(self, objective):
        self.objective = objective
        self.x = None
        self.value = None

    def __call__(self, x):
        if self.x is None or not np.array_equal(x, self.x):
            self.x = np.array(x, copy=True)
            self.value = self.objective(self.x)
        return self.value

    def loss(self, x):
        return self(x)[0]

    def grad(self, x):
        return self(x)[1]


class LBFGS:
    """
    Limited-memory BFGS: two-loop recursion for the search direction and a
    strong-Wolfe line search from scipy.
    """

    def __init__(self, history_size=10, tolerance_grad=1e-12):
        self.history_size = history_size
        self.tolerance_grad = tolerance_grad
        self.reset()

    def reset(self):
        self.steps = deque(maxlen=self.history_size)
        self.diffs = deque(maxlen=self.history_size)
        self.previous_loss = None

    def direction(self, grad):
        q = grad.copy()
        alphas = []
        for s, y in reversed(list(zip(self.steps, self.diffs))):
            rho = 1.0 / y.dot(s)
            alpha = rho * s.dot(q)
            q -= alpha * y
            alphas.append((rho, alpha))
        if self.steps:
            s, y = self.steps[-1], self.diffs[-1]
            q *= s.dot(y) / y.dot(y)
        for (s, y), (rho, alpha) in zip(zip(self.steps, self.diffs), reversed(alphas)):
            beta = rho * y.dot(q)
            q += s * (alpha - beta)
        return -q

    def step(self, params, objective):
        memo = _Memo(objective)
        loss, grad = memo(params)
        if np.max(np.abs(grad), initial=0.0) <= self.tolerance_grad:
            return params, loss
        direction = self.direction(grad)
        if direction.dot(grad) >= 0:
            self.reset()
            direction = -grad
        alpha, *_ = line_search(memo.loss, memo.grad, params, direction, gfk=grad,
                                old_fval=loss, old_old_fval=self.previous_loss)
        if alpha is None and self.steps:
            logger.debug('Line search failed; restarting from steepest descent')
            self.reset()
            direction = -grad
            alpha, *_ = line_search(memo.loss, memo.grad, params, direction, gfk=grad, old_fval=loss)
        if alpha is None:
            logger.debug('Line search found no descent step')
            return params, loss
        new_params = params + alpha * direction
        new_loss, new_grad = memo(new_params)
        s = new_params - params
        y = new_grad - grad
        if y.dot(s) > 1e-10 * max(1.0, float(y.dot(y))):
            self.steps.append(s)
            self.diffs.append(y)
        self.previous_loss = loss
        return new_params, new_loss


OPTIMIZERS = {'adam': Adam, 'lbfgs': LBFGS}
