"""
KAN and multiplication layers.

A ``KanLayer`` holds one edge function per (input node, output subnode) pair.
Every per-edge parameter is stored as an ``(n_in, n_out, ...)`` array so the
forward pass, the forward-mode tangents and the reverse pass are array
expressions over the whole layer.

Edge function::

    phi(x) = mask * [numeric * (scale_base * silu(x) + scale_sp * spline(x))
                     + symbolic * (c * f(a * x + b) + d)]
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from kanscope.exceptions import OutOfDomainError, WidthSpecError
from splines.bspline import basis_matrix, uniform_knots
from symbolic.library import get_primitive

IDENTITY_AFFINE = (1.0, 0.0, 1.0, 0.0)


def silu(x):
    return x * expit(x)


def silu_derivative(x, order=1):
    s = expit(x)
    if order == 1:
        return s + x * s * (1 - s)
    return s * (1 - s) * (2 + x * (1 - 2 * s))


@dataclass(eq=False)
class LayerRecord:
    """Activations of one KAN layer for one batch."""

    x: np.ndarray          # (N, n_in) node values entering the layer
    xe: np.ndarray         # (N, n_in, n_out) node values broadcast per edge
    xc: np.ndarray         # per-edge values clamped onto the knot span
    inside: np.ndarray     # per-edge mask of unclamped values
    basis: np.ndarray      # (N, n_in, n_out, n_basis)
    spline: np.ndarray     # (N, n_in, n_out) raw spline values
    y: np.ndarray          # (N, n_in, n_out) edge outputs
    z: np.ndarray          # (N, n_out) subnode sums
    dx: Optional[np.ndarray] = None   # (D, N, n_in) tangents
    dy: Optional[np.ndarray] = None   # (D, N, n_in, n_out)
    dz: Optional[np.ndarray] = None   # (D, N, n_out)
    nodes: Optional[np.ndarray] = None
    dnodes: Optional[np.ndarray] = None
    strict: bool = False


@dataclass(eq=False)
class KanLayer:
    knots: np.ndarray
    coef: np.ndarray
    scale_base: np.ndarray
    scale_sp: np.ndarray
    mask: np.ndarray
    numeric: np.ndarray
    symbolic: np.ndarray
    affine: np.ndarray
    fn_names: np.ndarray
    frozen: np.ndarray
    fresh: np.ndarray
    order: int = 3

    @classmethod
    def blank(cls, n_in, n_out, num_intervals, order, grid_range=(-1.0, 1.0)):
        """A layer of zero spline edges: every output is exactly 0."""
        shape = (n_in, n_out)
        knots = uniform_knots(num_intervals, order, grid_range[0], grid_range[1])
        affine = np.zeros(shape + (4,))
        affine[...] = IDENTITY_AFFINE
        return cls(
            knots=np.broadcast_to(knots, shape + knots.shape).copy(),
            coef=np.zeros(shape + (num_intervals + order,)),
            scale_base=np.zeros(shape),
            scale_sp=np.ones(shape),
            mask=np.ones(shape),
            numeric=np.ones(shape),
            symbolic=np.zeros(shape),
            affine=affine,
            fn_names=np.full(shape, '0', dtype=object),
            frozen=np.zeros(shape, dtype=bool),
            fresh=np.zeros(shape, dtype=bool),
            order=order,
        )

    @classmethod
    def initialize(cls, n_in, n_out, num_intervals, order, rng, noise=0.1,
                   grid_range=(-1.0, 1.0), sparse=False):
        layer = cls.blank(n_in, n_out, num_intervals, order, grid_range)
        std = noise / np.sqrt(n_in * (num_intervals + order))
        layer.coef = rng.normal(0.0, std, size=layer.coef.shape)
        layer.scale_base = np.ones((n_in, n_out))
        if sparse:
            keep = min(n_in, 2)
            mask = np.zeros((n_in, n_out))
            for j in range(n_out):
                mask[rng.choice(n_in, size=keep, replace=False), j] = 1.0
            layer.mask = mask
        return layer

    @property
    def n_in(self):
        return self.coef.shape[0]

    @property
    def n_out(self):
        return self.coef.shape[1]

    @property
    def num_basis(self):
        return self.coef.shape[2]

    @property
    def num_intervals(self):
        return self.num_basis - self.order

    def modes(self):
        """Per-edge mode label: spline, symbolic or both."""
        labels = np.full(self.mask.shape, 'spline', dtype=object)
        labels[(self.symbolic > 0) & (self.numeric > 0)] = 'both'
        labels[(self.symbolic > 0) & (self.numeric == 0)] = 'symbolic'
        return labels

    def copy(self):
        return KanLayer(**{
            name: (value.copy() if isinstance(value, np.ndarray) else value)
            for name, value in self.__dict__.items()
        })

    def select(self, rows=None, cols=None):
        """Sub-layer restricted to the given input rows and output columns."""
        rows = np.arange(self.n_in) if rows is None else np.asarray(rows, dtype=int)
        cols = np.arange(self.n_out) if cols is None else np.asarray(cols, dtype=int)
        picked = {}
        for name, value in self.__dict__.items():
            if isinstance(value, np.ndarray):
                value = value[rows][:, cols].copy()
            picked[name] = value
        return KanLayer(**picked)

    # forward

    def _symbolic_terms(self, xe, deriv, strict):
        out = np.zeros(xe.shape)
        active = (self.mask > 0) & (self.symbolic > 0)
        if not active.any():
            return out
        for name in sorted(set(self.fn_names[active])):
            ii, jj = np.nonzero(active & (self.fn_names == name))
            a, b, c, d = self.affine[ii, jj].T
            values = get_primitive(name).evaluate(a * xe[:, ii, jj] + b, deriv, strict)
            out[:, ii, jj] = c * values + d if deriv == 0 else c * a ** deriv * values
        return out

    def forward(self, x, tangents=None, strict=False, use_base=True):
        n = x.shape[0]
        xe = np.broadcast_to(x[:, :, None], (n, self.n_in, self.n_out))
        lo = self.knots[..., 0]
        hi = self.knots[..., -1]
        inside = (xe >= lo) & (xe <= hi)
        if strict:
            live = (self.mask > 0) & (self.numeric > 0)
            if np.any(~inside & live):
                raise OutOfDomainError('Layer input outside the spline knot span')
        xc = np.clip(xe, lo, hi)
        basis = basis_matrix(xc, self.knots, self.order)
        spline = np.einsum('nijk,ijk->nij', basis, self.coef)

        numeric = self.scale_sp * spline
        if use_base:
            numeric = numeric + self.scale_base * silu(xe)
        y = (self.mask * self.numeric) * numeric + self._symbolic_terms(xe, 0, strict)
        record = LayerRecord(x=x, xe=xe, xc=xc, inside=inside, basis=basis,
                             spline=spline, y=y, z=y.sum(axis=1), strict=strict)
        if tangents is not None:
            slope = self.derivative(record, 1, use_base)
            record.dx = tangents
            record.dy = tangents[:, :, :, None] * slope
            record.dz = record.dy.sum(axis=2)
        return record

    def derivative(self, record, order, use_base=True):
        """``phi'`` or ``phi''`` of every edge at the recorded inputs."""
        d_basis = basis_matrix(record.xc, self.knots, self.order, order)
        value = self.scale_sp * np.einsum('nijk,ijk->nij', d_basis, self.coef) * record.inside
        if use_base:
            value = value + self.scale_base * silu_derivative(record.xe, order)
        return (self.mask * self.numeric) * value + self._symbolic_terms(record.xe, order, record.strict)

    # reverse

    def backward(self, record, ybar, dybar=None, use_base=True):
        """
        Pull adjoints of edge outputs (and of their tangents) back to the layer
        inputs and to the trainable parameters.

        Returns ``(xbar, dxbar, grads)`` where ``grads`` maps ``coef``,
        ``scale_base`` and ``scale_sp`` to arrays shaped like the parameters.
        """
        gate = self.mask * self.numeric
        slope = self.derivative(record, 1, use_base)
        xbar = (ybar * slope).sum(axis=2)
        weight = ybar * gate
        grads = {
            'coef': np.einsum('nij,nijk->ijk', weight * self.scale_sp, record.basis),
            'scale_sp': (weight * record.spline).sum(axis=0),
            'scale_base': (weight * silu(record.xe)).sum(axis=0) if use_base else np.zeros(gate.shape),
        }
        dxbar = None
        if dybar is not None and record.dx is not None:
            dxbar = np.einsum('dnij,nij->dni', dybar, slope)
            wprime = np.einsum('dnij,dni->nij', dybar, record.dx)
            xbar = xbar + (wprime * self.derivative(record, 2, use_base)).sum(axis=2)
            weight = wprime * gate * record.inside
            d_basis = basis_matrix(record.xc, self.knots, self.order, 1)
            grads['coef'] += np.einsum('nij,nijk->ijk', weight * self.scale_sp, d_basis)
            grads['scale_sp'] += (weight * np.einsum('nijk,ijk->nij', d_basis, self.coef)).sum(axis=0)
            if use_base:
                grads['scale_base'] += (wprime * gate * silu_derivative(record.xe)).sum(axis=0)
        return xbar, dxbar, grads


@dataclass(eq=False)
class MultLayer:
    """Copies the first ``n_add`` subnodes, multiplies consecutive groups of the rest."""

    n_add: int
    arities: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.arities = tuple(int(a) for a in self.arities)
        if any(a < 2 for a in self.arities):
            raise WidthSpecError('Multiplication arity must be at least 2')
        offsets = self.n_add + np.concatenate([[0], np.cumsum(self.arities)]).astype(int)
        self.groups = [np.arange(offsets[q], offsets[q + 1]) for q in range(len(self.arities))]

    @property
    def n_subnodes(self):
        return self.n_add + sum(self.arities)

    @property
    def n_nodes(self):
        return self.n_add + len(self.arities)

    def subnodes_of(self, node):
        """Subnode indices feeding ``node``."""
        if node < self.n_add:
            return np.array([node])
        return self.groups[node - self.n_add]

    @staticmethod
    def _product_without(values, skip):
        keep = [g for g in range(values.shape[-1]) if g not in skip]
        return np.prod(values[..., keep], axis=-1)

    def forward(self, z, dz=None):
        nodes = np.empty(z.shape[:-1] + (self.n_nodes,))
        nodes[..., :self.n_add] = z[..., :self.n_add]
        dnodes = None
        if dz is not None:
            dnodes = np.empty(dz.shape[:-1] + (self.n_nodes,))
            dnodes[..., :self.n_add] = dz[..., :self.n_add]
        for q, idx in enumerate(self.groups):
            zg = z[..., idx]
            nodes[..., self.n_add + q] = np.prod(zg, axis=-1)
            if dz is not None:
                dnodes[..., self.n_add + q] = sum(
                    dz[..., idx[g]] * self._product_without(zg, {g}) for g in range(len(idx))
                )
        return nodes, dnodes

    def backward(self, z, dz, nbar, dnbar=None):
        zbar = np.zeros(z.shape)
        zbar[..., :self.n_add] = nbar[..., :self.n_add]
        dzbar = None
        if dnbar is not None:
            dzbar = np.zeros(dnbar.shape[:-1] + (self.n_subnodes,))
            dzbar[..., :self.n_add] = dnbar[..., :self.n_add]
        for q, idx in enumerate(self.groups):
            zg = z[..., idx]
            node = self.n_add + q
            for g in range(len(idx)):
                others = self._product_without(zg, {g})
                zbar[..., idx[g]] += nbar[..., node] * others
                if dnbar is not None:
                    dzbar[..., idx[g]] += dnbar[..., node] * others
                    for h in range(len(idx)):
                        if h != g:
                            pair = self._product_without(zg, {g, h})
                            zbar[..., idx[g]] += (dnbar[..., node] * dz[..., idx[h]] * pair).sum(axis=0)
        return zbar, dzbar
