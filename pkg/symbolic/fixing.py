"""Switching edges between spline and symbolic mode."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from kanscope.conf import kan_settings
from networks.layers import IDENTITY_AFFINE
from .fitting import edge_samples, fit_primitive, suggest_for_samples
from .library import get_primitive

logger = logging.getLogger(__name__)


def fix_symbolic(model, edge, name, fit_affine=True, affine=None, freeze=False, X=None):
    """
    Copy of ``model`` with edge ``(l, i, j)`` set to ``c * name(a x + b) + d``.

    The affine parameters are fitted to the edge's cached samples unless
    ``fit_affine`` is false, in which case ``affine`` (default identity) is
    used. The spline parameters are kept untouched so ``unfix_symbolic``
    restores the previous edge exactly.
    """
    l, i, j = edge
    primitive = get_primitive(name)
    r2 = None
    if fit_affine:
        x, y = edge_samples(model, edge, X)
        result = fit_primitive(x, y, primitive)
        affine, r2 = result.affine, result.r2
    elif affine is None:
        affine = IDENTITY_AFFINE
    fixed = model.copy()
    layer = fixed.layers[l]
    layer.numeric[i, j] = 0.0
    layer.symbolic[i, j] = 1.0
    layer.fn_names[i, j] = primitive.name
    layer.affine[i, j] = affine
    if freeze:
        layer.frozen[i, j] = True
    logger.info(f'Edge {tuple(edge)} fixed to {primitive.name}'
                + ('' if r2 is None else f' (r2={r2:.4f})'))
    return fixed


def unfix_symbolic(model, edge):
    """Copy of ``model`` with edge ``(l, i, j)`` back in spline mode."""
    l, i, j = edge
    restored = model.copy()
    layer = restored.layers[l]
    layer.numeric[i, j] = 1.0
    layer.symbolic[i, j] = 0.0
    layer.fn_names[i, j] = '0'
    layer.affine[i, j] = IDENTITY_AFFINE
    layer.frozen[i, j] = False
    return restored


def set_edge_zero(model, edge):
    return fix_symbolic(model, edge, '0', fit_affine=False)


@dataclass
class AutoSymbolicEntry:
    edge: Tuple[int, int, int]
    name: Optional[str]
    r2: float
    affine: Optional[tuple] = None

    @property
    def resolved(self):
        return self.name is not None


@dataclass
class AutoSymbolicReport:
    entries: List[AutoSymbolicEntry] = field(default_factory=list)

    @property
    def resolved(self):
        return [entry for entry in self.entries if entry.resolved]

    @property
    def unresolved(self):
        return [entry for entry in self.entries if not entry.resolved]


def spline_edges(model):
    """Unmasked edges that still carry a spline."""
    for l, i, j in model.edges():
        layer = model.layers[l]
        if layer.mask[i, j] > 0 and layer.numeric[i, j] > 0:
            yield l, i, j


def auto_symbolic(model, library=None, r2_floor=None, X=None):
    """
    Fix every spline edge to its best library match.

    Edges whose best r2 stays below ``r2_floor`` keep their spline and are
    listed as unresolved. Returns ``(model, report)``.
    """
    r2_floor = kan_settings.R2_FLOOR if r2_floor is None else r2_floor
    if X is not None:
        model.propagate(X)
    report = AutoSymbolicReport()
    edges = list(spline_edges(model))
    if not edges:
        return model.copy(), report
    samples = {edge: edge_samples(model, edge) for edge in edges}
    result = model.copy()
    for edge in edges:
        x, y = samples[edge]
        best = suggest_for_samples(x, y, library, top_k=1)[0]
        if best.r2 < r2_floor:
            report.entries.append(AutoSymbolicEntry(edge, None, best.r2))
            continue
        result = fix_symbolic(result, edge, best.name, fit_affine=False, affine=best.affine)
        report.entries.append(AutoSymbolicEntry(edge, best.name, best.r2, best.affine))
    logger.info(f'Auto-symbolic fixed {len(report.resolved)} of {len(edges)} edges')
    return result, report
