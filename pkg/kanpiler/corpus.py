"""Physics formulas with sampling boxes on which they are defined."""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np


@dataclass(frozen=True)
class CorpusFormula:
    name: str
    text: str
    domain: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    @property
    def input_names(self):
        return list(self.domain)

    def sample(self, n, seed=0):
        """``n`` points drawn uniformly from the box, shaped (n, n_inputs)."""
        rng = np.random.default_rng(seed)
        lows = np.array([lo for lo, _ in self.domain.values()])
        highs = np.array([hi for _, hi in self.domain.values()])
        return rng.uniform(lows, highs, size=(n, len(self.domain)))


def _box(names, low=1.0, high=5.0):
    return {name: (low, high) for name in names.split()}


FORMULA_CORPUS = [
    CorpusFormula('product', 'x*y', _box('x y', -2.0, 2.0)),
    CorpusFormula('lorentz-force', 'q*(Ef+v*B*sin(theta))', _box('q Ef v B theta')),
    CorpusFormula('relativistic-mass', 'm0/sqrt(1-(v/c)^2)',
                  {'m0': (1.0, 5.0), 'v': (1.0, 2.0), 'c': (3.0, 10.0)}),
    CorpusFormula('gaussian', 'exp(-(theta/sigma)^2/2)/sqrt(2*pi*sigma^2)', _box('theta sigma', 1.0, 3.0)),
    CorpusFormula('gravitation', 'G*m1*m2/((x2-x1)^2+(y2-y1)^2+(z2-z1)^2)',
                  {**_box('G m1 m2'), **_box('x1 y1 z1', 1.0, 2.0), **_box('x2 y2 z2', 3.0, 4.0)}),
    CorpusFormula('coulomb-field', 'q1*q2*r/(4*pi*epsilon*r^3)', _box('q1 q2 epsilon r')),
    CorpusFormula('kinetic-energy', '1/2*m*(v^2+u^2+w^2)', _box('m v u w')),
    CorpusFormula('barometric', 'n0*exp(-m*g*x/(kb*T))', _box('n0 m g x kb T')),
    CorpusFormula('rotation', 'x1*cos(theta)+y1*sin(theta)', _box('x1 y1 theta')),
    CorpusFormula('diffraction', 'Int_0*sin(n*theta/2)^2/sin(theta/2)^2', _box('Int_0 n theta')),
]


def get_formula(name):
    for entry in FORMULA_CORPUS:
        if entry.name == name:
            return entry
    raise KeyError(name)
