"""Piecewise-constant rough coefficients on the fine elements."""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = ['CoefficientField', 'make_coefficient', 'save_values', 'load_values']

KINDS = ('constant', 'periodic', 'checkerboard')


@dataclass(frozen=True)
class CoefficientField:
    values: np.ndarray
    alpha: float
    beta: float
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    under_resolved: bool = False

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def contrast(self):
        return self.beta / self.alpha

    def tag(self):
        """Short label used in reports."""
        if self.kind == 'constant':
            return 'constant'
        return '%s(eps=%g)' % (self.kind, self.params['eps'])

    def scaled(self, factor):
        return CoefficientField(self.values * factor, self.alpha * factor, self.beta * factor,
                                self.kind, dict(self.params), self.seed, self.under_resolved)


def _checkerboard(bary, eps, contrast, seed):
    cells = int(np.ceil(1.0 / eps - 1e-12))
    d = bary.shape[1]
    rng = np.random.default_rng(seed)
    draw = rng.uniform(size=(cells,) * d)
    idx = np.minimum((bary / eps).astype(int), cells - 1)
    # draw[i, j] belongs to the cell [i*eps, (i+1)*eps) x [j*eps, (j+1)*eps)
    u = draw[tuple(idx.T)]
    return np.where(u < 0.5, float(contrast), 1.0)


def make_coefficient(mesh, kind='constant', seed=0, **params):
    """Coefficient sampled at fine-element barycenters.

    kind='constant'     : value (default 1)
    kind='periodic'     : 2 + sin(2 pi x_1 / eps)
    kind='checkerboard' : 1 or contrast on each eps-cell, from a seeded uniform draw
    """
    bary = mesh.fine_barycenters
    under_resolved = False
    if kind == 'constant':
        value = float(params.get('value', 1.0))
        if value <= 0:
            raise ValueError('coefficient must be positive, got %g' % value)
        values = np.full(mesh.n_fine_elements, value)
        alpha = beta = value
        params = {'value': value}
    elif kind in ('periodic', 'checkerboard'):
        eps = params.get('eps')
        if eps is None or eps <= 0:
            raise ValueError('%s coefficient needs eps > 0' % kind)
        eps = float(eps)
        under_resolved = eps < mesh.h_fine
        if kind == 'periodic':
            values = 2.0 + np.sin(2 * np.pi * bary[:, 0] / eps)
            alpha, beta = 1.0, 3.0
            params = {'eps': eps}
        else:
            contrast = float(params.get('contrast', 100.0))
            if contrast <= 0:
                raise ValueError('contrast must be positive, got %g' % contrast)
            if contrast < 1:
                raise ValueError('contrast beta/alpha must be >= 1, got %g' % contrast)
            values = _checkerboard(bary, eps, contrast, seed)
            alpha, beta = 1.0, contrast
            params = {'eps': eps, 'contrast': contrast}
        if under_resolved:
            warnings.warn('eps=%g is below the fine mesh size %g; coefficient is under-resolved'
                          % (eps, mesh.h_fine), stacklevel=2)
    else:
        raise ValueError('unknown coefficient kind %r (expected one of %s)' % (kind, ', '.join(KINDS)))
    return CoefficientField(np.ascontiguousarray(values, dtype=float), alpha, beta, kind,
                            params, int(seed), under_resolved)


def save_values(coeff, path):
    """Write per-element values; '.csv' gives text, anything else raw float64 (little endian)."""
    path = str(path)
    if path.endswith('.csv'):
        with open(path, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(['element', 'value'])
            for i, v in enumerate(coeff.values):
                w.writerow([i, repr(float(v))])
    else:
        coeff.values.astype('<f8').tofile(path)


def load_values(path):
    path = str(path)
    if path.endswith('.csv'):
        with open(path, newline='') as fh:
            rows = list(csv.DictReader(fh))
        return np.array([float(row['value']) for row in rows])
    return np.fromfile(path, dtype='<f8')
