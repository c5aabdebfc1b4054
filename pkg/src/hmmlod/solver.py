"""Reference fine-scale solve and the multiscale Galerkin solve."""

import csv
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .fem import energy_norm, l2_norm

__all__ = ['SolveResult', 'ErrorReport', 'solve_reference', 'solve_multiscale',
           'error_report', 'export_solution_csv', 'IndefiniteCoarseSystem']

SOLVE_TOL = 1e-12


class IndefiniteCoarseSystem(RuntimeError):
    """B'AB is not positive definite: the basis is broken."""


@dataclass
class SolveResult:
    u: np.ndarray                 # fine dof vector
    coarse: np.ndarray | None     # coefficients in the multiscale basis
    residual: float               # normwise backward error of the solved system
    wall_time: float


@dataclass
class ErrorReport:
    energy: float
    l2: float
    rel_energy: float
    rel_l2: float


def _relative_residual(A, x, b):
    """Normwise backward error |b - Ax| / (|A| |x| + |b|) in the infinity norm."""
    r = np.abs(b - A @ x).max(initial=0.0)
    if sparse.issparse(A):
        norm_A = abs(A).sum(axis=1).max()
    else:
        norm_A = np.abs(A).sum(axis=1).max()
    scale = norm_A * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0)
    return float(r / scale) if scale > 0 else float(r)


def solve_reference(A, b, tol=SOLVE_TOL):
    """Fine solution of A u = b by sparse LU with iterative refinement."""
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return SolveResult(np.zeros_like(b), None, 0.0, time.perf_counter() - t0)
    lu = spla.splu(sparse.csc_matrix(A))
    u = lu.solve(b)
    res = _relative_residual(A, u, b)
    for _ in range(3):
        if res <= tol:
            break
        u = u + lu.solve(b - A @ u)
        res = _relative_residual(A, u, b)
    return SolveResult(u, None, float(res), time.perf_counter() - t0)


def solve_multiscale(basis, A, b):
    """Galerkin solve in span(B): (B'AB) c = B'b, u = B c.

    ``basis`` is a MultiscaleBasis or any fine x coarse matrix (e.g. the plain
    prolongation for the classical coarse P1 method).
    """
    t0 = time.perf_counter()
    B = getattr(basis, 'B', basis)
    B = sparse.csc_matrix(B)
    K = (B.T @ (A @ B)).toarray()
    K = 0.5 * (K + K.T)
    rhs = B.T @ np.asarray(b, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(K)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteCoarseSystem('coarse multiscale matrix is not positive definite') from exc
    c = scipy.linalg.cho_solve(factor, rhs)
    return SolveResult(B @ c, c, float(_relative_residual(K, c, rhs)), time.perf_counter() - t0)


def error_report(u_ref, u_ms, A, M_f):
    e = u_ref - u_ms
    ee, el = energy_norm(A, e), l2_norm(M_f, e)
    ne, nl = energy_norm(A, u_ref), l2_norm(M_f, u_ref)
    return ErrorReport(ee, el, ee / ne if ne > 0 else 0.0, el / nl if nl > 0 else 0.0)


def export_solution_csv(mesh, u, path):
    """Nodal values (boundary included) with coordinates."""
    full = mesh.extend_fine(u)
    coords = mesh.fine_coords
    names = ['x', 'y'][:mesh.d]
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(names + ['value'])
        for x, v in zip(coords, full):
            w.writerow([repr(float(c)) for c in x] + [repr(float(v))])
