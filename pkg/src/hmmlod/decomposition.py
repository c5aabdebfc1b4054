"""L2-projection onto the coarse space and equality-constrained quadratic minimization."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .fem import assemble_mass, prolongation

__all__ = ['ProjectionKit', 'build_projection_kit', 'apply_P0', 'project_fine',
           'SaddleSolution', 'ConstrainedSolver', 'solve_constrained',
           'RankDeficientConstraints', 'ConstrainedSolveError']

KKT_TOL = 1e-10


class RankDeficientConstraints(ValueError):
    """Constraint rows that are linearly dependent after zero-row pruning."""

    def __init__(self, rows):
        self.rows = np.asarray(rows)
        super().__init__('constraint matrix is rank deficient; dependent rows: %s'
                         % self.rows.tolist())


class ConstrainedSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProjectionKit:
    P: sparse.csr_matrix        # fine dofs x coarse dofs
    M_fine: sparse.csr_matrix
    M_coarse: sparse.csr_matrix
    C: sparse.csr_matrix        # P^T M_fine, coarse dofs x fine dofs
    _coarse_lu: object

    def solve_coarse_mass(self, rhs):
        return self._coarse_lu.solve(np.asarray(rhs, dtype=float))


def build_projection_kit(mesh):
    P = prolongation(mesh)
    M_f = assemble_mass(mesh, 'fine')
    M_H = assemble_mass(mesh, 'coarse')
    C = (P.T @ M_f).tocsr()
    return ProjectionKit(P, M_f, M_H, C, spla.splu(M_H.tocsc()))


def apply_P0(kit, v):
    """Coarse coefficients x of the L2 projection: M_H x = C v."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != kit.C.shape[1]:
        raise ValueError('fine vector has length %d, expected %d' % (v.shape[0], kit.C.shape[1]))
    return kit.solve_coarse_mass(kit.C @ v)


def project_fine(kit, v):
    """P P0 v, the coarse part of v represented on the fine level."""
    return kit.P @ apply_P0(kit, v)


@dataclass
class SaddleSolution:
    v: np.ndarray
    mu: np.ndarray
    stationarity: float
    feasibility: float


def _dependent_rows(C):
    """Indices of rows of C that are linear combinations of the others."""
    dense = C.toarray()
    _, R, piv = scipy.linalg.qr(dense.T, mode='economic', pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max(initial=0.0) * max(dense.shape) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    return np.sort(piv[rank:])


class ConstrainedSolver:
    """Factorized KKT system for min 1/2 v'Av - rhs'v subject to C v = target.

    Rows of C that vanish identically are pruned before factorization and
    get a zero multiplier. The factorization can be reused for several
    right-hand sides.
    """

    def __init__(self, A, C, tol=KKT_TOL):
        A = sparse.csr_matrix(A)
        C = sparse.csr_matrix(C)
        if A.shape[0] != A.shape[1] or C.shape[1] != A.shape[0]:
            raise ValueError('incompatible shapes A %s, C %s' % (A.shape, C.shape))
        self.A, self.C, self.tol = A, C, tol
        row_norm = np.asarray(abs(C).sum(axis=1)).ravel()
        self.active = np.flatnonzero(row_norm > 0)
        # rows are rescaled to unit max entry; mass entries scale like h^d and would
        # otherwise unbalance the KKT matrix
        if self.active.size:
            row_max = np.asarray(abs(C[self.active]).max(axis=1).todense()).ravel()
        else:
            row_max = np.ones(0)
        self.row_scale = 1.0 / row_max
        Ca = sparse.diags(self.row_scale) @ C[self.active]
        self.C_active = Ca.tocsr()
        n, p = A.shape[0], self.active.size
        if p:
            K = sparse.bmat([[A, Ca.T], [Ca, None]], format='csc')
        else:
            K = A.tocsc()
        try:
            self._lu = spla.splu(K)
        except RuntimeError as exc:
            rows = self.active[_dependent_rows(Ca)]
            if rows.size:
                raise RankDeficientConstraints(rows) from exc
            raise
        # exactly singular factors are caught above; check the pivots for near-singularity
        udiag = np.abs(self._lu.U.diagonal())
        if udiag.size and udiag.min() <= udiag.max() * 1e-14 * (n + p):
            rows = self.active[_dependent_rows(Ca)]
            if rows.size:
                raise RankDeficientConstraints(rows)

    def solve(self, rhs, target=None):
        n, p = self.A.shape[0], self.active.size
        rhs = np.asarray(rhs, dtype=float)
        if target is None:
            target_a = np.zeros(p)
        else:
            target_a = np.asarray(target, dtype=float)[self.active] * self.row_scale
        sol = self._lu.solve(np.concatenate([rhs, target_a]))
        v, mu_a = sol[:n], sol[n:]
        stat = rhs - self.A @ v - self.C_active.T @ mu_a
        feas = target_a - self.C_active @ v
        # one step of iterative refinement costs little and buys a few digits
        corr = self._lu.solve(np.concatenate([stat, feas]))
        v = v + corr[:n]
        mu_a = mu_a + corr[n:]
        stat = np.linalg.norm(rhs - self.A @ v - self.C_active.T @ mu_a)
        feas_scaled = target_a - self.C_active @ v
        feas = np.linalg.norm(feas_scaled)
        scale = 1.0 + np.linalg.norm(rhs)
        if stat > self.tol * scale or feas > self.tol * (1.0 + np.linalg.norm(target_a)):
            raise ConstrainedSolveError('KKT residuals too large: stationarity %.3e, feasibility %.3e'
                                        % (stat / scale, feas))
        mu = np.zeros(self.C.shape[0])
        mu[self.active] = mu_a * self.row_scale
        # residuals reported in the caller's (unscaled) units
        feas = np.linalg.norm(feas_scaled / self.row_scale) if p else 0.0
        return SaddleSolution(v, mu, float(stat), float(feas))


def solve_constrained(A_sub, C_sub, rhs, target=None, tol=KKT_TOL):
    """Minimize 1/2 v'Av - rhs'v over {v : C v = target} via Lagrange multipliers."""
    return ConstrainedSolver(A_sub, C_sub, tol).solve(rhs, target)
