"""Fine-scale correctors of the coarse hats, the remainder R_f(f) and the multiscale basis."""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from .decomposition import ConstrainedSolver, solve_constrained
from .fem import element_energies, energy_norm
from .mesh import global_patch, nodal_patch

__all__ = ['Corrector', 'MultiscaleBasis', 'compute_corrector', 'compute_correctors',
           'compute_remainder', 'build_basis', 'decay_profile', 'fit_decay_rate', 'export_decay_csv',
           'export_correctors_csv']

GLOBAL = None  # patch level meaning "no localization"


@dataclass
class Corrector:
    z: int                 # coarse node id
    k: int | None          # patch level; None for the global corrector
    phi: np.ndarray        # fine dof vector
    energy_norm: float
    feasibility: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def is_global(self):
        return self.k is GLOBAL


@dataclass
class MultiscaleBasis:
    B: sparse.csc_matrix   # fine dofs x coarse dofs, columns P lambda_z + phi_z
    levels: list
    nodes: np.ndarray


def _patch(mesh, z, k):
    return global_patch(mesh, z) if k is GLOBAL else nodal_patch(mesh, z, k)


def _patch_key(patch):
    return (patch.fine_dofs.tobytes(), patch.coarse_dofs.tobytes())


def _patch_solver(A, C, patch):
    A_sub = A[patch.fine_dofs][:, patch.fine_dofs]
    C_sub = C[patch.coarse_dofs][:, patch.fine_dofs]
    return ConstrainedSolver(A_sub, C_sub)


def _corrector_from_patch(mesh, kit, A, z, k, patch, solver):
    hat = kit.P[:, mesh.coarse_dof_of_node[z]].toarray().ravel()
    rhs = -(A @ hat)[patch.fine_dofs]
    sol = solver.solve(rhs)
    phi = np.zeros(mesh.n_fine_dofs)
    phi[patch.fine_dofs] = sol.v
    return Corrector(int(z), k, phi, energy_norm(A, phi), float(np.linalg.norm(kit.C @ phi)),
                     {'stationarity': sol.stationarity, 'n_dofs': int(patch.fine_dofs.size),
                      'n_constraints': int(patch.coarse_dofs.size)})


def compute_corrector(mesh, kit, A, z, k=GLOBAL):
    """Corrector phi_{z,k} in V_f with a(phi, w) = -a(lambda_z, w) for all w in
    V_f supported in the patch; k=None solves on the whole domain."""
    patch = _patch(mesh, z, k)
    return _corrector_from_patch(mesh, kit, A, z, k, patch, _patch_solver(A, kit.C, patch))


def compute_correctors(mesh, kit, A, k=GLOBAL, nodes=None, threads=1):
    """Correctors for the given coarse nodes (default: all interior ones), in node order.

    Patches that coincide share a factorization, so global and saturated
    runs factor the KKT matrix once.
    """
    if nodes is None:
        nodes = mesh.coarse_dof_nodes
    nodes = [int(z) for z in nodes]
    patches = [_patch(mesh, z, k) for z in nodes]
    unique = {}
    for p in patches:
        unique.setdefault(_patch_key(p), p)
    keys = list(unique)

    def factor(key):
        return _patch_solver(A, kit.C, unique[key])

    def work(i):
        p = patches[i]
        return _corrector_from_patch(mesh, kit, A, nodes[i], k, p, solvers[_patch_key(p)])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            solvers = dict(zip(keys, pool.map(factor, keys)))
            return list(pool.map(work, range(len(nodes))))
    solvers = {key: factor(key) for key in keys}
    return [work(i) for i in range(len(nodes))]


def compute_remainder(mesh, kit, A, b):
    """R_f(f): the minimizer of J over V_f, i.e. a(R_f, w) = (f, w) for w in V_f."""
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros(mesh.n_fine_dofs)
    return solve_constrained(A, kit.C, b).v


def build_basis(correctors, P):
    """Multiscale basis B with column z equal to P lambda_z + phi_{z,k}."""
    P = sparse.csc_matrix(P)
    if len(correctors) != P.shape[1]:
        raise ValueError('need one corrector per coarse dof (%d), got %d'
                         % (P.shape[1], len(correctors)))
    Phi = np.column_stack([c.phi for c in correctors])
    B = (P + sparse.csc_matrix(Phi)).tocsc()
    B.eliminate_zeros()
    return MultiscaleBasis(B, [c.k for c in correctors], np.array([c.z for c in correctors]))


def decay_profile(corrector, mesh, coeff):
    """Tail energy norms of phi outside omega_{z,l} for l = 1 .. saturation.

    Element energies are grouped by coarse layer and accumulated from the
    outside in, which makes the returned tails exactly non-increasing.
    """
    layers = mesh.patch_layers(corrector.z)
    e = element_energies(mesh, coeff, corrector.phi)
    fine_layer = layers[mesh.fine_to_coarse_element]
    L = int(layers.max())
    per_layer = np.array([e[fine_layer == l].sum() for l in range(1, L + 1)])
    tails_sq = np.zeros(L)
    acc = 0.0
    for l in range(L - 1, 0, -1):
        acc += per_layer[l]
        tails_sq[l - 1] = acc
    return [(l, float(np.sqrt(tails_sq[l - 1]))) for l in range(1, L + 1)]


def fit_decay_rate(profile):
    """Least-squares slope c of log(tail) = const - c*l over the nonzero tails."""
    layers = np.array([l for l, t in profile if t > 0], dtype=float)
    tails = np.array([t for _, t in profile if t > 0])
    if layers.size < 2:
        return float('nan')
    slope = np.polyfit(layers, np.log(tails), 1)[0]
    return float(-slope)


def export_decay_csv(profiles, path):
    """profiles: mapping node -> decay profile."""
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['node', 'layer', 'tail_norm'])
        for z in sorted(profiles):
            for layer, tail in profiles[z]:
                w.writerow([z, layer, repr(tail)])


def export_correctors_csv(mesh, correctors, path):
    """Long-format dump (node, fine node, value) of nonzero corrector entries."""
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['node', 'k', 'fine_node', 'value'])
        for c in correctors:
            for i in np.flatnonzero(c.phi):
                w.writerow([c.z, '' if c.k is None else c.k, int(mesh.fine_dof_nodes[i]),
                            repr(float(c.phi[i]))])
