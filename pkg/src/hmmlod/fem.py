"""P1 assembly on the fine and coarse levels, energies and norms.

All returned operators act on interior dofs (homogeneous Dirichlet data is
encoded by dropping boundary nodes) unless ``full=True`` is requested.
"""

import numpy as np
import scipy.sparse as sparse

__all__ = [
    'local_geometry', 'assemble_stiffness', 'assemble_mass', 'assemble_load',
    'prolongation', 'energy', 'energy_norm', 'l2_norm', 'element_energies', 'export_coo',
]


def _level(mesh, level):
    if level == 'fine':
        return mesh.fine_coords, mesh.fine_elements, mesh.fine_dof_nodes
    if level == 'coarse':
        return mesh.coarse_coords, mesh.coarse_elements, mesh.coarse_dof_nodes
    raise ValueError("level must be 'fine' or 'coarse', got %r" % (level,))


def local_geometry(coords, elements):
    """Element measures and barycentric-coordinate gradients, shape (nel, d+1, d)."""
    x = coords[elements]
    d = coords.shape[1]
    if d == 1:
        length = x[:, 1, 0] - x[:, 0, 0]
        grads = np.stack([-1.0 / length, 1.0 / length], axis=1)[:, :, None]
        return length, grads
    B = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
    area = 0.5 * np.abs(np.linalg.det(B))
    Binv = np.linalg.inv(B)
    grads = np.empty((elements.shape[0], 3, 2))
    grads[:, 1:] = Binv
    grads[:, 0] = -Binv.sum(axis=1)
    return area, grads


def _local_stiffness(coords, elements):
    measure, grads = local_geometry(coords, elements)
    return measure[:, None, None] * np.einsum('eid,ejd->eij', grads, grads)


def _local_mass(coords, elements):
    measure, _ = local_geometry(coords, elements)
    nv = elements.shape[1]
    d = nv - 1
    # exact P1 mass: |K| (1 + delta_ij) / ((d+1)(d+2))
    ref = (np.ones((nv, nv)) + np.eye(nv)) / ((d + 1) * (d + 2))
    return measure[:, None, None] * ref


def _assemble(elements, local, n_nodes):
    nv = elements.shape[1]
    rows = np.repeat(elements, nv, axis=1).ravel()
    cols = np.tile(elements, (1, nv)).ravel()
    return sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(n_nodes, n_nodes))


def _restrict(M, dofs):
    return M[dofs][:, dofs].tocsr()


def assemble_stiffness(mesh, coeff, full=False):
    """Fine stiffness matrix sum_K a_K int_K grad(phi_i).grad(phi_j)."""
    values = coeff.values if hasattr(coeff, 'values') else np.asarray(coeff, dtype=float)
    if values.shape != (mesh.n_fine_elements,):
        raise ValueError('coefficient has %d values, mesh has %d fine elements'
                         % (values.size, mesh.n_fine_elements))
    local = _local_stiffness(mesh.fine_coords, mesh.fine_elements) * values[:, None, None]
    A = _assemble(mesh.fine_elements, local, mesh.n_fine_nodes)
    return A if full else _restrict(A, mesh.fine_dof_nodes)


def assemble_mass(mesh, level='fine', full=False):
    """Consistent P1 mass matrix of the given level."""
    coords, elements, dofs = _level(mesh, level)
    M = _assemble(elements, _local_mass(coords, elements), coords.shape[0])
    return M if full else _restrict(M, dofs)


def _quadrature(mesh):
    """Points/weights (per element) and basis values exact for quadratics."""
    coords, elements = mesh.fine_coords, mesh.fine_elements
    measure, _ = local_geometry(coords, elements)
    x = coords[elements]
    if mesh.d == 1:
        g = 0.5 / np.sqrt(3.0)
        bary = np.array([[0.5 + g, 0.5 - g], [0.5 - g, 0.5 + g]])  # (qp, vertex)
        weights = np.array([0.5, 0.5])
    else:
        # edge midpoints
        bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        weights = np.full(3, 1.0 / 3.0)
    points = np.einsum('qv,evd->eqd', bary, x)
    return points, measure[:, None] * weights, bary


def assemble_load(mesh, f):
    """Fine load vector (f, phi_i) over interior dofs.

    ``f`` is a callable taking points of shape (npts, d), or a scalar.
    """
    points, weights, bary = _quadrature(mesh)
    nel, nq, d = points.shape
    if callable(f):
        fq = np.asarray(f(points.reshape(-1, d)), dtype=float).reshape(nel, nq)
    else:
        fq = np.full((nel, nq), float(f))
    local = np.einsum('eq,qv->ev', fq * weights, bary)
    b = np.bincount(mesh.fine_elements.ravel(), weights=local.ravel(), minlength=mesh.n_fine_nodes)
    return b[mesh.fine_dof_nodes]


def _coarse_hat_weights(mesh):
    """Values of every coarse hat at every fine node, as a sparse (fine x coarse) matrix."""
    m, n = mesh.m, mesh.n
    idx = mesh.fine_index
    cell = np.minimum(idx // m, n - 1)
    local = (idx - cell * m) / m
    if mesh.d == 1:
        c0 = cell[:, 0]
        s = local[:, 0]
        rows = np.repeat(np.arange(mesh.n_fine_nodes), 2)
        cols = np.column_stack([c0, c0 + 1]).ravel()
        vals = np.column_stack([1 - s, s]).ravel()
    else:
        s, t = local[:, 0], local[:, 1]
        n00 = cell[:, 0] + cell[:, 1] * (n + 1)
        n10, n01, n11 = n00 + 1, n00 + n + 1, n00 + n + 2
        lower = s >= t
        mid = np.where(lower, n10, n01)
        w_mid = np.where(lower, s - t, t - s)
        w0 = np.where(lower, 1 - s, 1 - t)
        w11 = np.where(lower, t, s)
        rows = np.repeat(np.arange(mesh.n_fine_nodes), 3)
        cols = np.column_stack([n00, mid, n11]).ravel()
        vals = np.column_stack([w0, w_mid, w11]).ravel()
    keep = vals != 0
    return sparse.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                             shape=(mesh.n_fine_nodes, mesh.n_coarse_nodes))


def prolongation(mesh, full=False):
    """Embedding V_h -> V: column z holds the fine nodal values of the coarse hat at z."""
    P = _coarse_hat_weights(mesh)
    if full:
        return P
    return P[mesh.fine_dof_nodes][:, mesh.coarse_dof_nodes].tocsr()


def energy(A, b, v):
    """Return (J(v), J0(v)) with J0 = a(v,v)/2 and J = J0 - (f, v)."""
    j0 = 0.5 * float(v @ (A @ v))
    return j0 - float(b @ v), j0


def energy_norm(A, v):
    return float(np.sqrt(max(float(v @ (A @ v)), 0.0)))


def l2_norm(M, v):
    return float(np.sqrt(max(float(v @ (M @ v)), 0.0)))


def element_energies(mesh, coeff, v):
    """Per fine element a_K |grad v|^2 |K| for a fine dof vector v."""
    full = mesh.extend_fine(v)
    local = _local_stiffness(mesh.fine_coords, mesh.fine_elements)
    u = full[mesh.fine_elements]
    e = np.einsum('ei,eij,ej->e', u, local, u) * coeff.values
    return np.maximum(e, 0.0)


def export_coo(A, path):
    """Write a sparse matrix as 'row col value' lines with a shape header."""
    C = sparse.coo_matrix(A)
    with open(path, 'w') as fh:
        fh.write('%d %d %d\n' % (C.shape[0], C.shape[1], C.nnz))
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write('%d %d %r\n' % (i, j, float(v)))
