"""Nested two-level P1 meshes of the unit interval/square and nodal patches."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sparse

__all__ = ['TwoLevelMesh', 'Patch', 'build_two_level', 'nodal_patch']


def _grid_nodes(d, N):
    """Integer node indices of a uniform grid with N cells per axis, x fastest."""
    ax = np.arange(N + 1)
    if d == 1:
        return ax[:, None]
    I, J = np.meshgrid(ax, ax, indexing='xy')
    return np.column_stack([I.ravel(), J.ravel()])


def _grid_elements(d, N):
    """Element connectivity of the structured grid.

    2D cells are split along the (0,0)-(1,1) diagonal; cell c = i + j*N
    produces triangles 2c (lower, below the diagonal) and 2c+1 (upper).
    """
    if d == 1:
        i = np.arange(N)
        return np.column_stack([i, i + 1])
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing='xy')
    i = i.ravel()
    j = j.ravel()
    n00 = i + j * (N + 1)
    n10 = n00 + 1
    n01 = n00 + N + 1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.empty((2 * N * N, 3), dtype=int)
    elements[0::2] = lower
    elements[1::2] = upper
    return elements


def _incidence(elements, n_nodes):
    """Sparse node-by-element incidence matrix."""
    n_el, nv = elements.shape
    rows = elements.ravel()
    cols = np.repeat(np.arange(n_el), nv)
    data = np.ones(rows.size, dtype=np.int64)
    return sparse.csr_matrix((data, (rows, cols)), shape=(n_nodes, n_el))


class TwoLevelMesh:
    """Coarse mesh with n cells per axis and its uniform 2^r refinement.

    Node coordinates are kept as integer indices on the fine grid so that
    nesting is exact; ``fine_coords``/``coarse_coords`` give the floats.
    Degrees of freedom ("dofs") are the interior nodes of each level,
    numbered in increasing node order.
    """

    def __init__(self, d, n, r):
        if d not in (1, 2):
            raise ValueError('dimension must be 1 or 2, got %r' % (d,))
        if int(n) != n or n < 2:
            raise ValueError('need n >= 2 coarse subdivisions, got %r' % (n,))
        if int(r) != r or r < 1:
            raise ValueError('refinement exponent r must be >= 1, got %r' % (r,))
        self.d = int(d)
        self.n = int(n)
        self.r = int(r)
        self.m = 2 ** self.r
        self.N = self.n * self.m
        self.h = 1.0 / self.n
        self.h_fine = 1.0 / self.N

        self.coarse_index = _grid_nodes(self.d, self.n)
        self.fine_index = _grid_nodes(self.d, self.N)
        self.coarse_elements = _grid_elements(self.d, self.n)
        self.fine_elements = _grid_elements(self.d, self.N)

        self.coarse_interior = np.all((self.coarse_index > 0) & (self.coarse_index < self.n), axis=1)
        self.fine_interior = np.all((self.fine_index > 0) & (self.fine_index < self.N), axis=1)
        self.coarse_dof_nodes = np.flatnonzero(self.coarse_interior)
        self.fine_dof_nodes = np.flatnonzero(self.fine_interior)
        self.coarse_dof_of_node = np.full(self.n_coarse_nodes, -1)
        self.coarse_dof_of_node[self.coarse_dof_nodes] = np.arange(self.coarse_dof_nodes.size)
        self.fine_dof_of_node = np.full(self.n_fine_nodes, -1)
        self.fine_dof_of_node[self.fine_dof_nodes] = np.arange(self.fine_dof_nodes.size)

        self.fine_to_coarse_element = self._locate_fine_elements()
        order = np.argsort(self.fine_to_coarse_element, kind='stable')
        self.coarse_element_children = order.reshape(self.n_coarse_elements, -1)

        # coarse node z sits at fine node with index m * (coarse index)
        fi = self.m * self.coarse_index
        if self.d == 1:
            self.coarse_to_fine_node = fi[:, 0]
        else:
            self.coarse_to_fine_node = fi[:, 0] + fi[:, 1] * (self.N + 1)

    # sizes
    @property
    def n_coarse_nodes(self):
        return self.coarse_index.shape[0]

    @property
    def n_fine_nodes(self):
        return self.fine_index.shape[0]

    @property
    def n_coarse_elements(self):
        return self.coarse_elements.shape[0]

    @property
    def n_fine_elements(self):
        return self.fine_elements.shape[0]

    @property
    def n_coarse_dofs(self):
        return self.coarse_dof_nodes.size

    @property
    def n_fine_dofs(self):
        return self.fine_dof_nodes.size

    @property
    def coarse_coords(self):
        return self.coarse_index / self.n

    @property
    def fine_coords(self):
        return self.fine_index / self.N

    @cached_property
    def fine_barycenters(self):
        return self.fine_coords[self.fine_elements].mean(axis=1)

    @cached_property
    def coarse_incidence(self):
        return _incidence(self.coarse_elements, self.n_coarse_nodes)

    @cached_property
    def fine_incidence(self):
        return _incidence(self.fine_elements, self.n_fine_nodes)

    def node_elements(self, z):
        """Coarse elements having coarse node z as a vertex."""
        inc = self.coarse_incidence
        return inc.indices[inc.indptr[z]:inc.indptr[z + 1]].copy()

    def _locate_fine_elements(self):
        m = self.m
        if self.d == 1:
            return np.arange(self.N) // m
        N = self.N
        cell = np.arange(N * N)
        I = cell % N
        J = cell // N
        ci, p = I // m, I % m
        cj, q = J // m, J % m
        coarse_cell = ci + cj * self.n
        # fine lower triangle of local cell (p,q) is in the coarse lower one iff p >= q,
        # fine upper triangle iff p > q
        parent = np.empty(2 * N * N, dtype=int)
        parent[0::2] = 2 * coarse_cell + np.where(p >= q, 0, 1)
        parent[1::2] = 2 * coarse_cell + np.where(p > q, 0, 1)
        return parent

    def extend_fine(self, v):
        """Fine dof vector -> full nodal vector with zero boundary values."""
        full = np.zeros(self.n_fine_nodes)
        full[self.fine_dof_nodes] = v
        return full

    def extend_coarse(self, v):
        full = np.zeros(self.n_coarse_nodes)
        full[self.coarse_dof_nodes] = v
        return full

    def interpolate_fine(self, g):
        """Fine dof values of a callable g evaluated at interior fine nodes."""
        return np.asarray(g(self.fine_coords[self.fine_dof_nodes]), dtype=float)

    def patch_layers(self, z):
        """Smallest patch level containing each coarse element, relative to node z."""
        inc = self.coarse_incidence
        layer = np.zeros(self.n_coarse_elements, dtype=int)
        current = np.zeros(self.n_coarse_elements, dtype=bool)
        current[self.node_elements(z)] = True
        layer[current] = 1
        k = 1
        while not current.all():
            k += 1
            touched = inc @ current.astype(np.int64) > 0
            grown = inc.T @ touched.astype(np.int64) > 0
            layer[grown & ~current] = k
            current = grown
        return layer

    def saturation_level(self, z=None):
        """Smallest k with patch(z, k) = whole domain; max over interior nodes if z is None."""
        if z is not None:
            return int(self.patch_layers(z).max())
        return max(int(self.patch_layers(y).max()) for y in self.coarse_dof_nodes)

    def __repr__(self):
        return 'TwoLevelMesh(d=%d, n=%d, r=%d)' % (self.d, self.n, self.r)


def build_two_level(d, n, r=3):
    return TwoLevelMesh(d, n, r)


@dataclass(frozen=True)
class Patch:
    """Nodal patch omega_{z,k} as sets of coarse/fine elements and dofs.

    ``fine_dofs`` are fine interior dofs strictly inside the patch region;
    ``coarse_dofs`` are the interior coarse dofs whose hat support overlaps
    the patch, i.e. the interior vertices of patch elements.
    """
    z: int
    k: int
    coarse_elements: np.ndarray
    fine_elements: np.ndarray
    fine_dofs: np.ndarray
    coarse_dofs: np.ndarray


def _patch_from_elements(mesh, z, k, in_patch):
    coarse_elements = np.flatnonzero(in_patch)
    fine_elements = np.sort(mesh.coarse_element_children[coarse_elements].ravel())

    fine_mask = np.zeros(mesh.n_fine_elements, dtype=np.int64)
    fine_mask[fine_elements] = 1
    inc = mesh.fine_incidence
    total = np.asarray(inc.sum(axis=1)).ravel()
    inside = inc @ fine_mask
    strictly_inside = (inside == total) & mesh.fine_interior
    fine_dofs = mesh.fine_dof_of_node[np.flatnonzero(strictly_inside)]

    vertices = np.unique(mesh.coarse_elements[coarse_elements])
    coarse_dofs = mesh.coarse_dof_of_node[vertices]
    coarse_dofs = coarse_dofs[coarse_dofs >= 0]
    return Patch(z, k, coarse_elements, fine_elements, fine_dofs, coarse_dofs)


def nodal_patch(mesh, z, k):
    """Patch omega_{z,k}: level 1 is the support of the hat at z, level k adds
    every coarse element touching the closure of level k-1."""
    if not 0 <= z < mesh.n_coarse_nodes:
        raise IndexError('coarse node %r out of range' % (z,))
    if not mesh.coarse_interior[z]:
        raise ValueError('coarse node %d lies on the boundary; no basis function there' % z)
    if k < 1:
        raise ValueError('patch level must be >= 1, got %r' % (k,))
    layers = mesh.patch_layers(z)
    return _patch_from_elements(mesh, z, k, layers <= k)


def global_patch(mesh, z):
    """The whole domain viewed as the patch of node z (unlocalized corrector)."""
    return _patch_from_elements(mesh, z, mesh.saturation_level(z),
                                np.ones(mesh.n_coarse_elements, dtype=bool))
