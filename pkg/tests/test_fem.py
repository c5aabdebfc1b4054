import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings, strategies as st

from hmmlod.coefficient import make_coefficient
from hmmlod.fem import (assemble_load, assemble_mass, assemble_stiffness, element_energies,
                        energy, energy_norm, export_coo, prolongation)
from hmmlod.mesh import build_two_level
from hmmlod.solver import solve_reference


def test_stiffness_1d_unit():
    mesh = build_two_level(1, 2, 1)   # h_f = 1/4
    A = assemble_stiffness(mesh, make_coefficient(mesh, 'constant')).toarray()
    np.testing.assert_allclose(A, [[8, -4, 0], [-4, 8, -4], [0, -4, 8]], atol=1e-13)


def test_stiffness_symmetric_exactly():
    mesh = build_two_level(2, 4, 2)
    A = assemble_stiffness(mesh, make_coefficient(mesh, 'checkerboard', eps=1 / 16, contrast=100, seed=3))
    assert (A != A.T).nnz == 0


def test_stiffness_positive_definite_small():
    mesh = build_two_level(2, 2, 1)
    A = assemble_stiffness(mesh, make_coefficient(mesh, 'checkerboard', eps=1 / 4, contrast=100, seed=7))
    assert A.shape == (9, 9)
    assert np.linalg.eigvalsh(A.toarray()).min() > 0


def test_stiffness_scaling():
    mesh = build_two_level(2, 3, 1)
    c = make_coefficient(mesh, 'checkerboard', eps=1 / 6, contrast=10, seed=1)
    A1 = assemble_stiffness(mesh, c)
    A2 = assemble_stiffness(mesh, c.scaled(2.0))
    assert abs(A2 - 2 * A1).max() == 0


def test_stiffness_against_quadrature_2d():
    # a(u, v) for u = x(1-x)y(1-y)-like interpolants is reproduced by summing element energies
    mesh = build_two_level(2, 3, 1)
    c = make_coefficient(mesh, 'checkerboard', eps=1 / 6, contrast=10, seed=4)
    A = assemble_stiffness(mesh, c)
    v = np.random.default_rng(0).standard_normal(mesh.n_fine_dofs)
    assert element_energies(mesh, c, v).sum() == pytest.approx(v @ A @ v, rel=1e-13)


def test_mass_1d():
    mesh = build_two_level(1, 2, 1)
    M = assemble_mass(mesh, 'fine').toarray()
    np.testing.assert_allclose(np.diag(M), 1 / 6)
    np.testing.assert_allclose(np.diag(M, 1), 1 / 24)


@pytest.mark.parametrize('d', [1, 2])
@pytest.mark.parametrize('level', ['fine', 'coarse'])
def test_mass_total(d, level):
    mesh = build_two_level(d, 3, 2)
    M = assemble_mass(mesh, level, full=True)
    assert M.sum() == pytest.approx(1.0, abs=1e-13)


def test_mass_spd():
    mesh = build_two_level(2, 3, 1)
    M = assemble_mass(mesh, 'fine').toarray()
    np.testing.assert_array_equal(M, M.T)
    assert np.linalg.eigvalsh(M).min() > 0


def test_load_constant_1d():
    mesh = build_two_level(1, 2, 2)
    np.testing.assert_allclose(assemble_load(mesh, 1.0), mesh.h_fine)


def test_load_zero():
    mesh = build_two_level(2, 2, 1)
    assert not np.any(assemble_load(mesh, lambda x: np.zeros(x.shape[0])))


def test_load_linear_1d():
    mesh = build_two_level(1, 2, 1)   # h_f = 1/4, dof 1 sits at x = 1/2
    b = assemble_load(mesh, lambda x: x[:, 0])
    hat = lambda x: max(0.0, 1 - abs(x - 0.5) / 0.25)
    exact = scipy.integrate.quad(lambda x: x * hat(x), 0.25, 0.75, points=[0.5])[0]
    assert exact == pytest.approx(1 / 8)
    assert b[1] == pytest.approx(exact, abs=1e-15)


def test_load_quadratic_exact_2d():
    # f linear -> f * lambda_i quadratic, integrated exactly by the edge-midpoint rule
    mesh = build_two_level(2, 2, 1)
    f = lambda x: 1 + 2 * x[:, 0] - x[:, 1]
    b = assemble_load(mesh, f)
    M = assemble_mass(mesh, 'fine', full=True)
    fv = f(mesh.fine_coords)
    np.testing.assert_allclose(b, (M @ fv)[mesh.fine_dof_nodes], atol=1e-15)


@pytest.mark.parametrize('d', [1, 2])
def test_prolongation_nodal_basis(d):
    mesh = build_two_level(d, 4, 2)
    P = prolongation(mesh).toarray()
    fine_pos = mesh.fine_dof_of_node[mesh.coarse_to_fine_node[mesh.coarse_dof_nodes]]
    # column z is 1 at z and 0 at all other coarse nodes
    np.testing.assert_array_equal(P[fine_pos], np.eye(mesh.n_coarse_dofs))


@pytest.mark.parametrize('d', [1, 2])
def test_prolongation_index_map(d):
    mesh = build_two_level(d, 4, 2)
    P = prolongation(mesh)
    v = np.random.default_rng(1).standard_normal(mesh.n_coarse_dofs)
    fine_pos = mesh.fine_dof_of_node[mesh.coarse_to_fine_node[mesh.coarse_dof_nodes]]
    np.testing.assert_array_equal((P @ v)[fine_pos], v)


def test_prolongation_reproduces_linears():
    mesh = build_two_level(2, 4, 2)
    P = prolongation(mesh, full=True)
    g = lambda x: 0.3 + 1.5 * x[:, 0] - 0.7 * x[:, 1]
    np.testing.assert_allclose(P @ g(mesh.coarse_coords), g(mesh.fine_coords), atol=1e-14)


def test_prolongation_partition_of_unity():
    mesh = build_two_level(2, 3, 2)
    P = prolongation(mesh, full=True)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-15)


@pytest.fixture(scope='module')
def system():
    mesh = build_two_level(2, 3, 2)
    c = make_coefficient(mesh, 'checkerboard', eps=1 / 6, contrast=100, seed=2)
    return mesh, assemble_stiffness(mesh, c), assemble_load(mesh, 1.0)


def test_energy_zero(system):
    _, A, b = system
    assert energy(A, b, np.zeros(b.size)) == (0.0, 0.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), scale=st.floats(0.1, 10))
def test_energy_properties(system, seed, scale):
    _, A, b = system
    v = scale * np.random.default_rng(seed).standard_normal(b.size)
    J, J0 = energy(A, b, v)
    Ad = A.toarray()
    assert J0 == pytest.approx(0.5 * v @ Ad @ v, rel=1e-12)
    # J - J0 cancels digits of J0, so compare on the scale of J0
    assert J - J0 == pytest.approx(-b @ v, abs=1e-14 * J0)
    assert energy_norm(A, v) ** 2 == pytest.approx(2 * J0, rel=1e-14)
    assert energy_norm(A, 2 * v) == pytest.approx(2 * energy_norm(A, v), rel=1e-14)
    assert energy_norm(A, v) == pytest.approx(np.sqrt(v @ Ad @ v), rel=1e-13)


def test_energy_norm_zero(system):
    _, A, b = system
    assert energy_norm(A, np.zeros(b.size)) == 0.0


def test_reference_minimizes_energy(system):
    _, A, b = system
    u = solve_reference(A, b).u
    J_u = energy(A, b, u)[0]
    rng = np.random.default_rng(11)
    for _ in range(100):
        v = u + 1e-3 * rng.standard_normal(u.size)
        assert J_u <= energy(A, b, v)[0]


def test_export_coo(tmp_path, system):
    _, A, _ = system
    path = tmp_path / 'A.coo'
    export_coo(A, path)
    lines = path.read_text().splitlines()
    rows, cols, nnz = map(int, lines[0].split())
    assert (rows, cols, nnz) == (*A.shape, A.nnz)
    i, j, v = lines[1].split()
    assert A[int(i), int(j)] == float(v)
