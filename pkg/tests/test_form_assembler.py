import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import build_forms
from dg_space import DGSpace, l2_project
from form_assembler import (Forcing, assemble_forms, assemble_load, build_block_system,
                            coercivity_report, compute_penalties, penalty_on_face)
from manufactured import polynomial_case
from materials import MaterialMap
from newmark_integrator import SystemState
from poly_mesh import PolyMesh, cartesian_grid, voronoi_mesh
from tpe_errors import AssemblyError
from verification import coupling_power


def symmetric_defect(matrix):
    dense = matrix.toarray()
    scale = max(np.abs(dense).max(), 1e-300)
    return np.abs(dense - dense.T).max() / scale


def test_boundary_penalty_formula(convergence_region):
    side = 0.1 / math.sqrt(2.0)
    mesh = PolyMesh([(0, 0), (side, 0), (side, side), (0, side)], [(0, 1, 2, 3)])
    space = DGSpace(mesh, 3)
    materials = MaterialMap({1: convergence_region}, mesh)
    assert penalty_on_face(space, materials, 0, 'sigma') == pytest.approx(900.0)


def test_internal_penalty_takes_the_larger_side(convergence_region):
    mesh = cartesian_grid(2, 1, region_boxes=[{'tag': 2, 'x_range': (0.5, 1.0)}])
    space = DGSpace(mesh, [2, 3])
    materials = MaterialMap({1: convergence_region, 2: replace(convergence_region, mu=2.0)}, mesh)
    face = mesh.internal_faces[0]
    h = mesh.cell_diameter[0]
    assert penalty_on_face(space, materials, face, 'sigma') == pytest.approx(10.0 * 18.0 / h)
    assert penalty_on_face(space, materials, face, 'sigma', alphas=(1, 1, 1, 1)) == \
        pytest.approx(18.0 / h)


def test_zeta_and_varrho_agree_for_unit_coefficients(convergence_region):
    mesh = cartesian_grid(2, 2)
    space = DGSpace(mesh, 2)
    materials = MaterialMap({1: replace(convergence_region, c0=1.0, theta=1.0,
                                        b0=0.01, a0=0.02)}, mesh)
    penalties = compute_penalties(space, materials)
    assert np.allclose(penalties.zeta, penalties.varrho)
    assert np.all(penalties.sigma > 0)
    with pytest.raises(AssemblyError):
        penalties.of('omega')
    with pytest.raises(AssemblyError):
        compute_penalties(space, materials, alphas=(10, 10, 0, 10))


def test_forms_are_symmetric(small_forms):
    for name in ('A_e', 'A_p', 'A_T', 'N_e', 'N_p', 'N_T', 'M_rho', 'M_rho_f', 'M_rho_w',
                 'B', 'M_T'):
        assert symmetric_defect(getattr(small_forms, name)) <= 1e-12, name


def test_masses_are_diagonal_and_positive(small_forms):
    for name in ('M_rho', 'M_rho_w', 'B', 'M_T'):
        matrix = getattr(small_forms, name)
        assert abs(matrix - sp.diags(matrix.diagonal())).sum() == 0
        assert matrix.diagonal().min() > 0


def test_stiffness_forms_are_coercive(small_forms):
    entries = coercivity_report(small_forms)
    assert [e.name for e in entries] == ['A_e', 'A_p', 'A_T']
    for entry in entries:
        assert entry.min_eigenvalue >= -1e-10 * entry.max_eigenvalue
        assert entry.coercive
    # A_e and A_T have no kernel under Dirichlet conditions
    assert entries[0].min_eigenvalue > 0
    assert entries[2].min_eigenvalue > 0


def test_elastic_form_is_coercive_on_random_vectors(small_forms, rng):
    A = small_forms.A_e
    for _ in range(200):
        v = rng.standard_normal(A.shape[0])
        assert v @ (A @ v) > 0


def test_block_structure(small_forms):
    n = small_forms.n_scalar
    block = build_block_system(small_forms)
    assert not block.parabolic
    C, B = block.C.toarray(), block.B.toarray()
    # -C^T in the stiffness, C in the damping
    assert np.allclose(C[:2 * n, 4 * n:], -small_forms.C_u.T.toarray())
    assert np.allclose(C[2 * n:4 * n, 4 * n:], -small_forms.C_w.T.toarray())
    assert np.allclose(B[4 * n:, :2 * n], small_forms.C_u.toarray())
    assert np.allclose(B[4 * n:, 2 * n:4 * n], small_forms.C_w.toarray())
    assert np.allclose(C[4 * n:, 4 * n:], small_forms.A_T.toarray())
    # alpha = 1: the (u,u) and (u,w) blocks differ by A_e
    assert np.allclose(C[:2 * n, :2 * n] - C[:2 * n, 2 * n:4 * n], small_forms.A_e.toarray())


def test_mechanical_mass_is_positive_definite(small_forms):
    block = build_block_system(small_forms)
    d = block.mechanical
    M = block.A[d, d].toarray()
    assert np.allclose(M, M.T)
    assert np.linalg.eigvalsh(M).min() > 0


def test_homogeneous_mass_rayleigh_quotients(homogeneous_region, rng):
    forms = build_forms(homogeneous_region, nx=3, degree=2)
    block = build_block_system(forms)
    d = block.mechanical
    M = block.A[d, d]
    eigenvalues = np.linalg.eigvalsh(M.toarray())
    assert eigenvalues.min() > 0
    n2 = 2 * forms.n_scalar
    for _ in range(5):
        v = rng.standard_normal(n2)
        # solid and fluid moving in opposite phase stress the rho_f coupling
        for V in (np.concatenate([v, -v]), np.concatenate([v, rng.standard_normal(n2)])):
            quotient = V @ (M @ V) / (V @ V)
            assert eigenvalues.min() * (1 - 1e-12) <= quotient <= eigenvalues.max() * (1 + 1e-12)



def test_zero_relaxation_time_marks_the_system_parabolic(small_forms):
    block = build_block_system(small_forms, tau=0.0)
    assert block.parabolic
    assert abs(block.A[block.thermal, :]).sum() == 0
    with pytest.raises(AssemblyError):
        build_block_system(small_forms, tau=-1.0)


def test_frozen_temperature_decouples(convergence_region):
    forms = build_forms(convergence_region, nx=2, degree=1, temperature_coupling=False)
    block = build_block_system(forms)
    assert block.temperature_frozen and not block.parabolic
    s, d = block.thermal, block.mechanical
    assert abs(block.C[d, s]).max() == 0
    assert abs(block.B[s, d]).max() == 0
    assert np.allclose(block.A[s, s].toarray(), np.eye(forms.n_scalar))


def test_coupling_power_cancels(small_block, rng):
    for _ in range(5):
        state = SystemState(t=0.0, X=rng.standard_normal(small_block.size),
                            Y=rng.standard_normal(small_block.size),
                            A=np.zeros(small_block.size))
        thermal, mechanical = coupling_power(small_block, state)
        assert abs(thermal + mechanical) <= 1e-12 * max(abs(thermal), 1.0)


def test_assembly_is_independent_of_worker_count(convergence_region):
    mesh = cartesian_grid(3, 3)
    space = DGSpace(mesh, 2)
    serial = assemble_forms(space, MaterialMap({1: convergence_region}, mesh), workers=1)
    threaded = assemble_forms(space, MaterialMap({1: convergence_region}, mesh), workers=3)
    for name in ('A_e', 'A_p', 'A_T', 'C_u', 'C_w'):
        a, b = getattr(serial, name), getattr(threaded, name)
        assert (a != b).nnz == 0, name


def test_quadrature_self_check_passes(convergence_region):
    mesh = cartesian_grid(2, 2)
    space = DGSpace(mesh, 2)
    assemble_forms(space, MaterialMap({1: convergence_region}, mesh), verify_quadrature=True)


def test_zero_load(small_forms):
    assert not np.any(assemble_load(0.3, small_forms))


def test_constant_forcing_pairs_with_the_cell_mean_mode(small_forms):
    space = small_forms.space
    n = space.n_dofs
    load = assemble_load(0.0, small_forms, forcing=Forcing(f=lambda p, t: np.array([1.0, 0.0])))
    F = load[:2 * n]
    for k in range(space.mesh.n_cells):
        dofs = space.cell_dofs(k)
        # orthonormal basis: only the constant mode 1/sqrt(|K|) pairs with a constant
        assert F[dofs[0]] == pytest.approx(math.sqrt(space.mesh.cell_area[k]))
        assert np.allclose(F[dofs[1:]], 0.0, atol=1e-14)
    assert not np.any(F[n:])
    assert not np.any(load[2 * n:])


def test_polynomial_fields_satisfy_the_static_system(convergence_region):
    forms = build_forms(convergence_region, nx=3, degree=2)
    block = build_block_system(forms)
    case = polynomial_case(convergence_region, degree=2)
    space = forms.space
    X = np.concatenate([l2_project(lambda p: case.value('u')(p, 0.0), space, 2),
                        l2_project(lambda p: case.value('w')(p, 0.0), space, 2),
                        l2_project(lambda p: case.value('T')(p, 0.0), space, 1)])
    load = assemble_load(0.0, forms, forcing=case.forcing(), boundary=case.boundary_data())
    residual = block.C @ X - load
    assert np.abs(residual).max() <= 1e-8 * np.abs(load).max()


def test_polynomial_fields_satisfy_the_static_system_on_voronoi_cells(convergence_region):
    mesh = voronoi_mesh(12, seed=5, lloyd=2)
    forms = build_forms(convergence_region, degree=2, mesh=mesh)
    block = build_block_system(forms)
    case = polynomial_case(convergence_region, degree=2)
    space = forms.space
    X = np.concatenate([l2_project(lambda p: case.value('u')(p, 0.0), space, 2),
                        l2_project(lambda p: case.value('w')(p, 0.0), space, 2),
                        l2_project(lambda p: case.value('T')(p, 0.0), space, 1)])
    load = assemble_load(0.0, forms, forcing=case.forcing(), boundary=case.boundary_data())
    residual = block.C @ X - load
    assert np.abs(residual).max() <= 1e-7 * np.abs(load).max()
