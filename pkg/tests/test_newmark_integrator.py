import math

import numpy as np
import pytest
import scipy.sparse as sp

from form_assembler import BlockOperator, build_block_system
from newmark_integrator import (InitialFields, LinearSolver, NewmarkConfig, SystemState,
                                TimeIntegrator, cn_newmark_step, factorize_effective,
                                initial_state, newmark_step, project_initial_conditions)
from tpe_errors import ConfigError, SolverError

OMEGA = 2.0 * math.pi


def diagonal_block(mass, damping, stiffness, parabolic=False):
    """Decoupled block system on one scalar dof per field (five unknowns)"""
    return BlockOperator(A=sp.diags(mass).tocsr(), B=sp.diags(damping).tocsr(),
                         C=sp.diags(stiffness).tocsr(), n_scalar=1, parabolic=parabolic,
                         temperature_frozen=False, forms=None)


def oscillator_errors(dt, t_final=1.0):
    block = diagonal_block([1.0] * 5, [0.0] * 5, [OMEGA ** 2] * 5)
    config = NewmarkConfig(dt=dt, t_final=t_final)
    zero = np.zeros(5)
    state = initial_state(block, np.ones(5), zero, zero)
    errors = []
    integrator = TimeIntegrator(block, config, lambda t: zero)
    final = integrator.run(state, lambda st: errors.append(abs(st.X[0] - math.cos(OMEGA * st.t))))
    return max(errors), final


def test_config_validation():
    with pytest.raises(ConfigError):
        NewmarkConfig(dt=0.0, t_final=1.0)
    with pytest.raises(ConfigError):
        NewmarkConfig(dt=0.1, t_final=1.0, beta=0.6)
    with pytest.raises(ConfigError):
        NewmarkConfig(dt=0.1, t_final=1.0, gamma=1.5)
    with pytest.raises(ConfigError):
        NewmarkConfig(dt=0.1, t_final=1.0, solver='cg')
    with pytest.raises(ConfigError, match='does not divide'):
        NewmarkConfig(dt=0.07, t_final=0.3)
    assert NewmarkConfig(dt=1e-4, t_final=0.1).n_steps == 1000


def test_effective_scalar():
    block = diagonal_block([1.0] * 5, [0.0] * 5, [OMEGA ** 2] * 5)
    solver = factorize_effective(block, NewmarkConfig(dt=0.01, t_final=1.0))
    assert solver.matrix.diagonal() == pytest.approx(np.full(5, 1.0 + 2.5e-5 * OMEGA ** 2))


def test_effective_matrix_tends_to_mass():
    block = diagonal_block([2.0, 3.0, 1.0, 1.0, 4.0], [1.0] * 5, [5.0] * 5)
    solver = factorize_effective(block, NewmarkConfig(dt=1e-12, t_final=1e-12))
    assert np.allclose(solver.matrix.toarray(), block.A.toarray(), rtol=1e-9)


def test_zero_state_is_a_fixed_point():
    block = diagonal_block([1.0] * 5, [0.3] * 5, [4.0] * 5)
    solver = factorize_effective(block, NewmarkConfig(dt=0.1, t_final=1.0))
    zero = np.zeros(5)
    state = newmark_step(SystemState(0.0, zero, zero, zero), solver, zero, zero)
    assert state.t == pytest.approx(0.1)
    assert state.step == 1
    assert not np.any(state.X) and not np.any(state.Y)


def test_oscillator_returns_after_one_period():
    _, final = oscillator_errors(0.01)
    assert final.X[0] == pytest.approx(1.0, abs=5e-3)
    assert final.t == pytest.approx(1.0)


def test_oscillator_is_second_order():
    errors = [oscillator_errors(dt)[0] for dt in (0.01, 0.005, 0.0025, 0.00125)]
    rates = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    for rate in rates:
        assert 1.9 <= rate <= 2.1


def test_trapezoidal_rule_conserves_energy(rng):
    n = 10
    Q = rng.standard_normal((n, n))
    mass = np.eye(n) + 0.1 * Q @ Q.T
    R = rng.standard_normal((n, n))
    stiffness = np.eye(n) + R @ R.T
    block = BlockOperator(A=sp.csr_matrix(mass), B=sp.csr_matrix((n, n)),
                          C=sp.csr_matrix(stiffness), n_scalar=2, parabolic=False,
                          temperature_frozen=False, forms=None)
    zero = np.zeros(n)
    state = initial_state(block, rng.standard_normal(n), rng.standard_normal(n), zero)

    def energy(st):
        return 0.5 * st.Y @ mass @ st.Y + 0.5 * st.X @ stiffness @ st.X

    start = energy(state)
    integrator = TimeIntegrator(block, NewmarkConfig(dt=0.05, t_final=50.0), lambda t: zero)
    energies = [energy(st) for st in integrator.steps(state)]
    assert len(energies) == 1000
    assert max(abs(e - start) for e in energies) <= 1e-10 * start


def thermal_decay(dt):
    """T' = -T through the Crank-Nicolson path, displacements at rest"""
    block = diagonal_block([1.0, 1.0, 1.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0],
                           [1.0, 1.0, 1.0, 1.0, 1.0], parabolic=True)
    zero = np.zeros(5)
    X0 = np.array([0.0, 0.0, 0.0, 0.0, 1.0])
    state = initial_state(block, X0, zero, zero)
    final = TimeIntegrator(block, NewmarkConfig(dt=dt, t_final=1.0), lambda t: zero).run(state)
    return abs(final.X[4] - math.exp(-1.0)), final


def test_crank_nicolson_temperature_decay():
    error, final = thermal_decay(0.1)
    assert error <= 2e-3
    assert np.allclose(final.X[:4], 0.0)
    ratio = error / thermal_decay(0.05)[0]
    assert 3.8 <= ratio <= 4.2


def test_crank_nicolson_step_requires_parabolic_system():
    block = diagonal_block([1.0] * 5, [0.0] * 5, [1.0] * 5)
    solver = factorize_effective(block, NewmarkConfig(dt=0.1, t_final=1.0))
    zero = np.zeros(5)
    with pytest.raises(SolverError, match='tau = 0'):
        cn_newmark_step(SystemState(0.0, zero, zero, zero), solver, zero, zero)


def test_singular_matrix_reports_the_row():
    matrix = sp.diags([1.0, 0.0, 2.0]).tocsr()
    matrix.eliminate_zeros()
    with pytest.raises(SolverError, match='row 1'):
        LinearSolver(matrix)


def test_iterative_solver_matches_direct(rng):
    n = 30
    R = rng.standard_normal((n, n))
    matrix = sp.csr_matrix(np.eye(n) * n + R @ R.T)
    rhs = rng.standard_normal(n)
    direct = LinearSolver(matrix).solve(rhs)
    iterative = LinearSolver(matrix, kind='iterative', tolerance=1e-12).solve(rhs)
    assert np.allclose(direct, iterative, rtol=1e-8, atol=1e-10)


def test_zero_initial_fields_give_zero_state(small_block):
    state = project_initial_conditions(small_block, InitialFields(), np.zeros(small_block.size))
    assert not np.any(state.X) and not np.any(state.Y) and not np.any(state.A)


def test_initial_acceleration_is_consistent(small_block, rng):
    size = small_block.size
    X0, Y0, load = (rng.standard_normal(size) for _ in range(3))
    state = initial_state(small_block, X0, Y0, load)
    residual = small_block.A @ state.A - (load - small_block.B @ Y0 - small_block.C @ X0)
    assert np.linalg.norm(residual) <= 1e-9 * np.linalg.norm(load - small_block.C @ X0)


def test_progress_hook_cadence():
    block = diagonal_block([1.0] * 5, [0.0] * 5, [1.0] * 5)
    zero = np.zeros(5)
    calls = []
    integrator = TimeIntegrator(block, NewmarkConfig(dt=0.1, t_final=2.0), lambda t: zero,
                                progress=lambda step, t, st: calls.append(step), progress_every=5)
    integrator.run(initial_state(block, np.ones(5), zero, zero))
    assert calls == [5, 10, 15, 20]


def test_vanishing_relaxation_time_matches_crank_nicolson(small_forms, rng):
    parabolic = build_block_system(small_forms, tau=0.0)
    nearly = build_block_system(small_forms, tau=1e-12)
    assert parabolic.parabolic and not nearly.parabolic
    size = parabolic.size
    shape = np.zeros(size)
    shape[parabolic.mechanical] = rng.standard_normal(4 * parabolic.n_scalar)

    def load(t):
        return t * shape

    config = NewmarkConfig(dt=1e-3, t_final=2e-2)
    finals = []
    for block in (parabolic, nearly):
        zero = np.zeros(size)
        state = initial_state(block, zero, zero, load(0.0))
        finals.append(TimeIntegrator(block, config, load).run(state).X)
    assert np.linalg.norm(finals[0] - finals[1]) <= 1e-6 * np.linalg.norm(finals[0])
