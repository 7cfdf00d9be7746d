import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import build_forms
from dg_space import DGSpace, l2_project
from form_assembler import assemble_forms, build_block_system, compute_penalties
from manufactured import standard_case
from materials import MaterialMap
from newmark_integrator import (NewmarkConfig, SystemState, TimeIntegrator, initial_state,
                                project_initial_conditions)
from poly_mesh import PolyMesh, cartesian_grid
from tpe_errors import ConfigError, TPEError
from verification import (CombinedField, DiscreteField, EnergyTrace, ErrorReport, ExactField,
                          compute_errors, convergence_rates, dg_norm_e, dg_norm_T, dg_norms,
                          dg_seminorm_p, discrete_energy_trace, energy_norm, pressure_dg_norm,
                          pressure_postprocess, scheme_energy)


def report(h, value, degree=2, **errors):
    values = {q: value for q in ('L2_u', 'dG_u', 'L2_w', 'dG_w', 'L2_T', 'dG_T')}
    values.update(errors)
    return ErrorReport(h=h, degree=degree, n_dofs=100, **values)


# Rates

def test_rate_from_two_levels():
    table = convergence_rates([report(0.5, 0.1), report(0.25, 0.0125)])
    assert table.rate(0, 'dG_u') == pytest.approx(3.0)
    assert table.format_rate(0, 'L2_T') == '3.000'
    # pressure errors were not computed
    assert table.rate(0, 'L2_p') is None
    assert table.format_rate(0, 'L2_p') == ''


def test_equal_errors_give_rate_zero():
    table = convergence_rates([report(0.5, 0.1), report(0.25, 0.1)])
    assert table.last_rates()['dG_w'] == pytest.approx(0.0)


def test_zero_error_is_reported_exact():
    table = convergence_rates([report(0.5, 0.1), report(0.25, 0.1, dG_T=0.0)])
    assert (0, 'dG_T') in table.exact
    assert table.format_rate(0, 'dG_T') == 'exact'
    assert table.rate(0, 'dG_T') is None


def test_degree_ladder_slope():
    reports = [report(0.1, math.exp(-2.0 * p), degree=p) for p in (1, 2, 3, 4)]
    table = convergence_rates(reports, ladder='degree')
    assert table.rate(0, 'dG_u') == pytest.approx(2.0)
    assert table.slopes['dG_u'] == pytest.approx(-2.0)
    assert table.slopes['L2_p'] is None


def test_rate_table_errors():
    with pytest.raises(ConfigError):
        convergence_rates([report(0.5, 0.1)])
    with pytest.raises(ConfigError):
        convergence_rates([report(0.5, 0.1), report(0.5, 0.01)])
    with pytest.raises(ConfigError):
        convergence_rates([report(0.5, 0.1), report(0.25, 0.01)], ladder='p')
    with pytest.raises(ConfigError):
        report(0.5, 0.1).error('H1_u')


# Energy trace

def test_energy_trace_verdict():
    trace = EnergyTrace()
    for t, e in enumerate((1.0, 0.9, 0.9, 0.8)):
        trace.append(float(t), e)
    assert trace.verdict == 'PASS'
    assert trace.worst_relative_increase == 0.0
    trace.append(4.0, 0.8 * (1.0 + 1e-6))
    assert trace.increases() == [3]
    assert trace.verdict == 'FAIL'
    assert trace.worst_relative_increase == pytest.approx(1e-6)


def test_energy_trace_tolerates_roundoff():
    trace = EnergyTrace()
    trace.append(0.0, 1.0)
    trace.append(1.0, 1.0 + 1e-12)
    assert trace.verdict == 'PASS'


# Norms

def bubble_field():
    def value(points, t):
        x, y = points.T
        return np.column_stack([x * (1 - x) * y * (1 - y), np.zeros(len(points))])

    def gradient(points, t):
        x, y = points.T
        grad = np.zeros((len(points), 2, 2))
        grad[:, 0, 0] = (1 - 2 * x) * y * (1 - y)
        grad[:, 0, 1] = x * (1 - x) * (1 - 2 * y)
        return grad

    return ExactField(value, gradient, 0.0, components=2)


def test_continuous_field_norm_is_the_volume_integral(convergence_region):
    mesh = PolyMesh([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2), (0, 2, 3)])
    space = DGSpace(mesh, 2)
    materials = MaterialMap({1: convergence_region}, mesh)
    penalties = compute_penalties(space, materials)
    # 2 mu int |eps(u)|^2 = 2 (1/90 + 1/180) for mu = 1
    assert dg_norm_e(bubble_field(), space, materials, penalties) ** 2 == \
        pytest.approx(1.0 / 30.0, rel=1e-10)


def test_zero_field_has_zero_norms(small_forms):
    n = small_forms.n_scalar
    norms = dg_norms(np.zeros(2 * n), np.zeros(2 * n), np.zeros(n), small_forms.space,
                     small_forms.materials, small_forms.penalties)
    assert norms.dg_e == norms.dg_p == norms.dg_T == norms.dg_star == 0.0


def test_norms_agree_with_norm_matrices(small_forms, rng):
    f = small_forms
    n = f.n_scalar
    v, T = rng.standard_normal(2 * n), rng.standard_normal(n)
    args = (f.space, f.materials, f.penalties)
    assert dg_norm_e(DiscreteField(f.space, v, 2), *args) ** 2 == \
        pytest.approx(v @ (f.N_e @ v), rel=1e-10)
    assert dg_seminorm_p(DiscreteField(f.space, v, 2), *args) ** 2 == \
        pytest.approx(v @ (f.N_p @ v), rel=1e-10)
    assert dg_norm_T(DiscreteField(f.space, T, 1), *args) ** 2 == \
        pytest.approx(T @ (f.N_T @ T), rel=1e-10)


def test_norms_are_absolutely_homogeneous(small_forms, rng):
    f = small_forms
    n = f.n_scalar
    u, w, T = rng.standard_normal(2 * n), rng.standard_normal(2 * n), rng.standard_normal(n)
    base = dg_norms(u, w, T, f.space, f.materials, f.penalties)
    scaled = dg_norms(-3.0 * u, -3.0 * w, -3.0 * T, f.space, f.materials, f.penalties)
    for name in ('dg_e', 'dg_p', 'dg_T', 'dg_star'):
        assert getattr(scaled, name) == pytest.approx(3.0 * getattr(base, name), rel=1e-12)


def test_pressure_seminorm_kernel(small_forms, rng):
    f = small_forms
    u = rng.standard_normal(2 * f.n_scalar)
    alpha = f.materials.cell_values('alpha')
    U = DiscreteField(f.space, u, 2)
    W = DiscreteField(f.space, -(f.alpha_diag() @ u), 2)
    combined = CombinedField([(alpha, U), (1.0, W)])
    assert dg_seminorm_p(combined, f.space, f.materials, f.penalties) <= \
        1e-10 * dg_seminorm_p(U, f.space, f.materials, f.penalties)


# Energies

def test_energy_norm_of_zero_state(small_forms):
    zero = np.zeros(small_forms.n_total)
    assert energy_norm(SystemState(0.0, zero, zero, zero), small_forms) == 0.0


def test_energy_norm_reduces_to_fluid_kinetic_term(small_forms, rng):
    n = small_forms.n_scalar
    Y = np.zeros(small_forms.n_total)
    q = rng.standard_normal(2 * n)
    Y[2 * n:4 * n] = q
    zero = np.zeros(small_forms.n_total)
    energy = energy_norm(SystemState(0.0, zero, Y, zero), small_forms)
    assert energy ** 2 == pytest.approx(q @ (small_forms.M_rho_w @ q))


def random_state_trace(forms, rng, steps, dt, tau=0.0):
    block = build_block_system(forms, tau=tau)
    X0, Y0 = rng.standard_normal(block.size), rng.standard_normal(block.size)
    zero = np.zeros(block.size)
    state = initial_state(block, X0, Y0, zero)
    integrator = TimeIntegrator(block, NewmarkConfig(dt=dt, t_final=steps * dt), lambda t: zero)
    return discrete_energy_trace(integrator, state)



def test_zero_data_gives_zero_energy_trace(small_forms):
    block = build_block_system(small_forms, tau=0.0)
    zero = np.zeros(block.size)
    integrator = TimeIntegrator(block, NewmarkConfig(dt=0.01, t_final=0.1), lambda t: zero)
    trace = discrete_energy_trace(integrator, initial_state(block, zero, zero, zero))
    assert len(trace.energies) == 11
    assert not any(trace.energies)
    assert trace.verdict == 'PASS'


def test_energy_is_non_increasing_without_forcing(convergence_region, rng):
    forms = build_forms(convergence_region, nx=3, degree=1)
    trace = random_state_trace(forms, rng, steps=50, dt=1e-2)
    assert trace.verdict == 'PASS', trace.worst_relative_increase
    assert trace.energies[-1] < trace.energies[0]
    assert all(math.isfinite(v) for v in trace.norms)


@pytest.mark.slow
def test_energy_is_non_increasing_on_a_hundred_cells(convergence_region, rng):
    forms = build_forms(convergence_region, nx=10, degree=2)
    trace = random_state_trace(forms, rng, steps=500, dt=1e-3)
    assert trace.verdict == 'PASS', trace.worst_relative_increase


def test_energy_is_conserved_in_the_conservative_limit(convergence_region, rng):
    # no thermal diffusion, no coupling and a vanishing friction mass
    region = replace(convergence_region, theta=1e-30, b0=0.0, beta=0.0, k=1e30)
    forms = build_forms(region, nx=3, degree=1, temperature_coupling=False)
    trace = random_state_trace(forms, rng, steps=200, dt=1e-2)
    energies = np.array(trace.energies)
    assert len(energies) == 201
    assert np.abs(energies - energies[0]).max() <= 1e-8 * energies[0]
    assert trace.verdict == 'PASS'


def test_hyperbolic_thermal_relaxation_stays_stable(convergence_region, rng):
    forms = build_forms(convergence_region, nx=3, degree=1)
    assert not forms.materials.is_parabolic
    trace = random_state_trace(forms, rng, steps=100, dt=1e-2, tau=None)
    energies = np.array(trace.energies)
    assert np.all(np.isfinite(energies))
    assert energies.max() <= 5.0 * energies[0]
    assert energies[-1] < energies[0]


def test_projected_initial_energy_is_quadrature_exact(convergence_region):
    case = standard_case(convergence_region)
    forms = build_forms(convergence_region, nx=4, degree=2)
    doubled = assemble_forms(forms.space, forms.materials, extra_order=forms.volume_order)
    assert doubled.volume_order == 2 * forms.volume_order
    block, block_doubled = build_block_system(forms), build_block_system(doubled)
    zero = np.zeros(block.size)
    state = project_initial_conditions(block, case.initial_fields(0.0), zero)
    energy = scheme_energy(state, block)
    assert energy > 0
    assert scheme_energy(state, block_doubled) == pytest.approx(energy, rel=1e-10)
    assert energy_norm(state, doubled, 0.0) == pytest.approx(energy_norm(state, forms, 0.0),
                                                             rel=1e-10)



# Pressure

def test_zero_state_gives_zero_pressure(small_forms):
    zero = np.zeros(small_forms.n_total)
    p = pressure_postprocess(zero, zero, small_forms.space, small_forms.materials)
    assert not np.any(p)


def test_pressure_ignores_temperature_without_coupling(convergence_region, rng):
    mesh = cartesian_grid(2, 2)
    space = DGSpace(mesh, 2)
    materials = MaterialMap({1: convergence_region}, mesh, temperature_coupling=False)
    n = space.n_dofs
    X = np.zeros(5 * n)
    X[4 * n:] = rng.standard_normal(n)
    p = pressure_postprocess(X, np.zeros(5 * n), space, materials,
                             p0=lambda points: np.full(len(points), 5.0))
    constant = l2_project(lambda points: np.full(len(points), 5.0), space)
    assert np.allclose(p, constant, atol=1e-10)
    assert pressure_dg_norm(DiscreteField(space, p - constant, 1), space, materials) == \
        pytest.approx(0.0, abs=1e-9)


def test_projected_standard_solution_errors_converge(convergence_region):
    case = standard_case(convergence_region)
    reports = []
    for nx in (2, 4):
        forms = build_forms(convergence_region, nx=nx, degree=2)
        space = forms.space
        fields = case.initial_fields(0.0)
        X = np.concatenate([l2_project(fields.u, space, 2), l2_project(fields.w, space, 2),
                            l2_project(fields.T, space, 1)])
        Y = np.concatenate([l2_project(fields.u_t, space, 2), l2_project(fields.w_t, space, 2),
                            l2_project(fields.T_t, space, 1)])
        state = SystemState(0.0, X, Y, np.zeros_like(X))
        reports.append(compute_errors(state, forms, case, X0=X, label=f"{nx}x{nx}"))
    table = convergence_rates(reports)
    assert table.rate(0, 'L2_u') > 2.0
    assert table.rate(0, 'dG_u') > 1.2
    assert all(r.energy > 0 for r in reports)
    assert all(math.isfinite(r.L2_p) for r in reports)


def test_pressure_needs_the_initial_state(small_forms):
    X = np.zeros(small_forms.n_total)
    with pytest.raises(TPEError, match="initial state"):
        pressure_postprocess(X, None, small_forms.space, small_forms.materials)
    with pytest.raises(TPEError):
        pressure_postprocess(X, X[:-1], small_forms.space, small_forms.materials)
