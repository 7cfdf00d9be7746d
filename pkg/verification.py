#!/usr/bin/env python3
"""
Verification Toolkit
dG and energy norms, errors against manufactured solutions, pressure
recovery, convergence-rate tables and discrete energy monitoring.

Norms are evaluated from their definitions (broken volume integrals plus
penalty-weighted face jumps) on any field that can be evaluated cell by cell:
discrete coefficient vectors, closed-form fields, or linear combinations of
both. Quadrature order defaults to 2*l_k + 4.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dg_space import DGSpace, QuadratureRule
from form_assembler import BlockOperator, Forms, PenaltyCoefficients
from materials import MaterialMap
from newmark_integrator import SystemState, TimeIntegrator
from tpe_errors import ConfigError, TPEError

logger = logging.getLogger(__name__)

ENERGY_TOLERANCE = 1e-8
PRESSURE_PENALTY = 10.0
ERROR_QUANTITIES = ('L2_u', 'dG_u', 'L2_w', 'dG_w', 'L2_T', 'dG_T', 'L2_p', 'dG_p')


# Field evaluators

class FieldEvaluator:
    """Anything that yields values and gradients at points of a given cell"""
    components: int = 1

    def evaluate(self, cell: int, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class DiscreteField(FieldEvaluator):
    def __init__(self, space: DGSpace, coeffs: np.ndarray, components: int = 1) -> None:
        if coeffs.shape != (components * space.n_dofs,):
            raise TPEError(f"coefficient vector of length {coeffs.shape} does not match "
                           f"{components} x {space.n_dofs} dofs")
        self.space = space
        self.coeffs = coeffs
        self.components = components

    def evaluate(self, cell, points):
        return self.space.evaluate(self.coeffs, cell, points, self.components)


class ExactField(FieldEvaluator):
    """Closed-form field frozen at time t"""

    def __init__(self, value: Callable, gradient: Callable, t: float, components: int = 1) -> None:
        self.value = value
        self.gradient = gradient
        self.t = t
        self.components = components

    def evaluate(self, cell, points):
        return self.value(points, self.t), self.gradient(points, self.t)


class CombinedField(FieldEvaluator):
    """sum_i c_i v_i with scalar or cell-wise constant weights"""

    def __init__(self, terms: Sequence[Tuple[Union[float, np.ndarray], FieldEvaluator]]) -> None:
        if not terms:
            raise TPEError("empty field combination")
        self.terms = list(terms)
        self.components = terms[0][1].components

    def evaluate(self, cell, points):
        value = grad = 0.0
        for weight, part in self.terms:
            c = float(weight[cell]) if isinstance(weight, np.ndarray) else float(weight)
            v, g = part.evaluate(cell, points)
            value = value + c * v
            grad = grad + c * g
        return value, grad


def as_field(data: Union[FieldEvaluator, np.ndarray], space: DGSpace,
             components: int) -> FieldEvaluator:
    if isinstance(data, FieldEvaluator):
        return data
    return DiscreteField(space, np.asarray(data, dtype=float), components)


def difference(exact: FieldEvaluator, discrete: FieldEvaluator) -> CombinedField:
    return CombinedField([(1.0, exact), (-1.0, discrete)])


# Integration helpers

def _cell_rule(space: DGSpace, cell: int, order: Optional[int]) -> QuadratureRule:
    q = 2 * int(space.degrees[cell]) + 4 if order is None else order
    return space.cell_rule(cell, q)


def _volume(space: DGSpace, integrand: Callable[[int, np.ndarray], np.ndarray],
            order: Optional[int]) -> float:
    total = 0.0
    for k in range(space.mesh.n_cells):
        rule = _cell_rule(space, k, order)
        total += rule.integrate(integrand(k, rule.points))
    return total


def _face_jumps(space: DGSpace, fld: FieldEvaluator, order: Optional[int]):
    """Yield (face index, face, rule, jump) with jump = v+ - v- (v+ on the boundary)"""
    mesh = space.mesh
    for f, face in enumerate(mesh.faces):
        degree = int(space.degrees[face.owner])
        if not face.is_boundary:
            degree = max(degree, int(space.degrees[face.neighbor]))
        rule = space.face_rule(f, 2 * degree + 4 if order is None else order)
        jump, _ = fld.evaluate(face.owner, rule.points)
        if not face.is_boundary:
            jump = jump - fld.evaluate(face.neighbor, rule.points)[0]
        yield f, face, rule, jump


def _strain_energy(grads: np.ndarray) -> np.ndarray:
    eps = 0.5 * (grads + np.swapaxes(grads, -1, -2))
    return np.einsum('paj,paj->p', eps, eps)


def _divergence(grads: np.ndarray) -> np.ndarray:
    return grads[:, 0, 0] + grads[:, 1, 1]


def _no_gradient(points: np.ndarray, t: float) -> np.ndarray:
    return np.zeros((len(points), 2, 2))


# Norms

def l2_norm(fld: FieldEvaluator, space: DGSpace, weight: Optional[np.ndarray] = None,
            order: Optional[int] = None) -> float:
    """sqrt of sum_k int w_k |v|^2, w = 1 by default"""
    def integrand(k, points):
        v, _ = fld.evaluate(k, points)
        sq = v ** 2 if v.ndim == 1 else np.einsum('pa,pa->p', v, v)
        return sq if weight is None else weight[k] * sq
    return math.sqrt(max(_volume(space, integrand, order), 0.0))


def dg_norm_e(fld: FieldEvaluator, space: DGSpace, materials: MaterialMap,
              penalties: PenaltyCoefficients, order: Optional[int] = None) -> float:
    """||v||_dG,e^2 = ||sqrt(2 mu) eps_h(v)||^2 + sum_F sigma ||[v]||_F^2"""
    mu = materials.cell_values('mu')
    total = _volume(space, lambda k, p: 2.0 * mu[k] * _strain_energy(fld.evaluate(k, p)[1]), order)
    for f, _, rule, jump in _face_jumps(space, fld, order):
        total += penalties.sigma[f] * rule.integrate(np.einsum('pa,pa->p', jump, jump))
    return math.sqrt(max(total, 0.0))


def dg_seminorm_p(fld: FieldEvaluator, space: DGSpace, materials: MaterialMap,
                  penalties: PenaltyCoefficients, order: Optional[int] = None) -> float:
    """|z|_dG,p^2 = ||c0^-1/2 div_h z||^2 + sum_F zeta ||[z].n||_F^2 (normal jump only)"""
    inv_c0 = materials.cell_values('inv_c0')
    total = _volume(space, lambda k, p: inv_c0[k] * _divergence(fld.evaluate(k, p)[1]) ** 2, order)
    for f, face, rule, jump in _face_jumps(space, fld, order):
        total += penalties.zeta[f] * rule.integrate((jump @ face.normal) ** 2)
    return math.sqrt(max(total, 0.0))


def dg_norm_T(fld: FieldEvaluator, space: DGSpace, materials: MaterialMap,
              penalties: PenaltyCoefficients, order: Optional[int] = None) -> float:
    """||S||_dG,T^2 = ||sqrt(theta) grad_h S||^2 + sum_F varrho ||[S]||_F^2"""
    theta = materials.cell_values('theta')

    def integrand(k, points):
        g = fld.evaluate(k, points)[1]
        return theta[k] * np.einsum('pd,pd->p', g, g)

    total = _volume(space, integrand, order)
    for f, _, rule, jump in _face_jumps(space, fld, order):
        total += penalties.varrho[f] * rule.integrate(jump ** 2)
    return math.sqrt(max(total, 0.0))


@dataclass
class NormSet:
    dg_e: float
    dg_p: float
    dg_T: float
    dg_star: float


def dg_norms(u, w, T, space: DGSpace, materials: MaterialMap,
             penalties: PenaltyCoefficients, order: Optional[int] = None) -> NormSet:
    """dG norms of (u, w, T); each argument is a FieldEvaluator or a coefficient vector.

    dg_star is ||(u, w)||_dG,* = (||u||_e^2 + |alpha u + w|_p^2 + B(w, w))^(1/2).
    """
    u = as_field(u, space, 2)
    w = as_field(w, space, 2)
    T = as_field(T, space, 1)
    e = dg_norm_e(u, space, materials, penalties, order)
    p = dg_seminorm_p(w, space, materials, penalties, order)
    combined = CombinedField([(materials.cell_values('alpha'), u), (1.0, w)])
    p_combined = dg_seminorm_p(combined, space, materials, penalties, order)
    drag = l2_norm(w, space, materials.cell_values('inv_k'), order)
    return NormSet(dg_e=e, dg_p=p, dg_T=dg_norm_T(T, space, materials, penalties, order),
                   dg_star=math.sqrt(e ** 2 + p_combined ** 2 + drag ** 2))


# Energies

def energy_norm(state: SystemState, forms: Forms, dissipation: float = 0.0) -> float:
    """||(u, w, T)||_E from the assembled mass, damping and norm matrices.

    ``dissipation`` is the accumulated int_0^t ||T||_dG,T^2, which turns the
    result into the starred energy norm.
    """
    n = forms.n_scalar
    X, Y = state.X, state.Y
    U, W, T = X[:2 * n], X[2 * n:4 * n], X[4 * n:]
    VU, VW = Y[:2 * n], Y[2 * n:4 * n]
    kinetic = VU @ (forms.M_rho @ VU) + 2.0 * VU @ (forms.M_rho_f @ VW) + VW @ (forms.M_rho_w @ VW)
    z = forms.alpha_diag() @ U + W
    elastic = U @ (forms.N_e @ U) + z @ (forms.N_p @ z) + W @ (forms.B @ W)
    total = kinetic + T @ (forms.M_T @ T) + elastic + dissipation
    return math.sqrt(max(float(total), 0.0))


def thermal_dissipation_rate(T: np.ndarray, forms: Forms) -> float:
    """||T||_dG,T^2 from the norm matrix"""
    return float(T @ (forms.N_T @ T))


def scheme_energy(state: SystemState, block: BlockOperator) -> float:
    """1/2 (V^T M V + D^T K D + T^T M_T T), the quantity the implicit scheme dissipates.

    For tau = 0 and zero loads the trapezoidal Newmark / Crank-Nicolson step
    satisfies E^{k+1} - E^k = -dt (V^T B V + T^T A_T T) at the midpoint.
    """
    d, s = block.mechanical, block.thermal
    D, V, T = state.X[d], state.Y[d], state.X[s]
    M = block.A[d, d]
    K = block.C[d, d]
    value = V @ (M @ V) + D @ (K @ D)
    if not block.temperature_frozen:
        value += T @ (block.forms.M_T @ T)
    return 0.5 * float(value)


def coupling_power(block: BlockOperator, state: SystemState) -> Tuple[float, float]:
    """Thermal-row and mechanical-row coupling contributions to dE/dt; they cancel"""
    d, s = block.mechanical, block.thermal
    V, T = state.Y[d], state.X[s]
    thermal = float(T @ (block.B[s, d] @ V))
    mechanical = float(V @ (block.C[d, s] @ T))
    return thermal, mechanical


@dataclass
class EnergyTrace:
    times: List[float] = field(default_factory=list)
    energies: List[float] = field(default_factory=list)
    norms: List[float] = field(default_factory=list)
    tolerance: float = ENERGY_TOLERANCE

    def append(self, t: float, energy: float, norm: float = math.nan) -> None:
        self.times.append(t)
        self.energies.append(energy)
        self.norms.append(norm)

    def increases(self) -> List[int]:
        """Steps k with E^{k+1} > E^k (1 + tolerance)"""
        e = self.energies
        return [k for k in range(len(e) - 1) if e[k + 1] > e[k] * (1.0 + self.tolerance)]

    @property
    def worst_relative_increase(self) -> float:
        worst = 0.0
        for a, b in zip(self.energies, self.energies[1:]):
            if a > 0:
                worst = max(worst, (b - a) / a)
            elif b > 0:
                worst = math.inf
        return worst

    @property
    def verdict(self) -> str:
        return 'PASS' if not self.increases() else 'FAIL'


def discrete_energy_trace(integrator: TimeIntegrator, state: SystemState,
                          tolerance: float = ENERGY_TOLERANCE,
                          with_norm: bool = True) -> EnergyTrace:
    """Run the integrator and record the scheme energy (and ||.||_E,*) per step"""
    block = integrator.block
    forms = block.forms
    trace = EnergyTrace(tolerance=tolerance)
    s = block.thermal
    dissipated = 0.0
    previous = thermal_dissipation_rate(state.X[s], forms) if with_norm else 0.0

    def record(st: SystemState) -> None:
        norm = energy_norm(st, forms, dissipated) if with_norm else math.nan
        trace.append(st.t, scheme_energy(st, block), norm)

    record(state)
    for state in integrator.steps(state):
        if with_norm:
            current = thermal_dissipation_rate(state.X[s], forms)
            dissipated += 0.5 * integrator.config.dt * (previous + current)
            previous = current
        record(state)
    bad = trace.increases()
    if bad:
        logger.warning("energy increased at %d of %d steps (first at step %d)",
                       len(bad), len(trace.energies) - 1, bad[0] + 1)
    else:
        logger.info("energy non-increasing over %d steps", len(trace.energies) - 1)
    return trace


# Pressure recovery

def _project_cellwise(space: DGSpace, func: Callable[[int, np.ndarray], np.ndarray]) -> np.ndarray:
    coeffs = np.zeros(space.n_dofs)
    for k in range(space.mesh.n_cells):
        rule = _cell_rule(space, k, None)
        phi, _ = space.basis_eval(k, rule.points)
        coeffs[space.cell_dofs(k)] = (phi * rule.weights) @ func(k, rule.points)
    return coeffs


def pressure_postprocess(X: np.ndarray, X0: np.ndarray, space: DGSpace, materials: MaterialMap,
                         p0: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """Scalar dG coefficients of p_h = p0 - c0^-1 (alpha div(u-u0) + div(w-w0) - b0 (T-T0)).

    Without ``p0`` the initial pressure is -c0^-1 (alpha div u0 + div w0), which
    reduces the relation to p_h = -c0^-1 (alpha div u + div w - b0 (T - T0)).
    """
    if X0 is None or X0.shape != X.shape:
        raise TPEError("pressure recovery needs the initial state on the same dof layout")
    n = space.n_dofs
    U, W, T = (DiscreteField(space, X[:2 * n], 2), DiscreteField(space, X[2 * n:4 * n], 2),
               DiscreteField(space, X[4 * n:], 1))
    U0, W0, T0 = (DiscreteField(space, X0[:2 * n], 2), DiscreteField(space, X0[2 * n:4 * n], 2),
                  DiscreteField(space, X0[4 * n:], 1))
    alpha = materials.cell_values('alpha')
    inv_c0 = materials.cell_values('inv_c0')
    b0 = materials.cell_values('b0')

    def div(fld: FieldEvaluator, k: int, points: np.ndarray) -> np.ndarray:
        return _divergence(fld.evaluate(k, points)[1])

    def pressure(k, points):
        if p0 is None:
            base = -inv_c0[k] * (alpha[k] * div(U0, k, points) + div(W0, k, points))
        else:
            base = np.asarray(p0(points), dtype=float)
        change = (alpha[k] * (div(U, k, points) - div(U0, k, points))
                  + div(W, k, points) - div(W0, k, points)
                  - b0[k] * (T.evaluate(k, points)[0] - T0.evaluate(k, points)[0]))
        return base - inv_c0[k] * change

    return _project_cellwise(space, pressure)


def pressure_penalty(space: DGSpace, materials: MaterialMap,
                     alpha: float = PRESSURE_PENALTY) -> np.ndarray:
    """gamma_F = alpha * max over adjacent cells of k l^2 / h"""
    k = materials.cell_values('k')
    gamma = np.zeros(space.mesh.n_faces)
    for f, face in enumerate(space.mesh.faces):
        cells = [face.owner] if face.is_boundary else [face.owner, face.neighbor]
        gamma[f] = alpha * max(k[c] * max(int(space.degrees[c]), 1) ** 2
                               / space.mesh.cell_diameter[c] for c in cells)
    return gamma


def pressure_dg_norm(fld: FieldEvaluator, space: DGSpace, materials: MaterialMap,
                     order: Optional[int] = None) -> float:
    """||p||_dG,prs^2 = ||sqrt(k) grad_h p||^2 + sum_F gamma ||[p]||_F^2"""
    k = materials.cell_values('k')
    gamma = pressure_penalty(space, materials)

    def integrand(c, points):
        g = fld.evaluate(c, points)[1]
        return k[c] * np.einsum('pd,pd->p', g, g)

    total = _volume(space, integrand, order)
    for f, _, rule, jump in _face_jumps(space, fld, order):
        total += gamma[f] * rule.integrate(jump ** 2)
    return math.sqrt(max(total, 0.0))


# Errors and rates

@dataclass
class ErrorReport:
    h: float
    degree: int
    n_dofs: int
    L2_u: float
    dG_u: float
    L2_w: float
    dG_w: float
    L2_T: float
    dG_T: float
    L2_p: float = math.nan
    dG_p: float = math.nan
    energy: float = math.nan
    label: str = ''

    def error(self, quantity: str) -> float:
        if quantity not in ERROR_QUANTITIES and quantity != 'energy':
            raise ConfigError(f"unknown error quantity '{quantity}'")
        return getattr(self, quantity)

    def as_row(self) -> Dict[str, float]:
        return asdict(self)


def compute_errors(state: SystemState, forms: Forms, case, X0: Optional[np.ndarray] = None,
                   label: str = '') -> ErrorReport:
    """Errors of a discrete state against a manufactured case at ``state.t``"""
    space, materials, pen = forms.space, forms.materials, forms.penalties
    n = space.n_dofs
    t = state.t
    X, Y = state.X, state.Y

    def error_of(name: str, coeffs: np.ndarray, components: int) -> FieldEvaluator:
        exact = ExactField(case.value(name), case.gradient(name), t, components)
        return difference(exact, DiscreteField(space, coeffs, components))

    e_u = error_of('u', X[:2 * n], 2)
    e_w = error_of('w', X[2 * n:4 * n], 2)
    e_T = error_of('T', X[4 * n:], 1)

    report = ErrorReport(
        h=space.mesh.max_diameter, degree=space.max_degree, n_dofs=forms.n_total,
        L2_u=l2_norm(e_u, space), dG_u=dg_norm_e(e_u, space, materials, pen),
        L2_w=l2_norm(e_w, space), dG_w=dg_seminorm_p(e_w, space, materials, pen),
        L2_T=l2_norm(e_T, space), dG_T=dg_norm_T(e_T, space, materials, pen), label=label)

    if X0 is not None:
        p_h = pressure_postprocess(X, X0, space, materials)
        e_p = difference(ExactField(case.value('p'), case.gradient('p'), t),
                         DiscreteField(space, p_h, 1))
        report.L2_p = l2_norm(e_p, space)
        report.dG_p = pressure_dg_norm(e_p, space, materials)

    # kinetic part of the energy error uses the velocity errors
    ev_u = difference(ExactField(case.value('u_t'), _no_gradient, t, 2),
                      DiscreteField(space, Y[:2 * n], 2))
    ev_w = difference(ExactField(case.value('w_t'), _no_gradient, t, 2),
                      DiscreteField(space, Y[2 * n:4 * n], 2))
    rho, rho_f, rho_w = (materials.cell_values(q) for q in ('rho', 'rho_f', 'rho_w'))

    def kinetic(k, points):
        a, _ = ev_u.evaluate(k, points)
        b, _ = ev_w.evaluate(k, points)
        return (rho[k] * np.einsum('pa,pa->p', a, a) + 2.0 * rho_f[k] * np.einsum('pa,pa->p', a, b)
                + rho_w[k] * np.einsum('pa,pa->p', b, b))

    norms = dg_norms(e_u, e_w, e_T, space, materials, pen)
    thermal = l2_norm(e_T, space, materials.cell_values('m_T')) ** 2
    report.energy = math.sqrt(max(_volume(space, kinetic, None), 0.0) + thermal
                              + norms.dg_star ** 2)
    logger.info("errors %s: h=%.4g l=%d dG_u=%.3e dG_w=%.3e dG_T=%.3e L2_u=%.3e",
                label or '', report.h, report.degree, report.dG_u, report.dG_w,
                report.dG_T, report.L2_u)
    return report


@dataclass
class RateTable:
    ladder: str
    reports: List[ErrorReport]
    rates: List[Dict[str, Optional[float]]]
    exact: List[Tuple[int, str]] = field(default_factory=list)
    slopes: Dict[str, Optional[float]] = field(default_factory=dict)
    quantities: Tuple[str, ...] = ERROR_QUANTITIES

    def rate(self, pair: int, quantity: str) -> Optional[float]:
        return self.rates[pair].get(quantity)

    def last_rates(self) -> Dict[str, Optional[float]]:
        return self.rates[-1] if self.rates else {}

    def format_rate(self, pair: int, quantity: str) -> str:
        if (pair, quantity) in self.exact:
            return 'exact'
        value = self.rate(pair, quantity)
        return '' if value is None or math.isnan(value) else f"{value:.3f}"


def convergence_rates(reports: Sequence[ErrorReport], ladder: str = 'h',
                      quantities: Sequence[str] = ERROR_QUANTITIES) -> RateTable:
    """Observed rates between consecutive ladder rungs.

    h-ladders: log(e_i / e_{i+1}) / log(h_i / h_{i+1}). Degree ladders:
    log(e_i / e_{i+1}) per unit of l, plus the least-squares slope of
    log(error) against l over the whole ladder.
    """
    if ladder not in ('h', 'degree'):
        raise ConfigError(f"ladder must be 'h' or 'degree', got '{ladder}'")
    if len(reports) < 2:
        raise ConfigError("convergence rates need at least two ladder rungs")
    key = (lambda r: r.h) if ladder == 'h' else (lambda r: float(r.degree))
    steps = [key(r) for r in reports]
    if len(set(steps)) != len(steps):
        raise ConfigError(f"ladder rungs must have distinct {'h' if ladder == 'h' else 'degrees'}")

    table = RateTable(ladder=ladder, reports=list(reports), rates=[],
                      quantities=tuple(quantities))
    for i in range(len(reports) - 1):
        row: Dict[str, Optional[float]] = {}
        for q in quantities:
            a, b = reports[i].error(q), reports[i + 1].error(q)
            if math.isnan(a) or math.isnan(b):
                row[q] = None
            elif a == 0.0 or b == 0.0:
                row[q] = None
                table.exact.append((i, q))
            elif ladder == 'h':
                row[q] = math.log(a / b) / math.log(steps[i] / steps[i + 1])
            else:
                row[q] = math.log(a / b) / (steps[i + 1] - steps[i])
        table.rates.append(row)

    if ladder == 'degree':
        for q in quantities:
            errors = np.array([r.error(q) for r in reports])
            if np.all(np.isfinite(errors)) and np.all(errors > 0):
                table.slopes[q] = float(np.polyfit(steps, np.log(errors), 1)[0])
            else:
                table.slopes[q] = None
    return table
