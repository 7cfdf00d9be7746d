#!/usr/bin/env python3
"""
Manufactured Solutions
Closed-form displacement, filtration displacement and temperature fields with
the forcing terms, boundary traces and initial data obtained by applying the
strong three-field operator symbolically.

All numerical callables take ``(points, t)`` with ``points`` of shape (P, 2);
vector fields return (P, 2), scalar fields (P,), gradients (P, 2, 2) with
``grad[p, a, j] = d_j v_a`` or (P, 2) for scalars.
"""

import logging
from dataclasses import replace
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sym

from form_assembler import BoundaryData, Forcing
from materials import MaterialRegion, derived_densities
from materials_loader import MaterialsLoader
from newmark_integrator import InitialFields
from tpe_errors import ConfigError

logger = logging.getLogger(__name__)

x, y, t = sym.symbols("x y t")

Expr = Union[sym.Expr, float, int]
FieldFunction = Callable[[np.ndarray, float], np.ndarray]


def _lambdify(expr: Expr) -> FieldFunction:
    """Scalar expression -> vectorized callable broadcast to the number of points"""
    func = sym.lambdify((x, y, t), sym.sympify(expr), "numpy")

    def evaluate(points: np.ndarray, time: float) -> np.ndarray:
        points = np.atleast_2d(points)
        values = func(points[:, 0], points[:, 1], time)
        return np.broadcast_to(np.asarray(values, dtype=float), (len(points),)).copy()

    return evaluate


def _stack(functions: Sequence[FieldFunction]) -> FieldFunction:
    def evaluate(points: np.ndarray, time: float) -> np.ndarray:
        return np.stack([f(points, time) for f in functions], axis=-1)
    return evaluate


def _stack_matrix(functions: Sequence[Sequence[FieldFunction]]) -> FieldFunction:
    def evaluate(points: np.ndarray, time: float) -> np.ndarray:
        return np.stack([np.stack([f(points, time) for f in row], axis=-1)
                         for row in functions], axis=-2)
    return evaluate


def _div(v: Sequence[Expr]) -> sym.Expr:
    return sym.diff(v[0], x) + sym.diff(v[1], y)


def _grad(s: Expr) -> Tuple[sym.Expr, sym.Expr]:
    return sym.diff(s, x), sym.diff(s, y)


class ManufacturedCase:
    """Exact (u, w, T) and everything derived from them for one homogeneous material.

    The forcing follows the three-field system

        rho u'' + rho_f w'' - div(2 mu eps(u) + (lambda + alpha^2/c0) div u I
            + alpha/c0 div w I - c_u T I) = f
        rho_f u'' + rho_w w'' + w'/k - alpha/c0 grad div u - 1/c0 grad div w
            + b0/c0 grad T = g
        m_T (T' + tau T'') + c_u (div u' + tau div u'') + c_w (div w' + tau div w'')
            - theta lap T = H

    with c_u = b0 alpha/c0 + beta, c_w = b0/c0 and m_T = a0 - b0^2/c0.
    """

    def __init__(self, region: MaterialRegion, u: Sequence[Expr], w: Sequence[Expr], T: Expr,
                 name: str = 'custom', domain: Tuple[Tuple[float, float], Tuple[float, float]]
                 = ((0.0, 1.0), (0.0, 1.0))) -> None:
        if len(u) != 2 or len(w) != 2:
            raise ConfigError(f"manufactured case '{name}': u and w need two components")
        self.region = region
        self.name = name
        self.domain = domain
        self.u = tuple(sym.sympify(c) for c in u)
        self.w = tuple(sym.sympify(c) for c in w)
        self.T = sym.sympify(T)
        self._build()
        logger.debug("manufactured case '%s' derived for tau = %g", name, region.tau)

    def _build(self) -> None:
        r = self.region
        rho, rho_w = derived_densities(r)
        u, w, T = self.u, self.w, self.T
        c_u, c_w, m_T = r.coupling_u, r.coupling_w, r.reduced_capacity

        def dt(e: Expr, n: int = 1) -> sym.Expr:
            return sym.diff(e, t, n)

        u_t, u_tt = [dt(c) for c in u], [dt(c, 2) for c in u]
        w_t, w_tt = [dt(c) for c in w], [dt(c, 2) for c in w]
        div_u, div_w = _div(u), _div(w)

        grad_u = [[sym.diff(u[a], v) for v in (x, y)] for a in range(2)]
        strain = [[(grad_u[a][j] + grad_u[j][a]) / 2 for j in range(2)] for a in range(2)]
        volumetric = (r.lam + r.alpha ** 2 / r.c0) * div_u + r.alpha / r.c0 * div_w - c_u * T
        stress = [[2 * r.mu * strain[a][j] + (volumetric if a == j else 0) for j in range(2)]
                  for a in range(2)]
        div_stress = [sym.diff(stress[a][0], x) + sym.diff(stress[a][1], y) for a in range(2)]

        grad_div_u, grad_div_w, grad_T = _grad(div_u), _grad(div_w), _grad(T)
        f = [rho * u_tt[a] + r.rho_f * w_tt[a] - div_stress[a] for a in range(2)]
        g = [r.rho_f * u_tt[a] + rho_w * w_tt[a] + w_t[a] / r.k
             - r.alpha / r.c0 * grad_div_u[a] - grad_div_w[a] / r.c0
             + r.b0 / r.c0 * grad_T[a] for a in range(2)]
        laplacian = sym.diff(T, x, 2) + sym.diff(T, y, 2)
        H = (m_T * (dt(T) + r.tau * dt(T, 2))
             + c_u * (dt(div_u) + r.tau * dt(div_u, 2))
             + c_w * (dt(div_w) + r.tau * dt(div_w, 2))
             - r.theta * laplacian)

        # time-integrated mass balance with p0 = -(alpha div u0 + div w0) / c0
        pressure = -(r.alpha * div_u + div_w - r.b0 * (T - T.subs(t, 0))) / r.c0

        self.expressions: Dict[str, object] = {
            'u': u, 'w': w, 'T': T, 'u_t': tuple(u_t), 'w_t': tuple(w_t), 'T_t': dt(T),
            'u_tt': tuple(u_tt), 'w_tt': tuple(w_tt), 'p': pressure,
            'f': tuple(f), 'g': tuple(g), 'H': H,
        }
        self._values: Dict[str, FieldFunction] = {}
        for key, expr in self.expressions.items():
            if isinstance(expr, tuple):
                self._values[key] = _stack([_lambdify(c) for c in expr])
            else:
                self._values[key] = _lambdify(expr)
        self._gradients: Dict[str, FieldFunction] = {
            'u': _stack_matrix([[_lambdify(e) for e in row] for row in grad_u]),
            'w': _stack_matrix([[_lambdify(sym.diff(w[a], v)) for v in (x, y)]
                                for a in range(2)]),
            'T': _stack([_lambdify(e) for e in grad_T]),
            'p': _stack([_lambdify(e) for e in _grad(pressure)]),
        }

    def value(self, name: str) -> FieldFunction:
        if name not in self._values:
            raise ConfigError(f"manufactured case '{self.name}' has no field '{name}'")
        return self._values[name]

    def gradient(self, name: str) -> FieldFunction:
        if name not in self._gradients:
            raise ConfigError(f"manufactured case '{self.name}' has no gradient of '{name}'")
        return self._gradients[name]

    def forcing(self) -> Forcing:
        return Forcing(f=self._values['f'], g=self._values['g'], H=self._values['H'])

    def boundary_data(self) -> BoundaryData:
        v = self._values
        return BoundaryData(u=v['u'], w=v['w'], T=v['T'], u_t=v['u_t'], w_t=v['w_t'],
                            u_tt=v['u_tt'], w_tt=v['w_tt'])

    def initial_fields(self, t0: float = 0.0) -> InitialFields:
        def at(name: str) -> Callable[[np.ndarray], np.ndarray]:
            func = self._values[name]
            return lambda points: func(points, t0)
        return InitialFields(u=at('u'), w=at('w'), T=at('T'),
                             u_t=at('u_t'), w_t=at('w_t'), T_t=at('T_t'))


def standard_case(region: Optional[MaterialRegion] = None, tau: Optional[float] = None,
                  loader: Optional[MaterialsLoader] = None) -> ManufacturedCase:
    """Smooth oscillating solution on the unit square.

    u = (s, s) cos(sqrt(2) pi t) with s = x^2 cos(pi x / 2) sin(pi x), w = -u,
    T = x^2 sin(pi x) sin(pi y) sin(sqrt(2) pi t). Both components of u depend
    on x only; u is nonzero on y = 0 and y = 1.
    """
    if region is None:
        region = (loader or MaterialsLoader()).get_region('convergence')
    if tau is not None:
        region = replace(region, tau=float(tau))
    omega = sym.sqrt(2) * sym.pi
    s = x ** 2 * sym.cos(sym.pi * x / 2) * sym.sin(sym.pi * x)
    u = (s * sym.cos(omega * t), s * sym.cos(omega * t))
    w = (-u[0], -u[1])
    T = x ** 2 * sym.sin(sym.pi * x) * sym.sin(sym.pi * y) * sym.sin(omega * t)
    return ManufacturedCase(region, u, w, T, name='standard')


def polynomial_case(region: MaterialRegion, degree: int = 2) -> ManufacturedCase:
    """Time-independent polynomial fields of total degree ``degree`` (static consistency checks)"""
    if degree < 1:
        raise ConfigError("polynomial manufactured case needs degree >= 1")
    u = (x ** degree + x * y, y ** degree - x)
    w = (x * y ** (degree - 1), -(x ** degree))
    T = x ** degree + y
    return ManufacturedCase(region, u, w, T, name=f'polynomial-{degree}')


MANUFACTURED_CASES = {
    'standard': standard_case,
}


def build_case(name: str, region: Optional[MaterialRegion] = None,
               tau: Optional[float] = None) -> ManufacturedCase:
    if name not in MANUFACTURED_CASES:
        raise ConfigError(f"unknown manufactured case '{name}' "
                          f"(available: {', '.join(sorted(MANUFACTURED_CASES))})")
    return MANUFACTURED_CASES[name](region=region, tau=tau)
