#!/usr/bin/env python3
"""
Newmark Time Integration
Implicit Newmark-beta stepping of the block system A X'' + B X' + C X = F in
acceleration form, and the monolithic Newmark / Crank-Nicolson scheme used
when the thermal relaxation time vanishes.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterator, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from dg_space import l2_project
from form_assembler import BlockOperator
from tpe_errors import ConfigError, SolverError

logger = logging.getLogger(__name__)

SOLVER_KINDS = ('direct', 'iterative')


@dataclass(frozen=True)
class NewmarkConfig:
    dt: float
    t_final: float
    beta: float = 0.25
    gamma: float = 0.5
    solver: str = 'direct'
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"time step must be positive, got {self.dt}")
        if not (0.0 <= 2.0 * self.beta <= 1.0):
            raise ConfigError(f"Newmark beta must satisfy 0 <= 2 beta <= 1, got {self.beta}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigError(f"Newmark gamma must lie in [0, 1], got {self.gamma}")
        if self.solver not in SOLVER_KINDS:
            raise ConfigError(f"solver must be one of {SOLVER_KINDS}, got '{self.solver}'")
        if self.t_final < 0:
            raise ConfigError("final time must be non-negative")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise ConfigError(f"time step {self.dt} does not divide final time {self.t_final}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class SystemState:
    t: float
    X: np.ndarray
    Y: np.ndarray
    A: np.ndarray
    step: int = 0

    def copy(self) -> 'SystemState':
        return replace(self, X=self.X.copy(), Y=self.Y.copy(), A=self.A.copy())


@dataclass
class InitialFields:
    """Callables (points) -> values for displacements, temperature and their rates"""
    u: Optional[Callable[[np.ndarray], np.ndarray]] = None
    w: Optional[Callable[[np.ndarray], np.ndarray]] = None
    T: Optional[Callable[[np.ndarray], np.ndarray]] = None
    u_t: Optional[Callable[[np.ndarray], np.ndarray]] = None
    w_t: Optional[Callable[[np.ndarray], np.ndarray]] = None
    T_t: Optional[Callable[[np.ndarray], np.ndarray]] = None


def _zero_rows(matrix: sp.csr_matrix) -> np.ndarray:
    return np.nonzero(np.diff(matrix.indptr) == 0)[0]


class LinearSolver:
    """Factorize once, solve many times; GMRES with ILU behind the same call"""

    def __init__(self, matrix: sp.spmatrix, kind: str = 'direct', tolerance: float = 1e-10,
                 label: str = 'effective matrix') -> None:
        self.matrix = sp.csc_matrix(matrix)
        self.kind = kind
        self.tolerance = tolerance
        self.label = label
        empty = _zero_rows(self.matrix.tocsr())
        if empty.size:
            raise SolverError(f"{label} is singular: zero pivot at row {int(empty[0])}")
        try:
            if kind == 'direct':
                self._lu = spla.splu(self.matrix)
            else:
                ilu = spla.spilu(self.matrix, drop_tol=1e-6, fill_factor=20)
                self._preconditioner = spla.LinearOperator(self.matrix.shape, ilu.solve)
        except RuntimeError as e:
            raise SolverError(f"factorization of the {label} failed: {e}")
        logger.debug("%s: %s factorization, n=%d, nnz=%d", label, kind,
                     self.matrix.shape[0], self.matrix.nnz)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.kind == 'direct':
            x = self._lu.solve(rhs)
        else:
            x, info = spla.gmres(self.matrix, rhs, rtol=self.tolerance, atol=0.0,
                                 M=self._preconditioner, restart=200, maxiter=50)
            if info != 0:
                raise SolverError(f"GMRES on the {self.label} did not converge (info={info})")
        if not np.all(np.isfinite(x)):
            raise SolverError(f"non-finite solution from the {self.label}")
        return x


@dataclass
class EffectiveSolver:
    block: BlockOperator
    config: NewmarkConfig
    solver: LinearSolver
    matrix: sp.csr_matrix
    parabolic: bool
    parts: Optional[Dict[str, sp.csr_matrix]] = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.solver.solve(rhs)


def _parts(block: BlockOperator):
    """Mechanical (D) and thermal (T) sub-blocks of the three block matrices"""
    d, s = block.mechanical, block.thermal
    return {
        'M': block.A[d, d], 'B_d': block.B[d, d], 'K': block.C[d, d], 'K_dT': block.C[d, s],
        'C_d': block.B[s, d], 'M_T': block.B[s, s], 'A_T': block.C[s, s],
    }


def factorize_effective(block: BlockOperator, config: NewmarkConfig) -> EffectiveSolver:
    """Effective matrix A + gamma dt B + beta dt^2 C, or the coupled CN matrix when tau = 0"""
    dt, beta, gamma = config.dt, config.beta, config.gamma
    p = None
    if not block.parabolic:
        matrix = (block.A + gamma * dt * block.B + beta * dt * dt * block.C).tocsr()
    else:
        p = _parts(block)
        mech = p['M'] + gamma * dt * p['B_d'] + beta * dt * dt * p['K']
        matrix = sp.bmat([[mech, p['K_dT']],
                          [0.5 * gamma * dt * p['C_d'], p['M_T'] / dt + 0.5 * p['A_T']]],
                         format='csr')
    solver = LinearSolver(matrix, config.solver, config.tolerance,
                          label='coupled Newmark/Crank-Nicolson matrix' if block.parabolic
                          else 'Newmark effective matrix')
    return EffectiveSolver(block=block, config=config, solver=solver, matrix=matrix,
                           parabolic=block.parabolic, parts=p)


def newmark_step(state: SystemState, solver: EffectiveSolver, load_now: np.ndarray,
                 load_next: np.ndarray) -> SystemState:
    """One implicit Newmark step in acceleration form"""
    if solver.parabolic:
        return cn_newmark_step(state, solver, load_now, load_next)
    block, cfg = solver.block, solver.config
    dt, beta, gamma = cfg.dt, cfg.beta, cfg.gamma
    X_pred = state.X + dt * state.Y + (0.5 - beta) * dt * dt * state.A
    Y_pred = state.Y + (1.0 - gamma) * dt * state.A
    rhs = load_next - block.B @ Y_pred - block.C @ X_pred
    A_next = solver.solve(rhs)
    return SystemState(t=state.t + dt, X=X_pred + beta * dt * dt * A_next,
                       Y=Y_pred + gamma * dt * A_next, A=A_next, step=state.step + 1)


def cn_newmark_step(state: SystemState, solver: EffectiveSolver, load_now: np.ndarray,
                    load_next: np.ndarray) -> SystemState:
    """Newmark for the displacements, Crank-Nicolson for the temperature, solved together.

    The thermal load enters as the endpoint average (H^k + H^{k+1}) / 2.
    """
    block, cfg = solver.block, solver.config
    if not block.parabolic:
        raise SolverError("the Crank-Nicolson coupled step requires tau = 0 in every region")
    dt, beta, gamma = cfg.dt, cfg.beta, cfg.gamma
    p = solver.parts
    d, s = block.mechanical, block.thermal
    D, V, A_D = state.X[d], state.Y[d], state.A[d]
    T = state.X[s]

    D_pred = D + dt * V + (0.5 - beta) * dt * dt * A_D
    V_pred = V + (1.0 - gamma) * dt * A_D
    rhs_mech = load_next[d] - p['B_d'] @ V_pred - p['K'] @ D_pred
    rhs_thermal = (0.5 * (load_now[s] + load_next[s]) + p['M_T'] @ T / dt
                   - 0.5 * (p['A_T'] @ T) - 0.5 * (p['C_d'] @ (V + V_pred)))
    sol = solver.solve(np.concatenate([rhs_mech, rhs_thermal]))
    n_mech = D.size
    A_next, T_next = sol[:n_mech], sol[n_mech:]

    X = np.concatenate([D_pred + beta * dt * dt * A_next, T_next])
    Y = np.concatenate([V_pred + gamma * dt * A_next, (T_next - T) / dt])
    A = np.concatenate([A_next, np.zeros_like(T_next)])
    return SystemState(t=state.t + dt, X=X, Y=Y, A=A, step=state.step + 1)


def initial_state(block: BlockOperator, X0: np.ndarray, Y0: np.ndarray, load0: np.ndarray,
                  t0: float = 0.0, kind: str = 'direct') -> SystemState:
    """Consistent initial acceleration from A A(0) = F(0) - B Y(0) - C X(0).

    For tau = 0 only the mechanical rows are solved; the thermal acceleration
    is not used by the Crank-Nicolson step and is set to zero.
    """
    if X0.shape != (block.size,) or Y0.shape != (block.size,):
        raise SolverError(f"initial vectors must have length {block.size}")
    residual = load0 - block.B @ Y0 - block.C @ X0
    if block.parabolic:
        d = block.mechanical
        mass = LinearSolver(block.A[d, d], kind, label='mechanical mass matrix')
        A0 = np.zeros(block.size)
        A0[d] = mass.solve(residual[d])
    else:
        A0 = LinearSolver(block.A, kind, label='mass block').solve(residual)
    return SystemState(t=t0, X=X0.copy(), Y=Y0.copy(), A=A0)


def project_initial_conditions(block: BlockOperator, fields: InitialFields, load0: np.ndarray,
                               t0: float = 0.0, kind: str = 'direct') -> SystemState:
    """L2-project configured initial fields and derive the consistent acceleration"""
    space = block.forms.space
    X0 = np.zeros(block.size)
    Y0 = np.zeros(block.size)
    n = space.n_dofs
    for target, func, comps, start in ((X0, fields.u, 2, 0), (X0, fields.w, 2, 2 * n),
                                       (X0, fields.T, 1, 4 * n), (Y0, fields.u_t, 2, 0),
                                       (Y0, fields.w_t, 2, 2 * n), (Y0, fields.T_t, 1, 4 * n)):
        if func is not None:
            target[start:start + comps * n] = l2_project(func, space, components=comps)
    if block.temperature_frozen:
        X0[block.thermal] = 0.0
        Y0[block.thermal] = 0.0
    return initial_state(block, X0, Y0, load0, t0=t0, kind=kind)


class TimeIntegrator:
    """Drives the stepping loop with a load callback and an optional progress hook"""

    def __init__(self, block: BlockOperator, config: NewmarkConfig,
                 load: Callable[[float], np.ndarray],
                 progress: Optional[Callable[[int, float, SystemState], None]] = None,
                 progress_every: int = 0) -> None:
        self.block = block
        self.config = config
        self.load = load
        self.progress = progress
        self.progress_every = progress_every
        self.solver = factorize_effective(block, config)

    def steps(self, state: SystemState) -> Iterator[SystemState]:
        """Yield the state after each step up to the final time"""
        t_start = state.t
        load_now = self.load(state.t)
        for k in range(self.config.n_steps):
            t_next = t_start + (k + 1) * self.config.dt
            load_next = self.load(t_next)
            state = newmark_step(state, self.solver, load_now, load_next)
            state.t = t_next
            load_now = load_next
            if self.progress is not None and self.progress_every and \
                    (state.step % self.progress_every == 0 or k == self.config.n_steps - 1):
                self.progress(state.step, state.t, state)
            yield state

    def run(self, state: SystemState,
            on_step: Optional[Callable[[SystemState], None]] = None) -> SystemState:
        for state in self.steps(state):
            if on_step is not None:
                on_step(state)
        return state
