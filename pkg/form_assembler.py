#!/usr/bin/env python3
"""
Interior-Penalty Form Assembler
Assembles the discrete bilinear forms of the thermo-poroelastic system on a
polygonal mesh (masses, elastic/pressure/thermal interior-penalty forms and
the thermo-mechanical coupling), the block matrices of the second-order
system, right-hand sides with Dirichlet data, and the penalty-based norm
matrices used for energy monitoring.

Layouts: scalar vectors have ``N = space.n_dofs`` entries, vector fields
``2N`` (component-major), and the full state is ``[U; W; T]`` of length 5N.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from dg_space import DGSpace
from materials import MaterialMap
from tpe_errors import AssemblyError, QuadratureError

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (10.0, 10.0, 10.0, 10.0)
PENALTY_KINDS = ('sigma', 'xi', 'zeta', 'varrho')
# coefficient entering each penalty kind, and which alpha_i scales it
_PENALTY_COEF = {'sigma': ('mu', 0), 'xi': ('lambda', 1), 'zeta': ('inv_c0', 2),
                 'varrho': ('theta', 3)}

FORM_NAMES = ('A_e', 'A_p', 'A_T', 'C_u', 'C_w', 'N_e', 'N_p', 'N_T')


@dataclass
class PenaltyCoefficients:
    sigma: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    varrho: np.ndarray
    alphas: Tuple[float, float, float, float] = DEFAULT_ALPHAS

    def of(self, kind: str) -> np.ndarray:
        if kind not in PENALTY_KINDS:
            raise AssemblyError(f"unknown penalty kind '{kind}'")
        return getattr(self, kind)


@dataclass
class Forms:
    """Assembled sparse forms on one DG space"""
    space: DGSpace
    materials: MaterialMap
    penalties: PenaltyCoefficients
    M_rho: sp.csr_matrix
    M_rho_f: sp.csr_matrix
    M_rho_w: sp.csr_matrix
    B: sp.csr_matrix
    M_T: sp.csr_matrix
    A_e: sp.csr_matrix
    A_p: sp.csr_matrix
    A_T: sp.csr_matrix
    C_u: sp.csr_matrix
    C_w: sp.csr_matrix
    N_e: sp.csr_matrix
    N_p: sp.csr_matrix
    N_T: sp.csr_matrix
    volume_order: int = 0
    face_order: int = 0
    _load_operators: Optional['LoadOperators'] = field(default=None, repr=False)

    @property
    def n_scalar(self) -> int:
        return self.space.n_dofs

    @property
    def n_total(self) -> int:
        return 5 * self.space.n_dofs

    def alpha_diag(self) -> sp.dia_matrix:
        """Biot-Willis coefficient on the vector dofs"""
        return sp.diags(np.tile(self._per_dof('alpha'), 2))

    def _per_dof(self, name: str) -> np.ndarray:
        return np.repeat(self.materials.cell_values(name), self.space.local_dims)

    def load_operators(self) -> 'LoadOperators':
        if self._load_operators is None:
            self._load_operators = LoadOperators(self)
        return self._load_operators


@dataclass
class BlockOperator:
    """Mass, damping and stiffness blocks of the second-order system"""
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    n_scalar: int
    parabolic: bool
    temperature_frozen: bool
    forms: Forms

    @property
    def size(self) -> int:
        return 5 * self.n_scalar

    @property
    def mechanical(self) -> slice:
        return slice(0, 4 * self.n_scalar)

    @property
    def thermal(self) -> slice:
        return slice(4 * self.n_scalar, 5 * self.n_scalar)

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.n_scalar
        return x[:2 * n], x[2 * n:4 * n], x[4 * n:]


@dataclass
class Forcing:
    """Volume sources: f, g return (P, 2) arrays, H returns (P,), all from (points, t)"""
    f: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    g: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    H: Optional[Callable[[np.ndarray, float], np.ndarray]] = None


@dataclass
class BoundaryData:
    """Dirichlet traces and the time derivatives needed by the coupling term"""
    u: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    w: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    T: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    u_t: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    w_t: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    u_tt: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    w_tt: Optional[Callable[[np.ndarray, float], np.ndarray]] = None


@dataclass
class CoercivityEntry:
    name: str
    min_eigenvalue: float
    max_eigenvalue: float
    symmetry_defect: float

    @property
    def coercive(self) -> bool:
        return self.min_eigenvalue >= -1e-10 * abs(self.max_eigenvalue)


# Penalties

def penalty_on_face(space: DGSpace, materials: MaterialMap, face: int, kind: str,
                    alphas: Sequence[float] = DEFAULT_ALPHAS) -> float:
    """alpha_i * max over adjacent cells of coef * l^2 / h (one-sided on the boundary)"""
    if kind not in _PENALTY_COEF:
        raise AssemblyError(f"unknown penalty kind '{kind}'")
    coef_name, index = _PENALTY_COEF[kind]
    f = space.mesh.faces[face]
    coef = materials.cell_values(coef_name)
    cells = [f.owner] if f.is_boundary else [f.owner, f.neighbor]
    values = []
    for k in cells:
        if coef[k] <= 0:
            raise AssemblyError(f"non-positive {coef_name} in cell {k} for penalty {kind}")
        degree = max(int(space.degrees[k]), 1)
        values.append(coef[k] * degree ** 2 / space.mesh.cell_diameter[k])
    return float(alphas[index] * max(values))


def compute_penalties(space: DGSpace, materials: MaterialMap,
                      alphas: Sequence[float] = DEFAULT_ALPHAS) -> PenaltyCoefficients:
    if len(alphas) != 4 or any(a <= 0 for a in alphas):
        raise AssemblyError(f"penalty constants must be four positive numbers, got {alphas}")
    values = {kind: np.array([penalty_on_face(space, materials, f, kind, alphas)
                              for f in range(space.mesh.n_faces)])
              for kind in PENALTY_KINDS}
    return PenaltyCoefficients(alphas=tuple(float(a) for a in alphas), **values)


# Local kernels

def vector_basis(phi: np.ndarray, dphi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vector basis k = a*n + i built from scalar phi_i e_a.

    Returns values (2n, P, 2) and gradients (2n, P, 2, 2), grad[k, p, a, j] = d_j Phi_k,a.
    """
    n, P = phi.shape
    V = np.zeros((2 * n, P, 2))
    G = np.zeros((2 * n, P, 2, 2))
    for a in range(2):
        V[a * n:(a + 1) * n, :, a] = phi
        G[a * n:(a + 1) * n, :, a, :] = dphi
    return V, G


def _strain(G: np.ndarray) -> np.ndarray:
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def _divergence(G: np.ndarray) -> np.ndarray:
    return G[..., 0, 0] + G[..., 1, 1]


def _ip_block(jump: np.ndarray, flux: np.ndarray, w: np.ndarray, penalty: float) -> np.ndarray:
    """Symmetric interior-penalty face block, rows = test, cols = trial"""
    S = np.einsum('kpa,mpa,p->km', jump, flux, w)
    return -S - S.T + penalty * np.einsum('kpa,mpa,p->km', jump, jump, w)


def _penalty_block(jump: np.ndarray, w: np.ndarray, penalty: float) -> np.ndarray:
    return penalty * np.einsum('kpa,mpa,p->km', jump, jump, w)


class _Triplets:
    def __init__(self) -> None:
        self.rows: Dict[str, List[np.ndarray]] = {name: [] for name in FORM_NAMES}
        self.cols: Dict[str, List[np.ndarray]] = {name: [] for name in FORM_NAMES}
        self.vals: Dict[str, List[np.ndarray]] = {name: [] for name in FORM_NAMES}

    def add(self, name: str, rows: np.ndarray, cols: np.ndarray, block: np.ndarray) -> None:
        self.rows[name].append(np.repeat(rows, len(cols)))
        self.cols[name].append(np.tile(cols, len(rows)))
        self.vals[name].append(block.ravel())

    def extend(self, other: '_Triplets') -> None:
        for name in FORM_NAMES:
            self.rows[name].extend(other.rows[name])
            self.cols[name].extend(other.cols[name])
            self.vals[name].extend(other.vals[name])

    def to_csr(self, name: str, shape: Tuple[int, int]) -> sp.csr_matrix:
        if not self.vals[name]:
            return sp.csr_matrix(shape)
        rows = np.concatenate(self.rows[name])
        cols = np.concatenate(self.cols[name])
        vals = np.concatenate(self.vals[name])
        matrix = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
        matrix.sum_duplicates()
        return matrix


class _Assembler:
    def __init__(self, space: DGSpace, materials: MaterialMap,
                 penalties: PenaltyCoefficients, extra_order: int = 0) -> None:
        self.space = space
        self.mesh = space.mesh
        self.materials = materials
        self.penalties = penalties
        self.extra_order = extra_order
        self.coef = {name: materials.cell_values(name)
                     for name in ('mu', 'lambda', 'inv_c0', 'theta', 'c_u', 'c_w')}

    def volume_order(self, cell: int) -> int:
        return 2 * int(self.space.degrees[cell]) + self.extra_order

    def face_order(self, face: int) -> int:
        f = self.mesh.faces[face]
        degree = int(self.space.degrees[f.owner])
        if not f.is_boundary:
            degree = max(degree, int(self.space.degrees[f.neighbor]))
        return 2 * degree + 1 + self.extra_order

    def cells(self, cells: Iterable[int]) -> _Triplets:
        out = _Triplets()
        c = self.coef
        for k in cells:
            rule = self.space.cell_rule(k, self.volume_order(k))
            w = rule.weights
            phi, dphi = self.space.basis_eval(k, rule.points)
            V, G = vector_basis(phi, dphi)
            eps = _strain(G)
            div = _divergence(G)
            scalar = self.space.cell_dofs(k)
            vector = self.space.vector_dofs(k)

            strain_energy = 2.0 * c['mu'][k] * np.einsum('kpaj,mpaj,p->km', eps, eps, w)
            divdiv = np.einsum('kp,mp,p->km', div, div, w)
            gradgrad = np.einsum('ipd,jpd,p->ij', dphi, dphi, w)
            psi_div = np.einsum('ip,mp,p->im', phi, div, w)

            out.add('A_e', vector, vector, strain_energy + c['lambda'][k] * divdiv)
            out.add('A_p', vector, vector, c['inv_c0'][k] * divdiv)
            out.add('A_T', scalar, scalar, c['theta'][k] * gradgrad)
            out.add('C_u', scalar, vector, c['c_u'][k] * psi_div)
            out.add('C_w', scalar, vector, c['c_w'][k] * psi_div)
            out.add('N_e', vector, vector, strain_energy)
            out.add('N_p', vector, vector, c['inv_c0'][k] * divdiv)
            out.add('N_T', scalar, scalar, c['theta'][k] * gradgrad)
        return out

    def faces(self, faces: Iterable[int]) -> _Triplets:
        out = _Triplets()
        c = self.coef
        pen = self.penalties
        for f in faces:
            face = self.mesh.faces[f]
            normal = face.normal
            rule = self.space.face_rule(f, self.face_order(f))
            w = rule.weights
            interior = not face.is_boundary
            avg = 0.5 if interior else 1.0
            sides = [(face.owner, 1.0)]
            if interior:
                sides.append((face.neighbor, -1.0))

            parts: Dict[str, List[np.ndarray]] = {key: [] for key in (
                'jv', 'jn', 'flux_e', 'flux_l', 'flux_p', 'js', 'flux_T', 'avg_cu', 'avg_cw')}
            scalar_dofs, vector_dofs = [], []
            for k, sign in sides:
                phi, dphi = self.space.basis_eval(k, rule.points)
                V, G = vector_basis(phi, dphi)
                div = _divergence(G)
                traction = 2.0 * c['mu'][k] * np.einsum('kpaj,j->kpa', _strain(G), normal)
                parts['jv'].append(sign * V)
                parts['jn'].append((sign * V @ normal)[..., None])
                parts['flux_e'].append(avg * traction)
                parts['flux_l'].append((avg * c['lambda'][k] * div)[..., None])
                parts['flux_p'].append((avg * c['inv_c0'][k] * div)[..., None])
                parts['js'].append((sign * phi)[..., None])
                parts['flux_T'].append((avg * c['theta'][k] * dphi @ normal)[..., None])
                parts['avg_cu'].append(avg * c['c_u'][k] * phi)
                parts['avg_cw'].append(avg * c['c_w'][k] * phi)
                scalar_dofs.append(self.space.cell_dofs(k))
                vector_dofs.append(self.space.vector_dofs(k))

            s = {key: np.concatenate(val, axis=0) for key, val in parts.items()}
            scalar = np.concatenate(scalar_dofs)
            vector = np.concatenate(vector_dofs)
            sigma, xi = pen.sigma[f], pen.xi[f]
            zeta, varrho = pen.zeta[f], pen.varrho[f]

            out.add('A_e', vector, vector,
                    _ip_block(s['jv'], s['flux_e'], w, sigma) + _ip_block(s['jn'], s['flux_l'], w, xi))
            out.add('A_p', vector, vector, _ip_block(s['jn'], s['flux_p'], w, zeta))
            out.add('A_T', scalar, scalar, _ip_block(s['js'], s['flux_T'], w, varrho))
            jn = s['jn'][..., 0]
            out.add('C_u', scalar, vector, -np.einsum('ip,mp,p->im', s['avg_cu'], jn, w))
            out.add('C_w', scalar, vector, -np.einsum('ip,mp,p->im', s['avg_cw'], jn, w))
            out.add('N_e', vector, vector, _penalty_block(s['jv'], w, sigma))
            out.add('N_p', vector, vector, _penalty_block(s['jn'], w, zeta))
            out.add('N_T', scalar, scalar, _penalty_block(s['js'], w, varrho))
        return out


def _chunks(n: int, workers: int) -> List[range]:
    size = max(1, math.ceil(n / max(workers, 1)))
    return [range(start, min(start + size, n)) for start in range(0, n, size)]


def _run(func: Callable[[Iterable[int]], _Triplets], n: int, workers: int) -> _Triplets:
    """Evaluate contiguous index chunks, merging in index order"""
    chunks = _chunks(n, workers)
    merged = _Triplets()
    if workers <= 1 or len(chunks) <= 1:
        for chunk in chunks:
            merged.extend(func(chunk))
        return merged
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for result in pool.map(func, chunks):
            merged.extend(result)
    return merged


def _diag_mass(space: DGSpace, coef: np.ndarray, components: int) -> sp.csr_matrix:
    """Weighted mass of the orthonormal basis: coef_k times the identity per cell"""
    per_dof = np.repeat(coef, space.local_dims)
    return sp.diags(np.tile(per_dof, components)).tocsr()


def assemble_forms(space: DGSpace, materials: MaterialMap,
                   alphas: Sequence[float] = DEFAULT_ALPHAS, workers: int = 1,
                   extra_order: int = 0, verify_quadrature: bool = False) -> Forms:
    """Assemble every bilinear form of the semi-discrete problem.

    With ``verify_quadrature`` the forms are assembled a second time with two
    more quadrature orders and compared entry-wise.
    """
    mesh = space.mesh
    if materials.mesh is not mesh:
        materials.bind(mesh)
    penalties = compute_penalties(space, materials, alphas)
    assembler = _Assembler(space, materials, penalties, extra_order)

    triplets = _run(assembler.cells, mesh.n_cells, workers)
    triplets.extend(_run(assembler.faces, mesh.n_faces, workers))

    n = space.n_dofs
    shapes = {'A_e': (2 * n, 2 * n), 'A_p': (2 * n, 2 * n), 'A_T': (n, n),
              'C_u': (n, 2 * n), 'C_w': (n, 2 * n),
              'N_e': (2 * n, 2 * n), 'N_p': (2 * n, 2 * n), 'N_T': (n, n)}
    matrices = {name: triplets.to_csr(name, shape) for name, shape in shapes.items()}

    forms = Forms(
        space=space, materials=materials, penalties=penalties,
        M_rho=_diag_mass(space, materials.cell_values('rho'), 2),
        M_rho_f=_diag_mass(space, materials.cell_values('rho_f'), 2),
        M_rho_w=_diag_mass(space, materials.cell_values('rho_w'), 2),
        B=_diag_mass(space, materials.cell_values('inv_k'), 2),
        M_T=_diag_mass(space, materials.cell_values('m_T'), 1),
        volume_order=2 * space.max_degree + extra_order,
        face_order=2 * space.max_degree + 1 + extra_order,
        **matrices)
    logger.info("assembled forms: %d cells, %d faces, %d scalar dofs, nnz(A_e)=%d",
                mesh.n_cells, mesh.n_faces, n, forms.A_e.nnz)

    if verify_quadrature:
        check = assemble_forms(space, materials, alphas, workers, extra_order + 2)
        for name in shapes:
            a, b = getattr(forms, name), getattr(check, name)
            scale = max(abs(b).max(), 1e-300)
            diff = abs(a - b).max() / scale if (a - b).nnz else 0.0
            if diff > 1e-10:
                raise QuadratureError(f"{name} changes by {diff:.2e} (relative) when the "
                                      "quadrature order is raised; order too low")
    return forms


def build_block_system(forms: Forms, tau: Optional[float] = None,
                       temperature_frozen: Optional[bool] = None) -> BlockOperator:
    """Block mass/damping/stiffness matrices for X = [U; W; T].

    ``tau`` overrides the materials' relaxation time. With a frozen temperature
    (poroelastic runs) the T rows become an identity in the mass block.
    """
    space = forms.space
    n = space.n_dofs
    if forms.A_e.shape != (2 * n, 2 * n) or forms.C_u.shape != (n, 2 * n):
        raise AssemblyError("forms were assembled on a different dof layout")
    if temperature_frozen is None:
        temperature_frozen = not forms.materials.temperature_coupling
    if tau is None:
        tau_cells = forms.materials.relaxation_time()
    else:
        if tau < 0:
            raise AssemblyError(f"relaxation time must be non-negative, got {tau}")
        tau_cells = np.full(space.mesh.n_cells, float(tau))
    D_tau = sp.diags(np.repeat(tau_cells, space.local_dims))
    D_alpha = forms.alpha_diag()

    Z_vv = sp.csr_matrix((2 * n, 2 * n))
    Z_vs = sp.csr_matrix((2 * n, n))
    Z_sv = sp.csr_matrix((n, 2 * n))
    Z_ss = sp.csr_matrix((n, n))
    A_pa = D_alpha @ forms.A_p

    if temperature_frozen:
        thermal_mass = [Z_sv, Z_sv, sp.identity(n, format='csr')]
        thermal_damping = [Z_sv, Z_sv, Z_ss]
        thermal_stiffness = [Z_sv, Z_sv, Z_ss]
        coupling_u, coupling_w = Z_vs, Z_vs
    else:
        thermal_mass = [D_tau @ forms.C_u, D_tau @ forms.C_w, D_tau @ forms.M_T]
        thermal_damping = [forms.C_u, forms.C_w, forms.M_T]
        thermal_stiffness = [Z_sv, Z_sv, forms.A_T]
        coupling_u, coupling_w = -forms.C_u.T, -forms.C_w.T

    A = sp.bmat([[forms.M_rho, forms.M_rho_f, Z_vs],
                 [forms.M_rho_f, forms.M_rho_w, Z_vs],
                 thermal_mass], format='csr')
    B = sp.bmat([[Z_vv, Z_vv, Z_vs],
                 [Z_vv, forms.B, Z_vs],
                 thermal_damping], format='csr')
    C = sp.bmat([[forms.A_e + A_pa @ D_alpha, A_pa, coupling_u],
                 [forms.A_p @ D_alpha, forms.A_p, coupling_w],
                 thermal_stiffness], format='csr')
    parabolic = (not temperature_frozen) and bool(np.all(tau_cells == 0))
    if parabolic:
        logger.info("tau = 0: thermal rows of the mass block vanish, using the "
                    "Crank-Nicolson coupled scheme")
    return BlockOperator(A=A, B=B, C=C, n_scalar=n, parabolic=parabolic,
                         temperature_frozen=temperature_frozen, forms=forms)


def coercivity_report(forms: Forms) -> List[CoercivityEntry]:
    """Dense eigenvalue bounds of A_e, A_p, A_T (small meshes only)"""
    entries = []
    for name in ('A_e', 'A_p', 'A_T'):
        matrix = getattr(forms, name).toarray()
        scale = max(np.abs(matrix).max(), 1e-300)
        defect = float(np.abs(matrix - matrix.T).max() / scale)
        eigenvalues = scipy.linalg.eigh(0.5 * (matrix + matrix.T), eigvals_only=True)
        entries.append(CoercivityEntry(name=name, min_eigenvalue=float(eigenvalues[0]),
                                       max_eigenvalue=float(eigenvalues[-1]),
                                       symmetry_defect=defect))
        logger.info("%s: eigenvalues in [%.4g, %.4g], symmetry defect %.2e",
                    name, eigenvalues[0], eigenvalues[-1], defect)
    return entries




def _stack(parts: List[Tuple[np.ndarray, np.ndarray, np.ndarray]], shape: Tuple[int, int]) -> sp.csr_matrix:
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


class LoadOperators:
    """Sparse maps from point samples of forcing and boundary data to load vectors.

    Volume data are sampled on the concatenated cell quadrature points, boundary
    data on the concatenated boundary-face points. Vector samples are flattened
    row-major, so component a of point p sits at column 2p + a.
    """

    def __init__(self, forms: Forms) -> None:
        space = forms.space
        mesh = space.mesh
        n = space.n_dofs
        coef = {name: forms.materials.cell_values(name)
                for name in ('mu', 'lambda', 'inv_c0', 'theta', 'c_u', 'c_w', 'alpha', 'tau')}
        self.alpha = forms.alpha_diag()

        volume, points, offset = [], [], 0
        for k in range(mesh.n_cells):
            rule = space.cell_rule(k, 2 * int(space.degrees[k]) + 4)
            phi, _ = space.basis_eval(k, rule.points)
            dofs = space.cell_dofs(k)
            n_pts = len(rule.weights)
            volume.append((np.repeat(dofs, n_pts),
                           np.tile(np.arange(offset, offset + n_pts), len(dofs)),
                           (phi * rule.weights).ravel()))
            points.append(rule.points)
            offset += n_pts
        self.volume_points = np.concatenate(points)
        self.volume = _stack(volume, (n, offset))

        q_u, q_p, q_T, q_c = [], [], [], []
        points, normals, c_u, c_w, tau = [], [], [], [], []
        offset = 0
        for f in mesh.boundary_faces:
            face = mesh.faces[f]
            k = face.owner
            rule = space.face_rule(f, 2 * int(space.degrees[k]) + 4)
            w = rule.weights
            nrm = face.normal
            n_pts = len(w)
            phi, dphi = space.basis_eval(k, rule.points)
            V, G = vector_basis(phi, dphi)
            div = _divergence(G)
            v_n = V @ nrm
            traction = 2.0 * coef['mu'][k] * np.einsum('kpaj,j->kpa', _strain(G), nrm)
            pen = forms.penalties
            # -(g x n) : 2 mu eps(v) + sigma g.v - (g.n) lambda div v + xi (g.n)(v.n)
            ker_u = (-traction + pen.sigma[f] * V
                     + (-coef['lambda'][k] * div + pen.xi[f] * v_n)[..., None] * nrm)
            # pressure form on d = alpha g_u + g_w: -(d.n) div(chi)/c0 + zeta (d.n)(chi.n)
            ker_p = (-coef['inv_c0'][k] * div + pen.zeta[f] * v_n)[..., None] * nrm
            ker_T = -coef['theta'][k] * (dphi @ nrm) + pen.varrho[f] * phi

            vector = space.vector_dofs(k)
            scalar = space.cell_dofs(k)
            vec_cols = (2 * (offset + np.arange(n_pts))[:, None] + np.arange(2)[None, :]).ravel()
            sca_cols = offset + np.arange(n_pts)
            q_u.append((np.repeat(vector, 2 * n_pts), np.tile(vec_cols, len(vector)),
                        (ker_u * w[None, :, None]).ravel()))
            q_p.append((np.repeat(vector, 2 * n_pts), np.tile(vec_cols, len(vector)),
                        (ker_p * w[None, :, None]).ravel()))
            q_T.append((np.repeat(scalar, n_pts), np.tile(sca_cols, len(scalar)),
                        (ker_T * w).ravel()))
            q_c.append((np.repeat(scalar, n_pts), np.tile(sca_cols, len(scalar)),
                        (phi * w).ravel()))
            points.append(rule.points)
            normals.append(np.tile(nrm, (n_pts, 1)))
            c_u.append(np.full(n_pts, coef['c_u'][k]))
            c_w.append(np.full(n_pts, coef['c_w'][k]))
            tau.append(np.full(n_pts, coef['tau'][k]))
            offset += n_pts

        self.n_boundary_points = offset
        if offset:
            self.boundary_points = np.concatenate(points)
            self.boundary_normals = np.concatenate(normals)
            self.boundary_alpha = np.concatenate(
                [np.full(len(p), coef['alpha'][mesh.faces[f].owner])
                 for f, p in zip(mesh.boundary_faces, points)])
            self.boundary_c_u = np.concatenate(c_u)
            self.boundary_c_w = np.concatenate(c_w)
            self.boundary_tau = np.concatenate(tau)
            self.Q_u = _stack(q_u, (2 * n, 2 * offset))
            self.Q_p = _stack(q_p, (2 * n, 2 * offset))
            self.Q_T = _stack(q_T, (n, offset))
            self.Q_c = _stack(q_c, (n, offset))

    def pair_vector(self, values: np.ndarray) -> np.ndarray:
        """L2 pairing of (P, 2) volume samples with the vector basis"""
        return np.concatenate([self.volume @ values[:, 0], self.volume @ values[:, 1]])

    def pair_scalar(self, values: np.ndarray) -> np.ndarray:
        return self.volume @ values


def _sample(func: Optional[Callable], points: np.ndarray, t: float, shape: Tuple[int, ...]) -> np.ndarray:
    if func is None:
        return np.zeros(shape)
    values = np.asarray(func(points, t), dtype=float)
    if values.shape != shape:
        values = np.broadcast_to(values, shape)
    return values


def assemble_load(t: float, forms: Forms, forcing: Optional[Forcing] = None,
                  sources: Sequence = (), boundary: Optional[BoundaryData] = None) -> np.ndarray:
    """Right-hand side [F; G; H] at time t.

    ``sources`` are point sources exposing ``target`` and
    ``contribution(space, t)`` (a vector-field load). ``boundary=None`` means
    homogeneous Dirichlet data.
    """
    n = forms.n_scalar
    ops = forms.load_operators()
    F = np.zeros(2 * n)
    G = np.zeros(2 * n)
    H = np.zeros(n)

    if forcing is not None:
        P = len(ops.volume_points)
        if forcing.f is not None:
            F += ops.pair_vector(_sample(forcing.f, ops.volume_points, t, (P, 2)))
        if forcing.g is not None:
            G += ops.pair_vector(_sample(forcing.g, ops.volume_points, t, (P, 2)))
        if forcing.H is not None:
            H += ops.pair_scalar(_sample(forcing.H, ops.volume_points, t, (P,)))

    for src in sources:
        contribution = src.contribution(forms.space, t)
        if contribution.shape != (2 * n,):
            raise AssemblyError(f"source contribution has shape {contribution.shape}, "
                                f"expected ({2 * n},)")
        if src.target in ('f', 'both'):
            F += contribution
        if src.target in ('g', 'both'):
            G += contribution

    if boundary is not None and ops.n_boundary_points:
        pts = ops.boundary_points
        P = len(pts)
        g_u = _sample(boundary.u, pts, t, (P, 2))
        g_w = _sample(boundary.w, pts, t, (P, 2))
        F += ops.Q_u @ g_u.ravel()
        pressure = ops.Q_p @ (ops.boundary_alpha[:, None] * g_u + g_w).ravel()
        F += ops.alpha @ pressure
        G += pressure
        if boundary.T is not None:
            H += ops.Q_T @ _sample(boundary.T, pts, t, (P,))
        rate_u = (_sample(boundary.u_t, pts, t, (P, 2))
                  + ops.boundary_tau[:, None] * _sample(boundary.u_tt, pts, t, (P, 2)))
        rate_w = (_sample(boundary.w_t, pts, t, (P, 2))
                  + ops.boundary_tau[:, None] * _sample(boundary.w_tt, pts, t, (P, 2)))
        flux = (ops.boundary_c_u * np.einsum('pa,pa->p', rate_u, ops.boundary_normals)
                + ops.boundary_c_w * np.einsum('pa,pa->p', rate_w, ops.boundary_normals))
        H -= ops.Q_c @ flux

    if not forms.materials.temperature_coupling:
        H[:] = 0.0
    return np.concatenate([F, G, H])
