#!/usr/bin/env python3
"""
Discontinuous Polynomial Spaces
Per-cell modal bases (bounding-box scaled monomials, orthonormalized on the
cell), quadrature on polygons and faces, basis evaluation and L2 projection.

Scalar fields store ``n_dofs`` coefficients, cell by cell. Vector fields are
component-major: the x-component block followed by the y-component block.
"""

import logging
import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import roots_jacobi

from poly_mesh import PolyMesh
from tpe_errors import MeshError, QuadratureError

logger = logging.getLogger(__name__)

MAX_QUADRATURE_ORDER = 40
REPROJECTION_TOL = 1e-10


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (n, 2) physical coordinates
    weights: np.ndarray  # (n,)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    @property
    def measure(self) -> float:
        return float(self.weights.sum())


def _check_order(order: int) -> None:
    if order < 0:
        raise QuadratureError(f"quadrature order must be non-negative, got {order}")
    if order > MAX_QUADRATURE_ORDER:
        raise QuadratureError(f"quadrature order {order} exceeds the maximum "
                              f"{MAX_QUADRATURE_ORDER}")


@lru_cache(maxsize=None)
def reference_triangle_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Jacobi rule on the triangle (0,0), (1,0), (0,1).

    Exact for total degree <= order; weights sum to 1/2.
    """
    _check_order(order)
    n = max(1, math.ceil((order + 1) / 2))
    xi, wj = roots_jacobi(n, 1.0, 0.0)
    eta, wl = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (1.0 + xi)
    t = 0.5 * (1.0 + eta)
    S, T = np.meshgrid(s, t, indexing='ij')
    W = np.outer(wj / 4.0, wl / 2.0)
    points = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
    return points, W.ravel()


@lru_cache(maxsize=None)
def reference_segment_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on [0, 1]"""
    _check_order(order)
    n = max(1, math.ceil((order + 1) / 2))
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (1.0 + x), 0.5 * w


def triangle_quadrature(triangles: np.ndarray, order: int) -> QuadratureRule:
    """Map the reference rule onto an (n, 3, 2) stack of triangles"""
    ref_pts, ref_w = reference_triangle_rule(order)
    v0 = triangles[:, 0]
    e1 = triangles[:, 1] - v0
    e2 = triangles[:, 2] - v0
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = (v0[:, None, :] + ref_pts[None, :, 0:1] * e1[:, None, :]
           + ref_pts[None, :, 1:2] * e2[:, None, :])
    weights = 2.0 * area[:, None] * ref_w[None, :]
    return QuadratureRule(points=pts.reshape(-1, 2), weights=weights.ravel())


def segment_quadrature(a: np.ndarray, b: np.ndarray, order: int) -> QuadratureRule:
    ref_x, ref_w = reference_segment_rule(order)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.hypot(*(b - a)))
    points = a[None, :] + ref_x[:, None] * (b - a)[None, :]
    return QuadratureRule(points=points, weights=ref_w * length)


def element_quadrature(mesh: PolyMesh, cell: int, order: int) -> QuadratureRule:
    """Quadrature exact to total degree ``order`` on a polygonal cell"""
    sub = mesh.subtriangulation(cell)
    return triangle_quadrature(sub.points, order)


def face_quadrature(mesh: PolyMesh, face: int, order: int) -> QuadratureRule:
    if not (0 <= face < mesh.n_faces):
        raise MeshError(f"face index {face} out of range [0, {mesh.n_faces})")
    a, b = mesh.face_points(face)
    return segment_quadrature(a, b, order)


@lru_cache(maxsize=None)
def monomial_exponents(degree: int) -> np.ndarray:
    """(a, b) exponent pairs ordered by total degree, then by power of y"""
    return np.array([(d - j, j) for d in range(degree + 1) for j in range(d + 1)], dtype=int)


def local_dimension(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


class DGSpace:
    """Discontinuous piecewise-polynomial space of per-cell degree l_k"""

    def __init__(self, mesh: PolyMesh, degree: Union[int, Sequence[int]]) -> None:
        self.mesh = mesh
        if np.isscalar(degree):
            degrees = np.full(mesh.n_cells, int(degree), dtype=int)
        else:
            degrees = np.asarray(degree, dtype=int)
            if degrees.shape != (mesh.n_cells,):
                raise MeshError(f"{len(degrees)} degrees given for {mesh.n_cells} cells")
        if np.any(degrees < 0):
            raise MeshError("polynomial degree must be non-negative")
        self.degrees = degrees
        self.local_dims = np.array([local_dimension(d) for d in degrees], dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(self.local_dims)]).astype(int)
        self.n_dofs = int(self.offsets[-1])

        self._lock = threading.Lock()
        self._quadrature_cache: Dict[Tuple[str, int, int], QuadratureRule] = {}
        self._centers = np.empty((mesh.n_cells, 2))
        self._half_widths = np.empty((mesh.n_cells, 2))
        self._coefficients: List[np.ndarray] = []
        for k in range(mesh.n_cells):
            xmin, ymin, xmax, ymax = mesh.cell_bbox[k]
            self._centers[k] = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax))
            self._half_widths[k] = (0.5 * (xmax - xmin), 0.5 * (ymax - ymin))
            self._coefficients.append(self._orthonormalize(k))
        logger.debug("DG space: %d cells, %d scalar dofs, degrees %d..%d",
                     mesh.n_cells, self.n_dofs, degrees.min(), degrees.max())

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max())

    def cell_dofs(self, cell: int) -> np.ndarray:
        self._check_cell(cell)
        return np.arange(self.offsets[cell], self.offsets[cell + 1])

    def vector_dofs(self, cell: int) -> np.ndarray:
        """Global indices of the 2*n_k vector basis functions, component-major"""
        scalar = self.cell_dofs(cell)
        return np.concatenate([scalar, scalar + self.n_dofs])

    def _check_cell(self, cell: int) -> None:
        if not (0 <= cell < self.mesh.n_cells):
            raise MeshError(f"cell index {cell} out of range [0, {self.mesh.n_cells})")

    # Quadrature with caching
    def cell_rule(self, cell: int, order: int) -> QuadratureRule:
        key = ('cell', cell, order)
        rule = self._quadrature_cache.get(key)
        if rule is None:
            rule = element_quadrature(self.mesh, cell, order)
            with self._lock:
                self._quadrature_cache[key] = rule
        return rule

    def face_rule(self, face: int, order: int) -> QuadratureRule:
        key = ('face', face, order)
        rule = self._quadrature_cache.get(key)
        if rule is None:
            rule = face_quadrature(self.mesh, face, order)
            with self._lock:
                self._quadrature_cache[key] = rule
        return rule

    # Basis
    def _monomials(self, cell: int, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        exps = monomial_exponents(int(self.degrees[cell]))
        scale = self._half_widths[cell]
        xh = (points[:, 0] - self._centers[cell, 0]) / scale[0]
        yh = (points[:, 1] - self._centers[cell, 1]) / scale[1]
        a = exps[:, 0][:, None]
        b = exps[:, 1][:, None]
        xa = xh[None, :] ** a
        yb = yh[None, :] ** b
        values = xa * yb
        dxa = np.where(a > 0, a * xh[None, :] ** np.maximum(a - 1, 0), 0.0)
        dyb = np.where(b > 0, b * yh[None, :] ** np.maximum(b - 1, 0), 0.0)
        grads = np.stack([dxa * yb / scale[0], xa * dyb / scale[1]], axis=-1)
        return values, grads

    def _orthonormalize(self, cell: int) -> np.ndarray:
        """Modified Gram-Schmidt (two passes) of the scaled monomials.

        Returns C with phi_i = sum_j C[i, j] m_j.
        """
        degree = int(self.degrees[cell])
        rule = element_quadrature(self.mesh, cell, 2 * degree)
        mono, _ = self._monomials(cell, rule.points)
        n = mono.shape[0]
        coeffs = np.eye(n)
        vals = mono.copy()
        w = rule.weights
        for i in range(n):
            for _ in range(2):
                for j in range(i):
                    proj = np.dot(vals[i] * w, vals[j])
                    vals[i] -= proj * vals[j]
                    coeffs[i] -= proj * coeffs[j]
            norm = math.sqrt(np.dot(vals[i] * w, vals[i]))
            if norm <= 1e-14 * math.sqrt(rule.measure):
                raise MeshError(f"basis of cell {cell} is numerically rank deficient")
            vals[i] /= norm
            coeffs[i] /= norm
        return coeffs

    def basis_eval(self, cell: int, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Values (n_k, n_pts) and gradients (n_k, n_pts, 2) of the cell basis"""
        self._check_cell(cell)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mono, dmono = self._monomials(cell, pts)
        C = self._coefficients[cell]
        return C @ mono, np.einsum('ij,jpd->ipd', C, dmono)

    def evaluate(self, coeffs: np.ndarray, cell: int, points: np.ndarray,
                 components: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """Field values and gradients at points of one cell.

        Scalar: (n_pts,), (n_pts, 2). Vector: (n_pts, 2), (n_pts, 2, 2) with
        grad[p, a, j] = d u_a / d x_j.
        """
        phi, dphi = self.basis_eval(cell, points)
        dofs = self.cell_dofs(cell)
        if components == 1:
            c = coeffs[dofs]
            return c @ phi, np.einsum('i,ipd->pd', c, dphi)
        c = np.stack([coeffs[dofs + a * self.n_dofs] for a in range(components)])
        return (c @ phi).T, np.einsum('ai,ipd->pad', c, dphi)

    def mass_matrix(self, cell: int, order: Optional[int] = None) -> np.ndarray:
        degree = int(self.degrees[cell])
        rule = self.cell_rule(cell, 2 * degree if order is None else order)
        phi, _ = self.basis_eval(cell, rule.points)
        return (phi * rule.weights) @ phi.T


def l2_project(f: Callable[[np.ndarray], np.ndarray], space: DGSpace,
               components: int = 1, order: Optional[int] = None) -> np.ndarray:
    """Element-wise L2 projection of a callable field.

    ``f`` maps an (n, 2) array of points to (n,) values, or (n, components)
    for vector fields. Quadrature order defaults to 2*l_k + 4 per cell.
    """
    coeffs = np.zeros(components * space.n_dofs)
    for k in range(space.mesh.n_cells):
        degree = int(space.degrees[k])
        q = 2 * degree + 4 if order is None else order
        rule = space.cell_rule(k, q)
        phi, _ = space.basis_eval(k, rule.points)
        values = np.asarray(f(rule.points), dtype=float)
        if components == 1:
            values = values.reshape(-1, 1)
        if values.shape != (len(rule.weights), components):
            raise QuadratureError(f"field returned shape {values.shape}, expected "
                                  f"({len(rule.weights)}, {components})")
        # orthonormal basis: the local mass matrix is the identity
        local = (phi * rule.weights) @ values
        mass = (phi * rule.weights) @ phi.T
        defect = np.abs(mass - np.eye(len(mass))).max()
        if defect > REPROJECTION_TOL:
            raise QuadratureError(f"order {q} quadrature cannot reproduce degree {degree} "
                                  f"fields on cell {k} (re-projection defect {defect:.2e})")
        dofs = space.cell_dofs(k)
        for a in range(components):
            coeffs[dofs + a * space.n_dofs] = local[:, a]
    return coeffs
