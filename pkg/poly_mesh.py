#!/usr/bin/env python3
"""
Polygonal Mesh for the PolyDG Simulator
Loads, validates and queries 2D polytopal meshes: face topology, outward
normals, sub-triangulations, point location and regularity diagnostics.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import Voronoi

from tpe_errors import MeshError

logger = logging.getLogger(__name__)

BOUNDARY = -1
MESH_FORMATS = ('tpe-text',)

# Relative tolerances used by the geometric predicates
AREA_TOL = 1e-10
COLLINEAR_TOL = 1e-12
HANGING_TOL = 1e-9
VORONOI_SNAP = 1e-10


@dataclass(frozen=True)
class Face:
    """A mesh edge with its owner/neighbor cells and owner-outward normal"""
    vertices: Tuple[int, int]
    owner: int
    neighbor: int
    normal: np.ndarray
    measure: float

    @property
    def is_boundary(self) -> bool:
        return self.neighbor == BOUNDARY


@dataclass(frozen=True)
class SubTriangulation:
    cell: int
    triangles: List[Tuple[int, int, int]]
    points: np.ndarray  # (n_triangles, 3, 2)

    @property
    def areas(self) -> np.ndarray:
        return triangle_areas(self.points)


@dataclass(frozen=True)
class ElementGeometry:
    diameter: float
    area: float
    centroid: np.ndarray
    bbox: Tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


@dataclass
class RegularityReport:
    """Per-cell worst ratio d*|S_F| / (h*|F|) over the faces of each cell"""
    ratios: np.ndarray
    threshold: float
    minimum: float = 0.0
    median: float = 0.0
    flagged: List[int] = field(default_factory=list)

    def summary(self) -> str:
        return (f"regularity min={self.minimum:.4g} median={self.median:.4g} "
                f"flagged={len(self.flagged)} (threshold {self.threshold})")


def polygon_area(points: np.ndarray) -> float:
    """Signed shoelace area, positive for counter-clockwise loops"""
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(points: np.ndarray) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def polygon_diameter(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=-1)).max())


def triangle_areas(points: np.ndarray) -> np.ndarray:
    """Signed areas of an (n, 3, 2) stack of triangles"""
    a = points[:, 1] - points[:, 0]
    b = points[:, 2] - points[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(points: np.ndarray) -> bool:
    n = len(points)
    for i in range(n):
        for j in range(i + 1, n):
            # adjacent edges share a vertex
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(points[i], points[(i + 1) % n],
                                   points[j], points[(j + 1) % n]):
                return False
    return True


def _drop_collinear(loop: List[int], coords: np.ndarray, scale: float) -> List[int]:
    """Remove vertices lying on the segment joining their neighbours"""
    kept = list(loop)
    changed = True
    while changed and len(kept) > 3:
        changed = False
        for i in range(len(kept)):
            a = coords[kept[i - 1]]
            b = coords[kept[i]]
            c = coords[kept[(i + 1) % len(kept)]]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if abs(cross) <= COLLINEAR_TOL * scale * scale:
                del kept[i]
                changed = True
                break
    return kept


def _ear_clip(loop: List[int], coords: np.ndarray, scale: float) -> List[Tuple[int, int, int]]:
    """Ear-clipping triangulation of a simple counter-clockwise polygon"""
    remaining = list(loop)
    triangles = []
    guard = 0
    while len(remaining) > 3:
        guard += 1
        if guard > 10 * len(loop) ** 2:
            raise MeshError("ear clipping failed to converge (polygon not simple?)")
        n = len(remaining)
        for i in range(n):
            ia, ib, ic = remaining[i - 1], remaining[i], remaining[(i + 1) % n]
            a, b, c = coords[ia], coords[ib], coords[ic]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= COLLINEAR_TOL * scale * scale:
                continue  # reflex or flat corner
            tri = np.array([a, b, c])
            is_ear = True
            for other in remaining:
                if other in (ia, ib, ic):
                    continue
                if _point_in_triangle(coords[other], tri):
                    is_ear = False
                    break
            if is_ear:
                triangles.append((ia, ib, ic))
                del remaining[i]
                break
        else:
            raise MeshError("no ear found; polygon is not simple")
    triangles.append(tuple(remaining))
    return triangles


def _point_in_triangle(p: np.ndarray, tri: np.ndarray) -> bool:
    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    d1 = cross(tri[0], tri[1], p)
    d2 = cross(tri[1], tri[2], p)
    d3 = cross(tri[2], tri[0], p)
    return d1 >= 0 and d2 >= 0 and d3 >= 0


class PolyMesh:
    """Immutable polygonal mesh with face topology and per-cell geometry"""

    def __init__(self, vertices: Sequence[Sequence[float]], cells: Sequence[Sequence[int]],
                 regions: Optional[Sequence[int]] = None) -> None:
        self.vertices = np.asarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        self.cells: List[Tuple[int, ...]] = [tuple(int(v) for v in c) for c in cells]
        if not self.cells:
            raise MeshError("mesh has no cells")
        if regions is None:
            regions = [1] * len(self.cells)
        if len(regions) != len(self.cells):
            raise MeshError(f"{len(regions)} region tags for {len(self.cells)} cells")
        self.region_tags = np.asarray(regions, dtype=int)

        self._build_geometry()
        self._build_faces()
        self._check_conforming_boundary()
        self._check_domain_area()
        self.vertices.setflags(write=False)
        self._subtriangulations: Dict[int, SubTriangulation] = {}

    # Construction
    def _build_geometry(self) -> None:
        n = len(self.cells)
        self.cell_area = np.empty(n)
        self.cell_diameter = np.empty(n)
        self.cell_centroid = np.empty((n, 2))
        self.cell_bbox = np.empty((n, 4))
        for k, loop in enumerate(self.cells):
            if len(loop) < 3:
                raise MeshError(f"cell {k} has {len(loop)} vertices; at least 3 required")
            if len(set(loop)) != len(loop):
                raise MeshError(f"cell {k} repeats a vertex")
            if min(loop) < 0 or max(loop) >= len(self.vertices):
                raise MeshError(f"cell {k} references a missing vertex")
            pts = self.vertices[list(loop)]
            area = polygon_area(pts)
            diameter = polygon_diameter(pts)
            if area <= AREA_TOL * diameter * diameter:
                raise MeshError(f"cell {k} is degenerate or clockwise (area {area:.3e})")
            if len(loop) > 3 and not _is_simple(pts):
                raise MeshError(f"cell {k} is self-intersecting")
            self.cell_area[k] = area
            self.cell_diameter[k] = diameter
            self.cell_centroid[k] = polygon_centroid(pts)
            self.cell_bbox[k] = (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())

    def _build_faces(self) -> None:
        edge_map: Dict[Tuple[int, int], int] = {}
        self.faces: List[Face] = []
        self.cell_faces: List[List[int]] = [[] for _ in self.cells]
        owners: List[int] = []
        neighbors: List[int] = []
        directed: List[Tuple[int, int]] = []
        for k, loop in enumerate(self.cells):
            n = len(loop)
            for i in range(n):
                a, b = loop[i], loop[(i + 1) % n]
                key = (min(a, b), max(a, b))
                if key not in edge_map:
                    edge_map[key] = len(owners)
                    owners.append(k)
                    neighbors.append(BOUNDARY)
                    directed.append((a, b))
                else:
                    f = edge_map[key]
                    if neighbors[f] != BOUNDARY:
                        raise MeshError(f"edge {key} shared by more than two cells "
                                        f"({owners[f]}, {neighbors[f]}, {k})")
                    if directed[f] != (b, a):
                        raise MeshError(f"cells {owners[f]} and {k} traverse edge {key} "
                                        "in the same direction (inconsistent orientation)")
                    neighbors[f] = k
                self.cell_faces[k].append(edge_map[key])

        for f, (a, b) in enumerate(directed):
            d = self.vertices[b] - self.vertices[a]
            length = float(np.hypot(d[0], d[1]))
            if length <= 0.0:
                raise MeshError(f"face {f} has zero length")
            normal = np.array([d[1], -d[0]]) / length
            normal.setflags(write=False)
            self.faces.append(Face(vertices=(a, b), owner=owners[f], neighbor=neighbors[f],
                                   normal=normal, measure=length))
        self.internal_faces = [f for f, face in enumerate(self.faces) if not face.is_boundary]
        self.boundary_faces = [f for f, face in enumerate(self.faces) if face.is_boundary]
        logger.debug("mesh: %d cells, %d internal faces, %d boundary faces",
                     self.n_cells, len(self.internal_faces), len(self.boundary_faces))

    def _check_domain_area(self) -> None:
        # area enclosed by the boundary faces (divergence theorem on owner-oriented edges)
        enclosed = 0.0
        for f in self.boundary_faces:
            a, b = self.faces[f].vertices
            pa, pb = self.vertices[a], self.vertices[b]
            enclosed += 0.5 * (pa[0] * pb[1] - pb[0] * pa[1])
        total = float(self.cell_area.sum())
        if abs(total - enclosed) > AREA_TOL * max(abs(enclosed), 1e-300):
            raise MeshError(f"cell areas sum to {total:.12g} but the boundary encloses "
                            f"{enclosed:.12g}; cells overlap or leave gaps")
        self.domain_area = enclosed

    def _check_conforming_boundary(self) -> None:
        # a vertex strictly inside a boundary face means two cells meet that
        # face at a hanging node and the face pairing silently failed
        ids = np.unique([v for f in self.boundary_faces for v in self.faces[f].vertices])
        pts = self.vertices[ids]
        for f in self.boundary_faces:
            face = self.faces[f]
            a, b = face.vertices
            rel = pts - self.vertices[a]
            d = self.vertices[b] - self.vertices[a]
            along = rel @ d / (face.measure * face.measure)
            off = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / face.measure
            inner = (along > HANGING_TOL) & (along < 1.0 - HANGING_TOL) & \
                (off <= HANGING_TOL * face.measure)
            if np.any(inner):
                v = int(ids[np.flatnonzero(inner)[0]])
                raise MeshError(f"vertex {v} lies inside face {f} ({a}, {b}) of cell {face.owner}: "
                                "hanging node; list the vertex in that cell as well")

    # Queries
    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def max_diameter(self) -> float:
        return float(self.cell_diameter.max())

    @property
    def regions(self) -> List[int]:
        return sorted(set(int(r) for r in self.region_tags))

    def cell_points(self, cell: int) -> np.ndarray:
        self._check_cell(cell)
        return self.vertices[list(self.cells[cell])]

    def face_points(self, face: int) -> np.ndarray:
        a, b = self.faces[face].vertices
        return self.vertices[[a, b]]

    def outward_normal(self, face: int, cell: int) -> np.ndarray:
        """Unit normal of a face pointing out of the given adjacent cell"""
        f = self.faces[face]
        if cell == f.owner:
            return f.normal
        if cell == f.neighbor:
            return -f.normal
        raise MeshError(f"cell {cell} is not adjacent to face {face}")

    def bounding_box(self) -> Tuple[float, float, float, float]:
        v = self.vertices
        return float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max())

    def _check_cell(self, cell: int) -> None:
        if not (0 <= cell < self.n_cells):
            raise MeshError(f"cell index {cell} out of range [0, {self.n_cells})")

    def subtriangulation(self, cell: int) -> SubTriangulation:
        if cell not in self._subtriangulations:
            self._subtriangulations[cell] = sub_triangulate(self, cell)
        return self._subtriangulations[cell]

    def locate_points(self, points: np.ndarray, tol: float = 1e-10) -> Tuple[np.ndarray, np.ndarray]:
        """Owning cell of each point (lowest index wins) and how many cells claim it.

        A point on a face or vertex is claimed by every adjacent cell; a hit
        count above one signals a tie.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        owner = np.full(len(pts), BOUNDARY, dtype=int)
        hits = np.zeros(len(pts), dtype=int)
        for k in range(self.n_cells):
            xmin, ymin, xmax, ymax = self.cell_bbox[k]
            slack = tol * self.cell_diameter[k]
            cand = np.nonzero((pts[:, 0] >= xmin - slack) & (pts[:, 0] <= xmax + slack) &
                              (pts[:, 1] >= ymin - slack) & (pts[:, 1] <= ymax + slack))[0]
            if cand.size == 0:
                continue
            inside = _points_in_polygon(pts[cand], self.cell_points(k), slack)
            sel = cand[inside]
            hits[sel] += 1
            fresh = sel[owner[sel] == BOUNDARY]
            owner[fresh] = k
        return owner, hits

    def locate_point(self, point: Sequence[float]) -> int:
        owner, hits = self.locate_points(np.asarray(point, dtype=float)[None, :])
        if owner[0] == BOUNDARY:
            raise MeshError(f"point {tuple(point)} lies outside the mesh")
        if hits[0] > 1:
            logger.warning("point %s lies on a face or vertex shared by %d cells; "
                           "assigned to cell %d", tuple(point), hits[0], owner[0])
        return int(owner[0])


def _points_in_polygon(pts: np.ndarray, poly: np.ndarray, tol: float) -> np.ndarray:
    """Even-odd test, with points within tol of an edge counted as inside"""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide='ignore', invalid='ignore'):
            x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < x_at)
        # distance to segment
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        t = np.clip(((x - x1) * dx + (y - y1) * dy) / seg2, 0.0, 1.0)
        dist = np.hypot(x - (x1 + t * dx), y - (y1 + t * dy))
        on_edge |= dist <= tol
    return inside | on_edge


def element_geometry(mesh: PolyMesh, cell: int) -> ElementGeometry:
    mesh._check_cell(cell)
    xmin, ymin, xmax, ymax = (float(v) for v in mesh.cell_bbox[cell])
    return ElementGeometry(diameter=float(mesh.cell_diameter[cell]),
                           area=float(mesh.cell_area[cell]),
                           centroid=mesh.cell_centroid[cell].copy(),
                           bbox=(xmin, ymin, xmax, ymax))


def sub_triangulate(mesh: PolyMesh, cell: int) -> SubTriangulation:
    """Fan triangulation for convex cells, ear clipping otherwise"""
    mesh._check_cell(cell)
    loop = list(mesh.cells[cell])
    scale = float(mesh.cell_diameter[cell])
    loop = _drop_collinear(loop, mesh.vertices, scale)
    if len(loop) < 3:
        raise MeshError(f"cell {cell} is a collinear polygon")
    pts = mesh.vertices[loop]
    edges = np.roll(pts, -1, axis=0) - pts
    turn = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
    if np.all(turn > 0):
        triangles = [(loop[0], loop[i], loop[i + 1]) for i in range(1, len(loop) - 1)]
    else:
        triangles = _ear_clip(loop, mesh.vertices, scale)
    points = np.array([[mesh.vertices[i] for i in tri] for tri in triangles])
    areas = triangle_areas(points)
    if np.any(areas <= 0.0):
        raise MeshError(f"cell {cell} produced a degenerate sub-triangle")
    if abs(areas.sum() - mesh.cell_area[cell]) > 1e-12 * mesh.cell_area[cell] * len(triangles):
        raise MeshError(f"sub-triangulation of cell {cell} does not cover the cell")
    return SubTriangulation(cell=cell, triangles=triangles, points=points)


def regularity_report(mesh: PolyMesh, threshold: float = 0.05) -> RegularityReport:
    """Worst per-cell ratio of the polytopic-regularity condition.

    The simplex S_F attached to a face is the triangle spanned by the face
    and the cell centroid.
    """
    dim = 2
    ratios = np.empty(mesh.n_cells)
    for k in range(mesh.n_cells):
        c = mesh.cell_centroid[k]
        h = mesh.cell_diameter[k]
        worst = math.inf
        for f in mesh.cell_faces[k]:
            a, b = mesh.face_points(f)
            area_s = abs(0.5 * ((a[0] - c[0]) * (b[1] - c[1]) - (a[1] - c[1]) * (b[0] - c[0])))
            worst = min(worst, dim * area_s / (h * mesh.faces[f].measure))
        ratios[k] = worst
    report = RegularityReport(ratios=ratios, threshold=threshold,
                              minimum=float(ratios.min()), median=float(np.median(ratios)),
                              flagged=[int(k) for k in np.nonzero(ratios < threshold)[0]])
    if report.flagged:
        logger.warning("%d cells below regularity threshold %.3g (worst %.3g)",
                       len(report.flagged), threshold, report.minimum)
    return report


def cartesian_grid(nx: int, ny: int, x_range: Tuple[float, float] = (0.0, 1.0),
                   y_range: Tuple[float, float] = (0.0, 1.0),
                   region_boxes: Optional[List[Dict]] = None) -> PolyMesh:
    """Structured quadrilateral grid; regions assigned by axis-aligned boxes.

    Each box is a dict with a ``tag`` and optional ``x_range``/``y_range``;
    later boxes override earlier ones, cells outside every box get tag 1.
    """
    if nx < 1 or ny < 1:
        raise MeshError("grid needs at least one cell per direction")
    xs = np.linspace(x_range[0], x_range[1], nx + 1)
    ys = np.linspace(y_range[0], y_range[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing='xy')
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    cells = []
    centers = []
    for j in range(ny):
        for i in range(nx):
            cells.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)))
            centers.append((0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])))
    return PolyMesh(vertices, cells, tag_by_boxes(np.array(centers), region_boxes))


def tag_by_boxes(centers: np.ndarray, region_boxes: Optional[List[Dict]] = None) -> np.ndarray:
    """Region tag per cell centre; later boxes override earlier ones, default tag 1"""
    tags = np.ones(len(centers), dtype=int)
    for box in region_boxes or []:
        xr = box.get('x_range', (-math.inf, math.inf))
        yr = box.get('y_range', (-math.inf, math.inf))
        mask = ((centers[:, 0] >= xr[0]) & (centers[:, 0] <= xr[1]) &
                (centers[:, 1] >= yr[0]) & (centers[:, 1] <= yr[1]))
        tags[mask] = int(box['tag'])
    return tags


def _clipped_voronoi(seeds: np.ndarray, x_range: Tuple[float, float],
                     y_range: Tuple[float, float]) -> Tuple[np.ndarray, List[List[int]]]:
    (x0, x1), (y0, y1) = x_range, y_range
    sx, sy = seeds[:, 0], seeds[:, 1]
    mirrored = np.vstack([seeds,
                          np.column_stack([2 * x0 - sx, sy]), np.column_stack([2 * x1 - sx, sy]),
                          np.column_stack([sx, 2 * y0 - sy]), np.column_stack([sx, 2 * y1 - sy])])
    vor = Voronoi(mirrored)
    coords = vor.vertices.copy()
    snap = VORONOI_SNAP * max(x1 - x0, y1 - y0)
    for axis, lo, hi in ((0, x0, x1), (1, y0, y1)):
        col = coords[:, axis]
        col[np.abs(col - lo) <= snap] = lo
        col[np.abs(col - hi) <= snap] = hi

    renumber: Dict[int, int] = {}
    cells = []
    for i, seed in enumerate(seeds):
        region = vor.regions[vor.point_region[i]]
        if not region or -1 in region:
            raise MeshError(f"Voronoi cell of seed {i} is unbounded")
        pts = coords[region]
        order = np.argsort(np.arctan2(pts[:, 1] - seed[1], pts[:, 0] - seed[0]))
        cells.append([renumber.setdefault(region[j], len(renumber)) for j in order])
    vertices = np.empty((len(renumber), 2))
    for old, new in renumber.items():
        vertices[new] = coords[old]
    return vertices, cells


def voronoi_mesh(n_cells: int, seed: int = 0, lloyd: int = 0,
                 x_range: Tuple[float, float] = (0.0, 1.0),
                 y_range: Tuple[float, float] = (0.0, 1.0),
                 region_boxes: Optional[List[Dict]] = None) -> PolyMesh:
    """Voronoi tessellation of uniformly random seeds, clipped to a rectangle.

    Seeds are mirrored across the four sides, so every original cell is
    bounded and the outer cells end exactly on the rectangle. ``lloyd``
    centroidal iterations move each seed to its cell centroid and make the
    cells rounder. Same ``n_cells`` and ``seed`` give the same mesh.
    """
    if n_cells < 2:
        raise MeshError("a Voronoi mesh needs at least two seeds")
    if x_range[1] <= x_range[0] or y_range[1] <= y_range[0]:
        raise MeshError(f"empty Voronoi box {x_range} x {y_range}")
    rng = np.random.default_rng(seed)
    seeds = np.column_stack([rng.uniform(*x_range, n_cells), rng.uniform(*y_range, n_cells)])
    for _ in range(lloyd):
        vertices, cells = _clipped_voronoi(seeds, x_range, y_range)
        seeds = np.array([polygon_centroid(vertices[c]) for c in cells])
    vertices, cells = _clipped_voronoi(seeds, x_range, y_range)
    centers = np.array([polygon_centroid(vertices[c]) for c in cells])
    mesh = PolyMesh(vertices, cells, tag_by_boxes(centers, region_boxes))
    logger.info("Voronoi mesh: %d cells, %d vertices, seed %d, %d Lloyd iterations",
                mesh.n_cells, len(vertices), seed, lloyd)
    return mesh


def _clean_lines(text: str) -> List[str]:
    lines = []
    for raw in text.splitlines():
        line = raw.split('#', 1)[0].strip()
        if line:
            lines.append(line)
    return lines


def load_mesh(path: str, format: str = 'tpe-text') -> PolyMesh:
    """Read a mesh in the three-section text format (see MESH_FORMAT.md)"""
    if format not in MESH_FORMATS:
        raise MeshError(f"unknown mesh format '{format}'; supported: {', '.join(MESH_FORMATS)}")
    if not os.path.exists(path):
        raise MeshError(f"mesh file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        lines = _clean_lines(f.read())

    pos = 0

    def header(name: str, count_required: bool = True) -> Optional[int]:
        nonlocal pos
        if pos >= len(lines):
            raise MeshError(f"{path}: missing '{name}' section")
        parts = lines[pos].split()
        if parts[0].lower() != name:
            raise MeshError(f"{path}: expected '{name}' section, found '{lines[pos]}'")
        pos += 1
        if len(parts) > 1:
            try:
                return int(parts[1])
            except ValueError:
                raise MeshError(f"{path}: bad count in '{lines[pos - 1]}'")
        if count_required:
            if pos >= len(lines):
                raise MeshError(f"{path}: missing count for '{name}'")
            try:
                count = int(lines[pos])
            except ValueError:
                raise MeshError(f"{path}: bad count '{lines[pos]}' for '{name}'")
            pos += 1
            return count
        return None

    try:
        n_vertices = header('vertices')
        vertices = []
        for _ in range(n_vertices):
            x, y = lines[pos].split()[:2]
            vertices.append((float(x), float(y)))
            pos += 1
        n_cells = header('cells')
        cells = []
        for _ in range(n_cells):
            parts = [int(v) for v in lines[pos].split()]
            if parts[0] != len(parts) - 1:
                raise MeshError(f"{path}: cell line '{lines[pos]}' declares {parts[0]} vertices")
            cells.append(parts[1:])
            pos += 1
        regions = None
        if pos < len(lines):
            count = header('regions', count_required=False)
            # an explicit count line is optional; it is present when the next
            # line is followed by exactly n_cells tag lines
            if count is None and len(lines) - pos == n_cells + 1:
                count = int(lines[pos])
                pos += 1
            if count is not None and count != n_cells:
                raise MeshError(f"{path}: {count} region tags for {n_cells} cells")
            regions = [int(lines[pos + i].split()[0]) for i in range(n_cells)]
    except (IndexError, ValueError) as e:
        raise MeshError(f"{path}: parse failure near line {pos + 1}: {e}")

    mesh = PolyMesh(vertices, cells, regions)
    logger.info("loaded %s: %d cells, %d faces", path, mesh.n_cells, mesh.n_faces)
    return mesh


def write_mesh(mesh: PolyMesh, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"vertices {len(mesh.vertices)}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        f.write(f"cells {mesh.n_cells}\n")
        for loop in mesh.cells:
            f.write(f"{len(loop)} " + " ".join(str(v) for v in loop) + "\n")
        f.write(f"regions {mesh.n_cells}\n")
        for tag in mesh.region_tags:
            f.write(f"{int(tag)}\n")
