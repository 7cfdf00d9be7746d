#!/usr/bin/env python3
"""
Snapshot and Trace Writer
Legacy-VTK polygon snapshots (meshio) with cell data, wavefield rasters and receiver
traces as CSV, and the plain-text run metadata file.
"""

import csv
import logging
import math
import os
from typing import Dict, List, Mapping, Sequence, Tuple

import meshio
import numpy as np

from poly_mesh import PolyMesh
from tpe_errors import TPEError

logger = logging.getLogger(__name__)

RASTER_COLUMNS = ('x', 'y', 'vx', 'vy', 'vmag', 'qy', 'T')
RECEIVER_COLUMNS = ('t', 'vmag', 'vy', 'qy', 'T')


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def polygon_blocks(mesh: PolyMesh) -> List[Tuple[int, np.ndarray]]:
    """Cells grouped by vertex count as (size, cell ids); meshio polygon blocks are rectangular"""
    sizes = np.array([len(loop) for loop in mesh.cells])
    return [(int(size), np.flatnonzero(sizes == size)) for size in np.unique(sizes)]


def write_vtk(path: str, mesh: PolyMesh, cell_data: Mapping[str, np.ndarray]) -> None:
    """ASCII legacy VTK snapshot written through meshio.

    Cells go out as polygon blocks grouped by vertex count, so the file order
    differs from the mesh order; the integer field ``cell`` keeps the mesh
    index of every written cell.
    """
    n_cells = mesh.n_cells
    for name, values in cell_data.items():
        if len(values) != n_cells:
            raise TPEError(f"cell data '{name}' has {len(values)} values for {n_cells} cells")
    points = np.column_stack([mesh.vertices, np.zeros(len(mesh.vertices))])
    blocks = polygon_blocks(mesh)
    cells = [("polygon", np.array([mesh.cells[c] for c in ids], dtype=int)) for _, ids in blocks]
    data: Dict[str, List[np.ndarray]] = {'cell': [ids for _, ids in blocks]}
    for name, values in cell_data.items():
        values = np.asarray(values, dtype=float)
        data[name] = [values[ids] for _, ids in blocks]
    meshio.write(path, meshio.Mesh(points, cells, cell_data=data), file_format='vtk', binary=False)
    logger.debug("VTK snapshot written to %s (%d cells, %d blocks)", path, n_cells, len(blocks))


def write_raster(path: str, points: np.ndarray, fields: Mapping[str, np.ndarray]) -> None:
    """Raster CSV with columns x, y, vx, vy, vmag, qy, T"""
    columns = [points[:, 0], points[:, 1]] + [np.asarray(fields[c]) for c in RASTER_COLUMNS[2:]]
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(RASTER_COLUMNS)
        for row in zip(*columns):
            writer.writerow([f"{v:.12g}" for v in row])


def read_raster(path: str) -> Dict[str, np.ndarray]:
    if not os.path.exists(path):
        raise TPEError(f"raster file not found: {path}")
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != RASTER_COLUMNS:
            raise TPEError(f"{path}: expected columns {', '.join(RASTER_COLUMNS)}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(-1, len(RASTER_COLUMNS))
    return {name: data[:, i] for i, name in enumerate(RASTER_COLUMNS)}


class ReceiverTrace:
    """Time samples of |v|, v_y, q_y and T at one point"""

    def __init__(self, name: str, point: Tuple[float, float]) -> None:
        self.name = name
        self.point = point
        self.rows: List[Tuple[float, float, float, float, float]] = []

    def record(self, t: float, vmag: float, vy: float, qy: float, T: float) -> None:
        self.rows.append((t, vmag, vy, qy, T))

    def __len__(self) -> int:
        return len(self.rows)

    def write(self, directory: str) -> str:
        path = os.path.join(ensure_dir(directory), f"{self.name}.csv")
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(RECEIVER_COLUMNS)
            for row in self.rows:
                writer.writerow([f"{v:.12g}" for v in row])
        logger.debug("receiver %s: %d samples -> %s", self.name, len(self.rows), path)
        return path

    @classmethod
    def read(cls, path: str) -> 'ReceiverTrace':
        """Trace written by ``write``; the point is not stored in the file"""
        with open(path, 'r', newline='', encoding='utf-8') as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(header) != RECEIVER_COLUMNS:
                raise TPEError(f"{path}: expected columns {', '.join(RECEIVER_COLUMNS)}")
            trace = cls(os.path.splitext(os.path.basename(path))[0], (math.nan, math.nan))
            for row in reader:
                if row:
                    trace.record(*(float(v) for v in row))
        return trace


def write_run_meta(path: str, entries: Sequence[Tuple[str, object]]) -> None:
    """``key: value`` lines in the given order"""
    with open(path, 'w', encoding='utf-8') as f:
        for key, value in entries:
            if isinstance(value, float):
                value = f"{value:.6g}"
            f.write(f"{key}: {value}\n")


def read_run_meta(path: str) -> Dict[str, str]:
    meta = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if ':' in line:
                key, value = line.split(':', 1)
                meta[key.strip()] = value.strip()
    return meta
