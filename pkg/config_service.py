#!/usr/bin/env python3
"""
Run Configuration Service
Loads a run document (YAML), resolves material presets, applies defaults,
validates the invariants a run relies on and hands out a frozen RunConfig.
Loaded documents are cached per path and reloaded when the file changes.
"""

import copy
import hashlib
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from form_assembler import DEFAULT_ALPHAS
from materials import MaterialMap, MaterialRegion
from materials_loader import MaterialsLoader, resolve_material
from newmark_integrator import NewmarkConfig, SOLVER_KINDS
from poly_mesh import PolyMesh, cartesian_grid, load_mesh, voronoi_mesh
from sources import MomentTensorSource
from tpe_errors import ConfigError, TPEError

logger = logging.getLogger(__name__)

RUN_MODES = ('convergence', 'simulate')
LADDERS = ('h', 'degree')

DEFAULTS: Dict[str, Any] = {
    'degree': 2,
    'penalties': list(DEFAULT_ALPHAS),
    'coupling': {'temperature': True},
    'time': {'beta': 0.25, 'gamma': 0.5},
    'solver': {'kind': 'direct', 'tolerance': 1e-10, 'workers': 1},
    'output': {'snapshot_every': 0, 'progress_every': 10, 'vtk': True,
               'raster': {'nx': 100, 'ny': 100}},
}

TOP_LEVEL_KEYS = ('run', 'mesh', 'degree', 'penalties', 'materials', 'coupling', 'time',
                  'solver', 'sources', 'receivers', 'output', 'convergence')


@dataclass(frozen=True)
class MeshSpec:
    """A mesh file, a built-in Cartesian grid or a seeded Voronoi tessellation"""
    file: Optional[str] = None
    format: str = 'tpe-text'
    nx: int = 0
    ny: int = 0
    x_range: Tuple[float, float] = (0.0, 1.0)
    y_range: Tuple[float, float] = (0.0, 1.0)
    regions: Tuple[Dict[str, Any], ...] = ()
    voronoi_cells: int = 0
    seed: int = 0
    lloyd: int = 0

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: str = '.') -> 'MeshSpec':
        if not isinstance(data, dict):
            raise ConfigError("mesh: expected a mapping with 'file', 'grid' or 'voronoi'")
        if 'file' in data:
            path = data['file']
            if not os.path.isabs(path):
                path = os.path.normpath(os.path.join(base_dir, path))
            if not os.path.exists(path):
                raise ConfigError(f"mesh: file not found: {path}")
            return cls(file=path, format=data.get('format', 'tpe-text'))
        kind = 'voronoi' if 'voronoi' in data else 'grid'
        spec = data.get(kind)
        if not isinstance(spec, dict):
            raise ConfigError("mesh: expected 'file', 'grid' or 'voronoi'")
        try:
            regions = tuple(dict(box) for box in spec.get('regions', []))
            for box in regions:
                if 'tag' not in box:
                    raise ConfigError(f"mesh.{kind}.regions: every box needs a 'tag'")
            common = dict(x_range=tuple(float(v) for v in spec.get('x_range', (0.0, 1.0))),
                          y_range=tuple(float(v) for v in spec.get('y_range', (0.0, 1.0))),
                          regions=regions)
            if kind == 'voronoi':
                return cls(voronoi_cells=int(spec['cells']), seed=int(spec.get('seed', 0)),
                           lloyd=int(spec.get('lloyd', 0)), **common)
            return cls(nx=int(spec['nx']), ny=int(spec['ny']), **common)
        except KeyError as e:
            raise ConfigError(f"mesh.{kind}: missing {e}")

    def build(self) -> PolyMesh:
        if self.file is not None:
            return load_mesh(self.file, self.format)
        if self.voronoi_cells:
            return voronoi_mesh(self.voronoi_cells, self.seed, self.lloyd, self.x_range,
                                self.y_range, list(self.regions))
        return cartesian_grid(self.nx, self.ny, self.x_range, self.y_range, list(self.regions))

    def describe(self) -> str:
        if self.file is not None:
            return os.path.basename(self.file)
        if self.voronoi_cells:
            return f"voronoi {self.voronoi_cells} (seed {self.seed})"
        return f"grid {self.nx}x{self.ny}"


@dataclass(frozen=True)
class OutputSpec:
    directory: str
    snapshot_every: int = 0
    progress_every: int = 10
    vtk: bool = True
    raster_nx: int = 100
    raster_ny: int = 100


@dataclass(frozen=True)
class ConvergenceSpec:
    case: str = 'standard'
    ladder: str = 'h'
    meshes: Tuple[MeshSpec, ...] = ()
    degrees: Tuple[int, ...] = ()
    rate_margin: float = 0.25


@dataclass(frozen=True)
class RunConfig:
    name: str
    mode: str
    mesh: MeshSpec
    degree: int
    alphas: Tuple[float, float, float, float]
    regions: Dict[int, MaterialRegion]
    temperature_coupling: bool
    time: NewmarkConfig
    workers: int
    output: OutputSpec
    sources: Tuple[MomentTensorSource, ...] = ()
    receivers: Tuple[Tuple[str, Tuple[float, float]], ...] = ()
    convergence: Optional[ConvergenceSpec] = None
    source_path: Optional[str] = None
    document: Dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def config_hash(self) -> str:
        """SHA-256 of the canonical YAML dump of the (defaulted) document"""
        canonical = yaml.safe_dump(self.document, sort_keys=True, default_flow_style=False)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def material_map(self, mesh: Optional[PolyMesh] = None) -> MaterialMap:
        return MaterialMap(self.regions, mesh, temperature_coupling=self.temperature_coupling)


def _merge_defaults(document: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(document)
    for key, value in DEFAULTS.items():
        if key not in merged:
            merged[key] = copy.deepcopy(value)
        elif isinstance(value, dict) and isinstance(merged[key], dict):
            for sub, default in value.items():
                if isinstance(default, dict):
                    merged[key][sub] = {**default, **(merged[key].get(sub) or {})}
                else:
                    merged[key].setdefault(sub, default)
    return merged


def _alphas(raw: Any) -> Tuple[float, float, float, float]:
    if isinstance(raw, dict):
        raw = [raw.get(f'alpha{i}', DEFAULT_ALPHAS[i - 1]) for i in range(1, 5)]
    try:
        values = tuple(float(v) for v in raw)
    except (TypeError, ValueError):
        raise ConfigError(f"penalties: expected four numbers, got {raw!r}")
    if len(values) != 4 or any(v <= 0 for v in values):
        raise ConfigError(f"penalties: expected four positive numbers, got {raw!r}")
    return values


def _point(raw: Any, where: str) -> Tuple[float, float]:
    try:
        x, y = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a point [x, y], got {raw!r}")
    return x, y


def parse_run_config(document: Dict[str, Any], loader: Optional[MaterialsLoader] = None,
                     base_dir: str = '.', source_path: Optional[str] = None) -> RunConfig:
    """Build a RunConfig from a parsed document (structure only, no mesh checks)"""
    if not isinstance(document, dict):
        raise ConfigError("run configuration must be a mapping")
    unknown = [key for key in document if key not in TOP_LEVEL_KEYS]
    if unknown:
        raise ConfigError(f"unknown configuration sections: {', '.join(map(str, unknown))}")
    loader = loader or MaterialsLoader()
    doc = _merge_defaults(document)

    run = doc.get('run') or {}
    mode = run.get('mode', 'simulate')
    if mode not in RUN_MODES:
        raise ConfigError(f"run.mode must be one of {RUN_MODES}, got '{mode}'")
    name = str(run.get('name', os.path.splitext(os.path.basename(source_path or 'run'))[0]))
    out_dir = run.get('output_dir', os.path.join('output', name))
    if not os.path.isabs(out_dir):
        out_dir = os.path.normpath(os.path.join(base_dir, out_dir))

    if 'mesh' not in doc:
        raise ConfigError("missing 'mesh' section")
    mesh = MeshSpec.from_dict(doc['mesh'], base_dir)

    degree = doc['degree']
    if not isinstance(degree, int) or degree < 1:
        raise ConfigError(f"degree must be an integer >= 1, got {degree!r}")

    materials = doc.get('materials')
    if not isinstance(materials, dict) or not materials:
        raise ConfigError("materials: expected a mapping region tag -> material")
    regions = {}
    for tag, spec in materials.items():
        try:
            tag_int = int(tag)
        except (TypeError, ValueError):
            raise ConfigError(f"materials: region tag '{tag}' is not an integer")
        if isinstance(spec, str):
            spec = {'preset': spec}
        regions[tag_int] = resolve_material(spec, loader, source=f"materials[{tag}]")

    coupling = bool(doc['coupling'].get('temperature', True))
    time_cfg = doc.get('time') or {}
    solver = doc['solver']
    if solver.get('kind') not in SOLVER_KINDS:
        raise ConfigError(f"solver.kind must be one of {SOLVER_KINDS}")
    try:
        newmark = NewmarkConfig(dt=float(time_cfg['dt']), t_final=float(time_cfg['t_final']),
                                beta=float(time_cfg['beta']), gamma=float(time_cfg['gamma']),
                                solver=solver['kind'], tolerance=float(solver['tolerance']))
    except KeyError as e:
        raise ConfigError(f"time: missing {e}")
    workers = int(solver.get('workers', 1))
    if workers < 1:
        raise ConfigError("solver.workers must be at least 1")

    sources = tuple(MomentTensorSource.from_config(spec, name=spec.get('name', f'source{i}'))
                    for i, spec in enumerate(doc.get('sources') or []))

    receivers: List[Tuple[str, Tuple[float, float]]] = []
    raw_receivers = doc.get('receivers') or {}
    if isinstance(raw_receivers, dict):
        raw_receivers = [{'name': k, 'location': v} for k, v in raw_receivers.items()]
    for i, rec in enumerate(raw_receivers):
        rec_name = str(rec.get('name', f'r{i}'))
        receivers.append((rec_name, _point(rec.get('location'), f"receivers[{rec_name}]")))

    out = doc['output']
    raster = out.get('raster') or {}
    output = OutputSpec(directory=out_dir, snapshot_every=int(out['snapshot_every']),
                        progress_every=int(out['progress_every']), vtk=bool(out['vtk']),
                        raster_nx=int(raster.get('nx', 100)), raster_ny=int(raster.get('ny', 100)))
    if output.snapshot_every < 0 or output.raster_nx < 1 or output.raster_ny < 1:
        raise ConfigError("output: snapshot_every must be >= 0 and the raster non-empty")

    convergence = None
    if mode == 'convergence':
        conv = doc.get('convergence') or {}
        ladder = conv.get('ladder', 'h')
        if ladder not in LADDERS:
            raise ConfigError(f"convergence.ladder must be one of {LADDERS}")
        meshes = tuple(MeshSpec.from_dict(m, base_dir) for m in conv.get('meshes', []))
        degrees = tuple(int(d) for d in conv.get('degrees', []))
        if ladder == 'h' and len(meshes) < 2:
            raise ConfigError("convergence: an h-ladder needs at least two meshes")
        if ladder == 'degree' and (len(degrees) < 2 or min(degrees) < 1):
            raise ConfigError("convergence: a degree ladder needs at least two degrees >= 1")
        convergence = ConvergenceSpec(case=str(conv.get('case', 'standard')), ladder=ladder,
                                      meshes=meshes, degrees=degrees,
                                      rate_margin=float(conv.get('rate_margin', 0.25)))

    return RunConfig(name=name, mode=mode, mesh=mesh, degree=degree, alphas=_alphas(doc['penalties']),
                     regions=regions, temperature_coupling=coupling, time=newmark,
                     workers=workers, output=output, sources=sources,
                     receivers=tuple(receivers), convergence=convergence,
                     source_path=source_path, document=doc)


@dataclass
class ConfigCheck:
    """Outcome of validate_run_config; errors make the run impossible"""
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    n_cells: int = 0

    @property
    def valid(self) -> bool:
        return not self.errors


def validate_run_config(config: RunConfig) -> ConfigCheck:
    """Checks that need the mesh: region tags, receivers and sources inside the domain"""
    check = ConfigCheck()
    try:
        mesh = config.mesh.build()
    except TPEError as e:
        check.errors.append(f"mesh: {e}")
        return check
    check.n_cells = mesh.n_cells
    try:
        materials = config.material_map(mesh)
        materials.relaxation_time()
    except TPEError as e:
        check.errors.append(f"materials: {e}")
        return check

    points = [p for _, p in config.receivers] + [tuple(s.location) for s in config.sources]
    labels = ([f"receiver '{n}'" for n, _ in config.receivers]
              + [f"source '{s.name}'" for s in config.sources])
    if points:
        owner, hits = mesh.locate_points(np.array(points, dtype=float))
        for label, point, cell, count in zip(labels, points, owner, hits):
            if cell < 0:
                check.errors.append(f"{label} at {point} lies outside the mesh")
            elif count > 1:
                check.warnings.append(f"{label} at {point} lies on a shared face or vertex; "
                                      f"cell {int(cell)} is used")

    for src in config.sources:
        f0 = getattr(src.history, 'peak_frequency', None)
        if f0:
            for tag in materials.check_source_frequency(f0):
                check.warnings.append(f"source '{src.name}': f0 = {f0} Hz is not below the "
                                      f"critical frequency of region {tag}")
    if config.mode == 'simulate' and not config.sources:
        check.warnings.append("simulate run without sources: the wavefield stays zero")
    if config.mode == 'convergence':
        for i, spec in enumerate(config.convergence.meshes):
            try:
                spec.build()
            except TPEError as e:
                check.errors.append(f"convergence.meshes[{i}]: {e}")
    return check


class ConfigService:
    def __init__(self, loader: Optional[MaterialsLoader] = None) -> None:
        self.loader = loader or MaterialsLoader()
        self._lock = threading.Lock()
        self._cache: Dict[str, Tuple[float, RunConfig]] = {}

    def _read_yaml(self, path: str) -> Dict[str, Any]:
        if not os.path.exists(path):
            raise ConfigError(f"configuration file not found: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}")

    def load(self, path: str) -> RunConfig:
        """Parsed RunConfig for ``path``, re-read only when the file's mtime changed"""
        path = os.path.abspath(path)
        with self._lock:
            mtime = os.path.getmtime(path) if os.path.exists(path) else -1.0
            cached = self._cache.get(path)
            if cached is not None and cached[0] == mtime:
                return cached[1]
            document = self._read_yaml(path)
            config = parse_run_config(document, self.loader, base_dir=os.path.dirname(path),
                                      source_path=path)
            self._cache[path] = (mtime, config)
            logger.debug("loaded run configuration %s (hash %s)", path, config.config_hash()[:12])
            return config

    def validate(self, path: str) -> Tuple[RunConfig, ConfigCheck]:
        config = self.load(path)
        check = validate_run_config(config)
        for warning in check.warnings:
            logger.warning("%s: %s", os.path.basename(path), warning)
        return config, check
