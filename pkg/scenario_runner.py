#!/usr/bin/env python3
"""
Scenario Runner
Drives complete runs from a RunConfig: manufactured-solution convergence
ladders and physical simulations with receivers, snapshots and an
instability guard; plus field sampling and the snapshot comparison used for
the poroelastic / thermo-poroelastic study.
"""

import csv
import glob
import logging
import math
import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from config_service import RunConfig
from dg_space import DGSpace
from form_assembler import assemble_forms, assemble_load, build_block_system
from manufactured import build_case
from materials import MaterialMap
from newmark_integrator import (SystemState, TimeIntegrator, initial_state,
                                project_initial_conditions)
from poly_mesh import BOUNDARY
from report_generator import write_convergence_report, write_rates_csv
from snapshot_writer import (ReceiverTrace, ensure_dir, read_raster, write_raster,
                             write_run_meta, write_vtk)
from tpe_errors import ConfigError, MeshError, SolverError, TPEError
from verification import ErrorReport, RateTable, compute_errors, convergence_rates, scheme_energy

logger = logging.getLogger(__name__)

INSTABILITY_FACTOR = 1e3
DG_QUANTITIES = ('dG_u', 'dG_w', 'dG_T')


# Sampling

class PointSampler:
    """Sparse evaluation of DG fields at fixed points.

    Each point is evaluated in its owning cell (lowest index on shared
    faces). ``cells`` skips the point location when owners are known.
    """

    def __init__(self, space: DGSpace, points: np.ndarray,
                 cells: Optional[np.ndarray] = None) -> None:
        self.space = space
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if cells is None:
            cells, _ = space.mesh.locate_points(self.points)
            outside = np.nonzero(cells == BOUNDARY)[0]
            if outside.size:
                raise MeshError(f"{outside.size} sample points lie outside the mesh "
                                f"(first {tuple(self.points[outside[0]])})")
        self.cells = np.asarray(cells, dtype=int)
        rows, cols, vals = [], [], []
        for k in np.unique(self.cells):
            idx = np.nonzero(self.cells == k)[0]
            phi, _ = space.basis_eval(int(k), self.points[idx])
            dofs = space.cell_dofs(int(k))
            rows.append(np.repeat(idx, len(dofs)))
            cols.append(np.tile(dofs, len(idx)))
            vals.append(phi.T.ravel())
        shape = (len(self.points), space.n_dofs)
        self.matrix = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows),
                                                            np.concatenate(cols))), shape=shape)

    def scalar(self, coeffs: np.ndarray) -> np.ndarray:
        return self.matrix @ coeffs

    def vector(self, coeffs: np.ndarray) -> np.ndarray:
        n = self.space.n_dofs
        return np.column_stack([self.matrix @ coeffs[:n], self.matrix @ coeffs[n:2 * n]])

    def sample(self, state: SystemState) -> Dict[str, np.ndarray]:
        n = self.space.n_dofs
        X, Y = state.X, state.Y
        return {
            'u': self.vector(X[:2 * n]), 'w': self.vector(X[2 * n:4 * n]),
            'T': self.scalar(X[4 * n:]),
            'v': self.vector(Y[:2 * n]), 'q': self.vector(Y[2 * n:4 * n]),
        }


def sample_field(state: SystemState, space: DGSpace, points: np.ndarray) -> Dict[str, np.ndarray]:
    """u, w, T and the velocities v = u', q = w' at points"""
    return PointSampler(space, points).sample(state)


def raster_points(bbox: Tuple[float, float, float, float], nx: int, ny: int) -> np.ndarray:
    """nx * ny points spanning the bounding box, x fastest"""
    xmin, ymin, xmax, ymax = bbox
    X, Y = np.meshgrid(np.linspace(xmin, xmax, nx), np.linspace(ymin, ymax, ny), indexing='xy')
    return np.column_stack([X.ravel(), Y.ravel()])


def raster_fields(sample: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    v, q = sample['v'], sample['q']
    return {'vx': v[:, 0], 'vy': v[:, 1], 'vmag': np.hypot(v[:, 0], v[:, 1]),
            'qy': q[:, 1], 'T': sample['T']}


def reflection_asymmetry(grid: np.ndarray, diagonal: str = 'main') -> float:
    """||R(field) - field|| / ||field|| for the reflection across a diagonal of a square raster"""
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise TPEError("diagonal reflection needs a square raster")
    reflected = grid.T if diagonal == 'main' else grid[::-1, ::-1].T
    norm = np.linalg.norm(grid)
    return float(np.linalg.norm(reflected - grid) / norm) if norm > 0 else 0.0


# Convergence

@dataclass
class ConvergenceResult:
    reports: List[ErrorReport]
    table: RateTable
    failures: List[str] = field(default_factory=list)
    files: Dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 2


def _single_region(config: RunConfig):
    if len(config.regions) != 1:
        raise ConfigError("manufactured convergence runs need exactly one material region")
    return next(iter(config.regions.values()))


def run_rung(config: RunConfig, mesh_spec, degree: int, label: str,
             phases: Optional[Dict[str, float]] = None) -> ErrorReport:
    """One manufactured-solution run on one mesh and degree"""
    phases = phases if phases is not None else {}
    start = time.perf_counter()
    try:
        region = _single_region(config)
        case = build_case(config.convergence.case, region)
        mesh = mesh_spec.build()
        space = DGSpace(mesh, degree)
        materials = MaterialMap({tag: region for tag in mesh.regions}, mesh,
                                temperature_coupling=config.temperature_coupling)
        forms = assemble_forms(space, materials, config.alphas, workers=config.workers)
        block = build_block_system(forms)
        phases['assembly'] = phases.get('assembly', 0.0) + time.perf_counter() - start

        forcing, boundary = case.forcing(), case.boundary_data()

        def load(t: float) -> np.ndarray:
            return assemble_load(t, forms, forcing, boundary=boundary)

        state0 = project_initial_conditions(block, case.initial_fields(0.0), load(0.0),
                                           kind=config.time.solver)
        integrator = TimeIntegrator(block, config.time, load)
        tick = time.perf_counter()
        final = integrator.run(state0)
        phases['stepping'] = phases.get('stepping', 0.0) + time.perf_counter() - tick
        return compute_errors(final, forms, case, X0=state0.X, label=label)
    except TPEError as e:
        raise type(e)(f"rung {label}: {e}") from e


def _rate_failures(config: RunConfig, table: RateTable) -> List[str]:
    conv = config.convergence
    failures = []
    if conv.ladder == 'h':
        target = config.degree - conv.rate_margin
        last = len(table.rates) - 1
        for q in DG_QUANTITIES:
            rate = table.rate(last, q)
            if (last, q) in table.exact:
                continue
            if rate is None or rate < target:
                shown = 'n/a' if rate is None else f"{rate:.3f}"
                failures.append(f"{q}: observed rate {shown} below {target:.2f} "
                                f"on the last rung pair")
    else:
        for i in range(len(table.reports) - 1):
            for q in DG_QUANTITIES:
                a, b = table.reports[i].error(q), table.reports[i + 1].error(q)
                if not b < a and b != 0.0:
                    failures.append(f"{q}: error does not decrease from degree "
                                    f"{table.reports[i].degree} to {table.reports[i + 1].degree}")
    return failures


def run_convergence(config: RunConfig) -> ConvergenceResult:
    """Execute the ladder, write rates.csv, report.html and run.meta"""
    if config.mode != 'convergence' or config.convergence is None:
        raise ConfigError("run_convergence needs a configuration with run.mode: convergence")
    conv = config.convergence
    out_dir = ensure_dir(config.output.directory)
    phases: Dict[str, float] = {}
    start = time.perf_counter()
    if conv.ladder == 'h':
        rungs = [(spec, config.degree, f"{i}:{spec.describe()}")
                 for i, spec in enumerate(conv.meshes)]
    else:
        rungs = [(config.mesh, d, f"{i}:l={d}") for i, d in enumerate(conv.degrees)]

    reports = []
    for spec, degree, label in rungs:
        logger.info("convergence rung %s (degree %d)", label, degree)
        reports.append(run_rung(config, spec, degree, label, phases))
    table = convergence_rates(reports, ladder=conv.ladder)
    result = ConvergenceResult(reports=reports, table=table,
                               failures=_rate_failures(config, table))

    result.files['rates'] = write_rates_csv(os.path.join(out_dir, 'rates.csv'), table)
    result.files['report'] = write_convergence_report(os.path.join(out_dir, 'report.html'),
                                                      config, table, result.failures)
    phases['total'] = time.perf_counter() - start
    meta = [('name', config.name), ('mode', config.mode), ('config_hash', config.config_hash()),
            ('ladder', conv.ladder), ('case', conv.case), ('rungs', len(reports)),
            ('dofs', ' '.join(str(r.n_dofs) for r in reports)),
            ('verdict', 'PASS' if result.passed else 'FAIL')]
    meta += [(f'wall_time_{name}', seconds) for name, seconds in phases.items()]
    result.files['meta'] = os.path.join(out_dir, 'run.meta')
    write_run_meta(result.files['meta'], meta)
    for failure in result.failures:
        logger.warning("rate check failed: %s", failure)
    return result


# Simulation

@dataclass
class SimulationResult:
    state: SystemState
    traces: Dict[str, ReceiverTrace]
    energies: List[float]
    snapshots: List[int]
    n_dofs: int
    phases: Dict[str, float] = field(default_factory=dict)
    output_dir: str = ''


class InstabilityGuard:
    """Aborts when the scheme energy is not finite or exceeds INSTABILITY_FACTOR times a reference.

    The reference is the larger of the initial energy and the accumulated
    absolute work done by the loads. A run that starts at rest and is never
    loaded has no reference and is only checked for finiteness.
    """

    def __init__(self, factor: float = INSTABILITY_FACTOR) -> None:
        self.factor = factor
        self.initial: Optional[float] = None
        self.supplied = 0.0

    @property
    def reference(self) -> float:
        return max(self.initial or 0.0, self.supplied)

    def check(self, step: int, t: float, energy: float, work: float = 0.0) -> None:
        if not math.isfinite(energy):
            raise SolverError(f"instability at step {step} (t={t:.6g}): energy is not finite")
        if self.initial is None:
            self.initial = energy
        self.supplied += abs(work)
        reference = self.reference
        if reference > 0 and energy > self.factor * reference:
            raise SolverError(f"instability at step {step} (t={t:.6g}): energy {energy:.4e} "
                              f"exceeds {self.factor:g} x the reference {reference:.4e} "
                              f"(initial energy or load work)")


def load_work(block, previous: SystemState, current: SystemState,
              f_previous: np.ndarray, f_current: np.ndarray) -> float:
    """Trapezoidal work of the mechanical loads over one step"""
    d = block.mechanical
    return float((current.X[d] - previous.X[d]) @ (0.5 * (f_previous[d] + f_current[d])))


def run_simulate(config: RunConfig, write_outputs: bool = True,
                 on_step: Optional[Callable[[SystemState], None]] = None) -> SimulationResult:
    """Time loop with receivers, snapshots and the instability guard"""
    phases: Dict[str, float] = {}
    tick = time.perf_counter()
    mesh = config.mesh.build()
    space = DGSpace(mesh, config.degree)
    materials = config.material_map(mesh)
    for src in config.sources:
        f0 = getattr(src.history, 'peak_frequency', None)
        if f0:
            materials.check_source_frequency(f0)
    phases['mesh'] = time.perf_counter() - tick

    tick = time.perf_counter()
    forms = assemble_forms(space, materials, config.alphas, workers=config.workers)
    block = build_block_system(forms)
    phases['assembly'] = time.perf_counter() - tick

    sources = list(config.sources)

    def load(t: float) -> np.ndarray:
        return assemble_load(t, forms, sources=sources)

    tick = time.perf_counter()
    zeros = np.zeros(block.size)
    f_previous = load(0.0)
    state = initial_state(block, zeros, zeros, f_previous, kind=config.time.solver)

    guard = InstabilityGuard()
    energies = [scheme_energy(state, block)]
    guard.check(0, state.t, energies[0])

    def progress(step: int, t: float, st: SystemState) -> None:
        logger.info("step %d/%d t=%.4g energy=%.6e", step, config.time.n_steps, t, energies[-1])

    integrator = TimeIntegrator(block, config.time, load, progress=progress,
                                progress_every=config.output.progress_every)
    phases['factorization'] = time.perf_counter() - tick

    out = config.output
    snapshots_dir = os.path.join(out.directory, 'snapshots')
    receivers_dir = os.path.join(out.directory, 'receivers')
    if write_outputs:
        ensure_dir(out.directory)
        if out.snapshot_every:
            ensure_dir(snapshots_dir)

    traces = {name: ReceiverTrace(name, point) for name, point in config.receivers}
    receiver_sampler = (PointSampler(space, np.array([p for _, p in config.receivers]))
                        if config.receivers else None)
    raster_sampler = centroid_sampler = None
    if write_outputs and out.snapshot_every:
        raster_sampler = PointSampler(space, raster_points(mesh.bounding_box(),
                                                           out.raster_nx, out.raster_ny))
        centroid_sampler = PointSampler(space, mesh.cell_centroid, cells=np.arange(mesh.n_cells))
    snapshots: List[int] = []
    output_time = 0.0

    def observe(st: SystemState) -> None:
        nonlocal output_time
        t0 = time.perf_counter()
        if receiver_sampler is not None:
            fields = raster_fields(receiver_sampler.sample(st))
            for i, trace in enumerate(traces.values()):
                trace.record(st.t, fields['vmag'][i], fields['vy'][i], fields['qy'][i],
                             fields['T'][i])
        if raster_sampler is not None and st.step % out.snapshot_every == 0:
            write_snapshot(snapshots_dir, st, mesh, raster_sampler, centroid_sampler, out.vtk)
            snapshots.append(st.step)
        output_time += time.perf_counter() - t0

    observe(state)
    tick = time.perf_counter()
    previous = state
    for state in integrator.steps(state):
        f_current = load(state.t)
        energies.append(scheme_energy(state, block))
        guard.check(state.step, state.t, energies[-1],
                    load_work(block, previous, state, f_previous, f_current))
        previous, f_previous = state, f_current
        observe(state)
        if on_step is not None:
            on_step(state)
    phases['stepping'] = time.perf_counter() - tick - output_time
    phases['output'] = output_time

    result = SimulationResult(state=state, traces=traces, energies=energies, snapshots=snapshots,
                              n_dofs=block.size, phases=phases, output_dir=out.directory)
    if write_outputs:
        for trace in traces.values():
            trace.write(receivers_dir)
        meta = [('name', config.name), ('mode', config.mode),
                ('config_hash', config.config_hash()), ('cells', mesh.n_cells),
                ('scalar_dofs', space.n_dofs), ('total_dofs', block.size),
                ('degree', config.degree), ('steps', config.time.n_steps),
                ('final_time', state.t),
                ('temperature_coupling', config.temperature_coupling),
                ('relaxation', 'parabolic' if block.parabolic else 'hyperbolic'),
                ('snapshots', len(snapshots)), ('final_energy', energies[-1])]
        meta += [(f'wall_time_{name}', seconds) for name, seconds in phases.items()]
        write_run_meta(os.path.join(out.directory, 'run.meta'), meta)
    logger.info("simulation finished: %d steps, final energy %.6e", config.time.n_steps,
                energies[-1])
    return result


def write_snapshot(directory: str, state: SystemState, mesh, raster: PointSampler,
                   centroids: PointSampler, vtk: bool = True) -> None:
    fields = raster_fields(raster.sample(state))
    write_raster(os.path.join(directory, f"raster_{state.step}.csv"), raster.points, fields)
    if vtk:
        cell = raster_fields(centroids.sample(state))
        write_vtk(os.path.join(directory, f"step_{state.step}.vtk"), mesh,
                  {name: cell[name] for name in ('vmag', 'vy', 'qy', 'T')})


# Comparison

@dataclass
class ComparisonSummary:
    step: int
    max_difference: float
    peak_a: float
    mean_cosine: float

    @property
    def ratio(self) -> float:
        return self.max_difference / self.peak_a if self.peak_a > 0 else math.inf


def _snapshot_dir(path: str) -> str:
    nested = os.path.join(path, 'snapshots')
    return nested if os.path.isdir(nested) else path


def _raster_steps(directory: str) -> Dict[int, str]:
    steps = {}
    for path in glob.glob(os.path.join(directory, 'raster_*.csv')):
        match = re.search(r'raster_(\d+)\.csv$', path)
        if match:
            steps[int(match.group(1))] = path
    return steps


def difference_fields(a: Dict[str, np.ndarray], b: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """|v_a - v_b|, cosine of the angle between v_a and v_b, |v_a| - |v_b|"""
    if len(a['x']) != len(b['x']) or not (np.allclose(a['x'], b['x'])
                                           and np.allclose(a['y'], b['y'])):
        raise TPEError("snapshot rasters are sampled on different points")
    dvx, dvy = a['vx'] - b['vx'], a['vy'] - b['vy']
    mag_a, mag_b = np.hypot(a['vx'], a['vy']), np.hypot(b['vx'], b['vy'])
    dot = a['vx'] * b['vx'] + a['vy'] * b['vy']
    denominator = mag_a * mag_b
    cosine = np.ones_like(dot)
    nonzero = denominator > 0
    cosine[nonzero] = dot[nonzero] / denominator[nonzero]
    return {'x': a['x'], 'y': a['y'], 'dv': np.hypot(dvx, dvy), 'cos_angle': cosine,
            'dmag': mag_a - mag_b}


def compare(path_a: str, path_b: str, out_dir: Optional[str] = None) -> List[ComparisonSummary]:
    """Difference fields for every raster step present in both snapshot sets"""
    dir_a, dir_b = _snapshot_dir(path_a), _snapshot_dir(path_b)
    steps_a, steps_b = _raster_steps(dir_a), _raster_steps(dir_b)
    common = sorted(set(steps_a) & set(steps_b))
    if not common:
        raise TPEError(f"no common raster snapshots in {dir_a} and {dir_b}")
    if out_dir is not None:
        ensure_dir(out_dir)
    summaries = []
    for step in common:
        a, b = read_raster(steps_a[step]), read_raster(steps_b[step])
        diff = difference_fields(a, b)
        summaries.append(ComparisonSummary(step=step, max_difference=float(diff['dv'].max()),
                                           peak_a=float(np.hypot(a['vx'], a['vy']).max()),
                                           mean_cosine=float(diff['cos_angle'].mean())))
        if out_dir is not None:
            _write_difference(os.path.join(out_dir, f"difference_{step}.csv"), diff)
    logger.info("compared %d snapshot steps", len(summaries))
    return summaries


def _write_difference(path: str, diff: Dict[str, np.ndarray]) -> None:
    columns = ('x', 'y', 'dv', 'cos_angle', 'dmag')
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in zip(*(diff[c] for c in columns)):
            writer.writerow([f"{v:.12g}" for v in row])


def load_receivers(run_dir: str) -> Dict[str, ReceiverTrace]:
    """Receiver traces of a finished run, empty when the run recorded none"""
    directory = os.path.join(run_dir, 'receivers')
    if not os.path.isdir(directory):
        directory = os.path.join(os.path.dirname(os.path.normpath(run_dir)), 'receivers')
    paths = sorted(glob.glob(os.path.join(directory, '*.csv')))
    traces = [ReceiverTrace.read(path) for path in paths]
    return {trace.name: trace for trace in traces}


def compare_receivers(traces_a: Dict[str, ReceiverTrace],
                      traces_b: Dict[str, ReceiverTrace]) -> Dict[str, float]:
    """max |vmag_a - vmag_b| / max vmag_a per receiver present in both runs"""
    ratios = {}
    for name in sorted(set(traces_a) & set(traces_b)):
        a = np.array([row[1] for row in traces_a[name].rows])
        b = np.array([row[1] for row in traces_b[name].rows])
        if a.shape != b.shape:
            raise TPEError(f"receiver {name}: traces have different lengths")
        peak = np.abs(a).max()
        ratios[name] = float(np.abs(a - b).max() / peak) if peak > 0 else math.inf
    return ratios
