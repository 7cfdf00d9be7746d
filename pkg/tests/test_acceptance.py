"""Long-running checks on the shipped configurations; run with ``pytest -m slow``."""

import os
from dataclasses import replace

import numpy as np
import pytest

from config_service import ConfigService
from dg_space import DGSpace
from scenario_runner import (PointSampler, compare_receivers, raster_points,
                             reflection_asymmetry, run_convergence, run_simulate)

pytestmark = pytest.mark.slow

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load(name, tmp_path, loader):
    config = ConfigService(loader).load(os.path.join(ROOT, 'configs', name))
    return replace(config, output=replace(config.output, directory=str(tmp_path / config.name)))


@pytest.mark.parametrize('name', ['convergence_h.yaml', 'convergence_h_parabolic.yaml'])
def test_mesh_ladder_reaches_the_expected_order(name, tmp_path, loader):
    config = load(name, tmp_path, loader)
    result = run_convergence(config)
    assert result.passed, result.failures
    rates = result.table.last_rates()
    assert rates['dG_u'] > config.degree - 0.25
    assert rates['L2_u'] > config.degree + 0.5


def test_degree_ladder_decreases(tmp_path, loader):
    result = run_convergence(load('convergence_degree.yaml', tmp_path, loader))
    assert result.passed, result.failures
    assert result.table.slopes['dG_u'] < -1.0


def test_homogeneous_shear_source_is_symmetric(tmp_path, loader):
    config = load('testcase1_homogeneous.yaml', tmp_path, loader)
    result = run_simulate(config, write_outputs=False)
    assert np.all(np.isfinite(result.energies))

    mesh = config.mesh.build()
    space = DGSpace(mesh, config.degree)
    xmin, ymin, xmax, ymax = mesh.bounding_box()
    points = raster_points((xmin + 1.0, ymin + 1.0, xmax - 1.0, ymax - 1.0), 31, 31)
    velocity = PointSampler(space, points).sample(result.state)['v']
    magnitude = np.hypot(velocity[:, 0], velocity[:, 1]).reshape(31, 31)
    assert reflection_asymmetry(magnitude, 'main') < 0.05
    assert reflection_asymmetry(magnitude, 'anti') < 0.05


def test_temperature_coupling_changes_the_response_moderately(tmp_path, loader):
    coupled = run_simulate(load('testcase1_homogeneous.yaml', tmp_path, loader),
                           write_outputs=False)
    frozen = run_simulate(load('testcase2_poroelastic.yaml', tmp_path, loader),
                          write_outputs=False)
    ratios = compare_receivers(coupled.traces, frozen.traces)
    for name in ('x1', 'x3'):
        assert 0.0 < ratios[name] <= 0.3


def test_layered_medium_runs_stably(tmp_path, loader):
    result = run_simulate(load('testcase3_layers.yaml', tmp_path, loader), write_outputs=False)
    assert np.all(np.isfinite(result.energies))
    assert max(result.energies) > 0.0


def test_homogeneous_wavefield_does_not_blow_up_late(tmp_path, loader):
    config = load('testcase1_homogeneous.yaml', tmp_path, loader)
    mesh = config.mesh.build()
    sampler = PointSampler(DGSpace(mesh, config.degree),
                           raster_points(mesh.bounding_box(), 41, 41))
    peaks = {}

    def record(state):
        if state.step in (40, 60):
            velocity = sampler.sample(state)['v']
            peaks[state.step] = float(np.hypot(velocity[:, 0], velocity[:, 1]).max())

    run_simulate(config, write_outputs=False, on_step=record)
    assert config.time.dt * 40 == pytest.approx(0.4)
    assert peaks[40] > 0.0
    assert peaks[60] <= 10.0 * peaks[40]
