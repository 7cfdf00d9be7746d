"""Shared fixtures: small meshes, the convergence material and assembled forms."""

import numpy as np
import pytest

from dg_space import DGSpace
from form_assembler import assemble_forms, build_block_system
from materials import MaterialMap
from materials_loader import MaterialsLoader
from poly_mesh import cartesian_grid


@pytest.fixture(scope='session')
def loader():
    return MaterialsLoader()


@pytest.fixture(scope='session')
def convergence_region(loader):
    return loader.get_region('convergence')


@pytest.fixture(scope='session')
def homogeneous_region(loader):
    return loader.get_region('homogeneous')


@pytest.fixture
def unit_grid():
    return cartesian_grid(4, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def build_forms(region, nx=4, degree=2, temperature_coupling=True, mesh=None):
    mesh = mesh if mesh is not None else cartesian_grid(nx, nx)
    space = DGSpace(mesh, degree)
    materials = MaterialMap({1: region}, mesh, temperature_coupling=temperature_coupling)
    return assemble_forms(space, materials)


@pytest.fixture(scope='module')
def small_forms(convergence_region):
    """4x4 quads, degree 2, convergence material"""
    return build_forms(convergence_region)


@pytest.fixture(scope='module')
def small_block(small_forms):
    return build_block_system(small_forms)
