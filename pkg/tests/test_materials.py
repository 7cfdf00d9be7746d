from dataclasses import replace

import numpy as np
import pytest

from materials import MaterialMap, MaterialRegion, critical_frequency, derived_densities, validate
from materials_loader import MaterialsLoader, resolve_material
from poly_mesh import cartesian_grid
from tpe_errors import ConfigError, MaterialError


def test_homogeneous_densities(homogeneous_region):
    rho, rho_w = derived_densities(homogeneous_region)
    assert rho == pytest.approx(2155.0)
    assert rho_w == pytest.approx(6666.6667, rel=1e-6)
    # the velocity mass block is positive definite when rho * rho_w > rho_f^2
    assert rho * rho_w > homogeneous_region.rho_f ** 2


def test_convergence_densities(convergence_region):
    rho, rho_w = derived_densities(convergence_region)
    assert rho == pytest.approx(0.03)
    assert rho_w == pytest.approx(0.06)


def test_reduced_capacity(homogeneous_region, convergence_region):
    assert homogeneous_region.reduced_capacity == pytest.approx(2.7334, rel=1e-4)
    assert convergence_region.reduced_capacity == pytest.approx(0.0166667, rel=1e-5)


def test_coupling_weights(convergence_region):
    r = convergence_region
    assert r.coupling_u == pytest.approx((1.0 * 0.01 + 0.8 * 0.03) / 0.03)
    assert r.coupling_w == pytest.approx(0.01 / 0.03)
    decoupled = r.without_temperature_coupling()
    assert decoupled.coupling_u == 0.0 and decoupled.coupling_w == 0.0


def test_zero_c0_is_an_error(convergence_region):
    report = validate(replace(convergence_region, c0=0.0))
    assert not report.valid
    assert 'c0 must be positive' in report.errors


def test_tortuosity_one_is_a_warning(convergence_region):
    report = validate(convergence_region)
    assert report.valid
    assert any('tortuosity' in w for w in report.warnings)


def test_capacity_below_coupling_is_an_error(convergence_region):
    report = validate(replace(convergence_region, a0=0.001))
    assert any('a0 must be at least' in e for e in report.errors)


def test_beta_may_vanish_without_temperature(convergence_region):
    region = replace(convergence_region, beta=0.0)
    assert not validate(region).valid
    assert validate(region, temperature_coupling=False).valid


def test_critical_frequency(homogeneous_region):
    assert critical_frequency(homogeneous_region) == pytest.approx(23873.24, rel=1e-6)
    materials = MaterialMap({1: homogeneous_region}, cartesian_grid(1, 1))
    assert materials.check_source_frequency(5.0) == []
    assert materials.check_source_frequency(3.0e4) == [1]


def test_from_dict_errors(convergence_region):
    data = convergence_region.to_dict()
    assert MaterialRegion.from_dict(data) == convergence_region
    with pytest.raises(MaterialError, match='missing'):
        MaterialRegion.from_dict({k: v for k, v in data.items() if k != 'mu'})
    with pytest.raises(MaterialError, match='unknown'):
        MaterialRegion.from_dict(dict(data, viscosity=1.0))
    with pytest.raises(MaterialError, match='non-numeric'):
        MaterialRegion.from_dict(dict(data, mu='soft'))


def test_material_map_cell_values(homogeneous_region, loader):
    mesh = cartesian_grid(2, 1, region_boxes=[{'tag': 2, 'x_range': (0.5, 1.0)}])
    materials = MaterialMap({1: homogeneous_region, 2: loader.get_region('right_layer')}, mesh)
    assert np.allclose(materials.cell_values('mu'), [1.885e9, 9.0e9])
    assert np.allclose(materials.cell_values('lambda'), [4.433e8, 4.0e9])
    assert np.allclose(materials.cell_values('inv_k'), [1.0e9, 1.0e9])
    assert materials.region_of(1).alpha == pytest.approx(0.7143)
    with pytest.raises(MaterialError, match='unknown material quantity'):
        materials.cell_values('viscosity')


def test_material_map_requires_every_region(homogeneous_region):
    mesh = cartesian_grid(2, 1, region_boxes=[{'tag': 2, 'x_range': (0.5, 1.0)}])
    with pytest.raises(MaterialError, match='no material'):
        MaterialMap({1: homogeneous_region}, mesh)


def test_mixed_relaxation_times_are_rejected(convergence_region):
    mesh = cartesian_grid(2, 1, region_boxes=[{'tag': 2, 'x_range': (0.5, 1.0)}])
    materials = MaterialMap({1: convergence_region, 2: replace(convergence_region, tau=0.0)}, mesh)
    assert not materials.is_parabolic
    with pytest.raises(ConfigError):
        materials.relaxation_time()


def test_frozen_temperature_drops_coupling(convergence_region):
    materials = MaterialMap({1: convergence_region}, cartesian_grid(1, 1),
                            temperature_coupling=False)
    assert materials.cell_values('b0')[0] == 0.0
    assert materials.cell_values('c_u')[0] == 0.0


def test_loader_extends_parent(loader):
    right = loader.load_preset('right_layer')
    base = loader.load_preset('homogeneous')
    assert right['mu'] == pytest.approx(9.0e9)
    assert right['rho_s'] == base['rho_s']
    assert 'extends' not in right
    assert {'convergence', 'homogeneous', 'right_layer'} <= set(loader.list_available_presets())


def test_loader_overrides_and_errors(loader, tmp_path):
    region = resolve_material({'preset': 'convergence', 'tau': 0.0}, loader)
    assert region.tau == 0.0
    with pytest.raises(MaterialError, match='not found'):
        loader.get_region('granite')

    (tmp_path / 'a.yaml').write_text("a_material:\n  extends: b\n")
    (tmp_path / 'b.yaml').write_text("b_material:\n  extends: a\n")
    with pytest.raises(MaterialError, match='circular'):
        MaterialsLoader(str(tmp_path)).load_preset('a')
