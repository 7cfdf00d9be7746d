#!/usr/bin/env python3
"""
Thermo-Poroelastic Materials
Per-region coefficients, derived densities, model-assumption validation and
the cell-wise coefficient tables used by assembly.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from poly_mesh import PolyMesh
from tpe_errors import ConfigError, MaterialError

logger = logging.getLogger(__name__)

# YAML field name -> attribute name ('lambda' is a keyword)
FIELD_NAMES = {
    'a0': 'a0', 'b0': 'b0', 'c0': 'c0', 'alpha': 'alpha', 'beta': 'beta',
    'mu': 'mu', 'lambda': 'lam', 'k': 'k', 'theta': 'theta',
    'rho_f': 'rho_f', 'rho_s': 'rho_s', 'phi': 'phi', 'a': 'a', 'tau': 'tau',
}


@dataclass(frozen=True)
class MaterialRegion:
    a0: float
    b0: float
    c0: float
    alpha: float
    beta: float
    mu: float
    lam: float
    k: float
    theta: float
    rho_f: float
    rho_s: float
    phi: float
    a: float
    tau: float

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], source: str = 'material') -> 'MaterialRegion':
        missing = [name for name in FIELD_NAMES if name not in data]
        if missing:
            raise MaterialError(f"{source}: missing coefficients {', '.join(missing)}")
        unknown = [key for key in data if key not in FIELD_NAMES]
        if unknown:
            raise MaterialError(f"{source}: unknown coefficients {', '.join(unknown)}")
        try:
            values = {FIELD_NAMES[name]: float(data[name]) for name in FIELD_NAMES}
        except (TypeError, ValueError) as e:
            raise MaterialError(f"{source}: non-numeric coefficient ({e})")
        return cls(**values)

    def to_dict(self) -> Dict[str, float]:
        attrs = asdict(self)
        return {name: attrs[attr] for name, attr in FIELD_NAMES.items()}

    def without_temperature_coupling(self) -> 'MaterialRegion':
        return replace(self, b0=0.0, beta=0.0)

    @property
    def reduced_capacity(self) -> float:
        """a0 - b0^2/c0, the weight of the temperature mass matrix"""
        return self.a0 - self.b0 ** 2 / self.c0

    @property
    def coupling_u(self) -> float:
        return (self.alpha * self.b0 + self.beta * self.c0) / self.c0

    @property
    def coupling_w(self) -> float:
        return self.b0 / self.c0


@dataclass
class ValidationReport:
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    reduced_capacity: float = math.nan

    @property
    def valid(self) -> bool:
        return not self.errors


def derived_densities(r: MaterialRegion):
    """Bulk density rho and effective fluid density rho_w"""
    if not (0.0 < r.phi < 1.0):
        raise MaterialError(f"porosity phi must lie in (0, 1), got {r.phi}")
    rho = r.phi * r.rho_f + (1.0 - r.phi) * r.rho_s
    rho_w = r.a / r.phi * r.rho_f
    return rho, rho_w


def validate(r: MaterialRegion, temperature_coupling: bool = True) -> ValidationReport:
    """Check the model assumptions; beta may vanish when temperature is decoupled"""
    report = ValidationReport()
    if r.c0 > 0:
        report.reduced_capacity = r.reduced_capacity
    else:
        report.errors.append("c0 must be positive")
    if r.b0 < 0:
        report.errors.append("b0 must be non-negative")
    if r.c0 > 0 and report.reduced_capacity < 0:
        report.errors.append(f"a0 must be at least b0^2/c0 (a0 - b0^2/c0 = {report.reduced_capacity:.6g})")
    if not (0.0 < r.phi < 1.0):
        report.errors.append("phi must lie in (0, 1)")
    if r.a < 1.0:
        report.errors.append("tortuosity a must be at least 1")
    elif r.a == 1.0:
        report.warnings.append("tortuosity a = 1 (the model assumes a > 1)")
    if not (r.phi < r.alpha <= 1.0):
        report.warnings.append(f"Biot-Willis alpha = {r.alpha} outside (phi, 1] = ({r.phi}, 1]")
    positive = ('beta',) if temperature_coupling else ()
    for name in positive + ('mu', 'lam', 'k', 'theta', 'rho_f', 'rho_s'):
        if getattr(r, name) <= 0:
            label = 'lambda' if name == 'lam' else name
            report.errors.append(f"{label} must be positive")
    if r.tau < 0:
        report.errors.append("tau must be non-negative")
    return report


def critical_frequency(r: MaterialRegion) -> float:
    """Biot critical frequency phi / (2 pi a k rho_f), in Hz"""
    return r.phi / (2.0 * math.pi * r.a * r.k * r.rho_f)


class MaterialMap:
    """Region tag -> MaterialRegion, with cell-wise coefficient tables"""

    def __init__(self, regions: Mapping[int, MaterialRegion], mesh: Optional[PolyMesh] = None,
                 temperature_coupling: bool = True) -> None:
        if not regions:
            raise MaterialError("no material regions given")
        self.temperature_coupling = temperature_coupling
        self.regions: Dict[int, MaterialRegion] = {
            int(tag): (r if temperature_coupling else r.without_temperature_coupling())
            for tag, r in regions.items()
        }
        for tag, r in self.regions.items():
            report = validate(r, temperature_coupling)
            for warning in report.warnings:
                logger.warning("region %d: %s", tag, warning)
            if not report.valid:
                raise MaterialError(f"region {tag}: " + "; ".join(report.errors))
        self._cells: Dict[str, np.ndarray] = {}
        self.mesh = None
        if mesh is not None:
            self.bind(mesh)

    def bind(self, mesh: PolyMesh) -> 'MaterialMap':
        missing = [tag for tag in mesh.regions if tag not in self.regions]
        if missing:
            raise MaterialError(f"no material for region tags {missing}")
        self.mesh = mesh
        self._cells = {}
        return self

    def region_of(self, cell: int) -> MaterialRegion:
        if self.mesh is None:
            raise MaterialError("material map is not bound to a mesh")
        return self.regions[int(self.mesh.region_tags[cell])]

    def cell_values(self, name: str) -> np.ndarray:
        """Element-wise constant coefficient (attribute or derived quantity) per cell"""
        if self.mesh is None:
            raise MaterialError("material map is not bound to a mesh")
        if name not in self._cells:
            per_region = {tag: self._region_value(r, name) for tag, r in self.regions.items()}
            self._cells[name] = np.array([per_region[int(t)] for t in self.mesh.region_tags])
        return self._cells[name]

    @staticmethod
    def _region_value(r: MaterialRegion, name: str) -> float:
        if name == 'rho':
            return derived_densities(r)[0]
        if name == 'rho_w':
            return derived_densities(r)[1]
        if name == 'm_T':
            return r.reduced_capacity
        if name == 'c_u':
            return r.coupling_u
        if name == 'c_w':
            return r.coupling_w
        if name == 'inv_c0':
            return 1.0 / r.c0
        if name == 'inv_k':
            return 1.0 / r.k
        if name == 'lambda':
            return r.lam
        if not hasattr(r, name):
            raise MaterialError(f"unknown material quantity '{name}'")
        return float(getattr(r, name))

    def relaxation_time(self) -> np.ndarray:
        """Cell-wise tau; all regions must share tau = 0 or all be positive"""
        taus = [r.tau for r in self.regions.values()]
        if any(t == 0 for t in taus) and any(t > 0 for t in taus):
            raise ConfigError("relaxation time tau must be zero in every region or positive "
                              "in every region")
        return self.cell_values('tau')

    @property
    def is_parabolic(self) -> bool:
        return all(r.tau == 0 for r in self.regions.values())

    def check_source_frequency(self, f0: float) -> List[int]:
        """Region tags whose critical frequency does not exceed f0"""
        offending = []
        for tag, r in sorted(self.regions.items()):
            fc = critical_frequency(r)
            if f0 >= fc:
                logger.warning("source peak frequency %.4g Hz >= critical frequency %.4g Hz "
                               "of region %d", f0, fc, tag)
                offending.append(tag)
        return offending
