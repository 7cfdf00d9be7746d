#!/usr/bin/env python3
"""
Point Sources
Moment-tensor point sources f = -M div(delta(x - x_s)) h(t) with a Ricker-like
time history or tabulated samples.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from dg_space import DGSpace
from tpe_errors import MeshError, SourceError

logger = logging.getLogger(__name__)

SOURCE_TARGETS = ('f', 'g', 'both')


@dataclass(frozen=True)
class TimeHistory:
    """h(t) = A0 cos(2 pi (t - t0) f0) exp(-2 (t - t0)^2 f0^2)"""
    A0: float
    f0: float
    t0: float

    def __post_init__(self):
        if self.f0 <= 0:
            raise SourceError(f"peak frequency f0 must be positive, got {self.f0}")

    @property
    def peak_frequency(self) -> float:
        return self.f0


@dataclass(frozen=True)
class TabulatedHistory:
    """Samples (t, h) interpolated linearly, zero outside the table"""
    times: tuple
    values: tuple
    peak_frequency: Optional[float] = None

    def __post_init__(self):
        if len(self.times) < 2 or len(self.times) != len(self.values):
            raise SourceError("tabulated history needs at least two (t, h) samples")
        if np.any(np.diff(self.times) <= 0):
            raise SourceError("tabulated history times must be strictly increasing")

    @classmethod
    def from_samples(cls, samples: Sequence[Sequence[float]]) -> 'TabulatedHistory':
        data = np.asarray(samples, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2:
            raise SourceError("samples must be a list of [t, h] pairs")
        return cls(times=tuple(data[:, 0]), values=tuple(data[:, 1]))


History = Union[TimeHistory, TabulatedHistory]


def time_history(th: History, t: float) -> float:
    if isinstance(th, TabulatedHistory):
        return float(np.interp(t, th.times, th.values, left=0.0, right=0.0))
    s = t - th.t0
    return th.A0 * math.cos(2.0 * math.pi * s * th.f0) * math.exp(-2.0 * s * s * th.f0 * th.f0)


@dataclass
class MomentTensorSource:
    location: np.ndarray
    moment: np.ndarray
    history: History
    target: str = 'f'
    name: str = 'source'
    _spatial: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=float)
        self.moment = np.asarray(self.moment, dtype=float)
        if self.location.shape != (2,):
            raise SourceError(f"{self.name}: location must be a 2D point")
        if self.moment.shape != (2, 2):
            raise SourceError(f"{self.name}: moment tensor must be 2x2")
        scale = max(np.abs(self.moment).max(), 1e-300)
        if np.abs(self.moment - self.moment.T).max() > 1e-12 * scale:
            raise SourceError(f"{self.name}: moment tensor must be symmetric")
        if self.target not in SOURCE_TARGETS:
            raise SourceError(f"{self.name}: target must be one of {SOURCE_TARGETS}, "
                              f"got '{self.target}'")

    @classmethod
    def from_config(cls, data: Dict[str, Any], name: str = 'source') -> 'MomentTensorSource':
        try:
            m = data.get('moment', {})
            moment = [[m.get('xx', 0.0), m.get('xy', 0.0)],
                      [m.get('xy', 0.0), m.get('yy', 0.0)]]
            if 'samples' in data:
                history = TabulatedHistory.from_samples(data['samples'])
            else:
                history = TimeHistory(A0=float(data['A0']), f0=float(data['f0']),
                                      t0=float(data['t0']))
            return cls(location=np.array(data['location'], dtype=float),
                       moment=np.array(moment, dtype=float), history=history,
                       target=data.get('target', 'f'), name=name)
        except KeyError as e:
            raise SourceError(f"{name}: missing source field {e}")

    def spatial_load(self, space: DGSpace) -> np.ndarray:
        key = id(space)
        if key not in self._spatial:
            self._spatial[key] = moment_rhs_spatial(self, space)
        return self._spatial[key]

    def contribution(self, space: DGSpace, t: float) -> np.ndarray:
        return time_history(self.history, t) * self.spatial_load(space)


def moment_rhs_spatial(src: MomentTensorSource, space: DGSpace) -> np.ndarray:
    """Time-independent part of the moment-tensor load: M : grad(phi)(x_s)"""
    try:
        cell = space.mesh.locate_point(src.location)
    except MeshError as e:
        raise SourceError(f"{src.name}: {e}")
    _, dphi = space.basis_eval(cell, src.location[None, :])
    grads = dphi[:, 0, :]
    load = np.zeros(2 * space.n_dofs)
    dofs = space.cell_dofs(cell)
    for a in range(2):
        load[dofs + a * space.n_dofs] = grads @ src.moment[a]
    logger.debug("%s located in cell %d", src.name, cell)
    return load


def moment_rhs(src: MomentTensorSource, space: DGSpace, t: float) -> np.ndarray:
    return src.contribution(space, t)
