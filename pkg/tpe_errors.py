#!/usr/bin/env python3
"""
Exception hierarchy for the thermo-poroelastic dG simulator.
Every module raises a subclass of TPEError so the CLI can report failures
uniformly.
"""


class TPEError(Exception):
    """Base class for all simulator errors"""


class MeshError(TPEError):
    """Mesh file cannot be parsed or violates topology/geometry rules"""


class QuadratureError(TPEError):
    """Requested quadrature order is unavailable or insufficient"""


class MaterialError(TPEError):
    """Material coefficients violate a hard model constraint"""


class AssemblyError(TPEError):
    """Inconsistent inputs to matrix or load assembly"""


class SolverError(TPEError):
    """Factorization or linear solve failure"""


class SourceError(TPEError):
    """Point source or forcing term cannot be evaluated on the mesh"""


class ConfigError(TPEError):
    """Run configuration is malformed or inconsistent"""
