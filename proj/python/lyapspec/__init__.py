"""Entropy and Lyapunov spectra of a horseshoe whose entropy spectrum jumps.

Thin wrapper over the C++ core. Points are (x, y) tuples, tilts (p, q).
"""

from ._core import (
    ConfigError,
    InvalidArgument,
    NumericalFailure,
    Params,
    VerificationFailure,
    depth_rotation_set,
    entropy_primal,
    entropy_spectrum,
    equilibrium,
    pressure,
    probe,
    rotation_set_hull,
    verify_stage,
    vertices,
)

__all__ = [
    "ConfigError",
    "InvalidArgument",
    "NumericalFailure",
    "Params",
    "VerificationFailure",
    "depth_rotation_set",
    "entropy_primal",
    "entropy_spectrum",
    "equilibrium",
    "pressure",
    "probe",
    "rotation_set_hull",
    "verify_stage",
    "vertices",
]
