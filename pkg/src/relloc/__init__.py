"""Measurement-induced localization of relational degrees of freedom.

Submodules
----------
phase_dist
    Grid densities over relative phase and separation.
fock
    Exact two-mode Fock-space oracle.
optical
    Photodetection records of two leaking optical modes.
bec
    Atom-by-atom interference of two condensates.
scattering
    Relative position of two particles probed by scattered light.
harness, cli, acceptance
    Batch runs, result files and acceptance checks.
"""

from . import bec, fock, optical, phase_dist, scattering
from .errors import (
    BimodalDistribution,
    DegenerateDistribution,
    GridMismatch,
    InfiniteRatio,
    InvalidParameter,
    InvalidRecord,
    NumericalFailure,
    RellocError,
    TruncationOverflow,
    UnsupportedSpec,
)
from .phase_dist import PhaseGrid, SeparationGrid

__version__ = "0.1.0"

__all__ = [
    "BimodalDistribution",
    "DegenerateDistribution",
    "GridMismatch",
    "InfiniteRatio",
    "InvalidParameter",
    "InvalidRecord",
    "NumericalFailure",
    "PhaseGrid",
    "RellocError",
    "SeparationGrid",
    "TruncationOverflow",
    "UnsupportedSpec",
    "bec",
    "fock",
    "optical",
    "phase_dist",
    "scattering",
]
