"""Tomography of two-dimensional tensor network states (PEPS and PEPO)."""

from __future__ import annotations

from .errors import DegenerateTraceError, InvalidDistributionError, OptimizationError, ScaleError, StructureError
from .network import BondDims, Kind, LatticeShape, TensorNetworkState, contract, dof, random_state
from .povm import MeasurementMap, haar_basis, sic_qubit, stabilizer_design
from .recovery import RecoveryConfig, RecoveryReport, fit
from .sampling import ShotRecord, sample_all, sample_shots

__all__ = [
    "BondDims",
    "DegenerateTraceError",
    "InvalidDistributionError",
    "Kind",
    "LatticeShape",
    "MeasurementMap",
    "OptimizationError",
    "RecoveryConfig",
    "RecoveryReport",
    "ScaleError",
    "ShotRecord",
    "StructureError",
    "TensorNetworkState",
    "contract",
    "dof",
    "fit",
    "haar_basis",
    "random_state",
    "sample_all",
    "sample_shots",
    "sic_qubit",
    "stabilizer_design",
]
