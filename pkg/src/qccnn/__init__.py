"""Hybrid quantum-classical CNN lab with quantum pooling circuits.

Statevector-simulated quantum convolution kernels (with four pooling
families), parameter-shift training against a classical baseline, and
Fisher-information effective-dimension analysis of every circuit.
"""

from .circuits import ANSATZ_KEYS, Ansatz, build_ansatz
from .data import Dataset, DataError, SyntheticSpec, generate_synthetic, load_dataset
from .nn import HybridModel, fit, make_model
from .sim import (
    Circuit,
    GateOp,
    MidMeasure,
    Statevector,
    defer_measurements,
    run_deferred,
    run_trajectories,
)

__version__ = "0.1.0"

__all__ = [
    "ANSATZ_KEYS",
    "Ansatz",
    "Circuit",
    "DataError",
    "Dataset",
    "GateOp",
    "HybridModel",
    "MidMeasure",
    "Statevector",
    "SyntheticSpec",
    "build_ansatz",
    "defer_measurements",
    "fit",
    "generate_synthetic",
    "load_dataset",
    "make_model",
    "run_deferred",
    "run_trajectories",
    "__version__",
]
