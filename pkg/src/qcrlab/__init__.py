"""Quantum Cramér-Rao type bounds and two-stage adaptive estimation."""

__version__ = "0.1.0"

from ._accel import NUMBA_ENABLED
from .bound_solver import BoundResult, SolverOptions, cr_bound, cr_bound_n, quantum_cr_bound
from .fisher_info import adaptive_chain_fisher, classical_fisher, sld_fisher
from .quantum_model import Povm, StateModel, make_model, tensor_power_model, tensor_povm, validate_povm

__all__ = [
    "NUMBA_ENABLED",
    "BoundResult",
    "SolverOptions",
    "cr_bound",
    "cr_bound_n",
    "quantum_cr_bound",
    "adaptive_chain_fisher",
    "classical_fisher",
    "sld_fisher",
    "Povm",
    "StateModel",
    "make_model",
    "tensor_power_model",
    "tensor_povm",
    "validate_povm",
]
