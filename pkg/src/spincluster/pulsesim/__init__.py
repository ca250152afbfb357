"""Pulse-level simulation of a single spin cluster."""

from .compiler import (
    CompiledGate,
    UncompilableGate,
    ccnot_on,
    cnot_on,
    compile_beamsplitter,
    compile_ccnot,
    compile_cnot,
    compile_hadamard,
    compile_not,
    compile_swap7,
    ideal_pulse_unitary,
    ideal_sequence_unitary,
    swap7_on,
)
from .dynamics import (
    ClusterModel,
    ClusterState,
    DriveModel,
    NoiseParams,
    NumericalFailure,
    UnknownSiteError,
    evolve,
    hamiltonian,
    run_sequence,
    sequence_unitary,
)
from .fidelity import FidelityResult, gate_fidelity
from .pulses import Gaussian, Pulse, Rectangular, format_sequence, parse_sequence, pi_pulse, rotation

__all__ = [
    "CompiledGate", "UncompilableGate", "ccnot_on", "cnot_on", "compile_beamsplitter", "compile_ccnot",
    "compile_cnot", "compile_hadamard", "compile_not", "compile_swap7", "ideal_pulse_unitary",
    "ideal_sequence_unitary", "swap7_on", "ClusterModel", "ClusterState", "DriveModel", "NoiseParams",
    "NumericalFailure", "UnknownSiteError", "evolve", "hamiltonian", "run_sequence", "sequence_unitary",
    "FidelityResult", "gate_fidelity", "Gaussian", "Pulse", "Rectangular", "format_sequence",
    "parse_sequence", "pi_pulse", "rotation",
]
