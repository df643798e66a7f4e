"""Thermal-state toolkit for (1+1)D SU(2)/SU(3) lattice gauge models.

Submodules:
    paulis      Pauli-string/sum algebra and diagonal decompositions
    models      staggered-fermion qubit Hamiltonians, charges, observables
    projection  gauge-singlet kernels and restricted (projected) expectations
    thermal     exact Gibbs states, singlet spectra, phase-diagram sweeps
    circuits    ansatz/measurement circuits, transpilation, noise channels
    vqe         shot-based estimators, mesh direct search, thermal VQE driver
    cli         command-line interface (`thermolgt ...`)
"""

from .paulis import PauliString, PauliSum, partition_commuting, diagonal_pauli_decomposition

__version__ = "0.1.0"

__all__ = [
    "PauliString",
    "PauliSum",
    "partition_commuting",
    "diagonal_pauli_decomposition",
    "__version__",
]
