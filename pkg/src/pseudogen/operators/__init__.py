"""Discretized transfer operators, generators and reconstructions."""
from .generator import (
    build_g2_matrix,
    exponential_operator,
    smoluchowski_propagator,
    taylor_operator,
    transition_probability,
)
from .grid import UlamGrid
from .matrix import OperatorMatrix, read_triplets, write_triplets, write_weights
from .phase_space import PhaseSpacePropagator, trig_interpolate
from .pseudo import (
    Basis,
    NoiseDominatedWarning,
    basis_gram,
    eigen_basis,
    fourier_basis,
    galerkin_projection,
    pseudo_generator_fd,
)
from .ulam import (
    build_smoluchowski_transfer,
    build_spatial_transfer,
    build_transfer_sequence,
    simulate_counts,
    transfer_from_counts,
)

__all__ = [
    "Basis",
    "NoiseDominatedWarning",
    "OperatorMatrix",
    "PhaseSpacePropagator",
    "UlamGrid",
    "basis_gram",
    "build_g2_matrix",
    "build_smoluchowski_transfer",
    "build_spatial_transfer",
    "build_transfer_sequence",
    "eigen_basis",
    "exponential_operator",
    "fourier_basis",
    "galerkin_projection",
    "pseudo_generator_fd",
    "read_triplets",
    "simulate_counts",
    "smoluchowski_propagator",
    "taylor_operator",
    "transfer_from_counts",
    "transition_probability",
    "trig_interpolate",
    "write_triplets",
    "write_weights",
]
