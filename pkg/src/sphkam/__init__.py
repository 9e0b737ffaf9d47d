"""Reducibility of quasi-periodically forced linear Schrödinger operators on S^n."""
__version__ = "0.1.0"

from .spectral import (SphereSpec, HarmonicIndex, PotentialSpec, laplace_eigenvalue,
                       block_dimension, gaunt_coefficient, assemble_multiplication,
                       assemble_angular_power, unbounded_perturbation)
from .operators import (BlockOperator, FourierModes, NormParams, NormalForm, StateVector,
                        compose, commutator, decay_norm, beta_norm, lipschitz_norm,
                        scale_by_D, project_fourier, structure_check, diag_part,
                        lie_exponential, conjugate_operator, apply, sobolev_norm)
from .kam import (ConfigError, KamConfig, ResonanceError, kam_iterate, kam_step, solve_homological,
                  in_melnikov_set, in_diophantine_G0)
from .regularization import regularize, build_regularizer
from .pipeline import assemble_system, reduce_system, reduce_potentials
from .measure import estimate_excised_measure, sublevel_check
from .evolution import evolve_original, evolve_reduced, reduced_propagator
from .config import load_config, load_golden

__all__ = [
    "SphereSpec", "HarmonicIndex", "PotentialSpec", "laplace_eigenvalue", "block_dimension",
    "gaunt_coefficient", "assemble_multiplication", "assemble_angular_power", "unbounded_perturbation",
    "BlockOperator", "FourierModes", "NormParams", "NormalForm", "StateVector", "compose", "commutator",
    "decay_norm", "beta_norm", "lipschitz_norm", "scale_by_D", "project_fourier", "structure_check",
    "diag_part", "lie_exponential", "conjugate_operator", "apply", "sobolev_norm",
    "ConfigError", "KamConfig", "ResonanceError", "kam_iterate", "kam_step", "solve_homological",
    "in_melnikov_set", "in_diophantine_G0", "regularize", "build_regularizer",
    "assemble_system", "reduce_system", "reduce_potentials", "estimate_excised_measure", "sublevel_check",
    "evolve_original", "evolve_reduced", "reduced_propagator", "load_config", "load_golden",
]
