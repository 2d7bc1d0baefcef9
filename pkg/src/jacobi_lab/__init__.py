"""Jacobi curves, Lagrangian intersection indices and Morse counts for optimal control."""
from .glueing import PairPlane, chain_rule_check, decompose, glue, pair_lderivative, restrict_boundary
from .indices import LiftedPlane, find_transversal, kashiwara, leray, lift_extend, positive_maslov
from .lderiv import VariationBasis, galerkin_lderivative, jacobi_curve, lderiv_step, prepare
from .linearization import (ProblemLinearization, augment_time, builtin, free_particle, harmonic_oscillator,
                            isotropic_oscillator_2d, lq, moving_frame)
from .morse import brute_force_index, conjugate_points, hessian_assemble, morse_verify
from .symplectic import HalfInteger, LinearSubspace, SymplecticSpace, plane_distance

__version__ = "0.1.0"
