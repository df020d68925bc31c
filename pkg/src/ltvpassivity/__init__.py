"""Passivity analysis of linear time-varying systems.

Storage candidates are Hermitian matrix functions ``Q`` with storage
``V(t, x) = x* Q(t) x / 2`` for the supply rate ``Re(y* u)``.
"""

from .avstor import (AvailableStorageSampler, AvstorEstimate, HorizonPolicy, QuadraticSampler,
                     available_storage, minimality_audit, polarization_recover,
                     quadratic_identity_audit)
from .errors import LtvPassivityError
from .io import dump_definition, load_definition, load_system, parse_definition
from .loewner import (MonotonicityReport, StorageCandidate, auc_check, check_weak_decrease,
                      congruence, q_along_flow, right_continuous_representative)
from .matfun import PiecewiseMatrixFunction, make_grid
from .nsd import (NsdResult, kernel_chain, nsd_constant, nsd_flow, nsd_unitary, ql_factorization,
                  rank_profile)
from .odeflow import (LtvSystem, PiecewiseConstantInput, Trajectory, fundamental_solution,
                      solve_inhomogeneous, supply_integral, variation_of_constants)
from .storage import (adversarial_violation, dissipation_check, kernel_condition_check,
                      pointwise_supply_check, storage_regularity_audit)

__version__ = "0.1.0"

__all__ = [
    "AvailableStorageSampler", "AvstorEstimate", "HorizonPolicy", "QuadraticSampler",
    "available_storage", "minimality_audit", "polarization_recover", "quadratic_identity_audit",
    "LtvPassivityError", "dump_definition", "load_definition", "load_system", "parse_definition",
    "MonotonicityReport", "StorageCandidate", "auc_check", "check_weak_decrease", "congruence",
    "q_along_flow", "right_continuous_representative", "PiecewiseMatrixFunction", "make_grid",
    "NsdResult", "kernel_chain", "nsd_constant", "nsd_flow", "nsd_unitary", "ql_factorization",
    "rank_profile", "LtvSystem", "PiecewiseConstantInput", "Trajectory", "fundamental_solution",
    "solve_inhomogeneous", "supply_integral", "variation_of_constants", "adversarial_violation",
    "dissipation_check", "kernel_condition_check", "pointwise_supply_check",
    "storage_regularity_audit",
]
