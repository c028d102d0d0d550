"""finepot: nonlinear fine potential theory on weighted grids.

Sobolev and variational p-capacities, Wiener-type thinness classification,
obstacle and Dirichlet p-energy problems, and the structural calculus of
(super)minimizers: pasting, min-combination, removability checks,
regularization envelopes and fine-limit probes.
"""

from .capacity import CapacityResult, sobolev_capacity, strictness_modulus, variational_capacity
from .errors import (ConfigError, ConvergenceError, DegenerateBoundsError, FinepotError,
                     InadmissibleWeightError, InfeasibleError, PreconditionError)
from .fine_analysis import (FineLimitProbe, RemovabilityReport, fine_limit_probe,
                            fine_regularize, min_combine, paste, remove_and_verify)
from .fine_topology import (FineBoundaryReport, FinelyOpenReport, SamplingSpec, WienerProfile,
                            fine_boundary, is_finely_open, positivity_set, wiener_profile)
from .grid import (EnergyReport, GridDomain, NodeSet, ScalarField, WeightSpec, build_domain,
                   gradient_magnitude, p_energy)
from .solver import (ObstacleProblem, SolveReport, VerifyReport, comparison_check,
                     solve_dirichlet, solve_obstacle, verify_superminimizer, verify_weak_form)

__version__ = "0.1.0"

__all__ = [
    "build_domain", "WeightSpec", "GridDomain", "NodeSet", "ScalarField",
    "EnergyReport", "gradient_magnitude", "p_energy",
    "CapacityResult", "variational_capacity", "sobolev_capacity", "strictness_modulus",
    "WienerProfile", "SamplingSpec", "FinelyOpenReport", "FineBoundaryReport",
    "wiener_profile", "is_finely_open", "fine_boundary", "positivity_set",
    "ObstacleProblem", "SolveReport", "VerifyReport",
    "solve_obstacle", "solve_dirichlet", "verify_superminimizer", "verify_weak_form",
    "comparison_check",
    "paste", "min_combine", "remove_and_verify", "fine_regularize",
    "fine_limit_probe", "FineLimitProbe", "RemovabilityReport",
    "FinepotError", "PreconditionError", "InadmissibleWeightError", "InfeasibleError",
    "DegenerateBoundsError", "ConvergenceError", "ConfigError",
]
