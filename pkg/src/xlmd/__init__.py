"""Exact constrained MD and extended Lagrangian MD for quadratic latent couplings."""
from .errors import (BlowUp, DegenerateInput, DimensionMismatch, NotPositiveDefinite,
                     StabilityError, TimeMismatch)
from .linalg import SpdMatrix, cholesky_factor, spd_solve, sqrt_spd
from .model import (BuiltinModel, ConstantCoupling, ModelSpec, Scalar1d, ToyModel,
                    builtin_model, constraint_solve, coupled_force, exact_energy,
                    extended_energy, interaction_energy, optimal_velocity,
                    validate_derivatives)
from .dynamics import (ExtendedPhaseState, ICKind, Integrator, PhaseState, SimConfig,
                       exact_md_step, make_initial_condition, simulate, xlmd_step)
from .analysis import (ConvergenceReport, ErrorRecord, FlowMapResult, convergence_studies,
                       convergence_study, energy_drift, estimate_order, homogeneous_flow_map,
                       residual_trajectory, sup_error_accumulate)

__version__ = "0.1.0"
