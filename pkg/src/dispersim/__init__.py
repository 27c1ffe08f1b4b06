"""Over-dispersed Euler simulation, dispersion diagnostics and likelihood fitting
for stochastic graphical compartment models."""

__version__ = "0.1.0"

from .graph import (ArrowGroup, DirectedGraph, GraphError, SystemState, apply_increments, balance_residual,
                    build_graph, incidence_matrix, partition_arrow_groups)
from .rates import CovariateTable, RateError, RateSpec, SeasonalForcing, eval_rate, integrate_rate
from .kernels import (KernelError, KernelSpec, exact_transition_rate, group_jump_rate, infinitesimal_moments,
                      sample_group)
from .model import Model, ModelError, build_model, load_model
from .simulate import SimulationPlan, Trajectory, simulate
from .dispersion import (DispersionEstimate, DispersionError, classify_systemic, estimate_infinitesimal,
                         integrated_birth_oracle, integrated_death_oracle, single_transition_rate)
from .inference import (FilterError, InferenceError, MeasurementModel, ObservedSystem, ParamVector, dmeasure,
                        iterated_filtering, particle_filter, profile_likelihood, replicated_loglik)
