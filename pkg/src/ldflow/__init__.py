"""Empirical measure and flow large deviations for jump chains with absorbing states."""
from .measures import Flow, Measure, tv_distance
from .model import (AssumptionReport, DiscretizedSpace, ModelError, PhononInstance, RateModel,
                    StationaryError, invariant_measure, load_model, make_phonon_instance,
                    model_from_dict, model_to_dict, save_model, skeleton_stationary,
                    stationary_flow, three_cell_model, two_cell_model, validate_assumptions)
from .oracle import contraction_oracle, event_infimum
from .ratefn import (MeasureFlowPair, OptConfig, RateReport, donsker_varadhan, flow_rate,
                     integrability_check, phi_fn, psi, r_F, rate_I, rate_I_variational)
from .simulator import (BatchResult, JumpSampler, SimulationError, Trajectory,
                        additive_functional, batch_sample, empirical_flow, empirical_measure,
                        sample_trajectory)
from .tilting import (Event, ISEstimate, TiltedModel, build_tilted, estimate_ld_probability,
                      log_rn_derivative, martingale_weight)

__version__ = "0.1.0"
