"""Cooperative map matching lab.

Joint estimation of GNSS common pseudo-range biases and the states of a
group of connected vehicles with a Rao-Blackwellized particle filter, plus
the static and smoothed-static baselines and a synthetic GNSS world to run
them in.
"""
from .baselines import (CmmResult, CorrectionParticleSet, PointFix,
                        SmoothedStaticTracker, point_fix, static_cmm_step)
from .exceptions import (ConfigurationError, DegenerateFilterError,
                         ScenarioError, UnderdeterminedFixError)
from .filtercore import (GateConfig, GateDecision, VehicleBelief, chi2_cdf,
                         chi2_quantile, ekf_update, gate_measurement,
                         predict_belief, predicted_range, resample,
                         weight_factor)
from .harness import (ScenarioConfig, compute_rms, load_config,
                      run_experiment, summarize)
from .lanemap import (Lane, LaneMap, blurred_weight, in_lane, lane_mass,
                      load_lane_map, save_lane_map)
from .rbpf import Estimate, FilterConfig, Particle, RbpfState, StepDiagnostics
from .scenario import (default_constellation, default_vehicle_scripts,
                       generate_truth, intersection_lane_map)
from .world import (CommonBiasTruth, ConstellationConfig, MeasurementEpoch,
                    NoiseConfig, SatelliteState, TruthVehicleState,
                    measure_pseudoranges, propagate_constellation,
                    step_common_bias, step_truth_vehicle)

__version__ = "0.1.0"
