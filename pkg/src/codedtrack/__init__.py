"""Coded distributed tracking: a straggler-tolerant coded Kalman filter
with erasure-coded observations, a decoding monitor, and an experiment harness
for multi-vehicle cooperative localization."""

from .coding import (
    CodeDesign,
    design_metadata,
    design_random_mds,
    design_replication,
    estimate_ops,
    verify_design,
)
from .harness import (
    RunConfig,
    StepRecord,
    SummaryRecord,
    aggregate,
    encode_observations,
    parse_config_file,
    run_experiment,
    run_simulation,
    transient_cutoff,
)
from .kalman import (
    FilterState,
    GainRecord,
    average_estimates,
    predict,
    uncoded_worker_update,
    update_all,
    update_one,
)
from .model import (
    ConfigurationError,
    FilterError,
    ObservationModel,
    Observer,
    ProcessModel,
    StackedObservation,
    Trajectory,
    observe,
    simulate,
    step_state,
)
from .monitor import (
    DecodeBatch,
    MonitorState,
    assemble_covariance,
    compute_r_full,
    decode,
    update_P_heuristic,
)
from .numerics import Whitener, build_whitener, lsmr_solve, numerical_rank
from .straggler import AvailabilityState, sample_unavailability, step_available
from .vehicles import (
    SigmaSet,
    VehicleScenario,
    build_fv_qv,
    build_observer,
    build_scenario,
    build_topology,
    draw_initial_state,
)
from .worker import CodedEstimate, WorkerOutput, coded_predict, coded_update_one, worker_step

__all__ = [
    "AvailabilityState",
    "CodeDesign",
    "CodedEstimate",
    "ConfigurationError",
    "DecodeBatch",
    "FilterError",
    "FilterState",
    "GainRecord",
    "MonitorState",
    "ObservationModel",
    "Observer",
    "ProcessModel",
    "RunConfig",
    "SigmaSet",
    "StackedObservation",
    "StepRecord",
    "SummaryRecord",
    "Trajectory",
    "VehicleScenario",
    "Whitener",
    "WorkerOutput",
    "aggregate",
    "assemble_covariance",
    "average_estimates",
    "build_fv_qv",
    "build_observer",
    "build_scenario",
    "build_topology",
    "build_whitener",
    "coded_predict",
    "coded_update_one",
    "compute_r_full",
    "decode",
    "design_metadata",
    "design_random_mds",
    "design_replication",
    "draw_initial_state",
    "encode_observations",
    "estimate_ops",
    "lsmr_solve",
    "numerical_rank",
    "observe",
    "parse_config_file",
    "predict",
    "run_experiment",
    "run_simulation",
    "sample_unavailability",
    "simulate",
    "step_available",
    "step_state",
    "transient_cutoff",
    "uncoded_worker_update",
    "update_P_heuristic",
    "update_all",
    "update_one",
    "verify_design",
    "worker_step",
]
