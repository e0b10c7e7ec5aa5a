"""
Conformal DAgger

Online conformal prediction under intermittent labels (QT, IQT, ACI, IACI),
a time-series coverage benchmark, and an interactive imitation-learning
simulator whose robot-gated queries are driven by conformal interval width.
"""

from .conformal import (
    ScheduleKind,
    ScheduleConfig,
    GammaSchedule,
    ObservationEvent,
    ScalarTracker,
    VectorIntervalTracker,
    AciTracker,
    BoundReport,
    qt_step,
    iqt_step,
    iqt_step_vector,
    aci_step,
    iaci_step,
    interval,
    coverage_bound,
    iaci_coverage_bound,
    weighted_empirical_quantile,
)
from .forecaster import ArModel, fit, predict
from .timeseries import BenchConfig, BenchResult, DatasetSpec, load_stream, run_bench, run_bench_seed
from .learner import Mlp, TrainConfig, ReplayBuffer, train, grad_check
from .env import Geometry, Scenario, ScenarioKind, ReachEnv, ExpertPolicy, collect_demos
from .gating import GateConfig, BaselineConfig, LazyGate, compose_obs_probability, robot_gate_probability
from .dagger import DaggerConfig, Method, RunResult, run_deployment_episode, run_full_experiment
from .metrics import MetricsCollector
from .exceptions import (
    ConformalDaggerError,
    InvalidConfigurationError,
    InvalidProbabilityError,
    DimensionMismatchError,
    EmptyWindowError,
    InsufficientHistoryError,
    ModelNotFittedError,
    TrainingDivergenceError,
    DatasetNotFoundError,
    UnknownMethodError,
    InvalidObservationError,
)

__version__ = "0.1.0"

__all__ = [
    # Conformal core
    "ScheduleKind",
    "ScheduleConfig",
    "GammaSchedule",
    "ObservationEvent",
    "ScalarTracker",
    "VectorIntervalTracker",
    "AciTracker",
    "BoundReport",
    "qt_step",
    "iqt_step",
    "iqt_step_vector",
    "aci_step",
    "iaci_step",
    "interval",
    "coverage_bound",
    "iaci_coverage_bound",
    "weighted_empirical_quantile",

    # Time-series benchmark
    "ArModel",
    "fit",
    "predict",
    "BenchConfig",
    "BenchResult",
    "DatasetSpec",
    "load_stream",
    "run_bench",
    "run_bench_seed",

    # Simulator
    "Mlp",
    "TrainConfig",
    "ReplayBuffer",
    "train",
    "grad_check",
    "Geometry",
    "Scenario",
    "ScenarioKind",
    "ReachEnv",
    "ExpertPolicy",
    "collect_demos",
    "GateConfig",
    "BaselineConfig",
    "LazyGate",
    "compose_obs_probability",
    "robot_gate_probability",
    "DaggerConfig",
    "Method",
    "RunResult",
    "run_deployment_episode",
    "run_full_experiment",
    "MetricsCollector",

    # Exceptions
    "ConformalDaggerError",
    "InvalidConfigurationError",
    "InvalidProbabilityError",
    "DimensionMismatchError",
    "EmptyWindowError",
    "InsufficientHistoryError",
    "ModelNotFittedError",
    "TrainingDivergenceError",
    "DatasetNotFoundError",
    "UnknownMethodError",
    "InvalidObservationError",
]
