"""Memory-budgeted tensor planning and federated training simulation for phone fleets."""

from memwall.cache import PlanCache, PlanKey
from memwall.cluster import ClusterAssignment, cluster_clients, least_capable
from memwall.codec import (
    ActivationTensor,
    CodecConfig,
    CodecModel,
    CompressedTensor,
    compress_tensor,
    decompress_tensor,
)
from memwall.config import AblationConfig, SimulationConfig, SimulationParams, load_config
from memwall.exceptions import (
    ConfigError,
    ContractViolationError,
    DecodeError,
    IncompleteProfileError,
    InfeasibleBudgetError,
    MemwallError,
    NoDataError,
    SchemaError,
    SelectionError,
)
from memwall.fleet import ClientSpec, FleetSpec, Tier, generate_fleet, load_fleet
from memwall.graph import ComputationGraph, OpSpec, TensorSpec, compute_lifetimes, load_graph
from memwall.graphgen import random_dag, training_graph
from memwall.models import (
    ClientReport,
    DeviceProfile,
    Layout,
    MemoryTraceSample,
    OpKind,
    ProcessInfo,
    SwapKind,
)
from memwall.orchestrator import (
    LocalUpdate,
    RoundRecord,
    SimulationResult,
    SimulationSummary,
    aggregate,
    compare_variants,
    plan_round,
    run_simulation,
    simulate_local_round,
)
from memwall.planner import ExecutionPlan, Strategy, generate_plan, replay_plan
from memwall.predictor import (
    BudgetPredictor,
    PredictorConfig,
    RegenConfig,
    RoundStats,
    predict_budget,
    should_regenerate,
)
from memwall.selector import (
    ClientProfile,
    GlobalModelReq,
    SelectionConfig,
    client_utility,
    select_clients,
)
from memwall.traces import TraceStream, load_trace, synthetic_trace

__version__ = "0.1.0"
__all__ = [
    # Graphs
    "ComputationGraph",
    "OpSpec",
    "TensorSpec",
    "compute_lifetimes",
    "load_graph",
    "random_dag",
    "training_graph",
    # Planner
    "ExecutionPlan",
    "Strategy",
    "generate_plan",
    "replay_plan",
    "PlanCache",
    "PlanKey",
    # Codec
    "ActivationTensor",
    "CodecConfig",
    "CodecModel",
    "CompressedTensor",
    "compress_tensor",
    "decompress_tensor",
    # Selection and clustering
    "ClientProfile",
    "GlobalModelReq",
    "SelectionConfig",
    "client_utility",
    "select_clients",
    "ClusterAssignment",
    "cluster_clients",
    "least_capable",
    # Budget prediction
    "BudgetPredictor",
    "PredictorConfig",
    "RegenConfig",
    "RoundStats",
    "predict_budget",
    "should_regenerate",
    # Simulation
    "AblationConfig",
    "SimulationConfig",
    "SimulationParams",
    "load_config",
    "ClientSpec",
    "FleetSpec",
    "Tier",
    "generate_fleet",
    "load_fleet",
    "TraceStream",
    "load_trace",
    "synthetic_trace",
    "LocalUpdate",
    "RoundRecord",
    "SimulationResult",
    "SimulationSummary",
    "aggregate",
    "compare_variants",
    "plan_round",
    "run_simulation",
    "simulate_local_round",
    # Models
    "ClientReport",
    "DeviceProfile",
    "Layout",
    "MemoryTraceSample",
    "OpKind",
    "ProcessInfo",
    "SwapKind",
    # Exceptions
    "MemwallError",
    "ConfigError",
    "ContractViolationError",
    "DecodeError",
    "IncompleteProfileError",
    "InfeasibleBudgetError",
    "NoDataError",
    "SchemaError",
    "SelectionError",
]
