"""Memory-budgeted tensor planning: MPS scoring, greedy plan generation and replay."""

from memwall.planner.exhaustive import StaticSearch, Treatment, discardable_tensors
from memwall.planner.generator import generate_plan
from memwall.planner.plan import ActionKind, ExecutionPlan, PlanAction, Strategy
from memwall.planner.pool import MemoryPoolSim, TensorRuntimeState, TensorState
from memwall.planner.replay import ReplayResult, Violation, ViolationKind, replay_plan
from memwall.planner.scoring import (
    MpsScore,
    choose_technique,
    freed_lifetime,
    is_evictable,
    max_mps_tensor,
    recompute_cost,
    score_tensor,
)

__all__ = [
    # Plans
    "ActionKind",
    "ExecutionPlan",
    "PlanAction",
    "Strategy",
    "generate_plan",
    # Exhaustive search
    "StaticSearch",
    "Treatment",
    "discardable_tensors",
    # Scoring
    "MpsScore",
    "choose_technique",
    "freed_lifetime",
    "is_evictable",
    "max_mps_tensor",
    "recompute_cost",
    "score_tensor",
    # Execution
    "MemoryPoolSim",
    "ReplayResult",
    "TensorRuntimeState",
    "TensorState",
    "Violation",
    "ViolationKind",
    "replay_plan",
]
