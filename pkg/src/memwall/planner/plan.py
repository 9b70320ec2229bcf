"""Execution plans and their structured-text form."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Any

import yaml

from memwall.exceptions import SchemaError


class ActionKind(str, Enum):
    EVICT = "EVICT"
    COMPRESS = "COMPRESS"
    DECOMPRESS = "DECOMPRESS"
    RECOMPUTE = "RECOMPUTE"
    ALLOC = "ALLOC"


class Strategy(str, Enum):
    """Which memory-saving techniques the planner may use."""

    HYBRID = "hybrid"
    EVICT_ONLY = "evict-only"
    COMPRESS_ONLY = "compress-only"


@dataclass(frozen=True)
class PlanAction:
    """One action taken before the op at ``step`` runs. ``cost`` is in seconds."""

    step: int
    tensor: int
    action: ActionKind
    cost: float = 0.0


@dataclass(frozen=True)
class ExecutionPlan:
    """Ordered tensor actions with the plan's estimated latency and peak memory."""

    actions: tuple[PlanAction, ...]
    est_latency: float
    peak_memory: int
    budget: int
    strategy: Strategy = Strategy.HYBRID
    graph_id: str = ""

    def action_counts(self) -> dict[str, int]:
        counts = Counter(a.action.value for a in self.actions)
        return {kind.value: counts.get(kind.value, 0) for kind in ActionKind}

    @property
    def reclamations(self) -> int:
        """Number of EVICT and COMPRESS actions."""
        return sum(1 for a in self.actions if a.action in (ActionKind.EVICT, ActionKind.COMPRESS))

    def to_dict(self) -> dict[str, Any]:
        return {
            "graph_id": self.graph_id,
            "strategy": self.strategy.value,
            "budget": self.budget,
            "est_latency": self.est_latency,
            "peak_memory": self.peak_memory,
            "actions": [
                {"step": a.step, "tensor": a.tensor, "action": a.action.value, "cost": a.cost}
                for a in self.actions
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExecutionPlan:
        """Create ExecutionPlan from a plan document."""
        try:
            actions = tuple(
                PlanAction(
                    step=int(a["step"]),
                    tensor=int(a["tensor"]),
                    action=ActionKind(a["action"]),
                    cost=float(a.get("cost", 0.0)),
                )
                for a in data.get("actions", [])
            )
            return cls(
                actions=actions,
                est_latency=float(data["est_latency"]),
                peak_memory=int(data["peak_memory"]),
                budget=int(data["budget"]),
                strategy=Strategy(data.get("strategy", Strategy.HYBRID.value)),
                graph_id=str(data.get("graph_id", "")),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"malformed plan document: {exc}") from exc

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> ExecutionPlan:
        data = yaml.safe_load(text)
        if not isinstance(data, dict):
            raise SchemaError("plan document must be a mapping")
        return cls.from_dict(data)
