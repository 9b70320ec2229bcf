"""Server-side plan cache keyed by graph, budget bucket, device tier and strategy."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

from memwall.codec.model import CodecModel
from memwall.exceptions import InfeasibleBudgetError
from memwall.graph import ComputationGraph
from memwall.models import DeviceProfile
from memwall.planner import ExecutionPlan, Strategy, generate_plan
from memwall.traces import MIB

logger = logging.getLogger(__name__)

DEFAULT_BUCKET_BYTES = 256 * MIB


@dataclass(frozen=True, order=True)
class PlanKey:
    graph_id: str
    bucket: int
    tier: int
    strategy: Strategy = Strategy.HYBRID


class PlanCache:
    """Memoizes plans per key; infeasible keys are remembered too.

    A key's plan is generated for the bucket's lower edge, so it fits every budget that maps to
    the bucket. Callers must always pass the same device for a given tier.
    """

    def __init__(
        self, bucket_bytes: int = DEFAULT_BUCKET_BYTES, codec_model: CodecModel | None = None
    ) -> None:
        if bucket_bytes <= 0:
            raise ValueError("bucket_bytes must be positive")
        self.bucket_bytes = bucket_bytes
        self.codec_model = codec_model or CodecModel.default()
        self._plans: dict[PlanKey, ExecutionPlan] = {}
        self._failures: dict[PlanKey, InfeasibleBudgetError] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._plans)

    def __contains__(self, key: object) -> bool:
        return key in self._plans or key in self._failures

    def key_for(
        self,
        graph: ComputationGraph,
        budget: int,
        tier: int,
        strategy: Strategy = Strategy.HYBRID,
    ) -> PlanKey:
        return PlanKey(graph.graph_id(), budget // self.bucket_bytes, tier, strategy)

    def budget_for(self, key: PlanKey) -> int:
        return key.bucket * self.bucket_bytes

    def generate_for_key(
        self, graph: ComputationGraph, key: PlanKey, device: DeviceProfile
    ) -> ExecutionPlan:
        """Generate the key's plan without consulting or filling the cache."""
        return generate_plan(
            graph, device, self.budget_for(key), self.codec_model, key.strategy
        )

    def get_or_generate(
        self,
        graph: ComputationGraph,
        budget: int,
        tier: int,
        device: DeviceProfile,
        strategy: Strategy = Strategy.HYBRID,
    ) -> ExecutionPlan:
        """Return the cached plan for the request, generating it on a miss.

        Raises:
            InfeasibleBudgetError: If the bucket's budget admits no plan.
        """
        key = self.key_for(graph, budget, tier, strategy)
        with self._lock:
            if key in self._plans:
                self.hits += 1
                return self._plans[key]
            if key in self._failures:
                self.hits += 1
                raise self._failures[key]
            self.misses += 1
            logger.debug("plan cache miss for %s", key)
            try:
                plan = self.generate_for_key(graph, key, device)
            except InfeasibleBudgetError as exc:
                self._failures[key] = exc
                raise
            self._plans[key] = plan
            return plan
