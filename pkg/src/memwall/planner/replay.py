"""Step-by-step replay of an execution plan against a graph."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

from memwall.codec.model import CodecModel
from memwall.graph import ComputationGraph, op_time
from memwall.models import DeviceProfile
from memwall.planner.plan import ActionKind, ExecutionPlan, PlanAction
from memwall.planner.pool import MemoryPoolSim, TensorState
from memwall.planner.scoring import producer_kind, recompute_cost

logger = logging.getLogger(__name__)


class ViolationKind(str, Enum):
    MISSING_TENSOR = "missing-tensor"
    OVER_BUDGET = "over-budget"
    DOUBLE_ALLOC = "double-alloc"
    ALLOC_OUT_OF_ORDER = "alloc-out-of-order"
    INVALID_STATE = "invalid-state"


@dataclass(frozen=True)
class Violation:
    step: int
    kind: ViolationKind
    tensor: int | None
    message: str


@dataclass
class ReplayResult:
    """What a plan actually does when executed."""

    peak_memory: int
    latency: float
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class _Replayer:
    def __init__(
        self,
        plan: ExecutionPlan,
        graph: ComputationGraph,
        device: DeviceProfile,
        codec_model: CodecModel,
    ) -> None:
        self.plan = plan
        self.graph = graph
        self.device = device
        self.codec = codec_model
        self.pool = MemoryPoolSim(plan.budget, strict=False)
        self.states: dict[int, TensorState] = {}
        self.costs: list[float] = []
        self.violations: list[Violation] = []

    def _flag(self, step: int, kind: ViolationKind, tensor: int | None, message: str) -> None:
        self.violations.append(Violation(step, kind, tensor, message))

    def _check_budget(self, step: int, tensor: int) -> None:
        if self.pool.over_budget():
            self._flag(
                step,
                ViolationKind.OVER_BUDGET,
                tensor,
                f"{self.pool.used} bytes resident exceeds budget {self.plan.budget}",
            )

    def _expect(self, action: PlanAction, state: TensorState | None) -> bool:
        current = self.states.get(action.tensor)
        if current is state:
            return True
        shown = "absent" if current is None else current.value
        self._flag(
            action.step,
            ViolationKind.INVALID_STATE,
            action.tensor,
            f"{action.action.value} on tensor {action.tensor} in state {shown}",
        )
        return False

    def _alloc(self, action: PlanAction) -> None:
        tid, step = action.tensor, action.step
        if tid in self.states:
            self._flag(step, ViolationKind.DOUBLE_ALLOC, tid, f"tensor {tid} allocated twice")
            return
        expected = self.graph.alloc_step(tid)
        if self.graph.tensor(tid).is_input:
            in_order = expected is not None and step >= expected
        else:
            in_order = step == expected
        if not in_order:
            self._flag(
                step,
                ViolationKind.ALLOC_OUT_OF_ORDER,
                tid,
                f"tensor {tid} allocated at step {step}, expected {expected}",
            )
        self.pool.alloc(tid, self.graph.tensor(tid).bytes)
        self.states[tid] = TensorState.LIVE

    def _apply(self, action: PlanAction) -> None:
        tid = action.tensor
        full = self.graph.tensor(tid).bytes
        kind = producer_kind(self.graph, tid)
        if action.action is ActionKind.ALLOC:
            self._alloc(action)
        elif action.action is ActionKind.EVICT:
            if self.states.get(tid) in (TensorState.LIVE, TensorState.COMPRESSED):
                self.pool.free(tid)
                self.states[tid] = TensorState.EVICTED
            else:
                self._expect(action, TensorState.LIVE)
        elif action.action is ActionKind.COMPRESS:
            if self._expect(action, TensorState.LIVE):
                self.pool.resize(tid, self.codec.compressed_bytes(kind, full))
                self.states[tid] = TensorState.COMPRESSED
                self.costs.append(self.codec.compress_time(kind, full))
        elif action.action is ActionKind.DECOMPRESS:
            if self._expect(action, TensorState.COMPRESSED):
                self.pool.resize(tid, full)
                self.states[tid] = TensorState.LIVE
                self.costs.append(self.codec.decompress_time(kind, full))
        elif action.action is ActionKind.RECOMPUTE and self._expect(action, TensorState.EVICTED):
            producer = self.graph.tensor(tid).producer
            assert producer is not None
            for src in self.graph.op(producer).inputs:
                if self.states.get(src) is not TensorState.LIVE:
                    self._flag(
                        action.step,
                        ViolationKind.MISSING_TENSOR,
                        src,
                        f"recomputing tensor {tid} needs tensor {src}",
                    )
            self.pool.alloc(tid, full)
            self.states[tid] = TensorState.LIVE
            self.costs.append(recompute_cost(self.graph, tid, self.device))
        self._check_budget(action.step, tid)

    def run(self) -> ReplayResult:
        by_step: dict[int, list[PlanAction]] = {}
        for action in self.plan.actions:
            by_step.setdefault(action.step, []).append(action)

        for step, op in enumerate(self.graph.ops):
            for action in by_step.pop(step, []):
                self._apply(action)
            for tid in dict.fromkeys(op.inputs + op.outputs):
                if self.states.get(tid) is not TensorState.LIVE:
                    self._flag(
                        step,
                        ViolationKind.MISSING_TENSOR,
                        tid,
                        f"op {op.op_id} needs tensor {tid} resident and uncompressed",
                    )
            for tid in self.graph.freed_at.get(step, ()):
                state = self.states.pop(tid, None)
                if state in (TensorState.LIVE, TensorState.COMPRESSED):
                    self.pool.free(tid)

        for step, leftover in sorted(by_step.items()):
            for action in leftover:
                self._flag(
                    step,
                    ViolationKind.INVALID_STATE,
                    action.tensor,
                    f"action at step {step} is outside the schedule",
                )

        times = [op_time(op, self.device) for op in self.graph.ops]
        return ReplayResult(
            peak_memory=self.pool.peak,
            latency=math.fsum(times + self.costs),
            violations=self.violations,
        )


def replay_plan(
    plan: ExecutionPlan,
    graph: ComputationGraph,
    device: DeviceProfile,
    codec_model: CodecModel | None = None,
) -> ReplayResult:
    """Execute a plan's actions in order and record what happens.

    Costs are recomputed from the graph, device and codec model rather than read from the
    plan, so a plan's ``est_latency`` can be checked against its replayed latency.

    Args:
        plan: The plan to replay.
        graph: The graph the plan was generated for.
        device: Device used for op timings.
        codec_model: Compression calibration; defaults to ``CodecModel.default()``.

    Returns:
        The replay's peak memory, latency and any violations found.
    """
    result = _Replayer(plan, graph, device, codec_model or CodecModel.default()).run()
    if result.violations:
        logger.debug("replay found %d violations", len(result.violations))
    return result
