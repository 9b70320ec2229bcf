"""Exhaustive search over static per-tensor treatments, for graphs with few discardable tensors.

A static treatment fixes one technique per tensor for the whole schedule. The tensor is resident
at full size at every step that needs it (as an operand, or as an input of a recomputation)
and sits compressed or evicted at the steps in between.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from enum import Enum

from memwall.codec.model import CodecModel
from memwall.graph import ComputationGraph, op_time
from memwall.models import DeviceProfile
from memwall.planner.plan import ActionKind, ExecutionPlan, PlanAction, Strategy
from memwall.planner.pool import MemoryPoolSim
from memwall.planner.scoring import is_evictable, producer_kind, recompute_cost

logger = logging.getLogger(__name__)

MAX_DISCARDABLE = 8


class Treatment(str, Enum):
    KEEP = "keep"
    EVICT = "evict"
    COMPRESS = "compress"


def discardable_tensors(graph: ComputationGraph) -> list[int]:
    """Tensors that stay live across at least one step that does not use them."""
    found = []
    for tid in sorted(graph.tensors):
        start, end = graph.alloc_step(tid), graph.last_use(tid)
        if start is None or end is None:
            continue
        uses = set(graph.consumer_steps(tid))
        producer = graph.producer_step(tid)
        if producer is not None:
            uses.add(producer)
        if any(step not in uses for step in range(start, end + 1)):
            found.append(tid)
    return found


def treatment_options(
    graph: ComputationGraph, tensor_id: int, evict: bool = True, compress: bool = True
) -> tuple[Treatment, ...]:
    options = [Treatment.KEEP]
    if evict and is_evictable(graph, tensor_id):
        options.append(Treatment.EVICT)
    if compress:
        options.append(Treatment.COMPRESS)
    return tuple(options)


def _step_or_first(step: int | None) -> int:
    return -1 if step is None else step


def _static_events(
    graph: ComputationGraph, treatment: Mapping[int, Treatment]
) -> Iterator[tuple[int, int, ActionKind]]:
    """Actions of a static treatment in plan order, as ``(step, tensor, action)``."""
    previous: set[int] = set()
    for step, op in enumerate(graph.ops):
        needed = set(op.inputs) | set(op.outputs)
        rebuilt: set[int] = set()
        pending = sorted(needed)
        while pending:
            tid = pending.pop()
            choice = treatment.get(tid, Treatment.KEEP)
            if (
                choice is Treatment.KEEP
                or tid in previous
                or tid in rebuilt
                or graph.alloc_step(tid) == step
            ):
                continue
            rebuilt.add(tid)
            if choice is Treatment.EVICT:
                producer = graph.tensors[tid].producer
                assert producer is not None
                for src in graph.op(producer).inputs:
                    if src not in needed:
                        needed.add(src)
                        pending.append(src)

        for tid in sorted(previous - needed):
            last = graph.last_use(tid)
            choice = treatment.get(tid, Treatment.KEEP)
            if last is not None and last >= step and choice is not Treatment.KEEP:
                kind = ActionKind.EVICT if choice is Treatment.EVICT else ActionKind.COMPRESS
                yield step, tid, kind
        for tid in sorted(needed):
            if graph.tensors[tid].is_input and graph.alloc_step(tid) == step:
                yield step, tid, ActionKind.ALLOC
        for tid in sorted(rebuilt, key=lambda t: (_step_or_first(graph.producer_step(t)), t)):
            if treatment[tid] is Treatment.EVICT:
                yield step, tid, ActionKind.RECOMPUTE
            else:
                yield step, tid, ActionKind.DECOMPRESS
        for tid in op.outputs:
            yield step, tid, ActionKind.ALLOC
        previous = needed


class StaticSearch:
    """Every static treatment of a graph's discardable tensors, ranked by estimated latency."""

    def __init__(
        self,
        graph: ComputationGraph,
        device: DeviceProfile,
        codec_model: CodecModel,
        evict: bool = True,
        compress: bool = True,
    ) -> None:
        self.graph = graph
        self.device = device
        self.codec = codec_model
        self.times = [op_time(op, device) for op in graph.ops]
        self.tensors = discardable_tensors(graph)
        self._recompute = {
            tid: recompute_cost(graph, tid, device)
            for tid in self.tensors
            if is_evictable(graph, tid)
        }
        choices = [treatment_options(graph, t, evict, compress) for t in self.tensors]
        ranked = []
        for index, combo in enumerate(itertools.product(*choices)):
            treatment = dict(zip(self.tensors, combo))
            latency, peak = self._evaluate(treatment)
            ranked.append((latency, peak, index, treatment))
        ranked.sort(key=lambda entry: entry[:3])
        logger.debug(
            "static search over %d tensors: %d treatments", len(self.tensors), len(ranked)
        )
        self.ranked: Sequence[tuple[float, int, int, dict[int, Treatment]]] = ranked
        self._plans: dict[int, ExecutionPlan] = {}

    def _cost(self, tid: int, action: ActionKind) -> float:
        full = self.graph.tensors[tid].bytes
        kind = producer_kind(self.graph, tid)
        if action is ActionKind.COMPRESS:
            return self.codec.compress_time(kind, full)
        if action is ActionKind.DECOMPRESS:
            return self.codec.decompress_time(kind, full)
        if action is ActionKind.RECOMPUTE:
            return self._recompute[tid]
        return 0.0

    def _resident(self, tid: int, action: ActionKind) -> int:
        full = self.graph.tensors[tid].bytes
        if action is ActionKind.EVICT:
            return 0
        if action is ActionKind.COMPRESS:
            return self.codec.compressed_bytes(producer_kind(self.graph, tid), full)
        return full

    def _evaluate(self, treatment: Mapping[int, Treatment]) -> tuple[float, int]:
        resident: dict[int, int] = {}
        used = peak = 0
        costs: list[float] = []
        events = iter(_static_events(self.graph, treatment))
        pending = next(events, None)
        for step in range(len(self.graph.ops)):
            while pending is not None and pending[0] == step:
                _, tid, action = pending
                size = self._resident(tid, action)
                used += size - resident.get(tid, 0)
                resident[tid] = size
                peak = max(peak, used)
                costs.append(self._cost(tid, action))
                pending = next(events, None)
            for tid in self.graph.freed_at.get(step, ()):
                used -= resident.pop(tid, 0)
        return math.fsum(self.times + costs), peak

    def plan_for(self, index: int) -> ExecutionPlan:
        """The plan of the ranked treatment at ``index``."""
        if index not in self._plans:
            latency, _, _, treatment = self.ranked[index]
            pool = MemoryPoolSim(0, strict=False)
            actions = []
            events = iter(_static_events(self.graph, treatment))
            pending = next(events, None)
            for step in range(len(self.graph.ops)):
                while pending is not None and pending[0] == step:
                    _, tid, action = pending
                    size = self._resident(tid, action)
                    if action is ActionKind.EVICT:
                        pool.free(tid)
                    elif action is ActionKind.ALLOC or action is ActionKind.RECOMPUTE:
                        pool.alloc(tid, size)
                    else:
                        pool.resize(tid, size)
                    actions.append(PlanAction(step, tid, action, self._cost(tid, action)))
                    pending = next(events, None)
                for tid in self.graph.freed_at.get(step, ()):
                    if pool.address(tid) is not None:
                        pool.free(tid)
            self._plans[index] = ExecutionPlan(
                actions=tuple(actions),
                est_latency=latency,
                peak_memory=pool.peak,
                budget=pool.peak,
                strategy=Strategy.HYBRID,
                graph_id=self.graph.graph_id(),
            )
        return self._plans[index]

    def cheapest(self, budget: int) -> ExecutionPlan | None:
        """Fastest static plan whose peak fits ``budget``; ties go to the lower peak."""
        for index, (_, peak, _, _) in enumerate(self.ranked):
            if peak <= budget:
                return self.plan_for(index)
        return None
