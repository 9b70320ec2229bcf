"""Greedy plan generation under a memory budget.

Ops run in schedule order. Before an op runs, its compressed inputs are decompressed and its
evicted inputs are recomputed (recursively when their own inputs are gone); then its outputs are
allocated. Whenever an allocation would overflow the budget, the tensor with the highest MPS is
evicted or compressed, whichever technique scores higher, until the allocation fits.

The greedy is not monotone in the budget by itself, so a plan request takes the cheapest greedy
plan over all budgets up to the one asked for. Runs are cached per graph, device and codec.
"""

from __future__ import annotations

import bisect
import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, replace

from memwall.codec.model import CodecModel
from memwall.exceptions import ContractViolationError, InfeasibleBudgetError
from memwall.graph import ComputationGraph, op_time
from memwall.models import DeviceProfile
from memwall.planner.exhaustive import MAX_DISCARDABLE, StaticSearch, discardable_tensors
from memwall.planner.plan import ActionKind, ExecutionPlan, PlanAction, Strategy
from memwall.planner.pool import MemoryPoolSim, TensorRuntimeState, TensorState
from memwall.planner.scoring import (
    MpsScore,
    TechniqueScores,
    choose_technique,
    is_evictable,
    max_mps_tensor,
    producer_kind,
    recompute_cost,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class _Techniques:
    evict: bool
    compress: bool


_STRATEGY_PORTFOLIO = {
    Strategy.HYBRID: (_Techniques(True, True), _Techniques(True, False), _Techniques(False, True)),
    Strategy.EVICT_ONLY: (_Techniques(True, False),),
    Strategy.COMPRESS_ONLY: (_Techniques(False, True),),
}


class _PlanBuilder:
    """Runs one greedy pass over the schedule."""

    def __init__(
        self,
        graph: ComputationGraph,
        device: DeviceProfile,
        budget: int,
        codec_model: CodecModel,
        techniques: _Techniques,
    ) -> None:
        self.graph = graph
        self.budget = budget
        self.codec = codec_model
        self.techniques = techniques
        self.pool = MemoryPoolSim(budget)
        self.states: dict[int, TensorRuntimeState] = {}
        self.actions: list[PlanAction] = []
        self.times = [op_time(op, device) for op in graph.ops]
        self._elapsed = [0.0]
        for t in self.times:
            self._elapsed.append(self._elapsed[-1] + t)
        self.evictable = {tid: is_evictable(graph, tid) for tid in graph.tensors}
        self.recompute = {
            tid: recompute_cost(graph, tid, device) for tid, ok in self.evictable.items() if ok
        }
        self.minimum = graph.pinned_minimum()
        self.ceiling: int | None = None

    def _emit(self, step: int, tensor_id: int, action: ActionKind, cost: float = 0.0) -> None:
        self.actions.append(PlanAction(step, tensor_id, action, cost))

    def _set(self, tensor_id: int, state: TensorState) -> None:
        self.states[tensor_id] = TensorRuntimeState(
            state, self.pool.address(tensor_id), self.pool.resident(tensor_id)
        )

    def _score(self, tensor_id: int, step: int) -> TechniqueScores:
        runtime = self.states[tensor_id]
        nxt = self.graph.next_use(tensor_id, step)
        flt = 0.0 if nxt is None else self._elapsed[nxt] - self._elapsed[step]
        compute = compress = None
        if self.techniques.evict and self.evictable[tensor_id]:
            compute = MpsScore(runtime.resident_bytes, flt, 0.0, self.recompute[tensor_id])
        if self.techniques.compress and runtime.state is TensorState.LIVE:
            full = self.graph.tensors[tensor_id].bytes
            kind = producer_kind(self.graph, tensor_id)
            compressed = self.codec.compressed_bytes(kind, full)
            if compressed < full:
                compress = MpsScore(
                    full - compressed,
                    flt,
                    self.codec.compress_time(kind, full),
                    self.codec.decompress_time(kind, full),
                )
        return compute, compress

    def _reserve(self, nbytes: int, step: int, pinned: set[int]) -> None:
        """Reclaim memory until ``nbytes`` more fit in the pool."""
        while not self.pool.fits(nbytes):
            need = self.pool.used + nbytes
            self.ceiling = need if self.ceiling is None else min(self.ceiling, need)
            scores = {
                tid: self._score(tid, step)
                for tid in sorted(self.states)
                if tid not in pinned and self.states[tid].state is not TensorState.EVICTED
            }
            try:
                victim = max_mps_tensor(scores)
            except InfeasibleBudgetError:
                raise InfeasibleBudgetError(
                    f"step {step} needs {nbytes} more bytes but nothing can be reclaimed; "
                    f"the pinned-set minimum is {self.minimum} bytes",
                    self.minimum,
                    self.budget,
                ) from None
            action = choose_technique(scores[victim])
            if action is ActionKind.EVICT:
                self.pool.free(victim)
                self._set(victim, TensorState.EVICTED)
                self._emit(step, victim, ActionKind.EVICT)
            else:
                full = self.graph.tensors[victim].bytes
                kind = producer_kind(self.graph, victim)
                self.pool.resize(victim, self.codec.compressed_bytes(kind, full))
                self._set(victim, TensorState.COMPRESSED)
                self._emit(step, victim, ActionKind.COMPRESS, self.codec.compress_time(kind, full))
            logger.debug("step %d: %s tensor %d", step, action.value, victim)

    def _ensure_resident(self, tensor_id: int, step: int, pinned: set[int], depth: int) -> None:
        runtime = self.states.get(tensor_id)
        full = self.graph.tensors[tensor_id].bytes
        if runtime is None:
            if not self.graph.tensors[tensor_id].is_input:
                raise ContractViolationError(f"tensor {tensor_id} read before it was produced")
            self._reserve(full, step, pinned)
            self.pool.alloc(tensor_id, full)
            self._set(tensor_id, TensorState.LIVE)
            self._emit(step, tensor_id, ActionKind.ALLOC)
        elif runtime.state is TensorState.COMPRESSED:
            self._reserve(full - runtime.resident_bytes, step, pinned)
            self.pool.resize(tensor_id, full)
            self._set(tensor_id, TensorState.LIVE)
            kind = producer_kind(self.graph, tensor_id)
            self._emit(
                step, tensor_id, ActionKind.DECOMPRESS, self.codec.decompress_time(kind, full)
            )
        elif runtime.state is TensorState.EVICTED:
            self._recover(tensor_id, step, pinned, depth)

    def _recover(self, tensor_id: int, step: int, pinned: set[int], depth: int) -> None:
        if depth > len(self.graph.ops):
            raise ContractViolationError(f"recomputation of tensor {tensor_id} does not terminate")
        producer = self.graph.op(self.graph.tensors[tensor_id].producer)  # type: ignore[arg-type]
        local = pinned | set(producer.inputs) | {tensor_id}
        for tid in dict.fromkeys(producer.inputs):
            self._ensure_resident(tid, step, local, depth + 1)
        full = self.graph.tensors[tensor_id].bytes
        self._reserve(full, step, local)
        self.pool.alloc(tensor_id, full)
        self._set(tensor_id, TensorState.LIVE)
        self._emit(step, tensor_id, ActionKind.RECOMPUTE, self.recompute[tensor_id])

    def run(self, strategy: Strategy) -> ExecutionPlan:
        for step, op in enumerate(self.graph.ops):
            pinned = set(op.inputs) | set(op.outputs)
            for tid in dict.fromkeys(op.inputs):
                self._ensure_resident(tid, step, pinned, 0)
            for tid in op.outputs:
                full = self.graph.tensors[tid].bytes
                self._reserve(full, step, pinned)
                self.pool.alloc(tid, full)
                self._set(tid, TensorState.LIVE)
                self._emit(step, tid, ActionKind.ALLOC)
            for tid in self.graph.freed_at.get(step, ()):
                runtime = self.states.pop(tid, None)
                if runtime is not None and runtime.state is not TensorState.EVICTED:
                    self.pool.free(tid)

        est_latency = math.fsum(self.times + [a.cost for a in self.actions])
        return ExecutionPlan(
            actions=tuple(self.actions),
            est_latency=est_latency,
            peak_memory=self.pool.peak,
            budget=self.budget,
            strategy=strategy,
            graph_id=self.graph.graph_id(),
        )


@dataclass(frozen=True)
class _Run:
    """Outcome of the greedy at every budget in ``[low, high)``.

    The greedy depends on the budget only through its fit checks: every check that passed
    needed at most the pool peak, every check that failed needed at least ``high``.
    """

    low: int
    high: int | None
    plan: ExecutionPlan | None
    error: InfeasibleBudgetError | None

    def covers(self, budget: int) -> bool:
        return self.low <= budget and (self.high is None or budget < self.high)


class _Envelope:
    """Greedy runs of one technique set on one graph, indexed by the budgets they cover."""

    def __init__(
        self,
        graph: ComputationGraph,
        device: DeviceProfile,
        codec_model: CodecModel,
        techniques: _Techniques,
    ) -> None:
        self.graph = graph
        self.device = device
        self.codec = codec_model
        self.techniques = techniques
        self._lows: list[int] = []
        self._runs: list[_Run] = []
        self._static: StaticSearch | None = None
        self._static_checked = False
        self._lock = threading.Lock()

    def _run_at(self, budget: int) -> _Run:
        index = bisect.bisect_right(self._lows, budget) - 1
        if index >= 0 and self._runs[index].covers(budget):
            return self._runs[index]
        builder = _PlanBuilder(self.graph, self.device, budget, self.codec, self.techniques)
        plan = error = None
        try:
            plan = builder.run(Strategy.HYBRID)
        except InfeasibleBudgetError as exc:
            error = exc
        run = _Run(builder.pool.peak, builder.ceiling, plan, error)
        index = bisect.bisect_left(self._lows, run.low)
        self._lows.insert(index, run.low)
        self._runs.insert(index, run)
        return run

    def _static_search(self) -> StaticSearch | None:
        if not self._static_checked:
            self._static_checked = True
            if 0 < len(discardable_tensors(self.graph)) <= MAX_DISCARDABLE:
                self._static = StaticSearch(
                    self.graph,
                    self.device,
                    self.codec,
                    evict=self.techniques.evict,
                    compress=self.techniques.compress,
                )
        return self._static

    def cheapest(
        self, budget: int, minimum: int
    ) -> tuple[ExecutionPlan | None, InfeasibleBudgetError | None]:
        """Cheapest greedy plan over every budget from ``minimum`` up to ``budget``.

        Graphs with few discardable tensors also get the best static treatment that fits,
        which the greedy can miss. Ties keep the greedy plan found at the higher budget.
        """
        best: ExecutionPlan | None = None
        first_error: InfeasibleBudgetError | None = None
        with self._lock:
            current = budget
            while current >= minimum:
                run = self._run_at(current)
                if run.plan is not None:
                    if best is None or run.plan.est_latency < best.est_latency:
                        best = run.plan
                elif first_error is None:
                    first_error = run.error
                current = run.low - 1
            static = self._static_search()
            candidate = None if static is None else static.cheapest(budget)
        if candidate is not None:
            if best is None or candidate.est_latency < best.est_latency:
                if best is not None:
                    logger.debug(
                        "static treatment beats the greedy by %.3fx at budget %d",
                        best.est_latency / candidate.est_latency,
                        budget,
                    )
                best = candidate
        return best, first_error


_ENVELOPE_LIMIT = 64
_envelopes: OrderedDict[tuple[object, ...], _Envelope] = OrderedDict()
_envelopes_lock = threading.Lock()


def _envelope(
    graph: ComputationGraph,
    device: DeviceProfile,
    codec_model: CodecModel,
    techniques: _Techniques,
) -> _Envelope:
    key = (
        graph.graph_id(),
        tuple(sorted((k.value, v) for k, v in device.op_scales.items())),
        tuple(
            sorted(
                (k.value, c.ratio, c.compress_bps, c.decompress_bps)
                for k, c in codec_model.table.items()
            )
        ),
        techniques,
    )
    with _envelopes_lock:
        envelope = _envelopes.get(key)
        if envelope is None:
            envelope = _Envelope(graph, device, codec_model, techniques)
            _envelopes[key] = envelope
            if len(_envelopes) > _ENVELOPE_LIMIT:
                _envelopes.popitem(last=False)
        else:
            _envelopes.move_to_end(key)
        return envelope


def generate_plan(
    graph: ComputationGraph,
    device: DeviceProfile,
    budget: int,
    codec_model: CodecModel | None = None,
    strategy: Strategy = Strategy.HYBRID,
) -> ExecutionPlan:
    """Generate a budget-feasible execution plan.

    Every allowed technique set runs the greedy at ``budget`` and at each lower budget where
    its decisions change, down to the pinned minimum; the cheapest feasible plan wins. A
    plan that fits a smaller budget fits this one too, so raising the budget never makes the
    result slower. The hybrid strategy also runs the two single-technique greedies, so it is
    never slower than either pure strategy.

    Args:
        graph: The computation graph.
        device: Device whose op timings drive the costs.
        budget: Memory budget in bytes.
        codec_model: Compression calibration; defaults to ``CodecModel.default()``.
        strategy: Techniques allowed.

    Returns:
        An ExecutionPlan whose replay stays within ``budget``.

    Raises:
        InfeasibleBudgetError: If the budget cannot hold some op's pinned tensors, or if every
            allowed strategy runs out of reclaimable tensors.
        IncompleteProfileError: If ``device`` lacks timings for an op kind in the graph.
    """
    device.check_complete(graph.kinds())
    codec_model = codec_model or CodecModel.default()
    minimum = graph.pinned_minimum()
    if budget < minimum:
        raise InfeasibleBudgetError(
            f"budget {budget} bytes is below the pinned-set minimum of {minimum} bytes",
            minimum,
            budget,
        )

    best: ExecutionPlan | None = None
    first_error: InfeasibleBudgetError | None = None
    for techniques in _STRATEGY_PORTFOLIO[strategy]:
        plan, error = _envelope(graph, device, codec_model, techniques).cheapest(budget, minimum)
        first_error = first_error or error
        if plan is not None and (best is None or plan.est_latency < best.est_latency):
            best = plan
    if best is None:
        assert first_error is not None
        raise InfeasibleBudgetError(first_error.message, first_error.minimum_bytes, budget)
    best = replace(best, budget=budget, strategy=strategy)
    logger.debug(
        "plan for budget %d: latency %.6f s, peak %d, %d reclamations",
        budget,
        best.est_latency,
        best.peak_memory,
        best.reclamations,
    )
    return best
