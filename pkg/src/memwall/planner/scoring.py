"""MPS (memory reduced per second) scoring of tensors."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

from memwall.codec.model import CodecModel
from memwall.exceptions import InfeasibleBudgetError, MemwallError
from memwall.graph import ComputationGraph, annotate_layout_chain, op_time
from memwall.models import DeviceProfile, OpKind
from memwall.planner.plan import ActionKind


@dataclass(frozen=True)
class MpsScore:
    """Reward per cost of discarding a tensor with one technique.

    Sizes are bytes, durations seconds; ``reward`` is byte-seconds and ``mps`` bytes.
    """

    saved_memory: int
    freed_lifetime: float
    purge_cost: float
    regain_cost: float

    def __post_init__(self) -> None:
        if self.purge_cost + self.regain_cost <= 0:
            raise ValueError("purge_cost + regain_cost must be positive")

    @property
    def reward(self) -> float:
        return self.saved_memory * self.freed_lifetime

    @property
    def mps(self) -> float:
        return self.reward / (self.purge_cost + self.regain_cost)


TechniqueScores = tuple[MpsScore | None, MpsScore | None]


def producer_kind(graph: ComputationGraph, tensor_id: int) -> OpKind:
    """Op kind that determines a tensor's codec calibration."""
    producer = graph.tensor(tensor_id).producer
    return OpKind.OTHER if producer is None else graph.op(producer).kind


def is_evictable(graph: ComputationGraph, tensor_id: int) -> bool:
    """Whether the tensor can be dropped and rebuilt from inputs that outlive it."""
    spec = graph.tensor(tensor_id)
    if spec.producer is None:
        return False
    last = graph.last_use(tensor_id)
    assert last is not None
    for tid in graph.op(spec.producer).inputs:
        other = graph.last_use(tid)
        if other is None or other < last:
            return False
    return True


def recompute_cost(graph: ComputationGraph, tensor_id: int, device: DeviceProfile) -> float:
    """Time to rebuild a tensor: its producer plus the layout-transform chain it feeds.

    The chain time counts twice when any chain op crosses the CPU/GPU boundary. Costs of
    inputs that are themselves evicted are added by the planner, not here.
    """
    producer = graph.tensor(tensor_id).producer
    if producer is None:
        raise MemwallError(f"tensor {tensor_id} is a graph input and cannot be recomputed")
    chain = [graph.op(o) for o in annotate_layout_chain(graph, tensor_id)]
    psi = 2 if any(op.crosses_processor for op in chain) else 1
    return op_time(graph.op(producer), device) + psi * math.fsum(
        op_time(op, device) for op in chain
    )


def freed_lifetime(
    graph: ComputationGraph,
    tensor_id: int,
    device: DeviceProfile,
    at_step: int | None = None,
) -> float:
    """Idle time of a tensor.

    Without ``at_step`` this is the static value from the producer to the first consumer.
    With ``at_step`` it is the time from the start of that step to the tensor's next use.
    """
    times = [op_time(op, device) for op in graph.ops]
    if at_step is None:
        consumers = graph.consumer_steps(tensor_id)
        if not consumers:
            return 0.0
        producer = graph.producer_step(tensor_id)
        start = 0 if producer is None else producer + 1
        return math.fsum(times[start : consumers[0]])
    nxt = graph.next_use(tensor_id, at_step)
    return 0.0 if nxt is None else math.fsum(times[at_step:nxt])


def score_tensor(
    graph: ComputationGraph,
    tensor_id: int,
    device: DeviceProfile,
    codec_model: CodecModel | None = None,
    at_step: int | None = None,
) -> TechniqueScores:
    """Score recomputation and compression for a tensor.

    Returns:
        ``(mps_compute, mps_compress)``. A technique that cannot apply to the tensor
        (graph inputs cannot be recomputed, incompressible tensors) is None.
    """
    codec_model = codec_model or CodecModel.default()
    spec = graph.tensor(tensor_id)
    flt = freed_lifetime(graph, tensor_id, device, at_step)

    compute = None
    if is_evictable(graph, tensor_id):
        compute = MpsScore(spec.bytes, flt, 0.0, recompute_cost(graph, tensor_id, device))

    compress = None
    kind = producer_kind(graph, tensor_id)
    compressed = codec_model.compressed_bytes(kind, spec.bytes)
    if compressed < spec.bytes:
        compress = MpsScore(
            spec.bytes - compressed,
            flt,
            codec_model.compress_time(kind, spec.bytes),
            codec_model.decompress_time(kind, spec.bytes),
        )
    return compute, compress


def choose_technique(scores: TechniqueScores) -> ActionKind:
    """EVICT when recomputation scores strictly higher, COMPRESS otherwise."""
    compute, compress = scores
    if compress is None:
        return ActionKind.EVICT
    if compute is not None and compute.mps > compress.mps:
        return ActionKind.EVICT
    return ActionKind.COMPRESS


def max_mps_tensor(scores: Mapping[int, TechniqueScores]) -> int:
    """Pick the reclaimable tensor with the highest MPS.

    Ties go to the larger saved memory, then the lower tensor id.

    Raises:
        InfeasibleBudgetError: If no candidate has an applicable technique.
    """
    best_key: tuple[float, int, int] | None = None
    best_id = None
    for tid, pair in scores.items():
        available = [s for s in pair if s is not None]
        if not available:
            continue
        chosen = pair[0] if choose_technique(pair) is ActionKind.EVICT else pair[1]
        assert chosen is not None
        key = (max(s.mps for s in available), chosen.saved_memory, -tid)
        if best_key is None or key > best_key:
            best_key, best_id = key, tid
    if best_id is None:
        raise InfeasibleBudgetError("no reclaimable tensor left")
    return best_id
