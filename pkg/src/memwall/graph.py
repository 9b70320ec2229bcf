"""Tensor computation graphs: schema loading, lifetimes and layout-transform chains."""

from __future__ import annotations

import hashlib
import heapq
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import yaml

from memwall.exceptions import SchemaError
from memwall.models import DeviceProfile, Layout, OpKind

logger = logging.getLogger(__name__)

DEFAULT_ELEMENT_WIDTH = 4


@dataclass(frozen=True)
class TensorSpec:
    """A tensor in the graph. ``producer`` is None for graph inputs."""

    tensor_id: int
    shape: tuple[int, ...]
    bytes: int
    producer: int | None
    consumers: tuple[int, ...]
    layout: Layout = Layout.ROW_MAJOR_NCHW
    origin_op: int | None = None

    @property
    def is_input(self) -> bool:
        return self.producer is None


@dataclass(frozen=True)
class OpSpec:
    """An operator. ``base_time_us`` is measured on the reference device."""

    op_id: int
    kind: OpKind
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    base_time_us: float
    is_layout_transform: bool = False
    crosses_processor: bool = False

    @property
    def base_time(self) -> float:
        """Reference execution time in seconds."""
        return self.base_time_us / 1e6


@dataclass(frozen=True)
class TensorLifetime:
    """Use interval of a tensor under the graph schedule."""

    first_use: int
    last_use: int
    freed_lifetime: float


def op_time(op: OpSpec, device: DeviceProfile) -> float:
    """Execution time of ``op`` on ``device`` in seconds."""
    return op.base_time * device.scale_for(op.kind)


@dataclass(frozen=True)
class ComputationGraph:
    """A validated, topologically ordered computation graph.

    Immutable after construction; safe to share between planner workers.
    """

    ops: tuple[OpSpec, ...]
    tensors: Mapping[int, TensorSpec]
    schedule: Mapping[int, int]
    element_width: int = DEFAULT_ELEMENT_WIDTH
    name: str = "graph"
    _ops_by_id: dict[int, OpSpec] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._ops_by_id.update({op.op_id: op for op in self.ops})

    def op(self, op_id: int) -> OpSpec:
        return self._ops_by_id[op_id]

    def tensor(self, tensor_id: int) -> TensorSpec:
        try:
            return self.tensors[tensor_id]
        except KeyError:
            raise SchemaError(f"unknown tensor {tensor_id}", tensor_id) from None

    def step_of(self, op_id: int) -> int:
        return self.schedule[op_id]

    def kinds(self) -> set[OpKind]:
        return {op.kind for op in self.ops}

    def producer_step(self, tensor_id: int) -> int | None:
        producer = self.tensor(tensor_id).producer
        return None if producer is None else self.schedule[producer]

    def consumer_steps(self, tensor_id: int) -> tuple[int, ...]:
        return tuple(self.schedule[c] for c in self.tensor(tensor_id).consumers)

    def alloc_step(self, tensor_id: int) -> int | None:
        """Step at which the tensor first occupies memory, None if it is never used."""
        step = self.producer_step(tensor_id)
        if step is not None:
            return step
        consumers = self.consumer_steps(tensor_id)
        return consumers[0] if consumers else None

    def last_use(self, tensor_id: int) -> int | None:
        """Last step that needs the tensor; it is freed when that step ends."""
        consumers = self.consumer_steps(tensor_id)
        if consumers:
            return consumers[-1]
        return self.producer_step(tensor_id)

    def next_use(self, tensor_id: int, step: int) -> int | None:
        """First consuming step at or after ``step``."""
        for s in self.consumer_steps(tensor_id):
            if s >= step:
                return s
        return None

    @cached_property
    def freed_at(self) -> dict[int, tuple[int, ...]]:
        """Tensors released at the end of each step."""
        out: dict[int, list[int]] = {}
        for tid in sorted(self.tensors):
            last = self.last_use(tid)
            if last is not None:
                out.setdefault(last, []).append(tid)
        return {step: tuple(tids) for step, tids in out.items()}

    def live_bytes(self) -> list[int]:
        """Bytes resident during each step with no memory-saving treatment."""
        totals = [0] * len(self.ops)
        for tid, spec in self.tensors.items():
            start, end = self.alloc_step(tid), self.last_use(tid)
            if start is None or end is None:
                continue
            for step in range(start, end + 1):
                totals[step] += spec.bytes
        return totals

    def untreated_peak(self) -> int:
        """Peak memory of the plain schedule; the full training requirement of the model."""
        return max(self.live_bytes(), default=0)

    def pinned_bytes(self, op: OpSpec) -> int:
        """Bytes that must co-reside while ``op`` runs."""
        return sum(self.tensors[t].bytes for t in set(op.inputs) | set(op.outputs))

    def pinned_minimum(self) -> int:
        """The smallest budget any plan could possibly satisfy."""
        return max((self.pinned_bytes(op) for op in self.ops), default=0)

    def graph_id(self) -> str:
        """Stable content hash, used to key cached plans."""
        return self._digest

    @cached_property
    def _digest(self) -> str:
        return hashlib.sha256(dump_graph(self).encode()).hexdigest()[:16]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "element_width": self.element_width,
            "ops": [
                {
                    "id": op.op_id,
                    "kind": op.kind.value,
                    "inputs": list(op.inputs),
                    "outputs": list(op.outputs),
                    "base_time_us": op.base_time_us,
                    "layout_transform": op.is_layout_transform,
                    "crosses_processor": op.crosses_processor,
                }
                for op in self.ops
            ],
            "tensors": [
                {
                    "id": spec.tensor_id,
                    "shape": list(spec.shape),
                    "layout": spec.layout.value,
                }
                for spec in sorted(self.tensors.values(), key=lambda s: s.tensor_id)
            ],
        }


def _as_int(value: Any, what: str, ident: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{what} must be an integer, got {value!r}", ident)
    return value


def _topological_order(ops: list[OpSpec], producer_of: dict[int, int]) -> list[OpSpec]:
    """Kahn's algorithm, preferring document order so a valid listing is kept as-is."""
    index = {op.op_id: i for i, op in enumerate(ops)}
    by_id = {op.op_id: op for op in ops}
    indegree = {op.op_id: 0 for op in ops}
    successors: dict[int, set[int]] = {op.op_id: set() for op in ops}
    for op in ops:
        for tid in op.inputs:
            producer = producer_of.get(tid)
            if producer is not None and op.op_id not in successors[producer]:
                successors[producer].add(op.op_id)
                indegree[op.op_id] += 1

    ready = [(index[oid], oid) for oid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order: list[OpSpec] = []
    while ready:
        _, oid = heapq.heappop(ready)
        order.append(by_id[oid])
        for succ in successors[oid]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                heapq.heappush(ready, (index[succ], succ))

    if len(order) != len(ops):
        stuck = min(oid for oid, deg in indegree.items() if deg > 0)
        raise SchemaError(f"cycle detected through op {stuck}", stuck)
    return order


def _origin_of(op_id: int, ops: dict[int, OpSpec], producer_of: dict[int, int]) -> int:
    """Walk back through layout transforms to the op that produced the data."""
    current = ops[op_id]
    while current.is_layout_transform and current.inputs:
        upstream = producer_of.get(current.inputs[0])
        if upstream is None:
            break
        current = ops[upstream]
    return current.op_id


def load_graph(
    source: str | bytes | Mapping[str, Any], name: str | None = None
) -> ComputationGraph:
    """Load and validate a graph document.

    Args:
        source: YAML/JSON text or an already parsed mapping.
        name: Optional graph name overriding the document's.

    Returns:
        A validated ComputationGraph in topological order.

    Raises:
        SchemaError: On cycles, dangling tensor references, non-positive sizes or times,
            or malformed entries. The error's ``offending_id`` names the culprit.
    """
    doc = yaml.safe_load(source) if isinstance(source, (str, bytes)) else source
    if not isinstance(doc, Mapping):
        raise SchemaError("graph document must be a mapping")
    if not isinstance(doc.get("ops"), list) or not isinstance(doc.get("tensors"), list):
        raise SchemaError("graph document needs 'ops' and 'tensors' lists")

    width = _as_int(doc.get("element_width", DEFAULT_ELEMENT_WIDTH), "element_width", None)
    if width <= 0:
        raise SchemaError(f"element_width must be positive, got {width}")

    shapes: dict[int, tuple[tuple[int, ...], Layout]] = {}
    for entry in doc["tensors"]:
        tid = _as_int(entry.get("id"), "tensor id", entry.get("id"))
        if tid in shapes:
            raise SchemaError(f"duplicate tensor id {tid}", tid)
        shape = tuple(_as_int(d, f"tensor {tid} dimension", tid) for d in entry.get("shape", []))
        if not shape or any(d <= 0 for d in shape):
            raise SchemaError(f"tensor {tid} has a non-positive size {list(shape)}", tid)
        try:
            layout = Layout(entry.get("layout", Layout.ROW_MAJOR_NCHW.value))
        except ValueError:
            bad = entry.get("layout")
            raise SchemaError(f"tensor {tid} has unknown layout {bad!r}", tid) from None
        shapes[tid] = (shape, layout)

    ops: list[OpSpec] = []
    seen_ops: set[int] = set()
    producer_of: dict[int, int] = {}
    for entry in doc["ops"]:
        oid = _as_int(entry.get("id"), "op id", entry.get("id"))
        if oid in seen_ops:
            raise SchemaError(f"duplicate op id {oid}", oid)
        seen_ops.add(oid)
        try:
            kind = OpKind(entry.get("kind", OpKind.OTHER.value))
        except ValueError:
            raise SchemaError(f"op {oid} has unknown kind {entry.get('kind')!r}", oid) from None
        base_time = entry.get("base_time_us")
        if not isinstance(base_time, (int, float)) or isinstance(base_time, bool) or base_time <= 0:
            raise SchemaError(f"op {oid} needs a positive base_time_us", oid)
        inputs = tuple(_as_int(t, f"op {oid} input", oid) for t in entry.get("inputs", []))
        outputs = tuple(_as_int(t, f"op {oid} output", oid) for t in entry.get("outputs", []))
        for tid in inputs + outputs:
            if tid not in shapes:
                raise SchemaError(f"op {oid} references undeclared tensor {tid}", tid)
        for tid in outputs:
            if tid in producer_of:
                raise SchemaError(f"tensor {tid} is produced by more than one op", tid)
            if tid in inputs:
                raise SchemaError(f"op {oid} consumes its own output {tid}", tid)
            producer_of[tid] = oid
        ops.append(
            OpSpec(
                op_id=oid,
                kind=kind,
                inputs=inputs,
                outputs=outputs,
                base_time_us=float(base_time),
                is_layout_transform=bool(entry.get("layout_transform", kind.is_layout_kind)),
                crosses_processor=bool(entry.get("crosses_processor", False)),
            )
        )

    ordered = _topological_order(ops, producer_of)
    schedule = {op.op_id: step for step, op in enumerate(ordered)}
    by_id = {op.op_id: op for op in ordered}

    consumers: dict[int, list[int]] = {tid: [] for tid in shapes}
    for op in ordered:
        for tid in dict.fromkeys(op.inputs):
            consumers[tid].append(op.op_id)

    tensors: dict[int, TensorSpec] = {}
    for tid, (shape, layout) in shapes.items():
        producer = producer_of.get(tid)
        origin = None
        if producer is not None and by_id[producer].is_layout_transform:
            origin = _origin_of(producer, by_id, producer_of)
        if producer is None and not consumers[tid]:
            logger.warning("tensor %d is neither produced nor consumed", tid)
        tensors[tid] = TensorSpec(
            tensor_id=tid,
            shape=shape,
            bytes=math.prod(shape) * width,
            producer=producer,
            consumers=tuple(consumers[tid]),
            layout=layout,
            origin_op=origin,
        )

    return ComputationGraph(
        ops=tuple(ordered),
        tensors=tensors,
        schedule=schedule,
        element_width=width,
        name=name or str(doc.get("name", "graph")),
    )


def read_graph(path: str | Path) -> ComputationGraph:
    """Load a graph document from a file."""
    path = Path(path)
    return load_graph(path.read_text(), name=path.stem)


def dump_graph(graph: ComputationGraph) -> str:
    """Serialize a graph to YAML; ``load_graph(dump_graph(g))`` reproduces ``g``."""
    return yaml.safe_dump(graph.to_dict(), sort_keys=False)


def compute_lifetimes(
    graph: ComputationGraph, device: DeviceProfile
) -> dict[int, TensorLifetime]:
    """Compute first/last use steps and freed lifetimes under sequential execution.

    The freed lifetime of a tensor is the device time between its producer finishing and its
    first consumer starting (for graph inputs: from the start of the schedule). Tensors that
    are never used are omitted.

    Raises:
        IncompleteProfileError: If ``device`` lacks a timing for an op kind in the graph.
    """
    device.check_complete(graph.kinds())
    times = [op_time(op, device) for op in graph.ops]

    lifetimes: dict[int, TensorLifetime] = {}
    for tid in graph.tensors:
        first, last = graph.alloc_step(tid), graph.last_use(tid)
        if first is None or last is None:
            continue
        consumers = graph.consumer_steps(tid)
        if not consumers:
            gap = 0.0
        else:
            producer = graph.producer_step(tid)
            start = 0 if producer is None else producer + 1
            gap = math.fsum(times[start : consumers[0]])
        lifetimes[tid] = TensorLifetime(first_use=first, last_use=last, freed_lifetime=gap)
    return lifetimes


def annotate_layout_chain(graph: ComputationGraph, tensor_id: int) -> list[int]:
    """Layout-transform ops reached from a tensor before data is used by a compute op.

    Depth-first from the tensor through consumers that are layout transforms, following their
    outputs in turn. Returned in schedule order; empty when the tensor feeds compute ops directly.
    """
    graph.tensor(tensor_id)
    found: set[int] = set()
    stack = [tensor_id]
    while stack:
        tid = stack.pop()
        for consumer in reversed(graph.tensors[tid].consumers):
            op = graph.op(consumer)
            if op.is_layout_transform and consumer not in found:
                found.add(consumer)
                stack.extend(op.outputs)
    return sorted(found, key=graph.step_of)


def kind_times(graph: ComputationGraph, device: DeviceProfile) -> dict[OpKind, float]:
    """Average per-kind op time on ``device``; what a client reports as ``t_o``."""
    device.check_complete(graph.kinds())
    grouped: dict[OpKind, list[float]] = {}
    for op in graph.ops:
        grouped.setdefault(op.kind, []).append(op_time(op, device))
    return {kind: math.fsum(values) / len(values) for kind, values in grouped.items()}
