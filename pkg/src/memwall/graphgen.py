"""Graph fixtures: seeded random DAGs and a conv-net training step with explicit backward ops."""

from __future__ import annotations

from typing import Any

import numpy as np

from memwall.graph import ComputationGraph, load_graph
from memwall.models import Layout, OpKind

_COMPUTE_KINDS = (OpKind.CONV, OpKind.MATMUL, OpKind.RELU, OpKind.POOL, OpKind.NORM, OpKind.ADD)
_LAYOUT_KINDS = (OpKind.RESHAPE, OpKind.TRANSPOSE, OpKind.GATHER)

# Reference op times in microseconds; backward ops take twice their forward time.
_TRAINING_TIMES_US = {
    OpKind.CONV: 120_000,
    OpKind.NORM: 30_000,
    OpKind.RELU: 10_000,
    OpKind.MATMUL: 20_000,
    OpKind.RESHAPE: 5_000,
    OpKind.OTHER: 1_000,
}


class _DocumentBuilder:
    def __init__(self, name: str) -> None:
        self.name = name
        self.ops: list[dict[str, Any]] = []
        self.tensors: list[dict[str, Any]] = []

    def tensor(self, shape: tuple[int, ...], layout: Layout = Layout.ROW_MAJOR_NCHW) -> int:
        tid = len(self.tensors)
        self.tensors.append({"id": tid, "shape": list(shape), "layout": layout.value})
        return tid

    def op(
        self,
        kind: OpKind,
        inputs: list[int],
        outputs: list[int],
        base_time_us: int,
        crosses_processor: bool = False,
    ) -> int:
        oid = len(self.ops)
        self.ops.append(
            {
                "id": oid,
                "kind": kind.value,
                "inputs": inputs,
                "outputs": outputs,
                "base_time_us": base_time_us,
                "layout_transform": kind.is_layout_kind,
                "crosses_processor": crosses_processor,
            }
        )
        return oid

    def document(self) -> dict[str, Any]:
        return {"name": self.name, "element_width": 4, "ops": self.ops, "tensors": self.tensors}


def random_dag(
    n_ops: int,
    seed: int = 0,
    graph_inputs: int = 2,
    max_inputs: int = 2,
    layout_prob: float = 0.15,
    cross_prob: float = 0.3,
    max_dim: int = 16,
) -> ComputationGraph:
    """A seeded random DAG with one output per op.

    Every op reads one to ``max_inputs`` distinct earlier tensors picked uniformly, so some
    tensors stay alive across long stretches of the schedule. Layout ops read a single tensor.
    Graph inputs no op picked are left out of the graph.
    """
    if n_ops < 1 or graph_inputs < 1:
        raise ValueError("need at least one op and one graph input")
    rng = np.random.default_rng(seed)
    builder = _DocumentBuilder(f"random-{n_ops}-{seed}")

    def shape() -> tuple[int, int]:
        return int(rng.integers(1, max_dim + 1)), int(rng.integers(1, max_dim + 1))

    available = [builder.tensor(shape()) for _ in range(graph_inputs)]
    for _ in range(n_ops):
        if rng.random() < layout_prob:
            kind = _LAYOUT_KINDS[int(rng.integers(len(_LAYOUT_KINDS)))]
            inputs = [int(rng.choice(available))]
            crosses = bool(rng.random() < cross_prob)
        else:
            kind = _COMPUTE_KINDS[int(rng.integers(len(_COMPUTE_KINDS)))]
            count = int(rng.integers(1, min(max_inputs, len(available)) + 1))
            inputs = [int(t) for t in rng.choice(available, size=count, replace=False)]
            crosses = False
        out = builder.tensor(shape())
        builder.op(kind, inputs, [out], int(rng.integers(10, 1001)), crosses)
        available.append(out)
    document = builder.document()
    read = {tid for op in document["ops"] for tid in op["inputs"]}
    document["tensors"] = [
        t for t in document["tensors"] if t["id"] >= graph_inputs or t["id"] in read
    ]
    return load_graph(document)


def training_graph(
    blocks: int = 16,
    batch: int = 200,
    channels: int = 64,
    size: int = 56,
    classes: int = 10,
) -> ComputationGraph:
    """One training step of a plain conv net: forward, loss gradient and backward.

    Each block is Conv, Norm, ReLU. The backward pass lists the gradient ops explicitly and each
    reads the forward activation it needs, so every activation stays alive until its block's
    backward ops run.
    """
    builder = _DocumentBuilder(f"convnet-{blocks}x{channels}x{size}-b{batch}")
    fmap = (batch, channels, size, size)
    times = _TRAINING_TIMES_US

    x = builder.tensor(fmap)
    saved: list[tuple[int, int, int, int]] = []
    current = x
    for _ in range(blocks):
        conv = builder.tensor(fmap)
        builder.op(OpKind.CONV, [current], [conv], times[OpKind.CONV])
        norm = builder.tensor(fmap)
        builder.op(OpKind.NORM, [conv], [norm], times[OpKind.NORM])
        relu = builder.tensor(fmap)
        builder.op(OpKind.RELU, [norm], [relu], times[OpKind.RELU])
        saved.append((current, conv, norm, relu))
        current = relu

    features = channels * size * size
    flat = builder.tensor((batch, features), Layout.FLAT)
    builder.op(OpKind.RESHAPE, [current], [flat], times[OpKind.RESHAPE])
    logits = builder.tensor((batch, classes), Layout.FLAT)
    builder.op(OpKind.MATMUL, [flat], [logits], times[OpKind.MATMUL])
    grad_logits = builder.tensor((batch, classes), Layout.FLAT)
    builder.op(OpKind.OTHER, [logits], [grad_logits], times[OpKind.OTHER])
    grad_flat = builder.tensor((batch, features), Layout.FLAT)
    builder.op(OpKind.MATMUL, [grad_logits, flat], [grad_flat], 2 * times[OpKind.MATMUL])
    grad = builder.tensor(fmap)
    builder.op(OpKind.RESHAPE, [grad_flat], [grad], times[OpKind.RESHAPE])

    for block_in, conv, norm, _ in reversed(saved):
        grad_norm = builder.tensor(fmap)
        builder.op(OpKind.RELU, [grad, norm], [grad_norm], 2 * times[OpKind.RELU])
        grad_conv = builder.tensor(fmap)
        builder.op(OpKind.NORM, [grad_norm, conv], [grad_conv], 2 * times[OpKind.NORM])
        grad = builder.tensor(fmap)
        builder.op(OpKind.CONV, [grad_conv, block_in], [grad], 2 * times[OpKind.CONV])
    return load_graph(builder.document())
