"""Synthetic activation corpus, compression bench and gradient-fidelity smoke check."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from memwall.codec.quantize import half_step
from memwall.codec.tensor import (
    ActivationTensor,
    ChannelClass,
    CodecConfig,
    CompressedTensor,
    compress_tensor,
    decompress_tensor,
)
from memwall.exceptions import ContractViolationError

logger = logging.getLogger(__name__)

# Feature-map shapes of a MobileNet-style backbone, from the stem down to the last stage.
CORPUS_SHAPES: tuple[tuple[int, int, int], ...] = (
    (64, 112, 112),
    (128, 56, 56),
    (256, 28, 28),
    (512, 14, 14),
    (512, 7, 7),
)
DEFAULT_OUTLIER_FRACTION = 0.02
DEFAULT_OUTLIER_SCALE = 81.0


@dataclass(frozen=True)
class SyntheticActivation:
    tensor: ActivationTensor
    outlier_channels: tuple[int, ...]


def synthetic_activation(
    shape: tuple[int, int, int],
    seed: int = 0,
    outlier_fraction: float = DEFAULT_OUTLIER_FRACTION,
    outlier_scale: float = DEFAULT_OUTLIER_SCALE,
) -> SyntheticActivation:
    """Post-ReLU Gaussian activation with a few outlier-rich channels.

    At least one channel (``outlier_fraction`` of them, rounded) is scaled by
    ``outlier_scale``.
    """
    rng = np.random.default_rng(seed)
    channels = shape[0]
    data = np.maximum(rng.standard_normal(shape), 0.0).astype(np.float32)
    count = min(channels, max(1, round(channels * outlier_fraction)))
    picked = np.sort(rng.choice(channels, size=count, replace=False))
    data[picked] *= np.float32(outlier_scale)
    return SyntheticActivation(ActivationTensor(data), tuple(int(c) for c in picked))


@dataclass(frozen=True)
class BenchRow:
    """Compression result for one corpus tensor."""

    shape: tuple[int, int, int]
    original_bytes: int
    compressed_bytes: int
    salient_channels: int
    max_error_normal: float
    max_error_salient: float

    @property
    def ratio(self) -> float:
        return self.original_bytes / self.compressed_bytes

    def to_dict(self) -> dict[str, object]:
        return {
            "shape": "x".join(str(d) for d in self.shape),
            "original_bytes": self.original_bytes,
            "compressed_bytes": self.compressed_bytes,
            "ratio": round(self.ratio, 4),
            "salient_channels": self.salient_channels,
            "max_error_normal": self.max_error_normal,
            "max_error_salient": self.max_error_salient,
        }


def bench_tensor(tensor: ActivationTensor, config: CodecConfig | None = None) -> BenchRow:
    config = config or CodecConfig()
    compressed = compress_tensor(tensor, config)
    restored = decompress_tensor(compressed.to_bytes())
    error = np.abs(restored.data.astype(np.float64) - tensor.data.astype(np.float64))
    per_channel = error.reshape(tensor.channels, -1).max(axis=1)
    salient = np.array(
        [cls is ChannelClass.SALIENT for cls in compressed.classification.classes], dtype=bool
    )
    return BenchRow(
        shape=(tensor.channels, tensor.height, tensor.width),
        original_bytes=tensor.nbytes,
        compressed_bytes=compressed.nbytes,
        salient_channels=int(salient.sum()),
        max_error_normal=float(per_channel[~salient].max(initial=0.0)),
        max_error_salient=float(per_channel[salient].max(initial=0.0)),
    )


def verify_bounds(
    tensor: ActivationTensor, compressed: CompressedTensor, restored: ActivationTensor
) -> float:
    """Check a round trip against the codec's error contract and return the max error.

    Normal channels must be within half a quantization step, salient channels within
    ``epsilon`` with zeros restored exactly. Both bounds hold on the float32 output as is.

    Raises:
        ContractViolationError: On the first channel that breaks its bound.
    """
    if restored.data.shape != tensor.data.shape:
        raise ContractViolationError(
            f"restored shape {restored.data.shape} differs from {tensor.data.shape}"
        )
    worst = 0.0
    for index, cls in enumerate(compressed.classification.classes):
        original = tensor.data[index].astype(np.float64)
        error = np.abs(restored.data[index].astype(np.float64) - original)
        if cls is ChannelClass.SALIENT:
            if np.any(error[original == 0.0] != 0.0):
                raise ContractViolationError(f"channel {index}: zeros not restored exactly")
            bound = compressed.config.epsilon
        else:
            bound = half_step(original, compressed.config.bits)
        excess = float(np.max(error - bound))
        if excess > 0:
            raise ContractViolationError(
                f"channel {index}: error exceeds its bound of {bound:g} by {excess:g}",
                details={"channel": index},
            )
        worst = max(worst, float(error.max()))
    return worst


def bench_corpus(
    config: CodecConfig | None = None,
    seed: int = 0,
    shapes: Sequence[tuple[int, int, int]] | None = None,
) -> list[BenchRow]:
    """Compress and restore one synthetic activation per shape."""
    rows = []
    for index, shape in enumerate(shapes or CORPUS_SHAPES):
        sample = synthetic_activation(shape, seed=seed + index)
        row = bench_tensor(sample.tensor, config)
        logger.info("bench %s: ratio %.2f", row.shape, row.ratio)
        rows.append(row)
    return rows


def _all_salient_tensor(shape: tuple[int, int, int], rng: np.random.Generator) -> ActivationTensor:
    data = rng.standard_normal(shape).astype(np.float32)
    # One spike per channel puts every channel past the 3-sigma line.
    data[:, 0, 0] = 8.0
    return ActivationTensor(data)


def gradient_fidelity(
    eps_values: Sequence[float] = (1e-1, 1e-2, 1e-3),
    seed: int = 0,
    shape: tuple[int, int, int] = (8, 16, 16),
    hidden: int = 32,
    outputs: int = 10,
) -> list[float]:
    """Relative L2 error of first-layer weight gradients computed from restored activations.

    A fixed two-layer ReLU network with squared loss is evaluated once on the original
    activation and once per ``epsilon`` on its compressed-then-restored copy. Every channel of
    the test activation is salient, so the error bound under test is the one that applies.
    """
    rng = np.random.default_rng(seed)
    tensor = _all_salient_tensor(shape, rng)
    features = tensor.data.size
    w1 = rng.standard_normal((hidden, features)) / np.sqrt(features)
    w2 = rng.standard_normal((outputs, hidden)) / np.sqrt(hidden)
    target = rng.standard_normal(outputs)

    def weight_gradient(x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        pre = w1 @ x
        act = np.maximum(pre, 0.0)
        delta_out = w2 @ act - target
        delta_hidden = (w2.T @ delta_out) * (pre > 0)
        return np.outer(delta_hidden, x)

    reference = weight_gradient(tensor.data.astype(np.float64).ravel())
    errors = []
    for epsilon in eps_values:
        config = CodecConfig(epsilon=epsilon)
        restored = decompress_tensor(compress_tensor(tensor, config).to_bytes())
        grad = weight_gradient(restored.data.astype(np.float64).ravel())
        errors.append(float(np.linalg.norm(grad - reference) / np.linalg.norm(reference)))
    return errors
