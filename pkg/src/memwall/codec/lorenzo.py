"""Error-bounded predictive quantization of dense blocks (first-order 2-D Lorenzo)."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from memwall.codec.bitstream import ByteReader, ByteWriter
from memwall.exceptions import DecodeError

DEFAULT_RADIUS = 32768


def _f32(value: float) -> float:
    return float(np.float32(value))


@dataclass(frozen=True)
class LorenzoPredictor:
    """Weights of the up, left and up-left neighbors. They must sum to one."""

    coefficients: tuple[float, float, float] = (1.0, 1.0, -1.0)

    def __post_init__(self) -> None:
        if not math.isclose(math.fsum(self.coefficients), 1.0, abs_tol=1e-12):
            raise ValueError(f"stencil coefficients must sum to 1, got {self.coefficients}")

    def predict(self, recon: list[list[float]], i: int, j: int) -> float:
        """Predict element ``(i, j)``; neighbors outside the block count as zero."""
        up = recon[i - 1][j] if i > 0 else 0.0
        left = recon[i][j - 1] if j > 0 else 0.0
        corner = recon[i - 1][j - 1] if i > 0 and j > 0 else 0.0
        a, b, c = self.coefficients
        return a * up + b * left + c * corner


@dataclass
class LorenzoBlock:
    """Quantization codes in raster order plus exactly stored outliers ``(offset, value)``."""

    codes: list[int] = field(default_factory=list)
    outliers: list[tuple[int, float]] = field(default_factory=list)


def lorenzo_compress_block(
    block: npt.ArrayLike,
    epsilon: float,
    radius: int = DEFAULT_RADIUS,
    mask: npt.ArrayLike | None = None,
    predictor: LorenzoPredictor | None = None,
) -> LorenzoBlock:
    """Predictively quantize a block so that every element is within ``epsilon``.

    Elements are visited in raster order and predicted from already reconstructed neighbors.
    The code ``round((p - x) / (2 * epsilon))`` is kept when its magnitude is below ``radius``
    and the float32 reconstruction ``p - 2 * epsilon * code`` lands within ``epsilon``;
    otherwise the element is stored exactly. Positions where ``mask`` is False are skipped
    and reconstruct as zero.

    Raises:
        ValueError: If ``epsilon`` is not positive or ``radius`` is below one.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if radius < 1:
        raise ValueError("radius must be at least 1")
    predictor = predictor or LorenzoPredictor()
    data = np.asarray(block, dtype=np.float32)
    height, width = data.shape
    keep = np.ones(data.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    values = data.tolist()
    keep_rows = keep.tolist()
    recon = [[0.0] * width for _ in range(height)]
    two_eps = 2.0 * epsilon
    out = LorenzoBlock()

    for i in range(height):
        for j in range(width):
            if not keep_rows[i][j]:
                continue
            x = values[i][j]
            p = predictor.predict(recon, i, j)
            code = math.floor((p - x) / two_eps + 0.5)
            if abs(code) < radius:
                approx = _f32(p - two_eps * code)
                if abs(approx - x) <= epsilon:
                    out.codes.append(code)
                    recon[i][j] = approx
                    continue
            out.outliers.append((i * width + j, x))
            recon[i][j] = x
    return out


def lorenzo_decompress_block(
    payload: LorenzoBlock,
    shape: tuple[int, int],
    epsilon: float,
    mask: npt.ArrayLike | None = None,
    predictor: LorenzoPredictor | None = None,
) -> npt.NDArray[np.float32]:
    """Inverse of :func:`lorenzo_compress_block`.

    Raises:
        DecodeError: If the payload holds too few or too many codes for the block.
    """
    predictor = predictor or LorenzoPredictor()
    height, width = shape
    keep = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    keep_rows = keep.tolist()
    outliers = dict(payload.outliers)
    codes = iter(payload.codes)
    recon = [[0.0] * width for _ in range(height)]
    two_eps = 2.0 * epsilon

    for i in range(height):
        for j in range(width):
            if not keep_rows[i][j]:
                continue
            offset = i * width + j
            if offset in outliers:
                recon[i][j] = outliers[offset]
                continue
            code = next(codes, None)
            if code is None:
                raise DecodeError(f"block ran out of codes at element {offset}", 0)
            recon[i][j] = _f32(predictor.predict(recon, i, j) - two_eps * code)
    if next(codes, None) is not None:
        raise DecodeError("block has unused codes", 0)
    return np.asarray(recon, dtype=np.float32)


def code_count(mask: npt.NDArray[np.bool_], outlier_count: int) -> int:
    """Number of codes a block consumes from its channel's code stream."""
    return int(mask.sum()) - outlier_count


def write_outliers(writer: ByteWriter, outliers: Sequence[tuple[int, float]]) -> None:
    writer.u16(len(outliers))
    for offset, value in outliers:
        writer.u16(offset)
        writer.f32(value)


def read_outliers(reader: ByteReader) -> list[tuple[int, float]]:
    return [(reader.u16(), reader.f32()) for _ in range(reader.u16())]
