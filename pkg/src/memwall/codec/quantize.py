"""Affine min-max quantization of normal channels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

SUPPORTED_BITS = (4, 8)


@dataclass(frozen=True)
class QuantizedChannel:
    """Codes plus the affine parameters: ``x ≈ zero_point + code * scale``.

    ``zero_point`` is the channel minimum. A constant channel has ``scale == 0``.
    """

    codes: npt.NDArray[np.uint8]
    scale: float
    zero_point: float
    bits: int


def quantize_channel(channel: npt.ArrayLike, bits: int = 8) -> QuantizedChannel:
    """Quantize a channel to ``bits``-bit unsigned codes.

    Every reconstructed value is within half a quantization step of the original:
    ``|x̂ - x| <= (max - min) / (2 * (2**bits - 1))``.

    Raises:
        ValueError: If ``bits`` is not 4 or 8 or the channel has non-finite values.
    """
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"bits must be one of {SUPPORTED_BITS}, got {bits}")
    data = np.asarray(channel, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise ValueError("channel contains non-finite values")
    low, high = float(data.min()), float(data.max())
    if high == low:
        return QuantizedChannel(np.zeros(data.shape, dtype=np.uint8), 0.0, low, bits)
    levels = (1 << bits) - 1
    scale = (high - low) / levels
    codes = np.clip(np.rint((data - low) / scale), 0, levels).astype(np.uint8)
    return QuantizedChannel(codes, scale, low, bits)


def dequantize_channel(quantized: QuantizedChannel) -> npt.NDArray[np.float64]:
    """Inverse of :func:`quantize_channel`."""
    return quantized.zero_point + quantized.codes.astype(np.float64) * quantized.scale


def pack_codes(codes: npt.NDArray[np.uint8], bits: int) -> bytes:
    """Serialize codes; 4-bit codes are packed two per byte, low nibble first."""
    flat = codes.ravel()
    if bits == 8:
        return flat.tobytes()
    if flat.size % 2:
        flat = np.append(flat, np.uint8(0))
    return (flat[0::2] | (flat[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_codes(data: bytes, count: int, bits: int) -> npt.NDArray[np.uint8]:
    raw = np.frombuffer(data, dtype=np.uint8)
    if bits == 8:
        return raw[:count].copy()
    out = np.empty(raw.size * 2, dtype=np.uint8)
    out[0::2] = raw & 0x0F
    out[1::2] = raw >> 4
    return out[:count]


def packed_size(count: int, bits: int) -> int:
    return count if bits == 8 else (count + 1) // 2


def half_step(channel: npt.ArrayLike, bits: int) -> float:
    """Error bound of a quantized channel: half its quantization step."""
    data = np.asarray(channel, dtype=np.float64)
    return float(data.max() - data.min()) / (2 * ((1 << bits) - 1))
