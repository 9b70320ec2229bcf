"""Channel-wise mixed compression of activation tensors.

Normal channels are quantized. Salient channels (those holding 3-sigma outliers) keep a
nonzero mask; their sparse blocks are stored as CSR and their dense blocks are predictively
quantized within ``epsilon`` and Huffman coded, one code stream per channel.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import numpy.typing as npt

from memwall.codec.bitstream import ByteReader, ByteWriter
from memwall.codec.blocks import partition_blocks, read_csr, read_mask, write_csr, write_mask
from memwall.codec.huffman import huffman_encode, read_huffman
from memwall.codec.lorenzo import (
    DEFAULT_RADIUS,
    LorenzoBlock,
    LorenzoPredictor,
    code_count,
    lorenzo_compress_block,
    lorenzo_decompress_block,
    read_outliers,
    write_outliers,
)
from memwall.codec.quantize import (
    SUPPORTED_BITS,
    QuantizedChannel,
    dequantize_channel,
    half_step,
    pack_codes,
    packed_size,
    quantize_channel,
    unpack_codes,
)
from memwall.exceptions import ConfigError, DecodeError, SchemaError

logger = logging.getLogger(__name__)

MAGIC = b"MWAC"
FORMAT_VERSION = 1
MAX_BLOCK = 255
# Magic, version, shape, block, tau, epsilon, bits, radius, mean, std, stencil.
HEADER_BYTES = 4 + 1 + 12 + 2 + 8 + 8 + 1 + 4 + 8 + 8 + 24


@dataclass(frozen=True)
class CodecConfig:
    """Codec parameters: quantization width, block size, sparsity threshold and error bound."""

    bits: int = 8
    block: int = 4
    tau: float = 0.25
    epsilon: float = 1e-2
    radius: int = DEFAULT_RADIUS

    def __post_init__(self) -> None:
        errors = []
        if self.bits not in SUPPORTED_BITS:
            errors.append(f"codec.bits must be one of {SUPPORTED_BITS}")
        if not 1 <= self.block <= MAX_BLOCK:
            errors.append(f"codec.block must be within 1..{MAX_BLOCK}")
        if not 0.0 <= self.tau <= 1.0:
            errors.append("codec.tau must be within [0, 1]")
        if not self.epsilon > 0:
            errors.append("codec.epsilon must be positive")
        if self.radius < 1:
            errors.append("codec.radius must be at least 1")
        if errors:
            raise ConfigError(errors)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CodecConfig:
        return cls(
            bits=int(data.get("bits", 8)),
            block=int(data.get("block", 4)),
            tau=float(data.get("tau", 0.25)),
            epsilon=float(data.get("epsilon", 1e-2)),
            radius=int(data.get("radius", DEFAULT_RADIUS)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "bits": self.bits,
            "block": self.block,
            "tau": self.tau,
            "epsilon": self.epsilon,
            "radius": self.radius,
        }


@dataclass(frozen=True)
class ActivationTensor:
    """A C x H x W float32 activation."""

    data: npt.NDArray[np.float32]

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise SchemaError(f"activation must be C x H x W, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise SchemaError("activation contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)


class ChannelClass(str, Enum):
    NORMAL = "Normal"
    SALIENT = "Salient"


@dataclass(frozen=True)
class ChannelClassification:
    """Per-channel classes and the tensor-wide statistics they were derived from."""

    classes: tuple[ChannelClass, ...]
    mean: float
    std: float

    @property
    def salient(self) -> list[int]:
        return [c for c, cls in enumerate(self.classes) if cls is ChannelClass.SALIENT]


def classify_channels(tensor: ActivationTensor) -> ChannelClassification:
    """Mark a channel Salient iff it holds an element more than 3 sigma from the tensor mean.

    A constant tensor (sigma 0) has only Normal channels.
    """
    data = tensor.data.astype(np.float64)
    mean, std = float(data.mean()), float(data.std())
    if std == 0.0:
        classes = (ChannelClass.NORMAL,) * tensor.channels
    else:
        deviation = np.abs(data - mean).reshape(tensor.channels, -1).max(axis=1)
        classes = tuple(
            ChannelClass.SALIENT if d > 3.0 * std else ChannelClass.NORMAL for d in deviation
        )
    return ChannelClassification(classes, mean, std)


@dataclass(frozen=True)
class CompressedTensor:
    """A compressed activation: header fields plus one encoded payload per channel."""

    shape: tuple[int, int, int]
    config: CodecConfig
    classification: ChannelClassification
    payloads: tuple[bytes, ...]
    predictor: LorenzoPredictor = LorenzoPredictor()
    # Exactly stored dense-block elements; only known on the compressing side.
    outliers: int = field(default=0, compare=False)

    def to_bytes(self) -> bytes:
        writer = ByteWriter()
        writer.raw(MAGIC)
        writer.u8(FORMAT_VERSION)
        for dim in self.shape:
            writer.u32(dim)
        writer.u16(self.config.block)
        writer.f64(self.config.tau)
        writer.f64(self.config.epsilon)
        writer.u8(self.config.bits)
        writer.u32(self.config.radius)
        writer.f64(self.classification.mean)
        writer.f64(self.classification.std)
        for coefficient in self.predictor.coefficients:
            writer.f64(coefficient)
        writer.array(
            [cls is ChannelClass.SALIENT for cls in self.classification.classes], "<u1"
        )
        for payload in self.payloads:
            writer.blob(payload)
        return writer.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> CompressedTensor:
        """Parse a bitstream written by :meth:`to_bytes`.

        Raises:
            DecodeError: On a bad magic, unknown version, truncation or invalid header.
        """
        reader = ByteReader(data)
        if reader.raw(len(MAGIC)) != MAGIC:
            raise DecodeError("bad magic", 0)
        version = reader.u8()
        if version != FORMAT_VERSION:
            raise DecodeError(f"unsupported format version {version}", len(MAGIC))
        header_at = reader.offset
        channels, height, width = reader.u32(), reader.u32(), reader.u32()
        block, tau, epsilon = reader.u16(), reader.f64(), reader.f64()
        bits, radius = reader.u8(), reader.u32()
        mean, std = reader.f64(), reader.f64()
        coefficients = (reader.f64(), reader.f64(), reader.f64())
        try:
            config = CodecConfig(bits, block, tau, epsilon, radius)
            predictor = LorenzoPredictor(coefficients)
        except (ConfigError, ValueError) as exc:
            raise DecodeError(f"invalid header: {exc}", header_at) from exc
        if min(channels, height, width) < 1:
            raise DecodeError("invalid tensor shape in header", header_at)

        flags = reader.array(channels, "<u1")
        if np.any(flags > 1):
            raise DecodeError("invalid channel class", reader.offset)
        classes = tuple(ChannelClass.SALIENT if f else ChannelClass.NORMAL for f in flags)
        payloads = []
        for _ in range(channels):
            sub = reader.blob()
            payloads.append(sub.raw(sub.remaining))
        reader.expect_end()
        return cls(
            shape=(channels, height, width),
            config=config,
            classification=ChannelClassification(classes, mean, std),
            payloads=tuple(payloads),
            predictor=predictor,
        )

    @property
    def nbytes(self) -> int:
        return len(self.to_bytes())

    def payload_offsets(self) -> list[int]:
        """Offset of each channel payload within the bitstream."""
        position = HEADER_BYTES + self.shape[0]
        offsets = []
        for payload in self.payloads:
            position += 4
            offsets.append(position)
            position += len(payload)
        return offsets


_NORMAL_AFFINE = 0
_NORMAL_RAW = 1


def _encode_normal(channel: npt.NDArray[np.float32], bits: int) -> bytes:
    """Quantize a channel, or store it raw when float32 output cannot honor the half step.

    That happens when the step is within a few float32 ulps of the values themselves.
    """
    quantized = quantize_channel(channel, bits)
    restored = dequantize_channel(quantized).astype(np.float32).astype(np.float64)
    writer = ByteWriter()
    if np.all(np.abs(restored - channel) <= half_step(channel, bits)):
        writer.u8(_NORMAL_AFFINE)
        writer.f64(quantized.scale)
        writer.f64(quantized.zero_point)
        writer.raw(pack_codes(quantized.codes, bits))
    else:
        writer.u8(_NORMAL_RAW)
        writer.array(channel, "<f4")
    return writer.getvalue()


def _decode_normal(
    reader: ByteReader, shape: tuple[int, int], bits: int
) -> npt.NDArray[np.float32]:
    mode = reader.u8()
    count = shape[0] * shape[1]
    if mode == _NORMAL_RAW:
        return reader.array(count, "<f4").reshape(shape).astype(np.float32)
    if mode != _NORMAL_AFFINE:
        raise DecodeError(f"unknown channel encoding {mode}", reader.offset - 1)
    scale, zero_point = reader.f64(), reader.f64()
    codes = unpack_codes(reader.raw(packed_size(count, bits)), count, bits)
    quantized = QuantizedChannel(codes.reshape(shape), scale, zero_point, bits)
    return dequantize_channel(quantized).astype(np.float32)


def _channel_block(config: CodecConfig, shape: tuple[int, ...]) -> int:
    """Block size used on a channel; a channel smaller than the block is one tile."""
    return min(config.block, *shape)


def _encode_salient(
    channel: npt.NDArray[np.float32], config: CodecConfig, predictor: LorenzoPredictor
) -> tuple[bytes, int]:
    block = _channel_block(config, channel.shape)
    partition = partition_blocks(channel, block, config.tau)
    writer = ByteWriter()
    write_mask(writer, partition.mask)
    codes: list[int] = []
    outliers = 0
    for i, j, rows, cols in partition.blocks():
        tile = channel[rows, cols]
        if partition.is_sparse(i, j):
            write_csr(writer, tile, block)
            continue
        encoded: LorenzoBlock = lorenzo_compress_block(
            tile, config.epsilon, config.radius, partition.mask[rows, cols], predictor
        )
        write_outliers(writer, encoded.outliers)
        outliers += len(encoded.outliers)
        codes.extend(encoded.codes)
    if codes:
        writer.raw(huffman_encode(codes))
    return writer.getvalue(), outliers


def _decode_salient(
    reader: ByteReader,
    shape: tuple[int, int],
    config: CodecConfig,
    predictor: LorenzoPredictor,
) -> npt.NDArray[np.float32]:
    mask = read_mask(reader, shape)
    block = _channel_block(config, shape)
    partition = partition_blocks(mask, block, config.tau, mask=mask)
    out = np.zeros(shape, dtype=np.float32)
    dense_tiles: list[tuple[slice, slice, list[tuple[int, float]]]] = []
    for i, j, rows, cols in partition.blocks():
        if partition.is_sparse(i, j):
            tile_shape = (rows.stop - rows.start, cols.stop - cols.start)
            out[rows, cols] = read_csr(reader, tile_shape, block)
        else:
            dense_tiles.append((rows, cols, read_outliers(reader)))

    needed = sum(code_count(mask[rows, cols], len(o)) for rows, cols, o in dense_tiles)
    stream = read_huffman(reader) if needed else []
    if len(stream) != needed:
        raise DecodeError(f"channel needs {needed} codes, stream has {len(stream)}", reader.offset)
    position = 0
    for rows, cols, outliers in dense_tiles:
        tile_mask = mask[rows, cols]
        count = code_count(tile_mask, len(outliers))
        payload = LorenzoBlock(stream[position : position + count], outliers)
        position += count
        try:
            out[rows, cols] = lorenzo_decompress_block(
                payload, tile_mask.shape, config.epsilon, tile_mask, predictor
            )
        except DecodeError as exc:
            raise DecodeError(exc.message, reader.offset) from exc
    return out


def compress_tensor(
    tensor: ActivationTensor,
    config: CodecConfig | None = None,
    workers: int = 1,
) -> CompressedTensor:
    """Compress an activation channel by channel.

    Args:
        tensor: The activation to compress.
        config: Codec parameters; defaults to ``CodecConfig()``.
        workers: Channels encoded in parallel; output order is always by channel index.

    Returns:
        The compressed tensor. ``to_bytes()`` gives its self-describing bitstream.
    """
    config = config or CodecConfig()
    predictor = LorenzoPredictor()
    classification = classify_channels(tensor)

    def encode(index: int) -> tuple[bytes, int]:
        channel = tensor.data[index]
        if classification.classes[index] is ChannelClass.SALIENT:
            return _encode_salient(channel, config, predictor)
        return _encode_normal(channel, config.bits), 0

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            encoded = list(pool.map(encode, range(tensor.channels)))
    else:
        encoded = [encode(c) for c in range(tensor.channels)]
    payloads = tuple(payload for payload, _ in encoded)

    logger.debug(
        "compressed %s tensor: %d salient channels",
        tensor.data.shape,
        len(classification.salient),
    )
    return CompressedTensor(
        shape=(tensor.channels, tensor.height, tensor.width),
        config=config,
        classification=classification,
        payloads=payloads,
        predictor=predictor,
        outliers=sum(count for _, count in encoded),
    )


def decompress_tensor(compressed: CompressedTensor | bytes) -> ActivationTensor:
    """Reconstruct an activation from a CompressedTensor or its bitstream.

    Zeros and exact outliers come back bit-exact, dense salient entries within ``epsilon``,
    normal entries within half a quantization step.

    Raises:
        DecodeError: If the bitstream is corrupt. Its offset points into the full bitstream.
    """
    if isinstance(compressed, bytes):
        compressed = CompressedTensor.from_bytes(compressed)
    channels, height, width = compressed.shape
    out = np.empty(compressed.shape, dtype=np.float32)
    offsets = compressed.payload_offsets()
    for index, payload in enumerate(compressed.payloads):
        reader = ByteReader(payload, offsets[index])
        if compressed.classification.classes[index] is ChannelClass.SALIENT:
            try:
                out[index] = _decode_salient(
                    reader, (height, width), compressed.config, compressed.predictor
                )
            except ValueError as exc:
                raise DecodeError(f"channel {index}: {exc}", reader.offset) from exc
        else:
            out[index] = _decode_normal(reader, (height, width), compressed.config.bits)
        reader.expect_end()
    return ActivationTensor(out)
