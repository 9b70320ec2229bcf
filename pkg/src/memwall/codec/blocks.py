"""Sparsity masks, block partitioning and CSR encoding of sparse blocks."""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from memwall.codec.bitstream import ByteReader, ByteWriter
from memwall.exceptions import DecodeError


@dataclass(frozen=True)
class BlockPartition:
    """Per-block Sparse/Dense classes of one channel map.

    ``dense[i, j]`` is True when block ``(i, j)`` is Dense. Edge blocks may be smaller than
    ``block`` x ``block``.
    """

    block: int
    tau: float
    mask: npt.NDArray[np.bool_]
    dense: npt.NDArray[np.bool_]

    def is_sparse(self, row: int, col: int) -> bool:
        return not bool(self.dense[row, col])

    def blocks(self) -> Iterator[tuple[int, int, slice, slice]]:
        """Yield ``(row, col, row_slice, col_slice)`` in raster order."""
        height, width = self.mask.shape
        n = self.block
        for i in range(self.dense.shape[0]):
            for j in range(self.dense.shape[1]):
                yield i, j, slice(i * n, min((i + 1) * n, height)), slice(
                    j * n, min((j + 1) * n, width)
                )


def nonzero_mask(channel_map: npt.ArrayLike) -> npt.NDArray[np.bool_]:
    return np.asarray(channel_map) != 0


def partition_blocks(
    channel_map: npt.ArrayLike, block: int, tau: float, mask: npt.ArrayLike | None = None
) -> BlockPartition:
    """Classify the ``block`` x ``block`` tiles of a channel map.

    The nonzero mask is average-pooled per tile (ragged edges zero-padded for pooling only);
    a tile is Sparse iff its pooled mean is below ``tau``.

    Raises:
        ValueError: If ``block`` is outside ``1..min(H, W)``.
    """
    bitmap = nonzero_mask(channel_map) if mask is None else np.asarray(mask, dtype=bool)
    if bitmap.ndim != 2:
        raise ValueError("channel map must be 2-D")
    height, width = bitmap.shape
    if not 1 <= block <= min(height, width):
        raise ValueError(f"block size {block} must be within 1..{min(height, width)}")
    rows, cols = -(-height // block), -(-width // block)
    padded = np.zeros((rows * block, cols * block), dtype=np.float64)
    padded[:height, :width] = bitmap
    pooled = padded.reshape(rows, block, cols, block).mean(axis=(1, 3))
    return BlockPartition(block, tau, bitmap, pooled >= tau)


def csr_encode(
    block: npt.ArrayLike,
) -> tuple[npt.NDArray[np.float32], npt.NDArray[np.int32], npt.NDArray[np.int32]]:
    """Return ``(values, col_idx, row_ptr)`` of a 2-D block."""
    matrix = sp.csr_matrix(np.asarray(block, dtype=np.float32))
    matrix.eliminate_zeros()
    return (
        matrix.data.astype(np.float32),
        matrix.indices.astype(np.int32),
        matrix.indptr.astype(np.int32),
    )


def csr_decode(
    values: npt.ArrayLike,
    col_idx: npt.ArrayLike,
    row_ptr: npt.ArrayLike,
    shape: tuple[int, int],
) -> npt.NDArray[np.float32]:
    matrix = sp.csr_matrix(
        (np.asarray(values, dtype=np.float32), np.asarray(col_idx), np.asarray(row_ptr)),
        shape=shape,
    )
    return np.asarray(matrix.toarray(), dtype=np.float32)


def _index_dtype(block: int) -> str:
    return "<u1" if block * block <= 0xFF else "<u2"


def write_csr(writer: ByteWriter, block_data: npt.ArrayLike, block: int) -> None:
    """Write a block's CSR triple: row_ptr, then col_idx and values of its nonzeros."""
    values, col_idx, row_ptr = csr_encode(block_data)
    dtype = _index_dtype(block)
    writer.array(row_ptr, dtype)
    writer.array(col_idx, dtype)
    writer.array(values, "<f4")


def read_csr(reader: ByteReader, shape: tuple[int, int], block: int) -> npt.NDArray[np.float32]:
    dtype = _index_dtype(block)
    row_ptr = reader.array(shape[0] + 1, dtype).astype(np.int64)
    nnz = int(row_ptr[-1])
    col_idx = reader.array(nnz, dtype).astype(np.int64)
    values = reader.array(nnz, "<f4")
    try:
        return csr_decode(values, col_idx, row_ptr, shape)
    except ValueError as exc:
        raise DecodeError(f"corrupt CSR block: {exc}", reader.offset) from exc


def _mask_runs(flat: npt.NDArray[np.bool_]) -> list[int]:
    """Run lengths of alternating values, starting with a (possibly empty) False run."""
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


_MASK_BITMAP = 0
_MASK_RLE = 1


def write_mask(writer: ByteWriter, mask: npt.NDArray[np.bool_]) -> None:
    """Write a mask as a packed bitmap or as run lengths, whichever is smaller."""
    flat = mask.ravel()
    bitmap = np.packbits(flat).tobytes()
    rle = ByteWriter()
    runs = _mask_runs(flat)
    rle.varint(len(runs))
    for run in runs:
        rle.varint(run)
    encoded = rle.getvalue()
    if len(encoded) < len(bitmap):
        writer.u8(_MASK_RLE)
        writer.blob(encoded)
    else:
        writer.u8(_MASK_BITMAP)
        writer.blob(bitmap)


def read_mask(reader: ByteReader, shape: tuple[int, int]) -> npt.NDArray[np.bool_]:
    kind = reader.u8()
    sub = reader.blob()
    size = shape[0] * shape[1]
    if kind == _MASK_BITMAP:
        bits = np.unpackbits(np.frombuffer(sub.raw(sub.remaining), dtype=np.uint8))
        if bits.size < size:
            raise DecodeError("mask bitmap too short", sub.offset)
        return bits[:size].astype(bool).reshape(shape)
    if kind == _MASK_RLE:
        runs = [sub.varint() for _ in range(sub.varint())]
        if sum(runs) != size:
            raise DecodeError("mask run lengths do not cover the channel", sub.offset)
        values = np.arange(len(runs)) % 2 == 1
        return np.repeat(values, runs).reshape(shape)
    raise DecodeError(f"unknown mask encoding {kind}", reader.offset)
