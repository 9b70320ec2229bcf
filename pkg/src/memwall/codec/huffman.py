"""Canonical Huffman coding of integer quantization codes."""

from __future__ import annotations

from collections import Counter
from collections.abc import Sequence

from bitarray import bitarray
from bitarray.util import canonical_decode, canonical_huffman

from memwall.codec.bitstream import ByteReader, ByteWriter
from memwall.exceptions import DecodeError


def huffman_encode(codes: Sequence[int]) -> bytes:
    """Encode integer symbols with a canonical Huffman code.

    The canonical table (code-length counts and symbols in canonical order) is written in front
    of the bits, so the result decodes on its own. An alphabet of one symbol is coded with one
    zero bit per symbol.

    Raises:
        ValueError: If ``codes`` is empty.
    """
    if not codes:
        raise ValueError("cannot Huffman-encode an empty sequence")
    freq = Counter(int(c) for c in codes)
    writer = ByteWriter()
    writer.u32(len(codes))
    writer.u32(len(freq))

    if len(freq) == 1:
        bits = bitarray(len(codes))
        bits.setall(0)
        writer.i32(next(iter(freq)))
    else:
        codebook, count, symbols = canonical_huffman(freq)
        writer.u16(len(count))
        for n in count:
            writer.u32(n)
        for symbol in symbols:
            writer.i32(symbol)
        bits = bitarray()
        bits.encode(codebook, [int(c) for c in codes])

    writer.u32(len(bits))
    writer.raw(bits.tobytes())
    return writer.getvalue()


def read_huffman(reader: ByteReader) -> list[int]:
    """Decode one stream written by :func:`huffman_encode` from ``reader``."""
    total = reader.u32()
    distinct = reader.u32()
    if distinct == 0 or distinct > total:
        raise DecodeError(f"bad Huffman alphabet size {distinct}", reader.offset)

    if distinct == 1:
        symbol = reader.i32()
        nbits = reader.u32()
        reader.raw((nbits + 7) // 8)
        if nbits != total:
            raise DecodeError("single-symbol stream length mismatch", reader.offset)
        return [symbol] * total

    count = [reader.u32() for _ in range(reader.u16())]
    symbols = [reader.i32() for _ in range(distinct)]
    if sum(count) != distinct:
        raise DecodeError("Huffman table does not match its alphabet", reader.offset)
    nbits = reader.u32()
    start = reader.offset
    bits = bitarray()
    bits.frombytes(reader.raw((nbits + 7) // 8))
    try:
        decoded = list(canonical_decode(bits[:nbits], count, symbols))
    except ValueError as exc:
        raise DecodeError(f"corrupt Huffman bits: {exc}", start) from exc
    if len(decoded) != total:
        raise DecodeError(f"expected {total} symbols, decoded {len(decoded)}", start)
    return decoded


def huffman_decode(payload: bytes) -> list[int]:
    """Inverse of :func:`huffman_encode`.

    Raises:
        DecodeError: If the payload is truncated or inconsistent.
    """
    reader = ByteReader(payload)
    decoded = read_huffman(reader)
    reader.expect_end()
    return decoded
