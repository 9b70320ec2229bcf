"""Little-endian byte-stream primitives shared by the codec's encoders and decoders."""

from __future__ import annotations

import struct

import numpy as np
import numpy.typing as npt

from memwall.exceptions import DecodeError


class ByteWriter:
    """Appends little-endian fields to a growing buffer."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def _pack(self, fmt: str, value: int | float) -> None:
        self._parts.append(struct.pack("<" + fmt, value))

    def u8(self, value: int) -> None:
        self._pack("B", value)

    def u16(self, value: int) -> None:
        self._pack("H", value)

    def u32(self, value: int) -> None:
        self._pack("I", value)

    def i32(self, value: int) -> None:
        self._pack("i", value)

    def f32(self, value: float) -> None:
        self._pack("f", value)

    def f64(self, value: float) -> None:
        self._pack("d", value)

    def varint(self, value: int) -> None:
        """Unsigned LEB128."""
        out = bytearray()
        while True:
            byte = value & 0x7F
            value >>= 7
            if value:
                out.append(byte | 0x80)
            else:
                out.append(byte)
                break
        self._parts.append(bytes(out))

    def raw(self, data: bytes) -> None:
        self._parts.append(data)

    def array(self, values: npt.ArrayLike, dtype: str) -> None:
        self._parts.append(np.asarray(values).astype(dtype).tobytes())

    def blob(self, data: bytes) -> None:
        """Length-prefixed bytes."""
        self.u32(len(data))
        self.raw(data)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    """Reads fields written by ByteWriter; running past the end raises DecodeError."""

    def __init__(self, data: bytes, base_offset: int = 0) -> None:
        self._data = data
        self._pos = 0
        self._base = base_offset

    @property
    def offset(self) -> int:
        """Absolute offset in the outermost stream."""
        return self._base + self._pos

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def _take(self, size: int) -> bytes:
        if size < 0 or self._pos + size > len(self._data):
            raise DecodeError(f"truncated stream: wanted {size} bytes", self.offset)
        chunk = self._data[self._pos : self._pos + size]
        self._pos += size
        return chunk

    def _unpack(self, fmt: str) -> int | float:
        size = struct.calcsize("<" + fmt)
        value: int | float = struct.unpack("<" + fmt, self._take(size))[0]
        return value

    def u8(self) -> int:
        return int(self._unpack("B"))

    def u16(self) -> int:
        return int(self._unpack("H"))

    def u32(self) -> int:
        return int(self._unpack("I"))

    def i32(self) -> int:
        return int(self._unpack("i"))

    def f32(self) -> float:
        return float(self._unpack("f"))

    def f64(self) -> float:
        return float(self._unpack("d"))

    def varint(self) -> int:
        value = shift = 0
        while True:
            byte = self.u8()
            value |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return value
            shift += 7
            if shift > 63:
                raise DecodeError("varint too long", self.offset)

    def raw(self, size: int) -> bytes:
        return self._take(size)

    def array(self, count: int, dtype: str) -> npt.NDArray[np.generic]:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self._take(count * itemsize), dtype=dtype).copy()

    def blob(self) -> ByteReader:
        """Read a length-prefixed blob as a sub-reader that keeps absolute offsets."""
        size = self.u32()
        start = self.offset
        return ByteReader(self._take(size), start)

    def expect_end(self) -> None:
        if self.remaining:
            raise DecodeError(f"{self.remaining} trailing bytes", self.offset)
