"""Typed value models shared across memwall modules."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from memwall.exceptions import IncompleteProfileError, SchemaError

MAX_OOM_SCORE = 1000


class OpKind(str, Enum):
    """Operator kinds known to the planner and the device profiles."""

    CONV = "Conv"
    MATMUL = "MatMul"
    RELU = "ReLU"
    POOL = "Pool"
    RESHAPE = "Reshape"
    TRANSPOSE = "Transpose"
    GATHER = "Gather"
    NORM = "Norm"
    ADD = "Add"
    OTHER = "Other"

    @property
    def is_layout_kind(self) -> bool:
        """Reshape, Transpose and Gather move data between layouts by default."""
        return self in (OpKind.RESHAPE, OpKind.TRANSPOSE, OpKind.GATHER)


class Layout(str, Enum):
    """Memory layout of a tensor."""

    ROW_MAJOR_NCHW = "RowMajorNCHW"
    PACKED4 = "Packed4"
    FLAT = "Flat"


class SwapKind(str, Enum):
    """Swap backing of a device; the value of ``alpha`` scales the high watermark."""

    DISK_SWAP = "DiskSwap"
    COMPRESSED_RAM = "CompressedRam"

    @property
    def alpha(self) -> int:
        return 1 if self is SwapKind.DISK_SWAP else 2


def _parse_kind(value: Any) -> OpKind:
    try:
        return value if isinstance(value, OpKind) else OpKind(value)
    except ValueError:
        raise SchemaError(f"unknown op kind {value!r}", value) from None


@dataclass(frozen=True)
class DeviceProfile:
    """Execution speed of a device relative to the reference device.

    ``op_scales`` multiplies the reference ``base_time`` of every op of a kind. A profile
    must cover every kind a graph uses.
    """

    name: str
    op_scales: Mapping[OpKind, float]
    memory_bytes: int = 0

    def scale_for(self, kind: OpKind) -> float:
        try:
            return self.op_scales[kind]
        except KeyError:
            raise IncompleteProfileError(
                f"device {self.name!r} has no timing for {kind.value}", [kind.value]
            ) from None

    def check_complete(self, kinds: Iterable[OpKind]) -> None:
        """Raise IncompleteProfileError naming every kind without a timing."""
        missing = sorted({k.value for k in kinds if k not in self.op_scales})
        if missing:
            raise IncompleteProfileError(
                f"device {self.name!r} lacks timings for {', '.join(missing)}", missing
            )

    @classmethod
    def uniform(cls, name: str, scale: float = 1.0, memory_bytes: int = 0) -> DeviceProfile:
        """A device running every op kind ``scale`` times slower than the reference."""
        if scale <= 0:
            raise ValueError("scale must be positive")
        return cls(name=name, op_scales={k: scale for k in OpKind}, memory_bytes=memory_bytes)

    @classmethod
    def reference(cls) -> DeviceProfile:
        return cls.uniform("reference")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DeviceProfile:
        """Create DeviceProfile from a document mapping."""
        scales_raw = data.get("op_scales")
        if scales_raw is None:
            return cls.uniform(
                data.get("name", "device"),
                float(data.get("scale", 1.0)),
                int(data.get("memory_bytes", 0)),
            )
        scales = {_parse_kind(k): float(v) for k, v in scales_raw.items()}
        for kind, value in scales.items():
            if value <= 0:
                raise SchemaError(f"op scale for {kind.value} must be positive", kind.value)
        return cls(
            name=data.get("name", "device"),
            op_scales=scales,
            memory_bytes=int(data.get("memory_bytes", 0)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "op_scales": {k.value: v for k, v in self.op_scales.items()},
            "memory_bytes": self.memory_bytes,
        }


@dataclass(frozen=True)
class ProcessInfo:
    """One running app as seen by the activity manager."""

    oom_adj_score: int
    foreground: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.oom_adj_score <= MAX_OOM_SCORE:
            raise SchemaError(
                f"oom_adj_score {self.oom_adj_score} outside 0..{MAX_OOM_SCORE}",
                self.oom_adj_score,
            )


@dataclass(frozen=True)
class MemoryTraceSample:
    """A timestamped available-memory snapshot. ``t`` is in seconds, sizes in bytes."""

    t: float
    m_avail: int
    watermark_high: int
    swap_kind: SwapKind = SwapKind.DISK_SWAP
    procs: tuple[ProcessInfo, ...] = ()

    def __post_init__(self) -> None:
        if self.m_avail < 0:
            raise SchemaError(f"m_avail must be non-negative, got {self.m_avail}", self.t)
        if self.watermark_high < 0:
            raise SchemaError("watermark_high must be non-negative", self.t)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MemoryTraceSample:
        """Create a sample from a trace record ``{t_ms, m_avail_kb, watermark_kb, ...}``."""
        try:
            return cls(
                t=data["t_ms"] / 1000.0,
                m_avail=int(data["m_avail_kb"]) * 1024,
                watermark_high=int(data["watermark_kb"]) * 1024,
                swap_kind=SwapKind(data.get("swap_kind", SwapKind.DISK_SWAP.value)),
                procs=tuple(
                    ProcessInfo(int(p["score"]), bool(p.get("fg", False)))
                    for p in data.get("procs", [])
                ),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"malformed trace record: {exc}", data.get("t_ms")) from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "t_ms": int(round(self.t * 1000)),
            "m_avail_kb": self.m_avail // 1024,
            "watermark_kb": self.watermark_high // 1024,
            "swap_kind": self.swap_kind.value,
            "procs": [{"score": p.oom_adj_score, "fg": p.foreground} for p in self.procs],
        }


@dataclass(frozen=True)
class ClientReport:
    """A client's per-round check-in as recorded in the simulator's trace stream."""

    client_id: int
    round: int
    mem_budget_bytes: int
    op_times: Mapping[OpKind, float]
    losses: tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        return {
            "client_id": self.client_id,
            "round": self.round,
            "mem_budget_bytes": self.mem_budget_bytes,
            "op_times_us": {k.value: round(v * 1e6, 3) for k, v in self.op_times.items()},
            "losses": [round(x, 6) for x in self.losses],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ClientReport:
        """Create ClientReport from a trace-stream record."""
        return cls(
            client_id=int(data["client_id"]),
            round=int(data["round"]),
            mem_budget_bytes=int(data["mem_budget_bytes"]),
            op_times={_parse_kind(k): float(v) / 1e6 for k, v in data["op_times_us"].items()},
            losses=tuple(float(x) for x in data.get("losses", [])),
        )
