"""Per-op-kind codec calibration used by the planner to estimate compression without compressing."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any

from memwall.exceptions import SchemaError
from memwall.models import OpKind

if TYPE_CHECKING:
    from memwall.codec.tensor import CodecConfig


@dataclass(frozen=True)
class KindCalibration:
    """Compression ratio and throughputs (bytes per second) for one op kind."""

    ratio: float
    compress_bps: float
    decompress_bps: float

    def __post_init__(self) -> None:
        if self.ratio <= 0 or self.compress_bps <= 0 or self.decompress_bps <= 0:
            raise SchemaError("calibration values must be positive")


# Bench on the synthetic activation corpus (bits=8, epsilon=1e-2), rounded.
_DEFAULT_RATIOS = {
    OpKind.CONV: 3.6,
    OpKind.MATMUL: 3.6,
    OpKind.RELU: 3.9,
    OpKind.POOL: 3.4,
    OpKind.RESHAPE: 3.6,
    OpKind.TRANSPOSE: 3.6,
    OpKind.GATHER: 3.6,
    OpKind.NORM: 3.2,
    OpKind.ADD: 3.2,
    OpKind.OTHER: 2.5,
}
_DEFAULT_COMPRESS_BPS = 2.0e9
_DEFAULT_DECOMPRESS_BPS = 4.0e9


@dataclass(frozen=True)
class CodecModel:
    """Maps the producing op kind of a tensor to its expected codec behavior."""

    table: Mapping[OpKind, KindCalibration] = field(default_factory=dict)

    @classmethod
    def default(cls) -> CodecModel:
        return cls(
            {
                kind: KindCalibration(ratio, _DEFAULT_COMPRESS_BPS, _DEFAULT_DECOMPRESS_BPS)
                for kind, ratio in _DEFAULT_RATIOS.items()
            }
        )

    def calibration(self, kind: OpKind) -> KindCalibration:
        entry = self.table.get(kind) or self.table.get(OpKind.OTHER)
        if entry is None:
            raise SchemaError(f"codec model has no calibration for {kind.value}", kind.value)
        return entry

    def compressed_bytes(self, kind: OpKind, nbytes: int) -> int:
        """Predicted resident size after compression, never more than ``nbytes``."""
        return max(1, min(nbytes, math.ceil(nbytes / self.calibration(kind).ratio)))

    def compress_time(self, kind: OpKind, nbytes: int) -> float:
        return nbytes / self.calibration(kind).compress_bps

    def decompress_time(self, kind: OpKind, nbytes: int) -> float:
        return nbytes / self.calibration(kind).decompress_bps

    def with_ratio(self, ratio: float) -> CodecModel:
        """Same throughputs, a single measured ratio for every kind."""
        return CodecModel({k: replace(v, ratio=ratio) for k, v in self.table.items()})

    @classmethod
    def calibrate(
        cls,
        config: CodecConfig | None = None,
        seed: int = 0,
        shapes: tuple[tuple[int, int, int], ...] | None = None,
    ) -> CodecModel:
        """Measure the compression ratio on the synthetic corpus with the real codec.

        Throughputs keep their defaults; wall-clock timing would make plans irreproducible.
        """
        from memwall.codec.bench import bench_corpus

        rows = bench_corpus(config, seed=seed, shapes=shapes)
        mean_ratio = sum(row.ratio for row in rows) / len(rows)
        return cls.default().with_ratio(mean_ratio)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CodecModel:
        """Create CodecModel from ``{kind: {ratio, compress_bps, decompress_bps}}``."""
        table: dict[OpKind, KindCalibration] = {}
        for key, entry in data.items():
            try:
                kind = OpKind(key)
            except ValueError:
                raise SchemaError(f"unknown op kind {key!r}", key) from None
            table[kind] = KindCalibration(
                float(entry["ratio"]),
                float(entry.get("compress_bps", _DEFAULT_COMPRESS_BPS)),
                float(entry.get("decompress_bps", _DEFAULT_DECOMPRESS_BPS)),
            )
        return cls(table)

    def to_dict(self) -> dict[str, Any]:
        return {
            kind.value: {
                "ratio": cal.ratio,
                "compress_bps": cal.compress_bps,
                "decompress_bps": cal.decompress_bps,
            }
            for kind, cal in self.table.items()
        }
