"""Synthetic device memory traces and the trace document format.

A device alternates between idle gaps, where only cached background apps run, and foreground
sessions, where the user's app takes a share of the free memory. Session lengths are lognormal
around a 153 s mean and three to five background apps are resident at any time.
"""

from __future__ import annotations

import bisect
import itertools
import logging
import math
import threading
from collections.abc import Iterator, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from memwall.exceptions import SchemaError
from memwall.models import MemoryTraceSample, ProcessInfo, SwapKind

logger = logging.getLogger(__name__)

GIB = 1 << 30
MIB = 1 << 20

MEAN_SESSION_S = 153.0
MEAN_GAP_S = 60.0


class TraceStream:
    """Endless seeded sample stream for one device.

    Args:
        total_bytes: Installed DRAM.
        seed: Stream seed; equal seeds give equal streams.
        sample_s: Sampling period in seconds.
        swap_kind: Swap backing reported with every sample.
        watermark_fraction: High watermark as a share of DRAM.
        idle_free_fraction: Share of DRAM available while no foreground app runs.
        mean_session_s: Mean foreground session length.
        mean_gap_s: Mean idle gap between sessions.
        session_sigma: Log-space spread of session lengths.
        background_apps: Inclusive range of resident background app counts.
        foreground_bytes: Range of memory taken by a foreground app.
        noise_fraction: Per-sample jitter as a share of DRAM.
    """

    def __init__(
        self,
        total_bytes: int,
        seed: int = 0,
        *,
        sample_s: float = 1.0,
        swap_kind: SwapKind = SwapKind.DISK_SWAP,
        watermark_fraction: float = 0.02,
        idle_free_fraction: float = 0.55,
        mean_session_s: float = MEAN_SESSION_S,
        mean_gap_s: float = MEAN_GAP_S,
        session_sigma: float = 0.25,
        background_apps: tuple[int, int] = (3, 5),
        foreground_bytes: tuple[int, int] = (GIB // 2, 3 * GIB // 2),
        noise_fraction: float = 0.005,
    ) -> None:
        if total_bytes <= 0:
            raise ValueError("total_bytes must be positive")
        if sample_s <= 0 or mean_session_s <= 0 or mean_gap_s <= 0:
            raise ValueError("durations must be positive")
        self.total_bytes = total_bytes
        self.seed = seed
        self.sample_s = sample_s
        self.swap_kind = swap_kind
        self.watermark = int(total_bytes * watermark_fraction)
        self.idle_free = idle_free_fraction * total_bytes
        self.mean_session_s = mean_session_s
        self.mean_gap_s = mean_gap_s
        self.session_sigma = session_sigma
        self.background_apps = background_apps
        self.foreground_bytes = foreground_bytes
        self.noise = noise_fraction * total_bytes

    def _session_length(self, rng: np.random.Generator) -> float:
        mu = math.log(self.mean_session_s) - self.session_sigma**2 / 2
        return float(rng.lognormal(mu, self.session_sigma))

    def __iter__(self) -> Iterator[MemoryTraceSample]:
        rng = np.random.default_rng(self.seed)
        low, high = self.background_apps
        index = 0
        for in_session in itertools.cycle((False, True)):
            if in_session:
                duration = self._session_length(rng)
                used = float(rng.uniform(*self.foreground_bytes))
            else:
                duration = float(rng.exponential(self.mean_gap_s))
                used = 0.0
            count = int(rng.integers(low, high + 1))
            procs = tuple(ProcessInfo(int(s)) for s in rng.integers(700, 1001, size=count))
            if in_session:
                procs = (ProcessInfo(0, foreground=True), *procs)
            for _ in range(max(1, round(duration / self.sample_s))):
                level = self.idle_free - used + rng.normal(0.0, self.noise)
                yield MemoryTraceSample(
                    t=index * self.sample_s,
                    m_avail=int(min(max(level, 0.0), self.total_bytes)),
                    watermark_high=self.watermark,
                    swap_kind=self.swap_kind,
                    procs=procs,
                )
                index += 1

    def take(self, duration_s: float) -> list[MemoryTraceSample]:
        """Samples with ``t < duration_s``."""
        return list(itertools.takewhile(lambda s: s.t < duration_s, self))


class TraceBuffer:
    """Lazily materialized prefix of a stream with time-range lookups.

    Safe to share between threads simulating different rounds of the same device.
    """

    def __init__(self, stream: TraceStream) -> None:
        self._source = iter(stream)
        self._samples: list[MemoryTraceSample] = []
        self._times: list[float] = []
        self._lock = threading.Lock()

    def _extend_past(self, t: float) -> None:
        while not self._times or self._times[-1] <= t:
            sample = next(self._source)
            self._samples.append(sample)
            self._times.append(sample.t)

    def between(self, start: float, end: float) -> list[MemoryTraceSample]:
        """Samples with ``start <= t < end``."""
        with self._lock:
            self._extend_past(end)
            lo = bisect.bisect_left(self._times, start)
            hi = bisect.bisect_left(self._times, end)
            return self._samples[lo:hi]

    def after(self, t: float) -> MemoryTraceSample:
        """First sample strictly later than ``t``."""
        with self._lock:
            self._extend_past(t)
            return self._samples[bisect.bisect_right(self._times, t)]


def synthetic_trace(
    duration_s: float, total_bytes: int = 8 * GIB, seed: int = 0, **options: Any
) -> list[MemoryTraceSample]:
    """A finite trace of ``duration_s`` seconds; see :class:`TraceStream` for ``options``."""
    return TraceStream(total_bytes, seed, **options).take(duration_s)


def spike_trace(
    duration_s: float = 600.0,
    seed: int = 0,
    baseline: int = 4 * GIB,
    sample_s: float = 1.0,
    mean_interval_s: float = 20.0,
    spike_depth: tuple[int, int] = (GIB, 2 * GIB),
    watermark: int = 80 * MIB,
) -> list[MemoryTraceSample]:
    """Steady baseline with short app-launch dips.

    Baseline samples carry a foreground app; dip samples only carry apps about to be killed,
    so they weigh little in the moving average.
    """
    rng = np.random.default_rng(seed)
    steady = (ProcessInfo(0, foreground=True), ProcessInfo(800))
    launching = (ProcessInfo(900), ProcessInfo(1000))
    samples = []
    next_spike = float(rng.exponential(mean_interval_s)) + 10.0
    spike_left = 0
    depth = 0.0
    for index in range(int(duration_s / sample_s)):
        t = index * sample_s
        if spike_left == 0 and t >= next_spike:
            spike_left = int(rng.integers(1, 4))
            depth = float(rng.uniform(*spike_depth))
            next_spike = t + float(rng.exponential(mean_interval_s)) + spike_left * sample_s
        level = baseline + rng.normal(0.0, 20 * MIB)
        procs = steady
        if spike_left:
            level -= depth
            procs = launching
            spike_left -= 1
        samples.append(
            MemoryTraceSample(
                t=t, m_avail=int(max(level, 0.0)), watermark_high=watermark, procs=procs
            )
        )
    return samples


def session_lengths(samples: Sequence[MemoryTraceSample], sample_s: float = 1.0) -> list[float]:
    """Lengths of completed foreground sessions, in seconds."""
    lengths = []
    run = 0
    for sample in samples:
        if any(p.foreground for p in sample.procs):
            run += 1
        elif run:
            lengths.append(run * sample_s)
            run = 0
    return lengths


def dump_trace(samples: Sequence[MemoryTraceSample]) -> str:
    """Serialize samples as a YAML list of trace records."""
    return yaml.safe_dump([s.to_dict() for s in samples], sort_keys=False)


def load_trace(source: str | bytes | Sequence[dict[str, Any]]) -> list[MemoryTraceSample]:
    """Parse a trace document.

    Raises:
        SchemaError: On malformed records or samples out of time order.
    """
    records = yaml.safe_load(source) if isinstance(source, (str, bytes)) else source
    if records is None:
        return []
    if not isinstance(records, list):
        raise SchemaError("trace document must be a list of records")
    samples = [MemoryTraceSample.from_dict(r) for r in records]
    for prev, cur in itertools.pairwise(samples):
        if cur.t < prev.t:
            raise SchemaError(f"trace sample at {cur.t} s precedes {prev.t} s", cur.t)
    return samples


def read_trace(path: str | Path) -> list[MemoryTraceSample]:
    return load_trace(Path(path).read_text())
