"""Safe training budget prediction from available-memory samples.

Each sample's safe budget is its available memory minus the swap-scaled high watermark. Samples
are averaged per sampling period, and the budget is the weighted mean of the period averages
inside a sliding window, where a sample weighs more when the apps running at the time are hard
to kill (low oom_adj_score).
"""

from __future__ import annotations

import logging
import math
import threading
from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

from memwall.exceptions import ConfigError, NoDataError, SchemaError
from memwall.models import MAX_OOM_SCORE, MemoryTraceSample

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegenConfig:
    """Plan regeneration triggers and the window shrink factor."""

    tp1: float = 2.0
    tp2: int = 3
    ws_adj: float = 0.9

    def __post_init__(self) -> None:
        errors = []
        if not self.tp1 > 1:
            errors.append("predictor.tp1 must be greater than 1")
        if self.tp2 < 1:
            errors.append("predictor.tp2 must be at least 1")
        if not 0 < self.ws_adj < 1:
            errors.append("predictor.ws_adj must be in (0, 1)")
        if errors:
            raise ConfigError(errors)


@dataclass(frozen=True)
class PredictorConfig:
    """Window, slide and sampling periods in seconds, plus the regeneration triggers."""

    window_s: float = 60.0
    slide_s: float = 5.0
    sample_s: float = 1.0
    watermark_fraction: float = 0.02
    regen: RegenConfig = field(default_factory=RegenConfig)

    def __post_init__(self) -> None:
        errors = []
        if not self.sample_s > 0:
            errors.append("predictor.sample_s must be positive")
        if not self.window_s >= 2 * self.sample_s:
            errors.append("predictor.window_s must cover at least two sampling periods")
        if not self.slide_s > 0:
            errors.append("predictor.slide_s must be positive")
        if not 0 <= self.watermark_fraction < 1:
            errors.append("predictor.watermark_fraction must be in [0, 1)")
        if errors:
            raise ConfigError(errors)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PredictorConfig:
        """Create PredictorConfig from the flat ``predictor`` config section."""
        errors: list[str] = []
        regen = None
        try:
            regen = RegenConfig(
                tp1=float(data.get("tp1", 2.0)),
                tp2=int(data.get("tp2", 3)),
                ws_adj=float(data.get("ws_adj", 0.9)),
            )
        except ConfigError as exc:
            errors.extend(exc.errors)
        try:
            config = cls(
                window_s=float(data.get("window_s", 60.0)),
                slide_s=float(data.get("slide_s", 5.0)),
                sample_s=float(data.get("sample_s", 1.0)),
                watermark_fraction=float(data.get("watermark_fraction", 0.02)),
                regen=regen or RegenConfig(),
            )
        except ConfigError as exc:
            errors.extend(exc.errors)
        if errors:
            raise ConfigError(errors)
        return config


def m_safe(sample: MemoryTraceSample) -> int:
    """Available memory minus ``alpha`` times the high watermark, never negative."""
    return max(0, sample.m_avail - sample.swap_kind.alpha * sample.watermark_high)


def window_weight(sample: MemoryTraceSample) -> float:
    """Sum of ``1000 / oom_adj_score`` over the sample's apps.

    The foreground app's score 0 counts as 1. A background app at score 0 has no weight and is
    skipped; a sample without weighted apps weighs 1.
    """
    scores = [max(p.oom_adj_score, 1) if p.foreground else p.oom_adj_score for p in sample.procs]
    terms = [MAX_OOM_SCORE / score for score in scores if score > 0]
    return math.fsum(terms) if terms else 1.0


@dataclass(frozen=True)
class WindowEntry:
    """One sampling period: its end time, mean safe budget and mean weight."""

    t: float
    m_safe: float
    weight: float


@dataclass(frozen=True)
class PredictorState:
    window: float
    slide: float = 5.0
    sample_period: float = 1.0
    ring: tuple[WindowEntry, ...] = ()

    def __post_init__(self) -> None:
        if self.window <= 0:
            raise ValueError("window must be positive")


def predict_budget(state: PredictorState, now: float) -> int:
    """Weighted mean of the safe budgets recorded in ``(now - window, now]``.

    Computed as ``min + sum(w * (m - min)) / sum(w)`` so the result stays inside the range of
    the window and a constant window reproduces its value exactly.

    Raises:
        NoDataError: If the window holds no entries.
    """
    entries = [e for e in state.ring if now - state.window < e.t <= now]
    if not entries:
        raise NoDataError(f"no memory samples in the {state.window:.1f} s window ending at {now}")
    low = min(e.m_safe for e in entries)
    high = max(e.m_safe for e in entries)
    total = math.fsum(e.weight for e in entries)
    spread = math.fsum(e.weight * (e.m_safe - low) for e in entries) / total
    return int(min(high, max(low, math.floor(low + spread))))


@dataclass(frozen=True)
class RoundStats:
    page_faults: int = 0
    lmk_kills: int = 0


@dataclass(frozen=True)
class RegenDecision:
    triggered: bool
    reasons: tuple[str, ...] = ()

    @property
    def reason(self) -> str | None:
        return ",".join(self.reasons) if self.reasons else None


def should_regenerate(
    stats: RoundStats, prev_avg_page_faults: float, config: RegenConfig
) -> RegenDecision:
    """Request a new plan when page faults or low-memory kills exceed their thresholds."""
    reasons = []
    if stats.page_faults > config.tp1 * prev_avg_page_faults:
        reasons.append("page-faults")
    if stats.lmk_kills > config.tp2:
        reasons.append("lmk-kills")
    return RegenDecision(bool(reasons), tuple(reasons))


def adjust_window(state: PredictorState, config: RegenConfig) -> PredictorState:
    """Shrink the window by ``ws_adj``, keeping room for at least two sampling periods."""
    window = max(state.window * config.ws_adj, 2 * state.sample_period)
    return replace(state, window=window)


class BudgetPredictor:
    """Streaming predictor for one client.

    A single writer feeds time-ordered samples through :meth:`observe`; :meth:`predict` may be
    called from other threads and always sees a consistent snapshot.
    """

    def __init__(self, config: PredictorConfig | None = None) -> None:
        self.config = config or PredictorConfig()
        self._state = PredictorState(
            window=self.config.window_s,
            slide=self.config.slide_s,
            sample_period=self.config.sample_s,
        )
        self._ring: deque[WindowEntry] = deque()
        self._period: int | None = None
        self._pending: list[tuple[float, float, float]] = []
        self._last_t: float | None = None
        self._lock = threading.Lock()

    @property
    def window(self) -> float:
        return self._state.window

    @property
    def last_sample_time(self) -> float | None:
        return self._last_t

    def _flush(self) -> None:
        if not self._pending:
            return
        count = len(self._pending)
        entry = WindowEntry(
            t=self._pending[-1][0],
            m_safe=math.fsum(p[1] for p in self._pending) / count,
            weight=math.fsum(p[2] for p in self._pending) / count,
        )
        self._pending = []
        self._ring.append(entry)
        horizon = entry.t - self._state.window
        while self._ring and self._ring[0].t <= horizon:
            self._ring.popleft()

    def observe(self, sample: MemoryTraceSample) -> None:
        """Add a sample; samples must arrive in time order.

        Raises:
            SchemaError: If the sample is older than the previous one.
        """
        if self._last_t is not None and sample.t < self._last_t:
            raise SchemaError(f"sample at {sample.t} s arrived after {self._last_t} s", sample.t)
        period = math.floor(sample.t / self.config.sample_s)
        with self._lock:
            if self._period is not None and period != self._period:
                self._flush()
            self._period = period
            self._pending.append((sample.t, float(m_safe(sample)), window_weight(sample)))
            self._last_t = sample.t

    def observe_all(self, samples: Iterable[MemoryTraceSample]) -> None:
        for sample in samples:
            self.observe(sample)

    def snapshot(self) -> PredictorState:
        """State including the sampling period still being averaged."""
        with self._lock:
            ring = list(self._ring)
            if self._pending:
                count = len(self._pending)
                ring.append(
                    WindowEntry(
                        self._pending[-1][0],
                        math.fsum(p[1] for p in self._pending) / count,
                        math.fsum(p[2] for p in self._pending) / count,
                    )
                )
            return replace(self._state, ring=tuple(ring))

    def predict(self, now: float | None = None) -> int:
        """Predicted safe budget at ``now`` (default: the latest sample time).

        Raises:
            NoDataError: If no sample falls inside the window.
        """
        if now is None:
            if self._last_t is None:
                raise NoDataError("predictor has not observed any sample")
            now = self._last_t
        return predict_budget(self.snapshot(), now)

    def shrink_window(self) -> float:
        """Apply one window shrink and return the new window length."""
        with self._lock:
            self._state = adjust_window(self._state, self.config.regen)
            return self._state.window

    def handle_round(self, stats: RoundStats, prev_avg_page_faults: float) -> RegenDecision:
        """Check the regeneration triggers and shrink the window when one fires."""
        decision = should_regenerate(stats, prev_avg_page_faults, self.config.regen)
        if decision.triggered:
            window = self.shrink_window()
            logger.debug("regeneration (%s): window now %.2f s", decision.reason, window)
        return decision


@dataclass(frozen=True)
class ReplayRow:
    t: float
    m_safe: int
    m_pred: int


def replay_trace(
    samples: Sequence[MemoryTraceSample], config: PredictorConfig | None = None
) -> list[ReplayRow]:
    """Feed a trace through a fresh predictor.

    The prediction is refreshed every ``slide_s`` seconds and held in between, the way a
    client reports it.
    """
    predictor = BudgetPredictor(config)
    rows = []
    current: int | None = None
    next_refresh = -math.inf
    for sample in samples:
        predictor.observe(sample)
        if current is None or sample.t >= next_refresh:
            current = predictor.predict(sample.t)
            next_refresh = sample.t + predictor.config.slide_s
        rows.append(ReplayRow(sample.t, m_safe(sample), current))
    return rows
