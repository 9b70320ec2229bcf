"""Client utilities and exploit/explore selection.

A client's utility is the product of its statistical utility (RMS of reported losses), its
memory utility (budget relative to the model's full training requirement, capped at 1) and its
computing utility (inverse of the summed per-kind op times the model needs).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from memwall.exceptions import ConfigError, IncompleteProfileError, SchemaError, SelectionError
from memwall.models import ClientReport, OpKind

logger = logging.getLogger(__name__)

_indicator_noted = False


@dataclass(frozen=True)
class GlobalModelReq:
    """Memory needed to train the global model without any memory-saving treatment."""

    m_g: int

    def __post_init__(self) -> None:
        if self.m_g <= 0:
            raise SchemaError(f"M_G must be positive, got {self.m_g}")


@dataclass(frozen=True)
class ClientProfile:
    """What the server knows about a client. ``op_times`` are seconds per op kind."""

    client_id: int
    mem_budget: int
    op_times: Mapping[OpKind, float]
    batch_losses: tuple[float, ...] = ()
    explored: bool = False
    last_report_round: int = -1

    def __post_init__(self) -> None:
        if self.mem_budget <= 0:
            raise SchemaError(f"client {self.client_id} has no memory budget", self.client_id)
        if any(t <= 0 for t in self.op_times.values()):
            raise SchemaError(f"client {self.client_id} has non-positive op times", self.client_id)
        if self.explored and not self.batch_losses:
            raise SchemaError(f"explored client {self.client_id} has no losses", self.client_id)

    def with_report(self, report: ClientReport) -> ClientProfile:
        """Apply a check-in. A report carrying losses marks the client explored."""
        updated = replace(
            self,
            mem_budget=report.mem_budget_bytes,
            op_times=dict(report.op_times),
            last_report_round=report.round,
        )
        if report.losses:
            updated = replace(updated, batch_losses=tuple(report.losses), explored=True)
        return updated

    @classmethod
    def from_report(cls, report: ClientReport) -> ClientProfile:
        return cls(
            client_id=report.client_id,
            mem_budget=report.mem_budget_bytes,
            op_times=dict(report.op_times),
            batch_losses=tuple(report.losses),
            explored=bool(report.losses),
            last_report_round=report.round,
        )


@dataclass(frozen=True)
class SelectionConfig:
    """K clients per round, ``epsilon`` of them exploited."""

    k: int = 10
    epsilon: float = 0.9

    def __post_init__(self) -> None:
        errors = []
        if self.k < 1:
            errors.append("selection.k must be at least 1")
        if not 0.0 < self.epsilon <= 1.0:
            errors.append("selection.epsilon must be in (0, 1]")
        if errors:
            raise ConfigError(errors)

    @property
    def exploit_count(self) -> int:
        # 0.7 * 10 is 7.000000000000001 in binary floating point.
        return math.ceil(round(self.epsilon * self.k, 9))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SelectionConfig:
        return cls(k=int(data.get("k", 10)), epsilon=float(data.get("epsilon", 0.9)))


def mem_stat(m_i: int | float, m_g: int | float) -> float:
    """Memory utility: ``m_i / m_g`` when the client cannot hold the model, 1 otherwise.

    Raises:
        ValueError: If either value is not positive.
    """
    global _indicator_noted
    if m_i <= 0 or m_g <= 0:
        raise ValueError("memory values must be positive")
    if not _indicator_noted:
        logger.info("memory utility penalizes only budgets below the model requirement")
        _indicator_noted = True
    return m_i / m_g if m_g > m_i else 1.0


def stat_utility(batch_losses: Sequence[float]) -> float:
    """Root mean square of the reported losses.

    Raises:
        SelectionError: If no losses were reported.
    """
    if not batch_losses:
        raise SelectionError("statistical utility is undefined without losses")
    return math.sqrt(math.fsum(x * x for x in batch_losses) / len(batch_losses))


def comp_stat(
    op_times: Mapping[OpKind, float], required_kinds: Iterable[OpKind] | None = None
) -> float:
    """Computing utility: ``1 / sum(t_o)`` over the op kinds the model uses.

    Raises:
        IncompleteProfileError: If a required kind has no reported time.
    """
    kinds = sorted(
        set(op_times if required_kinds is None else required_kinds), key=lambda k: k.value
    )
    missing = [k.value for k in kinds if k not in op_times]
    if missing:
        raise IncompleteProfileError(f"op times missing for {', '.join(missing)}", missing)
    if not kinds:
        raise IncompleteProfileError("no op times reported", [])
    return 1.0 / math.fsum(op_times[k] for k in kinds)


def system_priority(
    profile: ClientProfile,
    model: GlobalModelReq,
    required_kinds: Iterable[OpKind] | None = None,
) -> float:
    """Resource score used to rank clients that have not been explored yet."""
    return mem_stat(profile.mem_budget, model.m_g) * comp_stat(profile.op_times, required_kinds)


def client_utility(
    profile: ClientProfile,
    model: GlobalModelReq,
    required_kinds: Iterable[OpKind] | None = None,
) -> float:
    """Product of the statistical, memory and computing utilities of an explored client."""
    return stat_utility(profile.batch_losses) * system_priority(profile, model, required_kinds)


@dataclass(frozen=True)
class Selection:
    """Clients picked for a round, exploited ones first."""

    exploit: tuple[int, ...]
    explore: tuple[int, ...]
    utilities: dict[int, float] = field(default_factory=dict, compare=False)

    @property
    def ids(self) -> list[int]:
        return [*self.exploit, *self.explore]


def select_clients(
    pool: Sequence[ClientProfile],
    config: SelectionConfig,
    model: GlobalModelReq,
    seed: int = 0,
    required_kinds: Iterable[OpKind] | None = None,
) -> Selection:
    """Pick ``config.k`` clients.

    ``ceil(epsilon * k)`` picks are the explored clients with the highest utility (ties by
    lower id); the rest are unexplored clients with the richest resources, ties ordered by a
    seeded shuffle. A short side is backfilled from the other. The result depends only on
    the set of profiles, not on their order in ``pool``.

    Raises:
        SelectionError: If ``config.k`` exceeds the pool size.
    """
    if config.k > len(pool):
        raise SelectionError(f"cannot select {config.k} clients from a pool of {len(pool)}")
    kinds = None if required_kinds is None else list(required_kinds)
    ordered = sorted(pool, key=lambda p: p.client_id)

    utilities = {p.client_id: client_utility(p, model, kinds) for p in ordered if p.explored}
    explored = sorted(utilities, key=lambda cid: (-utilities[cid], cid))

    fresh = [p for p in ordered if not p.explored]
    shuffle = np.random.default_rng(seed).permutation(len(fresh))
    tie_rank = {p.client_id: int(rank) for p, rank in zip(fresh, shuffle)}
    priority = {p.client_id: system_priority(p, model, kinds) for p in fresh}
    unexplored = sorted(priority, key=lambda cid: (-priority[cid], tie_rank[cid]))

    exploit_n = min(config.exploit_count, config.k, len(explored))
    explore_n = min(config.k - exploit_n, len(unexplored))
    exploit_n = config.k - explore_n
    selection = Selection(
        exploit=tuple(explored[:exploit_n]),
        explore=tuple(unexplored[:explore_n]),
        utilities=utilities,
    )
    logger.debug(
        "selected %d exploit and %d explore clients", len(selection.exploit), explore_n
    )
    return selection
