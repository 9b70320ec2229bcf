"""Synthetic device fleets: memory tiers, compute speed and non-IID data shards."""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from scipy.spatial.distance import jensenshannon

from memwall.exceptions import SchemaError
from memwall.models import DeviceProfile, SwapKind
from memwall.traces import GIB

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tier:
    """A memory capacity class. ``scale`` is its nominal op-time multiplier."""

    gb: int
    share: float
    scale: float

    @property
    def total_bytes(self) -> int:
        return self.gb * GIB

    def device(self) -> DeviceProfile:
        """Nominal device of the tier; plans are costed on it."""
        return DeviceProfile.uniform(f"tier-{self.gb}gb", self.scale, self.total_bytes)


DEFAULT_TIERS: tuple[Tier, ...] = (
    Tier(4, 0.15, 2.0),
    Tier(6, 0.25, 1.6),
    Tier(8, 0.30, 1.3),
    Tier(12, 0.25, 1.0),
    Tier(16, 0.05, 0.8),
)


@dataclass(frozen=True)
class ShardSpec:
    """Data shard descriptor: sample count, label proportions and divergence from the fleet."""

    sample_count: int
    label_dist: tuple[float, ...]
    divergence: float = 0.0


@dataclass(frozen=True)
class ClientSpec:
    client_id: int
    tier_gb: int
    compute_scale: float
    shard: ShardSpec
    trace_seed: int
    swap_kind: SwapKind = SwapKind.DISK_SWAP

    @property
    def total_bytes(self) -> int:
        return self.tier_gb * GIB

    def device(self) -> DeviceProfile:
        return DeviceProfile.uniform(
            f"client-{self.client_id}", self.compute_scale, self.total_bytes
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.client_id,
            "tier_gb": self.tier_gb,
            "compute_scale": self.compute_scale,
            "trace_seed": self.trace_seed,
            "swap_kind": self.swap_kind.value,
            "shard": {
                "samples": self.shard.sample_count,
                "labels": list(self.shard.label_dist),
                "divergence": self.shard.divergence,
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ClientSpec:
        """Create ClientSpec from a fleet document entry."""
        try:
            shard = data["shard"]
            return cls(
                client_id=int(data["id"]),
                tier_gb=int(data["tier_gb"]),
                compute_scale=float(data["compute_scale"]),
                trace_seed=int(data["trace_seed"]),
                swap_kind=SwapKind(data.get("swap_kind", SwapKind.DISK_SWAP.value)),
                shard=ShardSpec(
                    sample_count=int(shard["samples"]),
                    label_dist=tuple(float(x) for x in shard["labels"]),
                    divergence=float(shard.get("divergence", 0.0)),
                ),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"malformed fleet client: {exc}", data.get("id")) from exc


@dataclass(frozen=True)
class FleetSpec:
    """Clients in ascending id order plus the tier table they were drawn from."""

    clients: tuple[ClientSpec, ...]
    tiers: tuple[Tier, ...] = DEFAULT_TIERS

    def __post_init__(self) -> None:
        total = math.fsum(t.share for t in self.tiers)
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise SchemaError(f"tier shares sum to {total}, not 1")
        known = {t.gb for t in self.tiers}
        ids = set()
        for client in self.clients:
            if client.compute_scale <= 0:
                raise SchemaError(
                    f"client {client.client_id} has a non-positive scale", client.client_id
                )
            if client.tier_gb not in known:
                raise SchemaError(
                    f"client {client.client_id} is in unknown tier {client.tier_gb} GB",
                    client.client_id,
                )
            if client.shard.sample_count < 1:
                raise SchemaError(f"client {client.client_id} holds no samples", client.client_id)
            if client.client_id in ids:
                raise SchemaError(f"duplicate client id {client.client_id}", client.client_id)
            ids.add(client.client_id)

    def __len__(self) -> int:
        return len(self.clients)

    @cached_property
    def _by_id(self) -> dict[int, ClientSpec]:
        return {c.client_id: c for c in self.clients}

    def client(self, client_id: int) -> ClientSpec:
        return self._by_id[client_id]

    def tier(self, gb: int) -> Tier:
        for tier in self.tiers:
            if tier.gb == gb:
                return tier
        raise KeyError(gb)

    def tier_index(self, gb: int) -> int:
        return [t.gb for t in self.tiers].index(gb)

    def tier_histogram(self) -> dict[int, int]:
        counts = Counter(c.tier_gb for c in self.clients)
        return {t.gb: counts.get(t.gb, 0) for t in self.tiers}

    def to_dict(self) -> dict[str, Any]:
        return {
            "tiers": [{"gb": t.gb, "share": t.share, "scale": t.scale} for t in self.tiers],
            "clients": [c.to_dict() for c in self.clients],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FleetSpec:
        """Create FleetSpec from a fleet document."""
        try:
            tiers = tuple(
                Tier(int(t["gb"]), float(t["share"]), float(t["scale"]))
                for t in data.get("tiers", [])
            ) or DEFAULT_TIERS
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"malformed tier table: {exc}") from exc
        clients = sorted(
            (ClientSpec.from_dict(c) for c in data.get("clients", [])), key=lambda c: c.client_id
        )
        return cls(clients=tuple(clients), tiers=tiers)


def apportion(n: int, shares: Sequence[float]) -> list[int]:
    """Split ``n`` into integer counts proportional to ``shares`` (largest remainder)."""
    quotas = [n * s for s in shares]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(shares)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def shard_divergence(label_dists: Sequence[Sequence[float]]) -> list[float]:
    """Jensen-Shannon divergence (base 2, in [0, 1]) of each shard against the fleet mix."""
    matrix = np.asarray(label_dists, dtype=np.float64)
    if matrix.size == 0:
        return []
    fleet_mix = matrix.mean(axis=0)
    # jensenshannon returns the distance, the square root of the divergence
    return [float(jensenshannon(row, fleet_mix, base=2) ** 2) for row in matrix]


def generate_fleet(
    n: int,
    seed: int = 0,
    tiers: Sequence[Tier] = DEFAULT_TIERS,
    num_classes: int = 10,
    alpha: float = 0.1,
    compressed_ram_share: float = 0.5,
    scale_jitter: float = 0.1,
) -> FleetSpec:
    """Draw a fleet of ``n`` clients.

    Tier counts follow the tier shares exactly (up to rounding) and are assigned to clients in
    a seeded random order. Label proportions are Dirichlet(``alpha``) per client.
    """
    if n < 1:
        raise ValueError("a fleet needs at least one client")
    rng = np.random.default_rng(seed)
    counts = apportion(n, [t.share for t in tiers])
    assigned = [tier for tier, count in zip(tiers, counts) for _ in range(count)]
    order = rng.permutation(n)
    labels = rng.dirichlet([alpha] * num_classes, size=n)
    divergences = shard_divergence(labels)
    sizes = np.maximum(1, np.rint(rng.lognormal(6.0, 0.5, size=n))).astype(int)
    jitter = rng.lognormal(0.0, scale_jitter, size=n)
    swap = rng.random(n) < compressed_ram_share
    trace_seeds = rng.integers(0, 2**31 - 1, size=n)

    clients = []
    for cid in range(n):
        tier = assigned[int(order[cid])]
        clients.append(
            ClientSpec(
                client_id=cid,
                tier_gb=tier.gb,
                compute_scale=float(tier.scale * jitter[cid]),
                shard=ShardSpec(
                    sample_count=int(sizes[cid]),
                    label_dist=tuple(float(x) for x in labels[cid]),
                    divergence=divergences[cid],
                ),
                trace_seed=int(trace_seeds[cid]),
                swap_kind=SwapKind.COMPRESSED_RAM if swap[cid] else SwapKind.DISK_SWAP,
            )
        )
    fleet = FleetSpec(clients=tuple(clients), tiers=tuple(tiers))
    logger.debug("generated fleet of %d clients: %s", n, fleet.tier_histogram())
    return fleet


def dump_fleet(fleet: FleetSpec) -> str:
    return yaml.safe_dump(fleet.to_dict(), sort_keys=False)


def load_fleet(source: str | bytes | Mapping[str, Any]) -> FleetSpec:
    """Parse a fleet document.

    Raises:
        SchemaError: If the document is malformed or violates a fleet invariant.
    """
    data = yaml.safe_load(source) if isinstance(source, (str, bytes)) else source
    if not isinstance(data, Mapping):
        raise SchemaError("fleet document must be a mapping")
    return FleetSpec.from_dict(dict(data))


def read_fleet(path: str | Path) -> FleetSpec:
    return load_fleet(Path(path).read_text())
