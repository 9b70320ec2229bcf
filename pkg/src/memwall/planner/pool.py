"""Simulated memory pool that enforces a byte budget."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from memwall.exceptions import InfeasibleBudgetError


class TensorState(str, Enum):
    LIVE = "LIVE"
    EVICTED = "EVICTED"
    COMPRESSED = "COMPRESSED"


@dataclass(frozen=True)
class TensorRuntimeState:
    """Where a tensor lives while a plan executes."""

    state: TensorState
    address: int | None
    resident_bytes: int


class MemoryPoolSim:
    """Byte-accounting pool with bump addresses.

    Fragmentation is not modeled: an allocation fits whenever the byte total stays within the
    budget. With ``strict=False`` over-budget operations are allowed so a replay can record them.
    """

    def __init__(self, budget: int, strict: bool = True) -> None:
        self.budget = budget
        self.strict = strict
        self.used = 0
        self.peak = 0
        self.allocations: dict[int, tuple[int, int]] = {}
        self._next_offset = 0

    def fits(self, nbytes: int) -> bool:
        return self.used + nbytes <= self.budget

    def over_budget(self) -> bool:
        return self.used > self.budget

    def _charge(self, delta: int, tensor_id: int) -> None:
        if self.strict and delta > 0 and not self.fits(delta):
            raise InfeasibleBudgetError(
                f"allocating tensor {tensor_id} exceeds the pool budget", budget=self.budget
            )
        self.used += delta
        self.peak = max(self.peak, self.used)

    def alloc(self, tensor_id: int, nbytes: int) -> int:
        """Allocate ``nbytes`` for a tensor and return its address."""
        if tensor_id in self.allocations:
            raise ValueError(f"tensor {tensor_id} is already allocated")
        self._charge(nbytes, tensor_id)
        address = self._next_offset
        self._next_offset += nbytes
        self.allocations[tensor_id] = (address, nbytes)
        return address

    def resize(self, tensor_id: int, nbytes: int) -> int:
        """Change a tensor's resident size in place (compress or decompress)."""
        address, current = self.allocations[tensor_id]
        self._charge(nbytes - current, tensor_id)
        self.allocations[tensor_id] = (address, nbytes)
        return address

    def free(self, tensor_id: int) -> None:
        _, nbytes = self.allocations.pop(tensor_id)
        self.used -= nbytes

    def resident(self, tensor_id: int) -> int:
        entry = self.allocations.get(tensor_id)
        return 0 if entry is None else entry[1]

    def address(self, tensor_id: int) -> int | None:
        entry = self.allocations.get(tensor_id)
        return None if entry is None else entry[0]
