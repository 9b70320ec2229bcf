"""memwall exceptions."""

from __future__ import annotations

from typing import Any


class MemwallError(Exception):
    """Base exception for memwall errors.

    ``exit_code`` is the process exit status the CLI uses when this error escapes a subcommand.
    """

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        exit_code: int | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code
        self.details = details or {}

    def __str__(self) -> str:
        if self.details:
            extra = ", ".join(f"{key}={value}" for key, value in sorted(self.details.items()))
            return f"{self.message} ({extra})"
        return self.message


class SchemaError(MemwallError):
    """Raised when a graph, plan, trace or fleet document is malformed."""

    def __init__(self, message: str, offending_id: Any = None) -> None:
        details = {"id": offending_id} if offending_id is not None else None
        super().__init__(message, details=details)
        self.offending_id = offending_id


class ConfigError(MemwallError):
    """Raised when a configuration fails validation. Carries every problem found."""

    def __init__(self, errors: list[str]) -> None:
        super().__init__("invalid configuration: " + "; ".join(errors))
        self.errors = list(errors)


class IncompleteProfileError(MemwallError):
    """Raised when a device or client profile lacks timings for a required op kind."""

    def __init__(self, message: str, missing_kinds: list[str]) -> None:
        super().__init__(message, details={"missing": ",".join(missing_kinds)})
        self.missing_kinds = list(missing_kinds)


class InfeasibleBudgetError(MemwallError):
    """Raised when no plan can keep the pinned working set within the memory budget."""

    exit_code = 2

    def __init__(self, message: str, minimum_bytes: int = 0, budget: int = 0) -> None:
        super().__init__(
            message, details={"minimum_bytes": minimum_bytes, "budget": budget}
        )
        self.minimum_bytes = minimum_bytes
        self.budget = budget


class DecodeError(MemwallError):
    """Raised when a compressed bitstream cannot be decoded."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(message, details={"offset": offset})
        self.offset = offset


class NoDataError(MemwallError):
    """Raised when the predictor window holds no samples."""


class SelectionError(MemwallError):
    """Raised when client selection or utility computation is undefined."""


class ContractViolationError(MemwallError):
    """Raised when an internal contract (error bound, plan feasibility) is broken."""

    exit_code = 3
