"""Shared exception hierarchy.

Builders and drivers raise; transaction validation returns verdict values
instead (see ledger.Verdict) because a rejected transaction is normal
operation, not a fault.
"""


class EquibitError(Exception):
    """Base class for protocol-level errors."""


class CryptoError(EquibitError):
    """Malformed key or signature material (never a silent False)."""


class ScriptError(EquibitError):
    """A scenario script is malformed or an event cannot be dispatched."""

    def __init__(self, message: str, event_index: int | None = None):
        super().__init__(message)
        self.event_index = event_index


class InvariantViolation(EquibitError):
    """A simulation-wide property failed; carries the property name."""

    def __init__(self, prop: str, detail: str = ""):
        super().__init__(f"{prop}: {detail}" if detail else prop)
        self.prop = prop
