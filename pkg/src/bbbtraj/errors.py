"""Exception types shared across the package."""
from __future__ import annotations


class StepSizeError(ValueError):
    """A time step violates a stability or validity bound.

    ``required`` holds the largest step that would satisfy the bound, when known.
    """

    def __init__(self, message: str, required: float | None = None):
        super().__init__(message)
        self.required = required


class ConsistencyError(RuntimeError):
    """A wave-free state left the physical manifold (negative alpha radicand)."""


class FrozenLinkError(ValueError):
    """A label with zero probability touches an active link."""

    def __init__(self, message: str, labels=()):
        super().__init__(message)
        self.labels = tuple(int(n) for n in labels)


class UndefinedLinkError(ValueError):
    """The link phase cannot be formed (zero modulus or zero coupling)."""


class InconsistentStateError(RuntimeError):
    """Link phases do not close around a cycle, so no single-valued phase exists."""


class IntegrationError(RuntimeError):
    """An evolution aborted; ``diagnostics`` describes where and why."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
