"""Exception types shared across the toolkit."""

from __future__ import annotations


class ConfigError(ValueError):
    """Raised when an experiment configuration fails schema validation."""


class DivergenceError(RuntimeError):
    """Raised when a simulated loop produces non-finite or runaway values.

    ``tick`` is the 1-based tick at which the blow-up was detected; ``rows``
    optionally carries the log rows collected before the abort so callers can
    report a truncated episode instead of losing everything.
    """

    def __init__(self, tick: int | None, message: str = "", rows: list | None = None):
        detail = message or "non-finite value in control loop"
        if tick is not None:
            detail = f"{detail} (tick {tick})"
        super().__init__(detail)
        self.tick = tick
        self.rows = rows if rows is not None else []


class EmulatorNotReadyError(RuntimeError):
    """Raised when a scheme needs a pre-trained emulator that is missing or
    whose held-out prediction error is above the readiness threshold."""
