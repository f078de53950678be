"""Exceptions raised across mfhnp.

Every class derives from MfhnpError and from the builtin it refines, so
callers may catch either.
"""

from typing import Dict, Optional


class MfhnpError(Exception):
    """Base class for all mfhnp errors."""


class ShapeError(MfhnpError, ValueError):
    """Array shapes or widths do not conform."""


class DomainError(MfhnpError, ValueError):
    """An argument lies outside the domain of an operation."""


class NonFiniteError(MfhnpError, FloatingPointError):
    """A computation produced NaN or Inf."""


class TapeError(MfhnpError, RuntimeError):
    """Reverse-mode differentiation was misused."""


class EmptyContextError(MfhnpError, ValueError):
    """An aggregation or estimator received no points where at least one is required."""


class PairingError(MfhnpError, ValueError):
    """A point required paired low/high fidelity observations that are not available."""


class VariantError(MfhnpError, ValueError):
    """Inputs are inconsistent with the configured model variant."""


class InfeasibleSplitError(MfhnpError, ValueError):
    """Requested split counts cannot be satisfied by the available scenarios."""


class DatasetFormatError(MfhnpError, ValueError):
    """A dataset, grid or checkpoint on disk is malformed."""


class ConfigError(MfhnpError, ValueError):
    """Invalid configuration."""


class NonFiniteLossError(NonFiniteError):
    """The training loss became non-finite.

    Attributes:
        epoch: Zero-based epoch of the failing batch.
        batch: Zero-based batch index inside the epoch.
        terms: Loss term values at the failure, when they could be computed.
    """

    def __init__(self, message: str, epoch: int, batch: int, terms: Optional[Dict[str, float]] = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.terms = dict(terms or {})

    def __str__(self) -> str:
        detail = ", ".join(f"{k}={v!r}" for k, v in sorted(self.terms.items()))
        return f"{self.args[0]} (epoch {self.epoch}, batch {self.batch}{', ' + detail if detail else ''})"
