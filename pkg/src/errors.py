"""
errors.py – the one exception hierarchy every module raises from
"""

from __future__ import annotations

from typing import Optional


class AllocError(Exception):
    """Root of all errors raised by this package."""


class EmptyInstance(AllocError, ValueError):
    """A bid profile (or group) with no bids where at least one is required."""


class InvalidBid(AllocError, ValueError):
    """Non-positive, non-finite or increasing marginal bids."""


class ParseError(AllocError):
    """A malformed instance file."""

    def __init__(self, message: str, *, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class InvalidConfig(AllocError):
    """Bad generator parameters, CLI flags or settings."""


class NotSublinear(AllocError):
    """A tabulated f whose f(l)/l increases somewhere."""


class InvariantViolation(AllocError):
    """An internal invariant was broken (e.g. wait bounds decreasing)."""


class DegenerateBelowFirstPeak(AllocError):
    """Supply ends on or before the first peak; the allocator simply takes every copy."""


class TooFewBidders(AllocError):
    """The sampling mechanism needs at least two bidders to split."""
