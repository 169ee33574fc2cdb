"""Undecided-voter allocation algebra.

A poll reports Republican, Democrat and undecided shares R, D, U (third
parties already removed). Allocating a fraction ``lam`` of the undecideds to
the Republican gives the two-party share

    y' = (R + lam * U) / (R + D + U)

Proportional allocation (``lam = R / (R + D)``) reduces to ``R / (R + D)``;
even allocation uses ``lam = 0.5``. Writing ``lam = base + theta`` gives the
identity ``y' = y_base + u * theta`` with ``u = U / (R + D + U)``.
"""
from __future__ import annotations

import enum


class AllocationMode(str, enum.Enum):
    PROPORTIONAL = "proportional"
    EVEN = "even"


class AllocationError(ValueError):
    pass


def proportional_share(R: float, D: float) -> float:
    if R < 0 or D < 0:
        raise AllocationError("negative share")
    if R + D <= 0:
        raise AllocationError("no two-party support")
    return R / (R + D)


def allocated_share(R: float, D: float, U: float, lam: float) -> float:
    """Republican two-party share after giving ``lam`` of the undecideds to R."""
    if not 0.0 <= lam <= 1.0:
        raise AllocationError(f"allocation fraction {lam!r} outside [0, 1]")
    if R < 0 or D < 0 or U < 0:
        raise AllocationError("negative share")
    total = R + D + U
    if total <= 0:
        raise AllocationError("no support reported")
    return (R + lam * U) / total


def undecided_fraction(R: float, D: float, U: float) -> float:
    total = R + D + U
    if total <= 0:
        raise AllocationError("no support reported")
    return U / total


def base_lambda(R: float, D: float, mode: AllocationMode) -> float:
    """Deterministic part of the allocation fraction for ``mode``."""
    mode = AllocationMode(mode)
    if mode is AllocationMode.EVEN:
        return 0.5
    return proportional_share(R, D)


def two_party_share(R: float, D: float, U: float | None, mode: AllocationMode) -> float:
    """Model response ``y_i`` under the active allocation rule.

    Proportional allocation needs no undecided count. Even allocation does.
    """
    mode = AllocationMode(mode)
    if mode is AllocationMode.PROPORTIONAL:
        return proportional_share(R, D)
    if U is None:
        raise AllocationError("even allocation needs a reported undecided share")
    return allocated_share(R, D, U, 0.5)


def identity_residual(R: float, D: float, U: float, theta: float,
                      mode: AllocationMode = AllocationMode.PROPORTIONAL) -> float:
    """Residual of ``y' = y + u * theta``; zero up to rounding for valid input."""
    lam = base_lambda(R, D, mode) + theta
    lhs = allocated_share(R, D, U, lam)
    return lhs - (two_party_share(R, D, U, mode) + undecided_fraction(R, D, U) * theta)
