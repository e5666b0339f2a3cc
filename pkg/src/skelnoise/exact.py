"""Exact rational helpers for sample-count arithmetic.

Counts like floor(ratio * n) and ceil(keep * n) must not depend on float
rounding: 0.1 * 20 in binary floats is a hair above 2 and would ceil to 3.
Floats are read through their shortest decimal repr (str round-trip), which
recovers the decimal the caller wrote.
"""

from __future__ import annotations

import math
from fractions import Fraction


def as_fraction(x: float | int | str | Fraction) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, str)):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"cannot convert non-finite {x} to a fraction")
        return Fraction(str(x))
    raise TypeError(f"cannot convert {type(x).__name__} to a fraction")


def exact_floor(ratio: float | Fraction, n: int) -> int:
    """floor(ratio * n) with ratio read as an exact decimal."""
    return math.floor(as_fraction(ratio) * n)


def exact_ceil(ratio: float | Fraction, n: int) -> int:
    """ceil(ratio * n) with ratio read as an exact decimal."""
    return math.ceil(as_fraction(ratio) * n)
