"""Multiple-precision helpers on top of gmpy2.

All arithmetic goes through explicit ``gmpy2.context`` objects so the
working precision and rounding direction are always visible at the call
site.  Interval enclosures are built from pairs of directed-rounding
contexts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import gmpy2
from gmpy2 import mpfr, mpq

START_PRECISION = 64
MAX_PRECISION = 4096

_EMAX = gmpy2.get_emax_max()
_EMIN = gmpy2.get_emin_min()


@lru_cache(maxsize=None)
def context(precision: int, rounding=gmpy2.RoundToNearest):
    return gmpy2.context(precision=precision, round=rounding, emax=_EMAX, emin=_EMIN)


def down(precision: int):
    return context(precision, gmpy2.RoundDown)


def up(precision: int):
    return context(precision, gmpy2.RoundUp)


def precision_ladder(start: int = START_PRECISION, cap: int = MAX_PRECISION):
    """64, 128, 256, ... up to and including ``cap``."""
    p = max(start, 53)
    while p < cap:
        yield p
        p *= 2
    yield cap


def to_mpfr(value, precision: int = MAX_PRECISION) -> mpfr:
    """Convert to mpfr, exactly whenever the input is a binary float or an int.

    Decimal strings and fractions are rounded at ``precision`` bits.
    """
    if isinstance(value, type(mpfr(0))):
        return value
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, int):
        return mpfr(value, max(value.bit_length(), 53))
    if isinstance(value, float):
        return mpfr(value, 53)
    if isinstance(value, Fraction):
        value = mpq(value.numerator, value.denominator)
    if isinstance(value, type(mpq(0))):
        with gmpy2.context(context(precision)):
            return mpfr(value)
    if isinstance(value, str):
        return mpfr(value, precision)
    return mpfr(float(value), 53)


def to_mpq(value) -> mpq:
    """Exact rational value of an mpfr, float, int or Fraction."""
    if isinstance(value, Fraction):
        return mpq(value.numerator, value.denominator)
    if isinstance(value, str):
        value = to_mpfr(value)
    return mpq(value)


def bits_for_digits(digits: int) -> int:
    return int(math.ceil(digits * math.log2(10)))


def digits_for_bits(bits: int) -> int:
    return int(math.ceil(bits * math.log10(2))) + 1


def fmt(x, digits: int) -> str:
    """Deterministic decimal rendering with ``digits`` significant digits."""
    return format(to_mpfr(x), f".{digits}g")


# -- intervals ----------------------------------------------------------

def iv_point(x):
    return (x, x)


def iv_fms(p: int, a, b, c):
    """Enclosure of a*b - c for interval arguments at precision ``p``."""
    cd, cu = down(p), up(p)
    a0, a1 = a
    b0, b1 = b
    c0, c1 = c
    if a0 == a1 and b0 == b1:
        return cd.fms(a0, b0, c1), cu.fms(a0, b0, c0)
    # sign-definite factors fix which corners give the extremes
    if a0 >= 0:
        if b0 >= 0:
            return cd.fms(a0, b0, c1), cu.fms(a1, b1, c0)
        if b1 <= 0:
            return cd.fms(a1, b0, c1), cu.fms(a0, b1, c0)
    elif a1 <= 0:
        if b0 >= 0:
            return cd.fms(a0, b1, c1), cu.fms(a1, b0, c0)
        if b1 <= 0:
            return cd.fms(a1, b1, c1), cu.fms(a0, b0, c0)
    lo = min(cd.fms(a0, b0, c1), cd.fms(a0, b1, c1), cd.fms(a1, b0, c1), cd.fms(a1, b1, c1))
    hi = max(cu.fms(a0, b0, c0), cu.fms(a0, b1, c0), cu.fms(a1, b0, c0), cu.fms(a1, b1, c0))
    return lo, hi


def iv_sub(p: int, a, b):
    return down(p).sub(a[0], b[1]), up(p).sub(a[1], b[0])


def iv_sign(a) -> int | None:
    """+1 / -1 if the interval excludes zero, 0 if it is exactly {0}, else None."""
    lo, hi = a
    if lo > 0:
        return 1
    if hi < 0:
        return -1
    if lo == 0 and hi == 0:
        return 0
    return None


@dataclass(frozen=True)
class Enclosure:
    """A certified enclosure ``[lo, hi]`` of a real number."""

    lo: mpfr
    hi: mpfr

    @property
    def mid(self) -> mpfr:
        p = max(self.lo.precision, self.hi.precision) + 1
        return context(p).div_2exp(context(p).add(self.lo, self.hi), 1)

    @property
    def rad(self) -> mpfr:
        p = max(self.lo.precision, self.hi.precision) + 1
        return up(p).div_2exp(up(p).sub(self.hi, self.lo), 1)

    @property
    def width(self) -> mpfr:
        p = max(self.lo.precision, self.hi.precision) + 1
        return up(p).sub(self.hi, self.lo)

    def __float__(self):
        return float(self.mid)

    def contains(self, x) -> bool:
        return self.lo <= x <= self.hi

    @classmethod
    def exact(cls, x):
        x = to_mpfr(x)
        return cls(x, x)
