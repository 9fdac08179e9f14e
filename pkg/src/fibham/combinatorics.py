"""Band counts, Chebyshev coefficients and the entropy function f.

Counts of type A / type B bands at level k with ancestry m obey

    a_{k,m} = b_{k-1,m-1},   b_{k,m} = a_{k-2,m-1} + 2 b_{k-2,m-1},

from a_{0,0} = b_{1,0} = 1.  Everything here is exact integer arithmetic
except f and the derived envelope ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import gmpy2
from gmpy2 import mpfr

from .mp import context

_CONST_PREC = 256


def _constants():
    with gmpy2.context(context(_CONST_PREC)):
        sqrt2 = gmpy2.sqrt(mpfr(2))
        x_star = (12 - 2 * sqrt2) / 17
        f_star = gmpy2.log(1 + sqrt2)
        phi = (1 + gmpy2.sqrt(mpfr(5))) / 2
        f_sharp = f_star / gmpy2.log(phi)
    return x_star, f_star, phi, f_sharp


X_STAR_MP, F_STAR_MP, PHI_MP, F_SHARP_MP = _constants()
X_STAR = float(X_STAR_MP)
F_STAR = float(F_STAR_MP)
F_SHARP = float(F_SHARP_MP)
PHI = float(PHI_MP)


@dataclass(frozen=True)
class EntropyProfile:
    x_star: float = X_STAR
    f_star: float = F_STAR
    f_sharp: float = F_SHARP
    phi: float = PHI


def fibonacci(k: int) -> int:
    """F_k with F_0 = F_1 = 1."""
    if k < 0:
        raise ValueError("k must be >= 0")
    a, b = 1, 1
    for _ in range(k):
        a, b = b, a + b
    return a


def support(k: int) -> range:
    """Values of m with a_{k,m} possibly nonzero: ceil(k/2) <= m <= floor(2k/3)."""
    return range(-(-k // 2), (2 * k) // 3 + 1)


@dataclass(frozen=True)
class CountTable:
    """a_{k,m}, b_{k,m} for 0 <= k <= k_max; rows are lists indexed by m."""

    k_max: int
    a_rows: tuple
    b_rows: tuple

    def a(self, k: int, m: int) -> int:
        row = self.a_rows[k]
        return row[m] if 0 <= m < len(row) else 0

    def b(self, k: int, m: int) -> int:
        row = self.b_rows[k]
        return row[m] if 0 <= m < len(row) else 0

    def a_total(self, k: int) -> int:
        return sum(self.a_rows[k])

    def b_total(self, k: int) -> int:
        return sum(self.b_rows[k])

    def histogram(self, k: int) -> dict:
        """{m: a_{k,m} + b_{k,m}} over the nonzero entries."""
        out = {}
        for m, (x, y) in enumerate(zip(self.a_rows[k], self.b_rows[k])):
            if x or y:
                out[m] = x + y
        return out

    def records(self):
        """(k, m, a, b) for every nonzero entry, sorted."""
        for k in range(self.k_max + 1):
            for m, (x, y) in enumerate(zip(self.a_rows[k], self.b_rows[k])):
                if x or y:
                    yield k, m, x, y


def count_table(k_max: int) -> CountTable:
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    a = [[0] * (k + 1) for k in range(k_max + 1)]
    b = [[0] * (k + 1) for k in range(k_max + 1)]
    a[0][0] = 1
    b[1][0] = 1
    for k in range(2, k_max + 1):
        for m in range(1, k + 1):
            if m - 1 < k:  # row k-1 has length k
                a[k][m] = b[k - 1][m - 1]
            if m - 1 <= k - 2:
                b[k][m] = a[k - 2][m - 1] + 2 * b[k - 2][m - 1]
    return CountTable(k_max, tuple(tuple(r) for r in a), tuple(tuple(r) for r in b))


def _exact_quotient(num: int, den: int) -> int:
    q, r = divmod(num, den)
    if r:
        raise ArithmeticError(f"{num}/{den} is not an integer")
    return q


def _pow2_times(n: int, e: int, den: int) -> int:
    """2^e * n / den in exact integers, for integral results."""
    if e >= 0:
        return _exact_quotient(n << e, den)
    return _exact_quotient(n, den << -e)


@lru_cache(maxsize=None)
def _chebyshev_row(m: int) -> tuple:
    """(c_{0,m}, ..., c_{floor(m/2),m}) by c_{r,m+1} = 2 c_{r,m} + c_{r-1,m-1}."""
    if m == 0:
        return (1,)
    if m == 1:
        return (1,)
    prev, prev2 = _chebyshev_row(m - 1), _chebyshev_row(m - 2)
    row = []
    for r in range(m // 2 + 1):
        v = 2 * prev[r] if r < len(prev) else 0
        if r >= 1:
            v += prev2[r - 1]
        row.append(v)
    return tuple(row)


def chebyshev_coeff(r: int, m: int, method: str = "formula") -> int:
    """c_{r,m} with T_m(x) = sum_r (-1)^r c_{r,m} x^{m-2r}."""
    if m == 0 and r == 0:
        return 1
    if m < 1 or r < 0 or r > m // 2:
        raise ValueError(f"c_(r,m) undefined for r={r}, m={m}")
    if method == "recursion":
        # walk up iteratively so deep rows never hit the recursion limit
        for j in range(0, m + 1, 256):
            _chebyshev_row(j)
        return _chebyshev_row(m)[r]
    if method != "formula":
        raise ValueError(f"unknown method {method!r}")
    return _pow2_times(m * math.comb(m - r, r), m - 2 * r - 1, m - r)


def akm_closed_form(k: int, m: int) -> int:
    """2^{2k-3m-1} (m/(k-m)) C(k-m, 2m-k), zero outside the support."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if m not in support(k):
        return 0
    e = 2 * k - 3 * m - 1
    if e < 0:
        # equal to c_{2m-k,m}; avoids a fractional power of two
        return chebyshev_coeff(2 * m - k, m, method="recursion")
    return _pow2_times(m * math.comb(k - m, 2 * m - k), e, k - m)


def bkm_closed_form(k: int, m: int) -> int:
    """b_{k,m} = a_{k+1,m+1}."""
    return akm_closed_form(k + 1, m + 1)


def _xlogx(t):
    return 0.0 if t <= 0 else t * math.log(t)


def f_entropy(x) -> float:
    """f(x) on [1/2, 2/3], with the endpoint limits log 2 and 0."""
    if isinstance(x, Fraction):
        if not Fraction(1, 2) <= x <= Fraction(2, 3):
            raise ValueError(f"f is defined on [1/2, 2/3], got {x}")
        if x == Fraction(1, 2):
            return math.log(2)
        if x == Fraction(2, 3):
            return 0.0
        x = float(x)
    x = float(x)
    # float(2/3) sits one ulp below 2/3; accept a few ulps of slack
    if not (0.5 - 1e-15 <= x <= 2.0 / 3.0 + 1e-15):
        raise ValueError(f"f is defined on [1/2, 2/3], got {x}")
    if x <= 0.5:
        return math.log(2)
    if x >= 2.0 / 3.0:
        return 0.0
    u = 2.0 - 3.0 * x
    num = u * math.log(2) + _xlogx(1.0 - x) - _xlogx(2.0 * x - 1.0) - _xlogx(u)
    return num / x


@dataclass
class EnvelopeReport:
    """a_{k,m} against exp(m f(m/k)) across the support of row k."""

    k: int
    max_log_rate: float  # max_m (1/m) log a_{k,m}
    argmax_m: int
    ratios: dict = field(default_factory=dict)  # m -> a_{k,m} / exp(m f(m/k))
    c: float = 0.1
    C: float = 10.0

    @property
    def lower_constant(self) -> float:
        """min ratio * sqrt(k); the envelope holds with any c below this."""
        return min(self.ratios.values()) * math.sqrt(self.k)

    @property
    def upper_constant(self) -> float:
        return max(self.ratios.values()) / math.sqrt(self.k)

    @property
    def within(self) -> bool:
        s = math.sqrt(self.k)
        return all(self.c / s <= r <= self.C * s for r in self.ratios.values())

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "max_log_rate": self.max_log_rate,
            "argmax_m": self.argmax_m,
            "f_star": F_STAR,
            "c": self.c,
            "C": self.C,
            "lower_constant": self.lower_constant,
            "upper_constant": self.upper_constant,
            "within": self.within,
            "ratios": {str(m): r for m, r in sorted(self.ratios.items())},
        }


def envelope_check(k: int, table: CountTable | None = None, c: float = 0.1, C: float = 10.0):
    if k < 4:
        raise ValueError("k must be >= 4")
    if table is None or table.k_max < k:
        table = count_table(k)
    ratios = {}
    best, best_m = -math.inf, None
    for m in support(k):
        v = table.a(k, m)
        if v == 0:
            continue
        lv = math.log(v)  # fine for arbitrarily large ints
        ratios[m] = math.exp(lv - m * f_entropy(Fraction(m, k)))
        if lv / m > best:
            best, best_m = lv / m, m
    return EnvelopeReport(k, best, best_m, ratios, c, C)
