"""Box counting on finite covers, the analytic dimension bounds and the cover sum.

The analytic bounds are f*/log S_u(lam) (lower, lam > 4) and
f*/log S_l(lam) (upper, lam >= 8).  The cover sum over sigma_k and
sigma_{k+1} is evaluated in the log domain from the exact count table.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import gmpy2
import numpy as np

from .band_enum import BandHierarchy, cover_union
from .combinatorics import F_STAR, X_STAR, CountTable, count_table
from .errors import DegenerateFit
from .mp import to_mpq
from .scaling import s_lower, s_upper

DEFAULT_GRID_POINTS = 12


def box_count(intervals, eps) -> int:
    """#{j : [j eps, (j+1) eps) meets the union}, by exact rational arithmetic.

    ``intervals`` must be sorted and pairwise disjoint; endpoints may be
    floats, ints, Fractions or mpfr values.
    """
    q = to_mpq(eps)
    if q <= 0:
        raise ValueError("eps must be positive")
    num, den = q.numerator, q.denominator
    total = 0
    last = None  # highest box index counted so far
    for lo, hi in intervals:
        a, b = to_mpq(lo), to_mpq(hi)
        # floor(a / eps) = floor(a.num * den / (a.den * num))
        j0 = gmpy2.f_div(a.numerator * den, a.denominator * num)
        j1 = gmpy2.f_div(b.numerator * den, b.denominator * num)
        if last is not None and j0 <= last:
            j0 = last + 1
        if j1 >= j0:
            total += int(j1 - j0 + 1)
        last = j1 if last is None else max(last, j1)
    return total


@dataclass
class BoxFit:
    slope: float
    intercept: float
    residual: float  # root-mean-square deviation of log N from the line
    eps: list
    counts: list
    local_slopes: list
    monotone: bool

    @property
    def eps_range(self):
        return min(self.eps), max(self.eps)

    def records(self):
        ls = [None] + list(self.local_slopes)
        for e, n, s in zip(self.eps, self.counts, ls):
            yield {"eps": e, "N": n, "local_slope": s}


def default_grid(intervals, n_points: int = DEFAULT_GRID_POINTS):
    """Geometric grid from the median interval length up to diameter / 10."""
    widths = sorted(float(to_mpq(b) - to_mpq(a)) for a, b in intervals)
    positive = [w for w in widths if w > 0]
    if not positive:
        raise DegenerateFit("no interval of positive length to set the grid scale")
    lo = positive[len(positive) // 2]
    diam = float(to_mpq(intervals[-1][1]) - to_mpq(intervals[0][0]))
    hi = diam / 10.0
    if not hi > lo:
        raise DegenerateFit("median interval length exceeds a tenth of the diameter",
                            {"median": lo, "diameter": diam})
    return list(np.geomspace(lo, hi, n_points))


def box_dimension_fit(source, k: int | None = None, eps_grid=None,
                      n_points: int = DEFAULT_GRID_POINTS) -> BoxFit:
    """Least-squares slope of log N(eps) against log(1/eps).

    ``source`` is either a BandHierarchy (then the cover sigma_k u sigma_{k+1}
    is used) or a sorted list of disjoint intervals.
    """
    if isinstance(source, BandHierarchy):
        if k is None:
            k = source.k_max - 1
        intervals = cover_union(source, k)
    else:
        intervals = list(source)
    if eps_grid is None:
        eps_grid = default_grid(intervals, n_points)
    eps = sorted({float(e) for e in eps_grid if float(e) > 0}, reverse=True)
    counts = [box_count(intervals, e) for e in eps]
    pts = [(e, n) for e, n in zip(eps, counts) if n > 0]
    if len(pts) < 4:
        raise DegenerateFit(f"only {len(pts)} usable grid points", {"eps": eps, "counts": counts})
    x = np.log([1.0 / e for e, _ in pts])
    y = np.log([float(n) for _, n in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    local = list(np.diff(y) / np.diff(x))
    monotone = all(b >= a for a, b in zip(counts, counts[1:]))
    return BoxFit(float(slope), float(intercept), resid, [e for e, _ in pts],
                  [n for _, n in pts], [float(s) for s in local], monotone)


@dataclass(frozen=True)
class AnalyticBounds:
    lam: float
    lower: float
    upper: float | None


def analytic_bounds(lam) -> AnalyticBounds:
    lam = float(lam)
    if lam <= 4:
        raise ValueError("the dimension bounds need lam > 4")
    lower = F_STAR / math.log(s_upper(lam))
    upper = F_STAR / math.log(s_lower(lam)) if lam >= 8 else None
    return AnalyticBounds(lam, lower, upper)


def _log_level_sum(table: CountTable, k: int, s: float, log_w0: float, log_q: float) -> float:
    """log sum_m (a_{k,m} + b_{k,m}) exp(s (log_w0 - m log_q))."""
    terms = [math.log(n) + s * (log_w0 - m * log_q) for m, n in table.histogram(k).items()]
    top = max(terms)
    return top + math.log(sum(math.exp(t - top) for t in terms))


def log_hausdorff_cover_sum(lam, k: int, s: float, table: CountTable | None = None,
                            form: str = "width") -> float:
    """Natural log of the cover sum over sigma_k and sigma_{k+1}.

    form="width":  band m weighted by (4 S_l^-m)^s, the width bound itself.
    form="product":  band m weighted by (4 S_l)^(-s m).
    """
    lam = float(lam)
    if lam < 8:
        raise ValueError("the cover sum needs lam >= 8")
    if not 0 < s <= 1:
        raise ValueError("s must lie in (0, 1]")
    if k < 2:
        raise ValueError("k must be >= 2")
    if table is None or table.k_max < k + 1:
        table = count_table(k + 1)
    log_sl = math.log(s_lower(lam))
    if form == "width":
        log_w0, log_q = math.log(4.0), log_sl
    elif form == "product":
        log_w0, log_q = 0.0, math.log(4.0) + log_sl
    else:
        raise ValueError(f"unknown form {form!r}")
    a = _log_level_sum(table, k, s, log_w0, log_q)
    b = _log_level_sum(table, k + 1, s, log_w0, log_q)
    top = max(a, b)
    return top + math.log(math.exp(a - top) + math.exp(b - top))


def hausdorff_cover_sum(lam, k: int, s: float, table: CountTable | None = None,
                        form: str = "width") -> float:
    return math.exp(log_hausdorff_cover_sum(lam, k, s, table, form))


def cover_sum_transition(lam, k1: int = 20, k2: int = 40, form: str = "width",
                         tol: float = 1e-12, table: CountTable | None = None) -> float:
    """The s in (0, 1] where the cover sum switches from growing to decaying between k1 and k2."""
    if table is None or table.k_max < k2 + 1:
        table = count_table(k2 + 1)

    def growth(s):
        return (log_hausdorff_cover_sum(lam, k2, s, table, form)
                - log_hausdorff_cover_sum(lam, k1, s, table, form))

    lo, hi = 1e-6, 1.0
    if growth(lo) <= 0 or growth(hi) >= 0:
        raise ValueError("no growth/decay transition inside (0, 1]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if growth(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class WitnessRow:
    j: int
    level: int
    m: int
    n_bands: int  # a_{3j, m_j} from the count table
    n_found: int  # type A bands with ancestry m_j in the hierarchy
    eps_bound: float  # 4 S_u^-m_j
    eps: float
    box_count: int
    ok: bool


def lower_bound_witness(h: BandHierarchy, table: CountTable | None = None, cover_level=None):
    """Check N(eps) >= a_{3j,m_j} / 2 for eps below 4 S_u^-m_j, m_j = floor(3 j x*)."""
    lam = float(h.lam)
    su = s_upper(lam)
    if cover_level is None:
        cover_level = h.k_max - 1
    cover = cover_union(h, cover_level)
    if table is None or table.k_max < h.k_max:
        table = count_table(max(h.k_max, 2))
    rows = []
    j = 1
    while 3 * j <= h.k_max:
        k = 3 * j
        m = math.floor(k * X_STAR)
        n = table.a(k, m)
        found = sum(1 for b in h.levels[k] if b.band_type == "A" and b.ancestry == m)
        eps_bound = 4.0 * su ** (-m)
        eps = 0.5 * eps_bound
        nbox = box_count(cover, eps)
        rows.append(WitnessRow(j, k, m, n, found, eps_bound, eps, nbox,
                               nbox >= n / 2 and found == n))
        j += 1
    return rows


@dataclass
class DimensionReport:
    lam: float
    lower_bound: float
    upper_bound: float | None
    empirical_dim: float
    fit: BoxFit
    cover_level: int
    cover_sum_form: str = "width"
    notes: list = field(default_factory=list)

    @property
    def bracketed(self) -> bool:
        up = self.upper_bound if self.upper_bound is not None else 1.0
        return self.lower_bound <= self.empirical_dim <= up

    def as_dict(self) -> dict:
        fit = asdict(self.fit)
        return {
            "lambda": self.lam,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "empirical_dim": self.empirical_dim,
            "cover_level": self.cover_level,
            "fit": {
                "slope": fit["slope"],
                "intercept": fit["intercept"],
                "residual": fit["residual"],
                "eps_range": list(self.fit.eps_range),
                "monotone": fit["monotone"],
                "local_slopes": fit["local_slopes"],
            },
            "cover_sum_form": self.cover_sum_form,
            "notes": list(self.notes),
        }


def dimension_report(h: BandHierarchy, level: int | None = None, eps_grid=None) -> DimensionReport:
    if level is None:
        level = h.k_max - 1
    b = analytic_bounds(h.lam)
    fit = box_dimension_fit(h, level, eps_grid)
    notes = [
        "cover sums weight a band with ancestry m by (4 S_l^-m)^s; "
        "the alternative (4 S_l)^(-s m) is available as form='product'",
        "the fitted slope is a finite-level estimate, not the limiting dimension",
    ]
    return DimensionReport(float(h.lam), b.lower, b.upper, fit.slope, fit, level, "width", notes)
