"""Hierarchical enumeration of the bands of sigma_k = {E : |x_k(E)| <= 2}.

For lam > 4 every band at level k is either type A (inside a band of
sigma_{k-1}) or type B (inside a band of sigma_{k-2}).  A type A band at
level k holds one type B band of level k+2; a type B band at level k holds
one type A band of level k+1 and two type B bands of level k+2.  The tree is
grown parent by parent from the roots [-2, 2] (type A) and [lam-2, lam+2]
(type B).

Inside a parent the children are located on a uniform sample grid.  The
traces are evaluated in float64 as offsets y_j = x_j(L + d) - x_j(L) from the
parent's left edge L, whose traces are computed in mpfr, so that no
cancellation occurs however narrow the parent is.  Each edge is refined by
safeguarded Newton in the offset variable and then certified by
directed-rounding interval evaluation of x_level - target at E* -/+ h.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .errors import NoSignChange, PrecisionExhausted, StructureViolation
from .mp import (
    MAX_PRECISION,
    START_PRECISION,
    Enclosure,
    context,
    digits_for_bits,
    down,
    fmt,
    precision_ladder,
    to_mpfr,
    up,
)
from .scaling import s_lower, s_upper
from .trace_core import trace_at, trace_enclosure, trace_values

EDGE_GUARD_BITS = 30  # enclosure width is about 2^-30 of the band width
MAX_SAMPLES = 1 << 16


@dataclass(frozen=True)
class Band:
    level: int
    band_type: str  # "A" or "B"
    ancestry: int
    lo_enc: Enclosure
    hi_enc: Enclosure
    parent: int | None = None  # index into the parent level (level-1 for A, level-2 for B)
    lo_target: int = 0  # x_level(lo), +2 or -2
    precision: int = START_PRECISION  # bits resolved at the edges

    @property
    def lo(self) -> mpfr:
        return self.lo_enc.mid

    @property
    def hi(self) -> mpfr:
        return self.hi_enc.mid

    @property
    def width(self) -> mpfr:
        return context(max(self.lo.precision, self.hi.precision) + 2).sub(self.hi, self.lo)

    @property
    def outer(self):
        return self.lo_enc.lo, self.hi_enc.hi

    @property
    def inner(self):
        return self.lo_enc.hi, self.hi_enc.lo

    @property
    def parent_level(self) -> int | None:
        if self.parent is None:
            return None
        return self.level - (1 if self.band_type == "A" else 2)

    @property
    def hi_target(self) -> int:
        return -self.lo_target


@dataclass
class BandHierarchy:
    lam: mpfr
    k_max: int
    levels: list = field(default_factory=list)
    level_precision: list = field(default_factory=list)  # max edge bits per level
    precision: int = START_PRECISION

    def parent_of(self, band: Band) -> Band | None:
        if band.parent is None:
            return None
        return self.levels[band.parent_level][band.parent]

    def children_of(self, level: int, index: int):
        """(type A children at level+1, type B children at level+2)."""
        a = [b for b in self.levels[level + 1] if b.band_type == "A" and b.parent == index] \
            if level + 1 <= self.k_max else []
        bb = [b for b in self.levels[level + 2] if b.band_type == "B" and b.parent == index] \
            if level + 2 <= self.k_max else []
        return a, bb

    def counts(self, k: int):
        lv = self.levels[k]
        na = sum(1 for b in lv if b.band_type == "A")
        return len(lv), na, len(lv) - na

    def ancestry_histogram(self, k: int) -> dict:
        out: dict = {}
        for b in self.levels[k]:
            out[b.ancestry] = out.get(b.ancestry, 0) + 1
        return dict(sorted(out.items()))

    def intervals(self, k: int, mode: str = "mid"):
        return [_band_interval(b, mode) for b in self.levels[k]]


def _band_interval(b: Band, mode: str):
    if mode == "mid":
        return b.lo, b.hi
    if mode == "outer":
        return b.outer
    if mode == "inner":
        return b.inner
    raise ValueError(f"unknown interval mode {mode!r}")


# -- local float64 traces ------------------------------------------------


class _LocalTraces:
    """x_j(L + d) for float offsets d, as X_j(L) + y_j(d)."""

    def __init__(self, lam, L, top: int, precision: int):
        ctx = context(precision)
        xs = trace_values(L, lam, top, ctx)  # x_{-1}..x_top
        self.L = L
        self.X = [float(v) for v in xs]
        self.X_mp = xs
        self.top = top
        self._ctx = ctx

    def gap(self, level: int, target: int) -> float:
        """X_level - target, formed before rounding to float."""
        return float(self._ctx.sub(self.X_mp[level + 1], target))

    def values(self, d: np.ndarray, levels):
        """Dict level -> x_level(L + d) as float arrays."""
        X = self.X
        y2 = np.zeros_like(d)
        y1 = d.copy()
        y0 = d.copy()
        out = {}
        for lev in levels:
            if lev == 0:
                out[0] = X[1] + y1
            if lev == 1:
                out[1] = X[2] + y0
        for j in range(1, max(levels)):
            # y_{j+1} = X_j y_{j-1} + X_{j-1} y_j + y_j y_{j-1} - y_{j-2}
            yn = X[j + 1] * y1 + X[j] * y0 + y0 * y1 - y2
            y2, y1, y0 = y1, y0, yn
            if j + 1 in levels:
                out[j + 1] = X[j + 2] + y0
        return out

    def derivatives(self, d: np.ndarray, levels):
        """Dict level -> x'_level(L + d) as float arrays."""
        X = self.X
        x1 = X[1] + d
        x0 = X[2] + d
        y2, y1, y0 = np.zeros_like(d), d.copy(), d.copy()
        d2, d1, d0 = np.zeros_like(d), np.ones_like(d), np.ones_like(d)
        out = {}
        if 0 in levels:
            out[0] = d1.copy()
        if 1 in levels:
            out[1] = d0.copy()
        for j in range(1, max(levels)):
            yn = X[j + 1] * y1 + X[j] * y0 + y0 * y1 - y2
            dn = d0 * x1 + x0 * d1 - d2
            y2, y1, y0 = y1, y0, yn
            d2, d1, d0 = d1, d0, dn
            x1, x0 = x0, X[j + 2] + yn
            if j + 1 in levels:
                out[j + 1] = d0
        return out

    def scalar(self, d: float, level: int, gap: float):
        """(x_level(L + d) - target, x'_level(L + d)) with gap = X_level - target."""
        X = self.X
        if level == 0:
            return gap + d, 1.0
        if level == 1:
            return gap + d, 1.0
        y2, y1, y0 = 0.0, d, d
        x1, x0 = X[1] + d, X[2] + d
        d2, d1, d0 = 0.0, 1.0, 1.0
        for j in range(1, level):
            yn = X[j + 1] * y1 + X[j] * y0 + y0 * y1 - y2
            dn = d0 * x1 + x0 * d1 - d2
            y2, y1, y0 = y1, y0, yn
            d2, d1, d0 = d1, d0, dn
            x1, x0 = x0, X[j + 2] + yn
        return gap + (y0 - 0.0), d0


def _safe_newton(f, a: float, b: float, fa: float, fb: float, tol: float, it_max: int = 200):
    """Root of f in [a, b] (sign change given) by Newton with bisection fallback."""
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if fa > 0:
        a, b = b, a  # keep f(a) < 0 < f(b)
    x = 0.5 * (a + b)
    dx_old = abs(b - a)
    v, dv = f(x)
    for _ in range(it_max):
        if v < 0:
            a = x
        else:
            b = x
        use_bisect = dv == 0.0 or not (min(a, b) < x - v / dv < max(a, b))
        if not use_bisect and abs(2.0 * v) > abs(dx_old * dv):
            use_bisect = True
        if use_bisect:
            dx = 0.5 * (b - a)
            x_new = a + dx
        else:
            dx = v / dv
            x_new = x - dx
        dx_old = dx
        if x_new == x or abs(dx) <= tol:
            return x_new
        x = x_new
        v, dv = f(x)
        if v == 0.0:
            return x
    return x


# -- certification --------------------------------------------------------


def _exponent(x) -> int:
    return max(1, math.frexp(float(abs(x)) or 1.0)[1])


def _sign_vs_target(lam, level, E, target, precision):
    """Certified sign of x_level(E) - target, or None."""
    lo, hi = trace_enclosure(E, lam, level, precision)
    if lo > target:
        return 1
    if hi < target:
        return -1
    if lo == hi == target:
        return 0
    return None


def _certified_sign(lam, level, E, target, start, cap):
    for p in precision_ladder(start, cap):
        s = _sign_vs_target(lam, level, E, target, p)
        if s is not None:
            return s, p
    raise PrecisionExhausted(f"sign of x_{level}({E}) - {target} undecided", cap)


def _certify_pair(lam, level, target, E, h, wp, cap):
    """Try to certify a sign change of x_level - target across [E - h, E + h]."""
    for p in precision_ladder(wp, cap):
        a = down(p).sub(E, h)
        b = up(p).add(E, h)
        sa = _sign_vs_target(lam, level, a, target, p)
        sb = _sign_vs_target(lam, level, b, target, p)
        if sa is not None and sb is not None:
            if sa * sb < 0:
                return Enclosure(a, b), p
            return None, p  # certified, but no sign change: the candidate is off
    return None, cap


def certify_edge(lam, level: int, target: int, bracket, precision: int = START_PRECISION,
                 max_precision: int = MAX_PRECISION) -> Enclosure:
    """Enclosure of width <= 2^-precision of a root of x_level(E) = target in ``bracket``.

    The bracket ends must carry certified opposite signs of x_level - target.
    """
    lam = to_mpfr(lam)
    a, b = to_mpfr(bracket[0]), to_mpfr(bracket[1])
    if not a < b:
        raise ValueError("bracket must satisfy lo < hi")
    target = int(target)
    start = precision + _exponent(max(abs(a), abs(b))) + 16
    sa, pa = _certified_sign(lam, level, a, target, start, max_precision)
    sb, pb = _certified_sign(lam, level, b, target, start, max_precision)
    if sa == 0:
        return Enclosure(a, a)
    if sb == 0:
        return Enclosure(b, b)
    if sa == sb:
        raise NoSignChange(f"x_{level} - {target} has the same sign at both bracket ends")
    h = mpfr(2) ** (-(precision + 2))
    wp = max(pa, pb, start)
    # Newton candidate at working precision, then certify around it
    ctx = context(wp + 32)
    x = ctx.div_2exp(ctx.add(a, b), 1)
    lo_b, hi_b = a, b
    for _ in range(200):
        v, d = trace_at(x, lam, level, ctx)
        v = ctx.sub(v, target)
        if v == 0:
            break
        if (v > 0) == (sa > 0):
            lo_b = x
        else:
            hi_b = x
        step = ctx.div(v, d) if d != 0 else None
        if step is None or not (min(lo_b, hi_b) < ctx.sub(x, step) < max(lo_b, hi_b)):
            x_new = ctx.div_2exp(ctx.add(lo_b, hi_b), 1)
        else:
            x_new = ctx.sub(x, step)
        if abs(ctx.sub(x_new, x)) < h / 4 or x_new == x:
            x = x_new
            break
        x = x_new
    enc, _ = _certify_pair(lam, level, target, x, h, wp, max_precision)
    if enc is not None:
        return enc
    # certified bisection fallback
    width = mpfr(2) ** (-precision)
    while True:
        p = max(wp, max(a.precision, b.precision) + 2)
        c = context(p + 2).div_2exp(context(p + 2).add(a, b), 1)
        if context(p + 2).sub(b, a) <= width:
            return Enclosure(a, b)
        sc, wp = _certified_sign(lam, level, c, target, wp, max_precision)
        if sc == 0:
            return Enclosure(c, c)
        if sc == sa:
            a = c
        else:
            b = c


# -- enumeration ----------------------------------------------------------


def _runs(inside: np.ndarray):
    """(start, end) index pairs of maximal True runs."""
    idx = np.flatnonzero(np.diff(np.concatenate(([0], inside.astype(np.int8), [0]))))
    return list(zip(idx[0::2], idx[1::2] - 1))


def _find_brackets(local: _LocalTraces, W: float, levels_expected: dict, n0: int):
    """Sample [0, W]; return level -> list of (i_lo, i_hi) runs plus the grid and values."""
    n = n0
    levels = sorted(levels_expected)
    while True:
        d = np.linspace(0.0, W, n + 1)
        vals = local.values(d, levels)
        runs = {}
        short = False
        for lev in levels:
            r = _runs(np.abs(vals[lev]) <= 2.0)
            want = levels_expected[lev]
            if len(r) > want:
                raise StructureViolation(
                    f"found {len(r)} bands of level {lev} in a parent, expected {want}")
            if len(r) < want or any(s == 0 or e == n for s, e in r):
                short = True
            runs[lev] = r
        if not short:
            return runs, d, vals
        if n >= MAX_SAMPLES:
            raise StructureViolation(
                f"expected child counts {levels_expected} not resolved at {n} samples")
        n *= 2


def _edge(lam, local: _LocalTraces, level, target, da, db, fa, fb, precision, cap):
    gap = local.gap(level, target)

    def f(dd):
        return local.scalar(dd, level, gap)

    tol = 4e-16 * max(abs(da), abs(db)) + 1e-15 * abs(db - da)
    root = _safe_newton(f, da, db, fa, fb, tol=tol)
    _, slope = f(root)
    slope = abs(slope) or 1.0
    prec_out = max(precision, int(math.ceil(math.log2(max(slope, 1.0)))) + EDGE_GUARD_BITS)
    h = mpfr(2) ** (-(prec_out + 2))
    E_star = context(local.L.precision + 128).add(local.L, mpfr(root))
    wp = prec_out + _exponent(E_star) + int(math.log2(max(slope, 1.0))) + 40
    enc, p = _certify_pair(lam, level, target, E_star, h, wp, cap)
    if enc is None:
        ctx = context(local.L.precision + 128)
        bracket = sorted((ctx.add(local.L, mpfr(da)), ctx.add(local.L, mpfr(db))))
        enc = certify_edge(lam, level, target, bracket, prec_out, cap)
        p = max(p, enc.lo.precision)
    return enc, prec_out, p


def _process_parent(args):
    """Children of one parent band.  Returns (A children, B children) as Band lists."""
    lam, parent, pidx, k_max, precision, n0, cap = args
    k = parent.level
    expected = {}
    if parent.band_type == "B" and k + 1 <= k_max:
        expected[k + 1] = 1
    if k + 2 <= k_max:
        expected[k + 2] = 2 if parent.band_type == "B" else 1
    if not expected:
        return [], [], {}
    L = parent.lo
    W = float(parent.width)
    # enough bits that float offsets resolve the narrowest child
    ref_prec = max(START_PRECISION, int(-math.log2(W)) + 96 if W > 0 else 4096) + _exponent(L)
    local = _LocalTraces(lam, L, k + 2, ref_prec)
    runs, d, vals = _find_brackets(local, W, expected, n0)
    a_kids, b_kids = [], []
    used = {}  # level -> working precision spent on its edges
    for lev in sorted(expected):
        v = vals[lev]
        for s, e in runs[lev]:
            t_lo = 2 if v[s - 1] > 2.0 else -2
            t_hi = 2 if v[e + 1] > 2.0 else -2
            if t_lo == t_hi:
                raise StructureViolation(f"band of level {lev} does not sweep from +-2 to -+2")
            lo_enc, p_lo, w_lo = _edge(lam, local, lev, t_lo, d[s - 1], d[s],
                                       v[s - 1] - t_lo, v[s] - t_lo, precision, cap)
            hi_enc, p_hi, w_hi = _edge(lam, local, lev, t_hi, d[e], d[e + 1],
                                       v[e] - t_hi, v[e + 1] - t_hi, precision, cap)
            if not lo_enc.hi < hi_enc.lo:
                raise StructureViolation(f"edges of a level-{lev} band are not separated")
            used[lev] = max(used.get(lev, 0), w_lo, w_hi)
            band = Band(
                level=lev,
                band_type="A" if lev == k + 1 else "B",
                ancestry=parent.ancestry + 1,
                lo_enc=lo_enc,
                hi_enc=hi_enc,
                parent=pidx,
                lo_target=t_lo,
                precision=max(p_lo, p_hi),
            )
            (a_kids if lev == k + 1 else b_kids).append(band)
    return a_kids, b_kids, used


def _roots(lam):
    two = mpfr(2)
    s0 = Band(0, "A", 0, Enclosure.exact(-two), Enclosure.exact(two), None, -2, START_PRECISION)
    p = max(START_PRECISION, lam.precision + 8)
    lo, hi = context(p).sub(lam, two), context(p).add(lam, two)
    s1 = Band(1, "B", 0, Enclosure.exact(lo), Enclosure.exact(hi), None, -2, p)
    return s0, s1


def _initial_samples(lam) -> int:
    return max(64, 8 * int(math.ceil(s_upper(lam))))


def enumerate_bands(lam, k_max: int, precision: int = START_PRECISION, resume_from=None,
                    workers: int = 1, max_precision: int = MAX_PRECISION, progress=None):
    """Bands of sigma_0 .. sigma_{k_max} as a BandHierarchy.

    ``resume_from`` continues a shallower hierarchy (for instance one read
    back with ``hierarchy_from_json``).  ``workers > 1`` spreads the parents
    of each level over a process pool; the output is independent of it.
    """
    lam = to_mpfr(lam)
    if lam <= 4:
        raise ValueError("band enumeration needs lam > 4")
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    if precision < 53:
        raise ValueError("precision must be at least 53 bits")
    n0 = _initial_samples(lam)

    if resume_from is not None:
        if resume_from.lam != lam:
            raise ValueError("resume_from was built for a different coupling")
        if resume_from.k_max < 2:
            raise ValueError("resume_from must reach level 2")
        k0 = min(resume_from.k_max, k_max)
        levels = [list(lv) for lv in resume_from.levels[: k0 + 1]]
        level_prec = list(resume_from.level_precision[: k0 + 1])
    else:
        s0, s1 = _roots(lam)
        levels = [[s0], [s1]]
        level_prec = [START_PRECISION, s1.precision]
        k0 = 1
    # pending[j] collects bands of level j produced by parents at j-1 and j-2
    pending = {j: [] for j in range(k0 + 1, k_max + 1)}
    pending_prec = {j: 0 for j in pending}
    # parents at k0-1 still owe their type B children at k0+1
    first_parent = k0 - 1

    def absorb(results):
        for a_kids, b_kids, used in results:
            for b in a_kids + b_kids:
                pending[b.level].append(b)
                pending_prec[b.level] = max(pending_prec[b.level], used.get(b.level, 0))

    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k in range(first_parent, k_max):
            parents = levels[k]
            tasks = [(lam, par, i, k_max, precision, n0, max_precision)
                     for i, par in enumerate(parents)]
            if executor is not None:
                results = list(executor.map(_process_parent, tasks, chunksize=64))
            else:
                results = [_process_parent(t) for t in tasks]
            if k == first_parent and k0 > 1:
                # drop type A children already present at level k0
                results = [([], bk, {j: w for j, w in u.items() if j != k0})
                           for _, bk, u in results]
            absorb(results)
            nxt = k + 1
            if nxt > k0 and nxt <= k_max:
                lv = sorted(pending.pop(nxt), key=lambda b: b.lo)
                levels.append(lv)
                level_prec.append(max(pending_prec.pop(nxt), precision))
            if progress is not None:
                progress(k + 1, len(levels[-1]))
    finally:
        if executor is not None:
            executor.shutdown()
    h = BandHierarchy(lam, k_max, levels, level_prec, precision)
    _check_counts(h)
    return h


def _check_counts(h: BandHierarchy):
    from .combinatorics import fibonacci

    for k in range(2, h.k_max + 1):
        n, na, nb = h.counts(k)
        if (n, na, nb) != (fibonacci(k), fibonacci(k - 2), fibonacci(k - 1)):
            raise StructureViolation(
                f"level {k}: {n} bands ({na} A, {nb} B), expected "
                f"{fibonacci(k)} ({fibonacci(k - 2)} A, {fibonacci(k - 1)} B)")


# -- interval sets --------------------------------------------------------


def merge_intervals(intervals):
    """Sorted union of closed intervals, overlapping or touching ones merged."""
    out = []
    for lo, hi in sorted(intervals, key=lambda t: t[0]):
        if out and lo <= out[-1][1]:
            if hi > out[-1][1]:
                out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    return out


def intersect_unions(u, v):
    """Intersection of two sorted disjoint interval lists."""
    i = j = 0
    out = []
    while i < len(u) and j < len(v):
        lo = max(u[i][0], v[j][0])
        hi = min(u[i][1], v[j][1])
        if lo <= hi:
            out.append((lo, hi))
        if u[i][1] < v[j][1]:
            i += 1
        else:
            j += 1
    return out


def union_contains(outer, inner) -> bool:
    """True if every interval of ``inner`` lies in one interval of ``outer``."""
    starts = [a for a, _ in outer]
    for lo, hi in inner:
        i = bisect_right(starts, lo) - 1
        if i < 0 or hi > outer[i][1]:
            return False
    return True


def cover_union(h: BandHierarchy, k: int, mode: str = "mid"):
    """sigma_k union sigma_{k+1} as a sorted list of disjoint intervals."""
    if k < 0 or k + 1 > h.k_max:
        raise ValueError(f"cover at level {k} needs bands through level {k + 1}")
    return merge_intervals(h.intervals(k, mode) + h.intervals(k + 1, mode))


def triple_intersection_empty(h: BandHierarchy, k: int) -> bool:
    """sigma_k, sigma_{k+1}, sigma_{k+2} have no common point (outer enclosures)."""
    u = merge_intervals(h.intervals(k, "outer"))
    for j in (k + 1, k + 2):
        u = intersect_unions(u, merge_intervals(h.intervals(j, "outer")))
        if not u:
            return True
    return not u


def ancestry_from_definition(h: BandHierarchy, band: Band) -> int:
    """#{0 <= j < level : band meets sigma_j}, by interval tests on mid edges."""
    m = 0
    for j in range(band.level):
        lv = h.levels[j]
        starts = [b.lo for b in lv]
        i = bisect_right(starts, band.hi) - 1
        if i >= 0 and lv[i].hi >= band.lo:
            m += 1
    return m


def width_sandwich_violations(h: BandHierarchy, levels=None):
    """Bands whose width leaves [4 S_u^-m, 4 S_l^-m]; needs lam >= 8."""
    su = math.log(s_upper(h.lam))
    sl = math.log(s_lower(h.lam))
    bad = []
    for k in (levels if levels is not None else range(h.k_max + 1)):
        for i, b in enumerate(h.levels[k]):
            lo_w = context(256).sub(*reversed(b.inner))
            hi_w = context(256).sub(*reversed(b.outer))
            if lo_w <= 0:
                bad.append((k, i, "empty inner width"))
                continue
            llo, lhi = math.log(4) - b.ancestry * su, math.log(4) - b.ancestry * sl
            if float(gmpy2.log(lo_w)) < llo or float(gmpy2.log(hi_w)) > lhi:
                bad.append((k, i, float(b.width)))
    return bad


def nesting_violations(h: BandHierarchy):
    """Children whose outer enclosure is not inside the parent's outer enclosure."""
    bad = []
    for k in range(2, h.k_max + 1):
        for i, b in enumerate(h.levels[k]):
            p = h.parent_of(b)
            if not (p.outer[0] <= b.outer[0] and b.outer[1] <= p.outer[1]):
                bad.append((k, i))
    return bad


@dataclass
class ScalingReport:
    lam: float
    s_lower: float | None
    s_upper: float
    min_ratio: float
    max_ratio: float
    pairs: int
    samples: int
    violations: list = field(default_factory=list)  # (E, child level, child index, ratio)

    @property
    def ok(self) -> bool:
        return not self.violations


def scaling_ratio_check(h: BandHierarchy, samples_per_band: int = 100, max_level=None):
    """Sampled |x'_child / x'_parent| over every child band up to ``max_level``."""
    if samples_per_band < 2:
        raise ValueError("samples_per_band must be >= 2")
    su = s_upper(h.lam)
    sl = s_lower(h.lam) if h.lam >= 8 else None
    top = h.k_max if max_level is None else min(max_level, h.k_max)
    lo_r, hi_r, pairs, total = math.inf, 0.0, 0, 0
    violations = []
    for k in range(2, top + 1):
        for i, b in enumerate(h.levels[k]):
            pk = b.parent_level
            a, c = b.inner
            W = float(context(256).sub(c, a))
            ref = max(START_PRECISION, int(-math.log2(W)) + 96) + _exponent(a)
            local = _LocalTraces(h.lam, a, k, ref)
            d = np.linspace(0.0, W, samples_per_band)
            der = local.derivatives(d, {pk, k})
            r = np.abs(der[k] / der[pk])
            lo_r, hi_r = min(lo_r, float(r.min())), max(hi_r, float(r.max()))
            pairs += 1
            total += len(r)
            bad = (r > su) if sl is None else ((r > su) | (r < sl))
            for j in np.flatnonzero(bad):
                violations.append((float(a) + float(d[j]), k, i, float(r[j])))
    return ScalingReport(float(h.lam), sl, su, lo_r, hi_r, pairs, total, violations)


# -- import / export ------------------------------------------------------


_RAD_PAD = mpfr("1.01")  # radii are printed to 3 digits; pad so they still enclose
CSV_COLUMNS = ("level", "type", "m", "lo", "hi", "width", "lo_rad", "hi_rad")


def band_records(h: BandHierarchy, levels=None):
    """Rows for CSV export; edges as decimal midpoints with their radii."""
    for k in (levels if levels is not None else range(h.k_max + 1)):
        for b in h.levels[k]:
            digits = digits_for_bits(max(b.precision, 53) + _exponent(b.hi))
            yield {
                "level": b.level,
                "type": b.band_type,
                "m": b.ancestry,
                "lo": fmt(b.lo, digits),
                "hi": fmt(b.hi, digits),
                "width": fmt(b.width, 17),
                "lo_rad": fmt(up(64).mul(b.lo_enc.rad, _RAD_PAD), 3),
                "hi_rad": fmt(up(64).mul(b.hi_enc.rad, _RAD_PAD), 3),
            }


def hierarchy_to_json(h: BandHierarchy) -> dict:
    """Lossless JSON form: enclosure endpoints in hexadecimal float notation."""
    levels = []
    for lv in h.levels:
        levels.append([
            {
                "type": b.band_type,
                "m": b.ancestry,
                "lo": [_hex(b.lo_enc.lo), _hex(b.lo_enc.hi)],
                "hi": [_hex(b.hi_enc.lo), _hex(b.hi_enc.hi)],
                "parent": b.parent,
                "lo_target": b.lo_target,
                "precision": b.precision,
            }
            for b in lv
        ])
    return {
        "lambda": _hex(h.lam),
        "k_max": h.k_max,
        "precision": h.precision,
        "level_precision": list(h.level_precision),
        "levels": levels,
    }


def _hex(x: mpfr) -> str:
    """Exact text form of an mpfr: 'mantissa*2^exp' with integer parts."""
    man, exp = x.as_mantissa_exp()
    return f"{int(man)}p{int(exp)}"


def _unhex(s: str) -> mpfr:
    man, exp = s.split("p")
    man, exp = int(man), int(exp)
    prec = max(man.bit_length(), 53)
    return context(prec).mul_2exp(mpfr(man, prec), exp)


def hierarchy_from_json(data) -> BandHierarchy:
    if isinstance(data, str):
        data = json.loads(data)
    levels = []
    for k, lv in enumerate(data["levels"]):
        bands = []
        for r in lv:
            bands.append(Band(
                level=k,
                band_type=r["type"],
                ancestry=int(r["m"]),
                lo_enc=Enclosure(_unhex(r["lo"][0]), _unhex(r["lo"][1])),
                hi_enc=Enclosure(_unhex(r["hi"][0]), _unhex(r["hi"][1])),
                parent=r.get("parent"),
                lo_target=int(r.get("lo_target", 0)),
                precision=int(r.get("precision", START_PRECISION)),
            ))
        levels.append(bands)
    h = BandHierarchy(_unhex(data["lambda"]), int(data["k_max"]), levels,
                      list(data.get("level_precision", [])), int(data.get("precision", 64)))
    if any(b.parent is None for lv in levels[2:] for b in lv):
        _relink_parents(h)
    return h


def hierarchy_from_records(lam, rows) -> BandHierarchy:
    """Rebuild a hierarchy from CSV rows (midpoints and radii); parents by containment."""
    lam = to_mpfr(lam)
    by_level: dict = {}
    for r in rows:
        k = int(r["level"])
        p = max(53, digits_to_bits(r["lo"]), digits_to_bits(r["hi"]))
        lo = mpfr(r["lo"], p)
        hi = mpfr(r["hi"], p)
        # the printed midpoint is itself rounded: add half a unit in its last digit
        lr = up(64).add(mpfr(r.get("lo_rad") or 0, 64), _half_last_digit(r["lo"]))
        hr = up(64).add(mpfr(r.get("hi_rad") or 0, 64), _half_last_digit(r["hi"]))
        enc_lo = Enclosure(down(p + 8).sub(lo, lr), up(p + 8).add(lo, lr))
        enc_hi = Enclosure(down(p + 8).sub(hi, hr), up(p + 8).add(hi, hr))
        by_level.setdefault(k, []).append(Band(k, r["type"], int(r["m"]), enc_lo, enc_hi,
                                                precision=p))
    k_max = max(by_level)
    levels = [sorted(by_level.get(k, []), key=lambda b: b.lo) for k in range(k_max + 1)]
    prec = [max((b.precision for b in lv), default=START_PRECISION) for lv in levels]
    h = BandHierarchy(lam, k_max, levels, prec, START_PRECISION)
    _relink_parents(h)
    return h


def _half_last_digit(text: str) -> mpfr:
    """Half a unit in the last printed digit of a decimal string, rounded up."""
    exp = Decimal(text).as_tuple().exponent
    with gmpy2.context(up(64)):
        return mpfr(f"5e{exp - 1}")


def digits_to_bits(text: str) -> int:
    digits = sum(ch.isdigit() for ch in text.split("e")[0].split("E")[0])
    return int(math.ceil(digits * math.log2(10))) + 4


def _relink_parents(h: BandHierarchy):
    """Recover parent indices from containment of mid intervals."""
    for k in range(2, h.k_max + 1):
        fixed = []
        for b in h.levels[k]:
            pl = k - 1 if b.band_type == "A" else k - 2
            lv = h.levels[pl]
            starts = [x.lo for x in lv]
            i = bisect_right(starts, b.lo) - 1
            if i < 0 or lv[i].hi < b.hi:
                raise StructureViolation(f"no level-{pl} band contains a level-{k} band")
            fixed.append(Band(b.level, b.band_type, b.ancestry, b.lo_enc, b.hi_enc, i,
                              b.lo_target, b.precision))
        h.levels[k] = fixed
