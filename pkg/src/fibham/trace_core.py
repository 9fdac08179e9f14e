"""Trace recursion, trace map and the orbit-boundedness membership test.

The traces satisfy

    x_{-1} = 2,  x_0 = E,  x_1 = E - lam,  x_{k+1} = x_k x_{k-1} - x_{k-2},

and the triple (x_{k+1}, x_k, x_{k-1}) stays on the cubic surface where
x^2 + y^2 + z^2 - xyz - 4 = lam^2.  Point evaluation uses a single rounding
per step (fused multiply-subtract); sign decisions are made on
directed-rounding enclosures.
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

from .errors import OrbitEscaped, PrecisionExhausted
from .mp import (
    MAX_PRECISION,
    START_PRECISION,
    context,
    iv_fms,
    iv_point,
    iv_sub,
    precision_ladder,
    to_mpfr,
    to_mpq,
)

DEFAULT_K_CAP = 60
ORBIT_CAP = mpfr("1e300")
INVARIANT_SLACK_BITS = 20


@dataclass(frozen=True)
class TraceState:
    """Three consecutive traces ending at level ``k``."""

    x_prev2: mpfr
    x_prev1: mpfr
    x_cur: mpfr
    k: int

    @classmethod
    def initial(cls, E, lam, precision=START_PRECISION):
        ctx = context(precision)
        E, lam = to_mpfr(E), to_mpfr(lam)
        return cls(mpfr(2), ctx.plus(E), ctx.sub(E, lam), 1)

    def step(self, precision=START_PRECISION) -> "TraceState":
        nxt = context(precision).fms(self.x_cur, self.x_prev1, self.x_prev2)
        return TraceState(self.x_prev1, self.x_cur, nxt, self.k + 1)


@dataclass(frozen=True)
class SurfacePoint:
    x: mpfr
    y: mpfr
    z: mpfr

    @classmethod
    def on_fibonacci_line(cls, E, lam, precision=START_PRECISION):
        """The point (E - lam, E, 2) whose orbit first coordinates are x_1, x_2, ..."""
        E, lam = to_mpfr(E), to_mpfr(lam)
        return cls(context(precision).sub(E, lam), context(precision).plus(E), mpfr(2))

    def __iter__(self):
        return iter((self.x, self.y, self.z))


@dataclass(frozen=True)
class MembershipVerdict:
    status: str  # "bounded" or "escaped"
    escape_level: int | None
    k_cap: int
    precision: int
    heuristic: bool = False

    @property
    def bounded(self) -> bool:
        return self.status == "bounded"


def fricke_invariant(p: SurfacePoint, precision: int | None = None) -> mpfr:
    """x^2 + y^2 + z^2 - xyz - 4, evaluated exactly and rounded once."""
    x, y, z = (to_mpq(c) for c in p)
    val = x * x + y * y + z * z - x * y * z - 4
    if precision is None:
        precision = max([START_PRECISION] + [c.precision for c in p if isinstance(c, mpfr)])
    with gmpy2.context(context(precision)):
        return mpfr(val)


def _relative_residual(x2, x1, x0, target, precision):
    """|I - target| relative to the largest term of the invariant."""
    ctx = context(2 * precision + 64)
    # divide the invariant by 4^e so the cubic term stays inside the exponent range
    e = max([gmpy2.get_exp(v) for v in (x2, x1, x0) if v != 0] or [0])
    x2, x1, x0 = (ctx.mul_2exp(v, -e) for v in (x2, x1, x0))
    target = ctx.mul_2exp(target, -2 * e)
    xyz = ctx.mul_2exp(ctx.mul(ctx.mul(x2, x1), x0), e)
    s = ctx.add(ctx.add(ctx.square(x2), ctx.square(x1)), ctx.square(x0))
    resid = abs(ctx.sub(ctx.sub(s, xyz), target))
    scale = max(abs(target), ctx.square(x2), ctx.square(x1), ctx.square(x0), abs(xyz))
    return resid / scale


def invariant_budget(precision: int) -> mpfr:
    return mpfr(2) ** (-(precision - INVARIANT_SLACK_BITS))


def trace_sequence(E, lam, k_max: int, precision: int = START_PRECISION):
    """Pairs (x_k, x'_k) for k = -1..k_max, derivatives taken in E.

    Raises PrecisionExhausted when the invariant residual leaves the
    2^-(precision-20) relative budget; the caller should retry with more bits.
    Far outside the spectrum x_k overflows the exponent range near k = 40;
    that raises OrbitEscaped carrying the finite prefix.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if precision < 53:
        raise ValueError("precision must be at least 53 bits")
    ctx = context(precision)
    E, lam = to_mpfr(E), to_mpfr(lam)
    xs = [mpfr(2), ctx.plus(E), ctx.sub(E, lam)]
    ds = [mpfr(0), mpfr(1), mpfr(1)]
    for _ in range(k_max - 1):
        xs.append(ctx.fms(xs[-1], xs[-2], xs[-3]))
        ds.append(ctx.sub(ctx.fmma(ds[-1], xs[-3], xs[-2], ds[-2]), ds[-3]))
        if not (gmpy2.is_finite(xs[-1]) and gmpy2.is_finite(ds[-1])):
            k = len(xs) - 2
            raise OrbitEscaped(f"x_{k} left the floating-point exponent range", k,
                               list(zip(xs[:-1], ds[:-1])))

    target = to_mpfr(to_mpq(lam) ** 2 + 4, 2 * precision + 64)
    budget = invariant_budget(precision)
    for i in range(2, len(xs)):
        r = _relative_residual(xs[i], xs[i - 1], xs[i - 2], target, precision)
        if r > budget:
            raise PrecisionExhausted(
                f"invariant residual {float(r):.3g} exceeds budget at k={i - 2}", precision
            )
    return list(zip(xs, ds))


def trace_values(E, lam, k: int, ctx) -> list:
    """x_{-1}..x_k at the rounding of ``ctx``; no checks, for inner loops."""
    x2, x1, x0 = mpfr(2), ctx.plus(E), ctx.sub(E, lam)
    out = [x2, x1, x0]
    fms = ctx.fms
    for _ in range(k - 1):
        x2, x1, x0 = x1, x0, fms(x0, x1, x2)
        out.append(x0)
    return out if k >= 1 else out[: k + 2]


def trace_at(E, lam, k: int, ctx):
    """(x_k, x'_k) without building the full list."""
    if k == -1:
        return mpfr(2), mpfr(0)
    if k == 0:
        return ctx.plus(E), mpfr(1)
    x2, x1, x0 = mpfr(2), ctx.plus(E), ctx.sub(E, lam)
    d2, d1, d0 = mpfr(0), mpfr(1), mpfr(1)
    fms, fmma, sub = ctx.fms, ctx.fmma, ctx.sub
    for _ in range(k - 1):
        x2, x1, x0, d2, d1, d0 = x1, x0, fms(x0, x1, x2), d1, d0, sub(fmma(d0, x1, x0, d1), d2)
    return x0, d0


def trace_only(E, lam, k: int, ctx):
    if k == -1:
        return mpfr(2)
    if k == 0:
        return ctx.plus(E)
    x2, x1, x0 = mpfr(2), ctx.plus(E), ctx.sub(E, lam)
    fms = ctx.fms
    for _ in range(k - 1):
        x2, x1, x0 = x1, x0, fms(x0, x1, x2)
    return x0


def trace_enclosures(E, lam, k: int, precision: int):
    """Directed-rounding enclosures of x_{-1}..x_k at the exact point E."""
    E, lam = to_mpfr(E), to_mpfr(lam)
    two = iv_point(mpfr(2))
    e = iv_point(E)
    out = [two, e, iv_sub(precision, e, iv_point(lam))]
    for _ in range(k - 1):
        out.append(iv_fms(precision, out[-1], out[-2], out[-3]))
    return out[: k + 2]


def trace_enclosure(E, lam, k: int, precision: int):
    """Enclosure of the single value x_k(E)."""
    E, lam = to_mpfr(E), to_mpfr(lam)
    if k == -1:
        return iv_point(mpfr(2))
    if k == 0:
        return iv_point(E)
    a, b, c = iv_point(mpfr(2)), iv_point(E), iv_sub(precision, iv_point(E), iv_point(lam))
    for _ in range(k - 1):
        a, b, c = b, c, iv_fms(precision, c, b, a)
    return c


def trace_map_orbit(p: SurfacePoint, n: int, precision: int = START_PRECISION, cap=ORBIT_CAP):
    """Orbit p, T(p), ..., T^n(p) of T(x, y, z) = (xy - z, x, y).

    Raises OrbitEscaped once a coordinate exceeds ``cap`` in magnitude and
    PrecisionExhausted if the invariant drifts outside its rounding budget.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    ctx = context(precision)
    cap = to_mpfr(cap)
    x, y, z = (to_mpq(c) for c in p)
    target = to_mpfr(x * x + y * y + z * z - x * y * z, 2 * precision + 64)
    budget = invariant_budget(precision)
    x, y, z = p
    orbit = [SurfacePoint(x, y, z)]
    for step in range(1, n + 1):
        x, y, z = ctx.fms(x, y, z), x, y
        if abs(x) > cap:
            raise OrbitEscaped(f"orbit left |coordinate| <= {cap} at step {step}", step, orbit)
        r = _relative_residual(x, y, z, target, precision)
        if r > budget:
            raise PrecisionExhausted(f"invariant drift {float(r):.3g} at step {step}", precision)
        orbit.append(SurfacePoint(x, y, z))
    return orbit


class _Undecided(Exception):
    pass


def _abs_gt_two(iv):
    """True if |x| > 2 is certified, False if |x| <= 2 is certified, else None."""
    lo, hi = iv
    if lo > 2 or hi < -2:
        return True
    if lo >= -2 and hi <= 2:
        return False
    return None


def _membership_at(E, lam, k_cap, precision):
    a = iv_point(mpfr(2))
    b = iv_point(E)
    c = iv_sub(precision, b, iv_point(lam))
    # pairs (j, j+1) for j = 0..k_cap; b holds x_j and c holds x_{j+1}
    prev = _abs_gt_two(b)
    for j in range(0, k_cap + 1):
        cur = _abs_gt_two(c)
        if prev is True and cur is True:
            return j
        if (prev is None and cur is not False) or (cur is None and prev is not False):
            raise _Undecided
        if j < k_cap:
            a, b, c = b, c, iv_fms(precision, c, b, a)
            prev = cur
    return None


def spectrum_membership(E, lam, k_cap: int = DEFAULT_K_CAP, max_precision: int = MAX_PRECISION):
    """Finite-depth version of "the trace orbit of E is bounded".

    Escape at level k means |x_k| > 2 and |x_{k+1}| > 2, both certified.
    The test is exact in this form only for lam > 4; for smaller coupling
    the verdict carries ``heuristic=True``.
    """
    E, lam = to_mpfr(E), to_mpfr(lam)
    if lam <= 0:
        raise ValueError("coupling must be positive")
    if k_cap < 2:
        raise ValueError("k_cap must be >= 2")
    heuristic = bool(lam <= 4)
    for p in precision_ladder(START_PRECISION, max_precision):
        try:
            level = _membership_at(E, lam, k_cap, p)
        except _Undecided:
            continue
        if level is None:
            return MembershipVerdict("bounded", None, k_cap, p, heuristic)
        return MembershipVerdict("escaped", level, k_cap, p, heuristic)
    raise PrecisionExhausted(
        f"|x_k| - 2 could not be sign-certified for E={E} at {max_precision} bits", max_precision
    )
