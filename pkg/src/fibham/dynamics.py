"""Finite-lattice dynamics and transfer matrices for the Fibonacci Hamiltonian.

(H u)(n) = u(n+1) + u(n-1) + V(n) u(n) with
V(n) = lam * 1[1 - phi^-1 <= (n phi^-1 + theta) mod 1 < 1].

Time averages with the kernel (2/T) e^{-2t/T} are evaluated in closed form
from a full eigendecomposition of the truncated operator: the kernel
integrates against e^{-i w t} to 2 / (2 + i w T), whose real part is
4 / (4 + w^2 T^2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import gmpy2
import numpy as np
from gmpy2 import mpfr
from scipy.linalg import eigh_tridiagonal

from .errors import BoundaryAmbiguity, FitWindowError, NoiseFloorWarning, TruncationWarning
from .mp import MAX_PRECISION, START_PRECISION, context, down, precision_ladder, to_mpfr, up

PHI_INV = (math.sqrt(5.0) - 1.0) / 2.0
BOUNDARY_MASS_LIMIT = 1e-8
FIT_RESIDUAL_LIMIT = 0.1  # rms deviation of log M^(1/p) from the fitted line
NOISE_SHARE_LIMIT = 1e-3
# in-band norms climb in log-periodic steps of about log(lam), which leaves an
# rms residual near 1 in log units; exponential growth gives tens
POLY_RESIDUAL_LIMIT = 2.0
POLY_ALPHA_LIMIT = 10.0
NORM_CAP = 1e150
PRODUCT_PRECISION = 128


def _phi_inv_enclosure(p):
    five = mpfr(5)
    lo = down(p).div_2exp(down(p).sub(down(p).sqrt(five), 1), 1)
    hi = up(p).div_2exp(up(p).sub(up(p).sqrt(five), 1), 1)
    return lo, hi


def fib_potential(n: int, lam, theta=0.0, max_precision: int = MAX_PRECISION):
    """V(n), with the rotation argument placed relative to the breakpoints by interval arithmetic."""
    if lam <= 0:
        raise ValueError("coupling must be positive")
    th = to_mpfr(theta)
    if not 0 <= th < 1:
        raise ValueError("theta must lie in [0, 1)")
    n = int(n)
    if th == 0 and n == 0:
        return 0.0 * lam  # argument is exactly 0
    if th == 0 and n == -1:
        return lam  # argument is exactly 1 - phi^-1
    for p in precision_ladder(START_PRECISION + n.bit_length(), max_precision):
        a, b = _phi_inv_enclosure(p)
        if n >= 0:
            ylo = down(p).fma(mpfr(n), a, th)
            yhi = up(p).fma(mpfr(n), b, th)
        else:
            ylo = down(p).fma(mpfr(n), b, th)
            yhi = up(p).fma(mpfr(n), a, th)
        fl, fh = gmpy2.floor(ylo), gmpy2.floor(yhi)
        if fl != fh:
            continue  # straddles an integer
        flo, fhi = down(p).sub(ylo, fl), up(p).sub(yhi, fl)
        # breakpoint 1 - phi^-1 as an enclosure
        blo, bhi = down(p).sub(1, b), up(p).sub(1, a)
        if flo >= bhi:
            return lam
        if fhi < blo:
            return 0.0 * lam
    raise BoundaryAmbiguity(f"(n phi^-1 + theta) mod 1 for n={n} sits on a breakpoint")


def fib_potential_array(sites, lam, theta=0.0) -> np.ndarray:
    """V over an integer array; float64 with a certified fallback near breakpoints."""
    sites = np.asarray(sites, dtype=np.int64)
    y = np.mod(sites.astype(float) * PHI_INV + float(theta), 1.0)
    v = np.where(y >= 1.0 - PHI_INV, float(lam), 0.0)
    margin = 1e-13 * (np.abs(sites) + 1.0)
    near = (np.abs(y - (1.0 - PHI_INV)) < margin) | (y < margin) | (1.0 - y < margin)
    for i in np.flatnonzero(near):
        v[i] = float(fib_potential(int(sites[i]), float(lam), theta))
    return v


@dataclass
class LatticeOperator:
    """H truncated to [-n_max, n_max] (or to [1, n_max] with u(0) = 0 when half_line)."""

    lam: float
    theta: float = 0.0
    n_max: int = 1000
    half_line: bool = False
    potential: np.ndarray | None = None  # override V, e.g. for constructed test potentials
    _eig: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n_max < 2:
            raise ValueError("n_max must be >= 2")
        if not 0 <= self.theta < 1:
            raise ValueError("theta must lie in [0, 1)")
        if self.lam < 0:
            raise ValueError("coupling must be nonnegative")
        if self.potential is not None:
            self.potential = np.asarray(self.potential, dtype=float)
            if self.potential.shape != self.sites.shape:
                raise ValueError("potential must have one value per site")

    @property
    def sites(self) -> np.ndarray:
        if self.half_line:
            return np.arange(1, self.n_max + 1)
        return np.arange(-self.n_max, self.n_max + 1)

    @property
    def diagonal(self) -> np.ndarray:
        if self.potential is not None:
            return self.potential
        if self.lam == 0:
            return np.zeros(len(self.sites))
        return fib_potential_array(self.sites, self.lam, self.theta)

    @property
    def origin(self) -> int:
        """Row of site 1, where the initial state sits."""
        return 0 if self.half_line else self.n_max + 1

    def eigensystem(self):
        if self._eig is None:
            d = self.diagonal
            self._eig = eigh_tridiagonal(d, np.ones(len(d) - 1))
        return self._eig


def time_averaged_transition(H: LatticeOperator, T: float, block: int = 512) -> np.ndarray:
    """a(n) = (2/T) int_0^inf e^{-2t/T} |<e^{-itH} d_1, d_n>|^2 dt over the lattice sites."""
    if not T > 0:
        raise ValueError("T must be positive")
    E, U = H.eigensystem()
    c = U[H.origin, :]
    D = len(E)
    out = np.zeros(D)
    for j0 in range(0, D, block):
        j1 = min(D, j0 + block)
        w = (E[:, None] - E[None, j0:j1]) * T
        W = (c[:, None] * (4.0 / (4.0 + w * w))) * c[None, j0:j1]
        out += np.einsum("nj,nj->n", U @ W, U[:, j0:j1])
    edge = out[-1] + (0.0 if H.half_line else out[0])
    if edge > BOUNDARY_MASS_LIMIT:
        warnings.warn(f"boundary mass {edge:.2e} at T={T}: lattice too small",
                      TruncationWarning, stacklevel=2)
    return out


def outside_probabilities(H: LatticeOperator, N: float, T: float, a=None):
    """(P_l, P_r, P): time-averaged mass on n < -N and on n > N."""
    if not 0 <= N < H.n_max:
        raise ValueError("need 0 <= N < n_max")
    if a is None:
        a = time_averaged_transition(H, T)
    s = H.sites
    pr = float(np.clip(a[s > N], 0.0, None).sum())
    pl = float(np.clip(a[s < -N], 0.0, None).sum())
    p = min(1.0, pl + pr)
    return min(pl, 1.0), min(pr, 1.0), p


def _clip_noise(a: np.ndarray):
    """Zero entries below ten times the largest negative round-off value."""
    floor = 10.0 * max(0.0, -float(a.min()))
    return np.where(a > floor, a, 0.0), floor


@dataclass
class TransportResult:
    T_grid: list
    p_list: list
    P_out: dict  # (N, T) -> P
    moments: dict  # (p, T) -> <|X|^p>(T)
    beta_fit: dict  # p -> (slope, residual)
    alpha_u_estimate: float
    local_slopes: dict = field(default_factory=dict)  # p -> per-interval slopes
    mass_error: dict = field(default_factory=dict)  # T -> |sum a - 1|
    boundary_mass: dict = field(default_factory=dict)
    saturation: list = field(default_factory=list)  # successive beta differences

    def as_dict(self) -> dict:
        return {
            "T_grid": list(self.T_grid),
            "p_list": list(self.p_list),
            "beta": {str(p): {"slope": s, "residual": r} for p, (s, r) in self.beta_fit.items()},
            "alpha_u_estimate": self.alpha_u_estimate,
            "saturation": list(self.saturation),
            "local_slopes": {str(p): v for p, v in self.local_slopes.items()},
            "moments": [{"p": p, "T": T, "value": v} for (p, T), v in sorted(self.moments.items())],
            "P_out": [{"N": N, "T": T, "P": v} for (N, T), v in sorted(self.P_out.items())],
            "mass_error": {repr(T): v for T, v in self.mass_error.items()},
            "boundary_mass": {repr(T): v for T, v in self.boundary_mass.items()},
        }


DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def transport_exponents(H: LatticeOperator, p_list=(1, 2, 3, 4), T_grid=None,
                        alphas=DEFAULT_ALPHAS, residual_limit: float = FIT_RESIDUAL_LIMIT):
    """Moments and outside probabilities over T_grid, with log-log fits of <|X|^p>^(1/p)."""
    if T_grid is None:
        T_grid = list(np.geomspace(10.0, 1000.0, 6))
    T_grid = [float(t) for t in T_grid]
    if len(T_grid) < 6:
        raise ValueError("T_grid needs at least 6 points")
    p_list = sorted(float(p) if not float(p).is_integer() else int(p) for p in p_list)
    sites = H.sites.astype(float)  # float: |n|^p overflows int64 for large p
    absn = np.abs(sites)
    moments, P_out, mass_err, edge = {}, {}, {}, {}
    for T in T_grid:
        a = time_averaged_transition(H, T)
        mass_err[T] = abs(float(a.sum()) - 1.0)
        edge[T] = float(a[-1] + (0.0 if H.half_line else a[0]))
        ac, floor = _clip_noise(a)
        for p in p_list:
            w = absn ** p
            m = float(np.dot(w, ac))
            moments[(p, T)] = m
            if floor > 0 and floor * float(w[ac == 0].sum()) > NOISE_SHARE_LIMIT * m:
                warnings.warn(f"moment p={p} at T={T} is near the round-off floor",
                              NoiseFloorWarning, stacklevel=2)
        for al in alphas:
            N = max(T ** al - 2.0, 0.0)  # N = T^alpha - 2, clamped at 0
            if N < H.n_max:
                P_out[(round(N, 12), T)] = outside_probabilities(H, N, T, a)[2]
    lT = np.log(T_grid)
    beta, local = {}, {}
    for p in p_list:
        y = np.log([moments[(p, T)] for T in T_grid]) / p
        slope, icpt = np.polyfit(lT, y, 1)
        resid = float(np.sqrt(np.mean((y - (slope * lT + icpt)) ** 2)))
        local[p] = [float(s) for s in np.diff(y) / np.diff(lT)]
        beta[p] = (float(slope), resid)
        if resid > residual_limit:
            raise FitWindowError(
                f"log-log fit for p={p} has residual {resid:.3g} > {residual_limit}",
                {"p": p, "local_slopes": local[p], "T_grid": T_grid})
    betas = [beta[p][0] for p in p_list]
    sat = [b - a for a, b in zip(betas, betas[1:])]
    return TransportResult(T_grid, list(p_list), P_out, moments, beta, betas[-1], local,
                           mass_err, edge, sat)


# -- transfer matrices ----------------------------------------------------


@dataclass(frozen=True)
class TransferProduct:
    """T(n, m; E) = M_n ... M_{m+1} stored as exp(log_scale) * matrix."""

    n: int
    m: int
    E: float
    matrix: np.ndarray
    log_scale: float = 0.0

    @property
    def value(self) -> np.ndarray:
        """The product itself (overflows for long products at gap energies)."""
        return self.matrix * math.exp(self.log_scale)

    @property
    def det_residual(self) -> float:
        """|det - 1| relative to |ad| + |bc|."""
        (a, b), (c, d) = self.matrix
        scale = abs(a * d) + abs(b * c)
        return abs(a * d - b * c - math.exp(-2.0 * self.log_scale)) / scale

    @property
    def log_norm(self) -> float:
        return math.log(spectral_norm(self.matrix)) + self.log_scale


def spectral_norm(m) -> float:
    """Largest singular value of a 2x2 matrix from its closed form."""
    (a, b), (c, d) = m
    return 0.5 * (math.hypot(a + d, b - c) + math.hypot(a - d, b + c))


def _potential_values(lam, theta, lo: int, hi: int, potential=None):
    if potential is not None:
        return np.asarray([potential(j) for j in range(lo, hi + 1)], dtype=float)
    if lam == 0:
        return np.zeros(hi - lo + 1)
    return fib_potential_array(np.arange(lo, hi + 1), lam, theta)


def transfer_product(lam, theta, n: int, m: int, E: float, potential=None) -> TransferProduct:
    """Ordered product of [[E - V(j), -1], [1, 0]] for j = m+1 .. n."""
    if n < m:
        raise ValueError("need n >= m")
    E = float(E)
    if n == m:
        return TransferProduct(n, m, E, np.eye(2), 0.0)
    v = _potential_values(lam, theta, m + 1, n, potential)
    # 128-bit accumulation keeps det and cocycle residuals at float round-off
    ctx = context(PRODUCT_PRECISION)
    Em = mpfr(E)
    a, b, c, d = mpfr(1), mpfr(0), mpfr(0), mpfr(1)
    for vj in v:
        e = ctx.sub(Em, mpfr(float(vj)))
        a, b, c, d = ctx.fms(e, a, c), ctx.fms(e, b, d), a, b
    big = max(abs(a), abs(b), abs(c), abs(d))
    shift = gmpy2.get_exp(big) if big > 0 else 0
    entries = [float(ctx.mul_2exp(x, -shift)) for x in (a, b, c, d)]
    return TransferProduct(n, m, E, np.array(entries).reshape(2, 2), shift * math.log(2.0))


@dataclass
class PolyBoundFit:
    C: float
    alpha: float
    residual: float
    scales: list  # N' = 2^j
    norms: list  # log max_{1 <= m <= n <= N'} ||T(n, m; E)||
    exponential: bool
    overflow: bool = False


def _pair_max_log_norms(v: np.ndarray, E: float, cap_log: float):
    """Running max over 1 <= m <= n of log ||T(n, m)|| for n = 1..len(v).

    Column i of the state holds T(n, i), the product of M_{i+1} .. M_n.
    """
    N = len(v)
    A = np.ones(N)
    B = np.zeros(N)
    C = np.zeros(N)
    Dd = np.ones(N)
    best = np.zeros(N)
    running = 0.0
    for n in range(1, N + 1):
        e = E - v[n - 1]
        k = n  # products T(n, m) exist for m <= n - 1; T(n, n) is the identity
        a, b, c, d = A[:k], B[:k], C[:k], Dd[:k]
        na, nb = e * a - c, e * b - d
        C[:k], Dd[:k] = a, b
        A[:k], B[:k] = na, nb
        if k < 2:
            best[n - 1] = running
            continue
        # starting sites m >= 1 only
        a, b, c, d = A[1:k], B[1:k], C[1:k], Dd[1:k]
        top = float((0.5 * (np.hypot(a + d, b - c) + np.hypot(a - d, b + c))).max())
        if not math.isfinite(top) or top > math.exp(cap_log):
            best[n - 1:] = math.inf
            return best, n
        running = max(running, math.log(top))
        best[n - 1] = running
    return best, None


def polynomial_bound_fit(lam, theta, E: float, N: int, potential=None,
                         residual_limit: float = POLY_RESIDUAL_LIMIT,
                         alpha_limit: float = POLY_ALPHA_LIMIT) -> PolyBoundFit:
    """Fit log max ||T(n, m; E)|| ~ log C + alpha log N' over N' = 2^j <= N."""
    if N < 8:
        raise ValueError("N must be >= 8")
    v = _potential_values(lam, theta, 1, N, potential)
    best, stopped = _pair_max_log_norms(v, float(E), math.log(NORM_CAP))
    scales, norms = [], []
    j = 1
    while 2 ** j <= N:
        s = 2 ** j
        if math.isfinite(best[s - 1]):
            scales.append(s)
            norms.append(float(best[s - 1]))
        j += 1
    overflow = stopped is not None
    if len(scales) < 3:
        return PolyBoundFit(math.nan, math.inf, math.inf, scales, norms, True, overflow)
    x = np.log(scales)
    y = np.array(norms)
    alpha, logc = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (alpha * x + logc)) ** 2)))
    exponential = overflow or resid > residual_limit or alpha > alpha_limit
    return PolyBoundFit(float(math.exp(logc)), float(alpha), resid, scales, norms,
                        bool(exponential), overflow)
