"""One test per acceptance criterion; each records a PASS/FAIL line.

The lines are printed as they are produced (visible with -s) and again in
the terminal summary at the end of the run.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, ENUM_SECONDS
from fibham.band_enum import (
    scaling_ratio_check,
    triple_intersection_empty,
    width_sandwich_violations,
)
from fibham.combinatorics import (
    F_STAR,
    akm_closed_form,
    count_table,
    envelope_check,
    fibonacci,
    support,
)
from fibham.dimension import (
    analytic_bounds,
    box_dimension_fit,
    cover_sum_transition,
    dimension_report,
    hausdorff_cover_sum,
)
from fibham.dynamics import polynomial_bound_fit, transfer_product


def record(n, title, checks):
    """checks: list of (ok, description). Records one line, then asserts."""
    failed = [d for ok, d in checks if not ok]
    status = "PASS" if not failed else "FAIL"
    detail = "; ".join(d for _, d in checks) if not failed else "failed: " + "; ".join(failed)
    line = f"criterion {n:2d} {status}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert not failed, line


def test_criterion_01_exact_combinatorics():
    t0 = time.perf_counter()
    table = count_table(200)
    mismatches, bad_sums, bad_support = 0, 0, 0
    for k in range(2, 201):
        for m in range(k + 1):
            if akm_closed_form(k, m) != table.a(k, m):
                mismatches += 1
        if sum(table.histogram(k).values()) != fibonacci(k):
            bad_sums += 1
        if [m for m in range(k + 1) if table.a(k, m)] != list(support(k)):
            bad_support += 1
    dt = time.perf_counter() - t0
    record(1, "exact combinatorics", [
        (mismatches == 0, f"{mismatches} closed-form mismatches for 2 <= k <= 200"),
        (bad_sums == 0, f"{bad_sums} row sums differ from F_k"),
        (bad_support == 0, f"{bad_support} rows with wrong support"),
        (dt < 1.0, f"{dt:.2f} s (< 1 s)"),
    ])


def test_criterion_02_entropy_limit():
    t0 = time.perf_counter()
    table = count_table(600)
    rep600 = envelope_check(600, table)
    outside = [k for k in range(4, 601) if not envelope_check(k, table).within]
    lows = [envelope_check(k, table).lower_constant for k in (4, 50, 200, 600)]
    dt = time.perf_counter() - t0
    record(2, "entropy limit", [
        (abs(rep600.max_log_rate - F_STAR) <= 0.02,
         f"max_m log(a_600,m)/m = {rep600.max_log_rate:.5f} vs f* = {F_STAR:.10f}"),
        (not outside, f"envelope [0.1 k^-1/2, 10 k^1/2] holds for 4 <= k <= 600"
                      f" ({len(outside)} rows outside); sample c0 = {min(lows):.3f}"),
        (dt < 30.0, f"{dt:.1f} s (< 30 s)"),
    ])


def test_criterion_03_band_structure(h8):
    t0 = time.perf_counter()
    table = count_table(16)
    checks = []
    count_ok = all(h8.counts(k) == (fibonacci(k), fibonacci(k - 2), fibonacci(k - 1))
                   for k in range(2, 17))
    hist_ok = all(h8.ancestry_histogram(k) == table.histogram(k) for k in range(0, 17))
    widths = width_sandwich_violations(h8, range(0, 17))
    triple = all(triple_intersection_empty(h8, k) for k in range(0, 15))
    checks += [
        (count_ok, "F_k bands per level with F_(k-2) type A and F_(k-1) type B, k <= 16"),
        (hist_ok, "ancestry histograms equal a_km + b_km"),
        (not widths, f"{len(widths)} widths outside [4*38^-m, 4*3^-m]"),
        (triple, "sigma_k, sigma_k+1, sigma_k+2 have empty certified intersection, k <= 14"),
    ]
    dt = time.perf_counter() - t0 + ENUM_SECONDS.get(8, 0.0)
    checks.append((dt < 600, f"{dt:.1f} s incl. enumeration to level 21"))
    record(3, "band structure, lam=8", checks)


@pytest.mark.parametrize("lam", [8, 16])
def test_criterion_04_scaling_ratios(lam, request):
    h = request.getfixturevalue(f"h{lam}")
    t0 = time.perf_counter()
    rep = scaling_ratio_check(h, samples_per_band=100, max_level=12)
    dt = time.perf_counter() - t0
    record(4, f"derivative scaling ratios, lam={lam}", [
        (rep.ok, f"ratios in [{rep.min_ratio:.4g}, {rep.max_ratio:.4g}] "
                 f"within [S_l, S_u] = [{rep.s_lower:.4g}, {rep.s_upper:.4g}]"),
        (rep.samples >= 100 * rep.pairs, f"{rep.samples} samples over {rep.pairs} child bands"),
        (dt < 600, f"{dt:.1f} s"),
    ])


@pytest.mark.parametrize("lam", [8, 16, 32])
def test_criterion_05_dimension_bracketing(lam, request):
    h = request.getfixturevalue(f"h{lam}")
    t0 = time.perf_counter()
    rep = dimension_report(h, 20)
    dt = time.perf_counter() - t0 + ENUM_SECONDS.get(lam, 0.0)
    lo, up = rep.lower_bound - 0.03, rep.upper_bound + 0.03
    checks = [
        (lo <= rep.empirical_dim <= up,
         f"slope {rep.empirical_dim:.4f} in [{lo:.4f}, {up:.4f}] "
         f"(fit rms {rep.fit.residual:.3f}, eps {rep.fit.eps_range[0]:.2e}..{rep.fit.eps_range[1]:.2e})"),
        (dt < 600, f"{dt:.1f} s incl. enumeration"),
    ]
    if lam == 16:
        # the quoted bracket [0.2209, 0.3578] is the bounds truncated to four places
        checks.append((abs(rep.lower_bound - 0.2209) < 1e-4 and abs(rep.upper_bound - 0.3578) < 1e-4,
                       f"bounds [{rep.lower_bound:.5f}, {rep.upper_bound:.5f}] match [0.2209, 0.3578]"))
    record(5, f"dimension bracketing, lam={lam}", checks)


def test_criterion_06_asymptotic_constant():
    t0 = time.perf_counter()
    lam = 1e6
    b = analytic_bounds(lam)
    up, lo = b.upper * math.log(lam), b.lower * math.log(lam)
    dt = time.perf_counter() - t0
    record(6, "asymptotic constant", [
        (abs(up - F_STAR) / F_STAR <= 0.05, f"upper*log(lam) = {up:.5f} at lam=1e6"),
        (abs(lo - F_STAR) / F_STAR <= 0.05, f"lower*log(lam) = {lo:.5f}"),
        (dt < 10, f"{dt:.3f} s"),
    ])


def test_criterion_07_critical_exponent_transition():
    t0 = time.perf_counter()
    table = count_table(41)
    ks = list(range(20, 41, 4))
    decay = [hausdorff_cover_sum(8, k, 0.85, table) for k in ks]
    grow = [hausdorff_cover_sum(8, k, 0.5, table) for k in ks]
    s_star = cover_sum_transition(8, 20, 40, table=table)
    dt = time.perf_counter() - t0
    record(7, "critical-exponent transition, lam=8", [
        (all(b < a for a, b in zip(decay, decay[1:])),
         f"s=0.85 sum decays {decay[0]:.3g} -> {decay[-1]:.3g} over k=20..40"),
        (all(b > a for a, b in zip(grow, grow[1:])),
         f"s=0.5 sum grows {grow[0]:.3g} -> {grow[-1]:.3g}"),
        (0.2423 <= s_star <= 0.8023, f"transition s = {s_star:.6f} in [0.2423, 0.8023]"),
        (dt < 60, f"{dt:.2f} s"),
    ])


def test_criterion_08_cantor_oracle():
    from fractions import Fraction

    ivs = [(Fraction(0), Fraction(1))]
    for _ in range(10):
        ivs = [iv for a, b in ivs for iv in ((a, a + (b - a) / 3), (b - (b - a) / 3, b))]
    fit = box_dimension_fit(ivs)
    target = math.log(2) / math.log(3)
    record(8, "Cantor oracle", [
        (abs(fit.slope - target) <= 0.02, f"slope {fit.slope:.5f} vs log2/log3 = {target:.5f}"),
    ])


def test_criterion_09_dynamics(transport_free, transport_fib8):
    _, free, free_w = transport_free
    _, fib, fib_w = transport_fib8
    mass = max(max(free.mass_error.values()), max(fib.mass_error.values()))
    betas = {p: s for p, (s, _) in free.beta_fit.items()}
    record(9, "dynamics sanity", [
        (mass <= 1e-10 and not free_w and not fib_w,
         f"max |sum a - 1| = {mass:.1e}, warnings: {sorted(set(free_w + fib_w)) or 'none'}"),
        (all(abs(b - 1) <= 0.05 for b in betas.values()),
         "lam=0 beta(p) = " + ", ".join(f"{b:.3f}" for b in betas.values())),
        (fib.alpha_u_estimate >= 0.2423 - 0.08,
         f"lam=8 alpha_u estimate {fib.alpha_u_estimate:.3f} >= {0.2423 - 0.08:.4f}"),
    ])


def test_criterion_10_transfer_matrices(h8):
    t0 = time.perf_counter()
    n, l = 10000, 6180
    worst_det, worst_cocycle = 0.0, 0.0
    for E in (0.25, 4.0, 8.3, 9.0):
        full = transfer_product(8, 0.0, n, 0, E)
        left, right = transfer_product(8, 0.0, n, l, E), transfer_product(8, 0.0, l, 0, E)
        prod = left.matrix @ right.matrix
        scale = full.log_scale - left.log_scale - right.log_scale
        rel = float(np.abs(prod - full.matrix * math.exp(scale)).max() / np.abs(prod).max())
        worst_det = max(worst_det, full.det_residual)
        worst_cocycle = max(worst_cocycle, rel)
    band = h8.levels[18][len(h8.levels[18]) // 2]
    E_in = float((band.lo + band.hi) / 2)
    inside = polynomial_bound_fit(8, 0.0, E_in, 10000)
    gap = polynomial_bound_fit(8, 0.0, 4.0, 200)
    dt = time.perf_counter() - t0
    record(10, "transfer matrices", [
        (worst_det <= 1e-8, f"|det - 1| rel {worst_det:.1e} at length 1e4"),
        (worst_cocycle <= 1e-8, f"cocycle rel {worst_cocycle:.1e}"),
        (not inside.exponential, f"in-band E={E_in:.6f}: alpha {inside.alpha:.2f}, "
                                 f"rms {inside.residual:.2f} below limit"),
        (gap.exponential, f"gap E=4: flagged (alpha {gap.alpha:.1f}, rms {gap.residual:.1f})"),
        (dt < 60, f"{dt:.1f} s"),
    ])
