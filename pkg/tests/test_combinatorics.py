import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fibham.combinatorics import (
    F_SHARP,
    F_STAR,
    PHI,
    X_STAR,
    akm_closed_form,
    bkm_closed_form,
    chebyshev_coeff,
    count_table,
    envelope_check,
    f_entropy,
    fibonacci,
    support,
)

TABLE = count_table(201)


def test_small_rows_by_hand():
    # sigma_2: the A child of sigma_1 and the B child of sigma_0, both m=1
    assert TABLE.histogram(0) == {0: 1}
    assert TABLE.histogram(1) == {0: 1}
    assert TABLE.histogram(2) == {1: 2}
    assert TABLE.a(2, 1) == 1 and TABLE.b(2, 1) == 1
    # sigma_3: two B children of sigma_1 (m=1) and the A child of sigma_2's B band (m=2)
    assert TABLE.histogram(3) == {1: 2, 2: 1}
    assert TABLE.a(3, 2) == 1 and TABLE.b(3, 1) == 2


def test_fibonacci_convention():
    assert [fibonacci(k) for k in range(8)] == [1, 1, 2, 3, 5, 8, 13, 21]
    with pytest.raises(ValueError):
        fibonacci(-1)


def test_chebyshev_coefficients():
    # T_4 = 8x^4 - 8x^2 + 1, T_5 = 16x^5 - 20x^3 + 5x
    assert [chebyshev_coeff(r, 4) for r in range(3)] == [8, 8, 1]
    assert [chebyshev_coeff(r, 5) for r in range(3)] == [16, 20, 5]
    assert chebyshev_coeff(0, 0) == 1
    with pytest.raises(ValueError):
        chebyshev_coeff(3, 5)
    with pytest.raises(ValueError):
        chebyshev_coeff(0, 3, method="bogus")


@pytest.mark.parametrize("m", range(1, 60))
def test_chebyshev_formula_matches_recursion(m):
    for r in range(m // 2 + 1):
        assert chebyshev_coeff(r, m) == chebyshev_coeff(r, m, method="recursion")


def test_closed_form_equals_table():
    for k in range(2, 201):
        for m in range(k + 1):
            assert akm_closed_form(k, m) == TABLE.a(k, m)
            assert bkm_closed_form(k, m) == TABLE.b(k, m)


def test_row_sums_and_support():
    for k in range(2, 201):
        h = TABLE.histogram(k)
        assert sum(h.values()) == fibonacci(k)
        assert TABLE.a_total(k) == fibonacci(k - 2)
        assert TABLE.b_total(k) == fibonacci(k - 1)
        nz = [m for m in range(k + 1) if TABLE.a(k, m)]
        assert nz == list(support(k))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 199), st.integers(0, 200))
def test_shift_identity(k, m):
    assert TABLE.b(k, m) == TABLE.a(k + 1, m + 1)


def test_constants():
    assert X_STAR == pytest.approx((12 - 2 * math.sqrt(2)) / 17, abs=1e-15)
    assert F_STAR == pytest.approx(0.8813735870195, abs=1e-12)
    assert F_STAR == pytest.approx(math.log(1 + math.sqrt(2)), abs=1e-15)
    assert X_STAR == pytest.approx(0.5395042867796, abs=1e-12)
    assert F_SHARP == pytest.approx(1.8315709239073, abs=1e-12)
    assert F_STAR == pytest.approx(f_entropy(X_STAR), abs=1e-14)
    assert PHI == pytest.approx((1 + math.sqrt(5)) / 2)


def test_x_star_is_argmax():
    assert f_entropy(X_STAR + 1e-4) < f_entropy(X_STAR)
    assert f_entropy(X_STAR - 1e-4) < f_entropy(X_STAR)
    # numerical maximization as a cross-check only
    grid = [0.5 + i * (1 / 6) / 20000 for i in range(20001)]
    best = max(grid, key=f_entropy)
    assert abs(best - X_STAR) < 1e-4


def test_entropy_endpoints_and_domain():
    assert f_entropy(Fraction(1, 2)) == pytest.approx(math.log(2))
    assert f_entropy(Fraction(2, 3)) == 0.0
    assert f_entropy(2 / 3) == 0.0
    with pytest.raises(ValueError):
        f_entropy(0.4)
    with pytest.raises(ValueError):
        f_entropy(Fraction(3, 4))


def test_max_rate_at_600():
    rep = envelope_check(600)
    assert abs(rep.max_log_rate - F_STAR) < 0.02
    assert abs(rep.argmax_m / 600 - X_STAR) < 0.01


def test_envelope_small_row():
    rep = envelope_check(6)
    assert rep.ratios == pytest.approx({3: 0.5, 4: 1.0})
    d = rep.as_dict()
    assert d["within"] and set(d["ratios"]) == {"3", "4"}
    with pytest.raises(ValueError):
        envelope_check(3)


def test_table_rejects_bad_size():
    with pytest.raises(ValueError):
        count_table(0)
    with pytest.raises(ValueError):
        akm_closed_form(1, 0)
