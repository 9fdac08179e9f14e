import json

import pytest
from gmpy2 import mpfr
from hypothesis import given, settings
from hypothesis import strategies as st

from fibham.band_enum import (
    ancestry_from_definition,
    band_records,
    certify_edge,
    cover_union,
    enumerate_bands,
    hierarchy_from_json,
    hierarchy_from_records,
    hierarchy_to_json,
    intersect_unions,
    merge_intervals,
    nesting_violations,
    scaling_ratio_check,
    triple_intersection_empty,
    union_contains,
    width_sandwich_violations,
)
from fibham.combinatorics import count_table, fibonacci
from fibham.errors import NoSignChange
from fibham.mp import context
from fibham.trace_core import spectrum_membership, trace_sequence

SQRT20 = mpfr(20) ** 0.5


def test_root_levels(h8_small):
    (s0,), (s1,) = h8_small.levels[:2]
    assert (s0.band_type, s0.lo, s0.hi, s0.ancestry) == ("A", -2, 2, 0)
    assert (s1.band_type, s1.lo, s1.hi, s1.ancestry) == ("B", 6, 10, 0)


def test_level_two_edges(h8_small):
    # x_2 = E^2 - 8E - 2: +-2 at 0, 8 and 4 +- sqrt(20)
    got = [float(x) for b in h8_small.levels[2] for x in (b.lo, b.hi)]
    want = [float(4 - SQRT20), 0.0, 8.0, float(4 + SQRT20)]
    assert got == pytest.approx(want, abs=1e-15)
    assert [b.band_type for b in h8_small.levels[2]] == ["B", "A"]


def test_certify_edge_examples():
    e = certify_edge(8, 1, -2, (5, 7))
    assert e.contains(6)
    e = certify_edge(8, 2, 2, (8.2, 9), precision=100)
    assert abs(e.mid - context(256).add(4, context(256).sqrt(20))) < mpfr(2) ** -95
    assert e.width <= mpfr(2) ** -100
    e = certify_edge(8, 2, 2, (-1, -0.3))
    assert abs(float(e.mid) - (4 - 20 ** 0.5)) < 1e-15


def test_certify_edge_needs_sign_change():
    # x_2 = -2 has no root in [-1, -0.3]; x_2 = +2 does
    with pytest.raises(NoSignChange):
        certify_edge(8, 2, -2, (-1, -0.3))
    with pytest.raises(ValueError):
        certify_edge(8, 2, 2, (1, 0))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.data())
def test_certified_edges_solve_the_trace_equation(h8_small, level, data):
    b = data.draw(st.sampled_from(h8_small.levels[level]))
    for enc, target in ((b.lo_enc, b.lo_target), (b.hi_enc, b.hi_target)):
        lo_v = trace_sequence(enc.lo, 8, level, 512)[-1][0] - target
        hi_v = trace_sequence(enc.hi, 8, level, 512)[-1][0] - target
        assert lo_v * hi_v <= 0


def test_rejects_bad_input():
    for args in ((4, 5), (3.9, 5), (8, 1)):
        with pytest.raises(ValueError):
            enumerate_bands(*args)
    with pytest.raises(ValueError):
        enumerate_bands(8, 5, precision=40)


@pytest.mark.parametrize("lam", [5, 8, 16])
def test_counts_and_histograms(lam):
    h = enumerate_bands(lam, 12)
    t = count_table(12)
    for k in range(2, 13):
        assert h.counts(k) == (fibonacci(k), fibonacci(k - 2), fibonacci(k - 1))
        assert h.ancestry_histogram(k) == t.histogram(k)
        assert triple_intersection_empty(h, k - 2) if k >= 2 else True
    assert not nesting_violations(h)


def test_width_sandwich(h8_small):
    assert width_sandwich_violations(h8_small) == []


def test_ancestry_matches_definition(h8_small):
    for lv in h8_small.levels:
        for b in lv:
            assert ancestry_from_definition(h8_small, b) == b.ancestry


def test_children_rule(h8_small):
    for k in range(0, 8):
        for i, b in enumerate(h8_small.levels[k]):
            a_kids, b_kids = h8_small.children_of(k, i)
            kids = a_kids + b_kids
            types = sorted(c.band_type for c in kids)
            assert types == (["B"] if b.band_type == "A" else ["A", "B", "B"])
            assert all(c.ancestry == b.ancestry + 1 for c in kids)
            assert all(b.lo <= c.lo and c.hi <= b.hi for c in kids)


def test_every_band_meets_the_spectrum_at_finite_depth(h8_small):
    for lv in h8_small.levels[2:]:
        for b in lv:
            assert spectrum_membership(b.inner[0], 8, b.level).bounded


def test_scaling_ratios_small():
    h = enumerate_bands(8, 7)
    rep = scaling_ratio_check(h, samples_per_band=20)
    assert rep.ok and rep.samples == 20 * rep.pairs
    assert rep.s_lower <= rep.min_ratio <= rep.max_ratio <= rep.s_upper


def test_json_round_trip_is_lossless(h8_small):
    data = json.loads(json.dumps(hierarchy_to_json(h8_small)))
    back = hierarchy_from_json(data)
    assert hierarchy_to_json(back) == hierarchy_to_json(h8_small)


def test_csv_round_trip_keeps_structure(h8_small):
    rows = [{k: str(v) for k, v in r.items()} for r in band_records(h8_small)]
    back = hierarchy_from_records(8, rows)
    for k in range(h8_small.k_max + 1):
        a, b = h8_small.levels[k], back.levels[k]
        assert [(x.band_type, x.ancestry, x.parent) for x in a] == \
            [(x.band_type, x.ancestry, x.parent) for x in b]
        for x, y in zip(a, b):
            assert y.lo_enc.lo <= x.lo_enc.lo and x.lo_enc.hi <= y.lo_enc.hi
            assert y.hi_enc.lo <= x.hi_enc.lo and x.hi_enc.hi <= y.hi_enc.hi


def test_resume_matches_direct_run(h8_small):
    part = hierarchy_from_json(json.loads(json.dumps(hierarchy_to_json(enumerate_bands(8, 6)))))
    resumed = enumerate_bands(8, 10, resume_from=part)
    assert hierarchy_to_json(resumed) == hierarchy_to_json(h8_small)


def test_resume_from_csv(h8_small):
    rows = [{k: str(v) for k, v in r.items()} for r in band_records(enumerate_bands(8, 6))]
    resumed = enumerate_bands(8, 10, resume_from=hierarchy_from_records(8, rows))
    for k in range(7, 11):
        assert [(b.band_type, b.ancestry) for b in resumed.levels[k]] == \
            [(b.band_type, b.ancestry) for b in h8_small.levels[k]]
        for x, y in zip(resumed.levels[k], h8_small.levels[k]):
            assert abs(x.lo - y.lo) < 1e-15 and abs(x.hi - y.hi) < 1e-15


def test_workers_do_not_change_output(h8_small):
    par = enumerate_bands(8, 10, workers=2)
    assert hierarchy_to_json(par) == hierarchy_to_json(h8_small)


def test_interval_helpers():
    u = merge_intervals([(3, 4), (0, 1), (0.5, 2)])
    assert u == [(0, 2), (3, 4)]
    assert intersect_unions(u, [(1, 3.5)]) == [(1, 2), (3, 3.5)]
    assert union_contains(u, [(0.2, 1.9), (3, 4)])
    assert not union_contains(u, [(1.5, 3.2)])


def test_cover_nesting(h8_small):
    for k in range(1, 9):
        assert union_contains(cover_union(h8_small, k), cover_union(h8_small, k + 1))
