import csv
import io
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from nicis import number_theory as nt
from nicis.errors import ConfigError, InsufficientPrecision

GOLDEN = nt.rotation_number(nt.GOLDEN, 40)
SILVER = nt.rotation_number(nt.SILVER, 40)
LIOUV = nt.rotation_number(nt.LIOUVILLE, 8)


def exact_cf(x: Fraction, depth: int) -> list[int]:
    out = []
    for _ in range(depth):
        if x == 0:
            break
        x = 1 / x
        a = math.floor(x)
        out.append(a)
        x -= a
    return out


def brute_returns(value: Fraction, q_max: int) -> list[int]:
    best, out = None, []
    for j in range(1, q_max + 1):
        d = abs(j * value - round(j * value))
        if best is None or d < best:
            best = d
            out.append(j)
    return out


def test_golden_quotients_are_ones():
    assert nt.cf_expand(nt.GOLDEN, 10).partial_quotients == (1,) * 10


def test_silver_quotients_are_twos():
    assert nt.cf_expand("sqrt2", 10).partial_quotients == (2,) * 10


def test_liouville_quotients_match_partial_sum():
    partial = sum(Fraction(1, 10 ** math.factorial(k)) for k in range(1, 7))
    oracle = exact_cf(partial, 8)
    rn = nt.cf_expand(nt.LIOUVILLE, 8)
    assert list(rn.partial_quotients) == oracle
    assert list(rn.partial_quotients) == [9, 11, 99, 1, 10, 9, 999999999999, 1]


def test_decimal_input_limits_depth():
    with pytest.raises(InsufficientPrecision):
        nt.cf_expand(nt.parse_alpha("0.6180339887"), 30)
    short = nt.cf_expand(nt.parse_alpha("0.6180339887498948482045868"), 10)
    assert short.partial_quotients == (1,) * 10


def test_parse_rejects_garbage():
    with pytest.raises(ConfigError):
        nt.parse_alpha("pi-ish")


@pytest.mark.parametrize("x, d", [(0.75, 0.25), (3.0, 0.0), (-0.4, 0.4)])
def test_circle_distance(x, d):
    assert nt.circle_distance(x) == pytest.approx(d, abs=1e-15)


@pytest.mark.parametrize("alpha, q_max, expected", [
    (GOLDEN, 15, [1, 2, 3, 5, 8, 13]),
    (SILVER, 30, [1, 2, 5, 12, 29]),
])
def test_closest_returns_examples(alpha, q_max, expected):
    assert nt.closest_return_times(alpha, q_max) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3000), st.sampled_from(["golden", "sqrt2", "liouville", "surd:-2,1,7,3"]))
def test_closest_returns_match_exact_scan(q_max, spec):
    rn = nt.rotation_number(nt.parse_alpha(spec), 32)
    lo, hi = rn.interval()
    assert nt.closest_return_times(rn, q_max) == brute_returns((lo + hi) / 2, q_max)


def test_q_one_always_a_closest_return():
    for rn in (GOLDEN, SILVER, LIOUV):
        assert nt.closest_return_times(rn, 1) == [1]
        assert nt.is_closest_return(rn, 1)


def test_is_closest_return_examples():
    assert nt.is_closest_return(GOLDEN, 5)
    assert not nt.is_closest_return(GOLDEN, 4)


def test_liouville_witness_examples():
    w = nt.liouville_witness(LIOUV, 3, 1e-3, 10 ** 30)
    assert (w.p, w.q) == (110001, 10 ** 6)
    assert nt.liouville_witness(GOLDEN, 3, 1e-3, 10 ** 6) is None
    first = nt.liouville_witness(GOLDEN, 1, 1, 10 ** 6)
    assert first == GOLDEN.convergents[0]


def test_liouville_witness_rejects_bad_params():
    with pytest.raises(ValueError):
        nt.liouville_witness(GOLDEN, 0, 1, 10)


@pytest.mark.parametrize("n1, n2", [(0, 1), (0, 2)])
def test_refine_examples(n1, n2):
    n3 = nt.refine_return_step(GOLDEN, n1, n2)
    assert n3 > 0
    if n3 > n2:
        assert nt.is_closest_return(GOLDEN, n3 - n2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 400), st.integers(1, 400), st.sampled_from(["golden", "sqrt2", "surd:-2,1,7,3"]))
def test_refine_step_lands_in_arc(n1, gap, spec):
    rn = nt.rotation_number(nt.parse_alpha(spec), 32)
    n2 = n1 + gap
    n3 = nt.refine_return_step(rn, n1, n2)
    lo, hi = rn.interval()
    a = (lo + hi) / 2
    p1, p2, p3 = ((n * a) % 1 for n in (n1, n2, n3))
    d = (p2 - p1) % 1
    start, length = (p1, d) if d < Fraction(1, 2) else (p2, 1 - d)
    assert 0 < (p3 - start) % 1 < length
    for j in range(1, n3):
        assert not 0 < (j * a - start) % 1 < length


def test_refine_requires_order():
    with pytest.raises(ValueError):
        nt.refine_return_step(GOLDEN, 3, 3)


@pytest.mark.parametrize("alpha, expected", [(GOLDEN, [2, 21, 233]), (SILVER, [2, 29, 408])])
def test_phi_denominators_examples(alpha, expected):
    assert nt.select_phi_denominators(alpha, 3) == expected


@pytest.mark.parametrize("spec", ["golden", "sqrt2", "liouville", "surd:-2,1,7,3"])
def test_phi_denominators_conditions(spec):
    rn = nt.rotation_number(nt.parse_alpha(spec), 32)
    count = 3 if spec == "liouville" else 8
    qs = nt.select_phi_denominators(rn, count)
    assert all(b > 10 * a for a, b in zip(qs, qs[1:]))
    deep = nt.expand_to_q(rn, max(qs))
    by_q = {c.q: c for c in deep.convergents}
    for q in qs:
        assert nt.is_closest_return(deep, q)
        _, hi = nt.error_bounds(deep, by_q[q])
        assert hi * q * q < 1


def test_phi_denominators_count_one():
    # every convergent satisfies ||q alpha|| < 1/q, so the first q >= 2 is taken
    for rn in (GOLDEN, SILVER, LIOUV):
        assert nt.select_phi_denominators(rn, 1) == [next(q for q in rn.denominators if q >= 2)]


@pytest.mark.parametrize("rn", [GOLDEN, SILVER, LIOUV, nt.rotation_number("surd:-2,1,7,3", 30)])
def test_convergent_invariants(rn):
    nt.verify_convergent_bounds(rn)
    conv = rn.convergents
    a = rn.partial_quotients
    for k in range(2, len(conv)):
        assert conv[k].q == a[k] * conv[k - 1].q + conv[k - 2].q
        assert conv[k].p == a[k] * conv[k - 1].p + conv[k - 2].p
    assert all(x.q < y.q for x, y in zip(conv[1:], conv[2:]))


def test_rational_must_be_reduced():
    with pytest.raises(ValueError):
        nt.Rational(2, 4)
    with pytest.raises(ValueError):
        nt.Rational(1, 0)


def test_convergents_csv_roundtrip():
    text = nt.write_convergents_csv(LIOUV)
    assert "\r\n" in text
    rows = list(csv.DictReader(io.StringIO(text)))
    assert [int(r["q_k"]) for r in rows] == LIOUV.denominators
    assert rows[6]["a_k"] == "999999999999"


def test_expand_to_q_reaches_large_denominators():
    rn = nt.expand_to_q(LIOUV, 10 ** 121)
    assert {10 ** 6, 10 ** 24, 10 ** 120} <= set(rn.denominators)


def test_fixed128_is_nearest():
    lo, hi = GOLDEN.interval()
    mid = (lo + hi) / 2
    assert abs(Fraction(GOLDEN.fixed128, 2 ** 128) - mid) <= Fraction(1, 2 ** 128)
