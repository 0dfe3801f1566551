import csv
import io
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nicis import fixedpoint as fp
from nicis import number_theory as nt
from nicis import skew_product as sp

ALPHA = nt.rotation_number(nt.GOLDEN, 64)
PHI6 = sp.build_phi(ALPHA, 6)
PHI_FULL = sp.build_phi(ALPHA)
F = sp.SkewProduct.from_phi(PHI_FULL)
RNG = np.random.default_rng(2024)

# 80-digit mpmath sum of (2/n) sin(2 pi q_n alpha), q = 2, 21, 233
PHI3_AT_ZERO = 1.867034773890090959028801


def test_build_phi_golden_three_terms():
    phi = sp.build_phi(ALPHA, 3)
    assert phi.qs == (2, 21, 233)
    assert phi.coeffs == pytest.approx((2.0, 1.0, 2.0 / 3.0))


def test_single_term_formula():
    phi = sp.build_phi(ALPHA, 1)
    x = RNG.random(200)
    a = ALPHA.value
    q = phi.qs[0]
    ref = 2 * (np.sin(2 * np.pi * q * (x + a)) - np.sin(2 * np.pi * q * x))
    assert np.max(np.abs(sp.eval_phi(phi, x) - ref)) < 1e-12


def test_phi_at_zero_high_precision():
    assert abs(sp.eval_phi(sp.build_phi(ALPHA, 3), 0.0) - PHI3_AT_ZERO) < 1e-14


def test_complex_form_agrees_with_real_form():
    x = RNG.random(1000)
    ref = sp.eval_phi_complex(PHI6, x)
    assert np.max(np.abs(sp.eval_phi(PHI6, x) - ref)) < 1e-13


def test_complex_oracle_is_independent_for_deep_terms():
    x = RNG.random(50)
    assert np.max(np.abs(sp.eval_phi(PHI_FULL, x) - sp.eval_phi_complex(PHI_FULL, x))) < 1e-13


def test_machine_precision_truncation():
    n = sp.machine_precision_terms(ALPHA)
    assert PHI_FULL.n_terms == n
    assert PHI_FULL.term_bounds()[-1] >= 1e-16
    assert sp.build_phi(ALPHA, n + 1).term_bounds()[-1] < 1e-16


def test_term_magnitudes_below_bound():
    x = np.linspace(0, 1, 20001)
    for k in range(PHI6.n_terms):
        single = sp.PhiSeries(ALPHA, (PHI6.qs[k],), (PHI6.coeffs[k],))
        assert np.max(np.abs(sp.eval_phi(single, x))) < PHI6.term_bounds()[k]


def test_coboundary_identity():
    x = np.concatenate([RNG.random(5000), np.arange(5000) / 5000])
    assert sp.coboundary_residual(PHI6, x) < 1e-12
    assert sp.coboundary_residual(PHI_FULL, x) < 1e-12


def test_symmetry():
    x = RNG.random(10000)
    assert sp.symmetry_residual(PHI_FULL, x) < 1e-12


def test_h_is_odd_and_vanishes_at_zero():
    x = RNG.random(1000)
    assert sp.eval_h(PHI6, 0.0) == 0.0
    neg = [(-fp.from_float(v)) % fp.ONE for v in x]
    assert np.max(np.abs(sp.eval_h(PHI6, x) + sp.eval_h(PHI6, np.array(neg, dtype=object)))) < 1e-13


def test_mean_residual():
    assert sp.mean_residual(PHI6) < 1e-12
    assert sp.mean_residual(sp.build_phi(ALPHA, 1)) < 1e-14


def test_mean_residual_shrinks_with_grid():
    phi = sp.build_phi(ALPHA, 2)
    coarse = sp.mean_residual(phi, points=37)
    fine = sp.mean_residual(phi, points=2 * phi.qs[-1] * 16)
    assert fine < 1e-14 and fine <= coarse


def test_variation_below_series_bound():
    for n in (1, 3, 6):
        phi = sp.build_phi(ALPHA, n)
        assert sp.variation(phi) <= sp.series_variation_bound(n)


def test_birkhoff_trivial_cases():
    x = RNG.random(10)
    assert np.all(sp.birkhoff_sum_direct(PHI6, x, 0) == 0)
    assert np.all(sp.birkhoff_sum_closed(PHI6, x, 0) == 0)
    assert np.max(np.abs(sp.birkhoff_sum_direct(PHI6, x, 1) - sp.eval_phi(PHI6, x))) < 1e-15
    assert np.max(np.abs(sp.birkhoff_sum_closed(PHI6, x, 1) - sp.eval_phi(PHI6, x))) < 1e-12


def test_birkhoff_direct_vs_closed_1e5():
    x = RNG.random(1000)
    d = sp.birkhoff_sum_direct(PHI_FULL, x, 10 ** 5)
    c = sp.birkhoff_sum_closed(PHI_FULL, x, 10 ** 5)
    assert np.max(np.abs(d - c)) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3000), st.floats(0, 1, exclude_max=True))
def test_birkhoff_matches_naive_sum(m, x):
    # oracle: plain sum of eval_phi at exact fixed-point shifts
    xi = fp.from_float(x)
    pts = [(xi + k * ALPHA.fixed128) % fp.ONE for k in range(m)]
    naive = math.fsum(sp.eval_phi(PHI6, np.array(pts, dtype=object)).tolist())
    assert abs(sp.birkhoff_sum_direct(PHI6, x, m) - naive) < 1e-11
    assert abs(sp.birkhoff_sum_closed(PHI6, x, m) - naive) < 1e-11


def test_closed_form_negative_m():
    x = RNG.random(20)
    back = sp.birkhoff_sum_closed(PHI6, x, -50)
    start = sp.shift(ALPHA, x, -50)
    fwd = sp.birkhoff_sum_closed(PHI6, start, 50)
    assert np.max(np.abs(back + fwd)) < 1e-12


def test_apply_first_coordinate_exact():
    x0 = fp.from_float(0.3)
    x1, y1 = F.apply((x0, 0.25))
    assert x1 == (x0 + ALPHA.fixed128) % fp.ONE
    assert y1 == pytest.approx(0.25 + sp.eval_phi(PHI_FULL, x0), abs=1e-15)
    assert F.apply_inverse((x1, y1))[0] == x0


def test_iterate_trace_matches_birkhoff():
    x0 = fp.from_float(0.123)
    tr = F.iterate((x0, 0.5), 10 ** 6, record_stride=10 ** 5)
    assert tr.positions[-1] == (x0 + 10 ** 6 * ALPHA.fixed128) % fp.ONE
    closed = sp.birkhoff_sum_closed(PHI_FULL, x0, 10 ** 6)
    assert abs(tr.displacement[-1] - closed) < 1e-9
    assert tr.y_min <= 0.5 <= tr.y_max


def test_iterate_forward_then_back():
    p = (fp.from_float(0.7), -0.3)
    end = F.iterate(p, 10 ** 5).end()
    back = F.iterate(end, -10 ** 5).end()
    assert back[0] == p[0]
    assert abs(back[1] - p[1]) < 1e-10


def test_zero_phi_keeps_height():
    Z = sp.SkewProduct.from_phi(sp.PhiSeries.zero(ALPHA))
    tr = Z.iterate((fp.from_float(0.2), 1.5), 1000, 100)
    assert np.all(np.asarray(tr.displacement) == 0.0)
    assert tr.y_min == tr.y_max == 1.5


def test_involution():
    assert sp.involution_residual(F, 100, 1000) < 1e-10
    Z = sp.SkewProduct.from_phi(sp.PhiSeries.zero(ALPHA))
    assert sp.involution_residual(Z, 20, 100) < 1e-15


def test_involution_negative_control():
    broken = sp.phase_perturbed(PHI6, 0, 0.05)
    assert sp.involution_residual(sp.SkewProduct.from_phi(broken), 100, 1000) > 1e-3
    assert sp.symmetry_residual(broken, RNG.random(100)) > 1e-3


def test_orbit_csv():
    tr = F.iterate((fp.from_float(0.25), 0.0), 3)
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0] == ["m", "x_m", "y_m_minus_y0"]
    assert len(rows) == 5
    assert tr.to_csv().count("\r\n") == 5


def test_phi_json_roundtrip():
    again = sp.PhiSeries.from_json(PHI6.to_json())
    assert again.qs == PHI6.qs
    x = RNG.random(50)
    assert np.array_equal(sp.eval_phi(again, x), sp.eval_phi(PHI6, x))


def test_liouville_phi_uses_large_denominators():
    rn = nt.rotation_number(nt.LIOUVILLE, 8)
    phi = sp.build_phi(rn, 3)
    assert phi.qs[1] >= 10 * phi.qs[0]
    x = RNG.random(1000)
    assert sp.coboundary_residual(phi, x) < 1e-12
    assert sp.symmetry_residual(phi, x) < 1e-12


def test_high_precision_reference_value():
    with mpmath.workdps(40):
        a = (mpmath.sqrt(5) - 1) / 2
        x = mpmath.mpf(1) / 7
        ref = sum(mpmath.mpf(2) / n * (mpmath.sin(2 * mpmath.pi * q * (x + a)) - mpmath.sin(2 * mpmath.pi * q * x))
                  for n, q in enumerate(PHI6.qs, start=1))
    xi = fp.ONE // 7
    assert abs(sp.eval_phi(PHI6, xi) - float(ref)) < 1e-13
