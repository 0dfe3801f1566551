import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nicis import conjugation as cj
from nicis import number_theory as nt
from nicis.dynamics import rotation_number_estimate
from nicis.errors import IntegratorTolerance

LIOUV = nt.rotation_number(nt.LIOUVILLE, 8)
GOLDEN = nt.rotation_number(nt.GOLDEN, 64)
SCHEDULE = cj.BandSchedule()
RNG = np.random.default_rng(11)


@pytest.fixture(scope="module")
def km1():
    return cj.build_kmap(SCHEDULE.stage(1), verify_points=1000)


@pytest.fixture(scope="module")
def km_example():
    return cj.stage_kmap(0.5, 0.6, 0.7, 0.8, lipschitz=False)


def make_stage(km, alpha_n, C=None, C_next=None, Q=None, eps=None):
    h = cj.lift_to_cover(km, alpha_n.q)
    L = km.lipschitz()
    return cj.StageState(1, alpha_n, km.bands, km, h, cj.Chain().then(h), L,
                         L if C is None else C, L if C_next is None else C_next,
                         SCHEDULE.eps(1) if eps is None else eps,
                         alpha_n.q if Q is None else Q)


# bands -------------------------------------------------------------------

def test_bands_reject_bad_order():
    with pytest.raises(ValueError):
        cj.Bands(1, Fraction(1, 2), Fraction(3, 4), Fraction(5, 8), Fraction(7, 8))
    with pytest.raises(ValueError):
        cj.BandSchedule([(0.5, 0.6)])


def test_default_schedule_strict():
    SCHEDULE.check(12)
    for n in range(1, 12):
        b = SCHEDULE.stage(n)
        assert b.a < b.b < b.c < b.a_next < 1
        assert b.c < b.d < b.a_next


@given(st.integers(1, 10))
def test_eps_matches_rational_formula(n):
    rows = [SCHEDULE.default_row(k) for k in range(1, n + 1)]
    oracle = min((b - a) / Fraction(2) ** (n - k + 1) for k, (a, b, _) in enumerate(rows, start=1))
    assert SCHEDULE.eps(n) == oracle
    assert isinstance(SCHEDULE.eps(n), Fraction)


def test_eps_explicit_schedule():
    s = cj.BandSchedule([("0.5", "0.6", "0.7"), ("0.8", "0.85", "0.9")])
    assert s.eps(2) == min(Fraction(1, 20) / 2, Fraction(1, 10) / 4)
    assert s.stage(1).a_next == Fraction(4, 5)
    with pytest.raises(ValueError):
        s.row(3)


# k_n -------------------------------------------------------------------------

def test_zero_amplitude_is_identity():
    km = cj.build_kmap(SCHEDULE.stage(1), amplitude=0.0)
    assert km.is_identity
    x, y = RNG.random(50), RNG.uniform(-1, 1, 50)
    ox, oy = km.forward(x, y)
    assert np.array_equal(ox, x) and np.array_equal(oy, y)


def test_example_stage_lifts_quarter_point(km_example):
    ox, oy = km_example.forward(np.array([0.25]), np.array([0.0]))
    assert abs(ox[0] - 0.25) < 1e-8
    assert abs(oy[0] - 0.7) < 1e-8


def test_kmap_build_checks(km1):
    ch = km1.checks
    assert ch["jacobian"] < 1e-8 and ch["verify_points"] == 1000
    assert ch["graph"] < 1e-8
    assert ch["fixed_line"] < 1e-12
    assert ch["identity"] == 0.0


def test_jacobian_fd_secondary(km1):
    u, y = RNG.random(200), RNG.uniform(-0.75, 0.75, 200)
    assert np.max(cj.jacobian_residual_fd(km1, u, y)) < 1e-5


def test_inverse_flow_roundtrip(km1):
    u, y = RNG.random(500), RNG.uniform(-1, 1, 500)
    bu, by = km1.inverse(*km1.forward(u, y))
    assert np.max(np.abs(bu - u)) < 1e-8 and np.max(np.abs(by - y)) < 1e-8


def test_kmap_preserves_area(km1):
    for x0, y0 in [(0.1, 0.0), (0.3, 0.69), (0.8, -0.71)]:
        assert abs(cj.quad_area_ratio(km1.forward, x0, y0, 1e-3) - 1) < 1e-6


def test_too_few_steps_rejected():
    with pytest.raises(IntegratorTolerance):
        cj.build_kmap(SCHEDULE.stage(3), n_steps=1, verify_points=50, lipschitz=False)


def test_kmap_lipschitz_covers_dense_grid(km1):
    u, y = np.meshgrid(np.linspace(0, 1, 60, endpoint=False), np.linspace(0, 0.75, 200))
    norms = np.linalg.norm(km1.jacobians(u.ravel(), y.ravel()), 2, axis=(1, 2))
    assert km1.lipschitz() >= norms.max()


# h_n, H_n, f_n ---------------------------------------------------------------

@pytest.mark.parametrize("q", [1, 9, 1000])
def test_lift_commutes_with_rotation(km1, q):
    h = cj.lift_to_cover(km1, q)
    x, y = RNG.random(1000), RNG.uniform(-1, 1, 1000)
    ax, ay = h.apply((x + 1.0 / q) % 1.0, y)
    bx, by = h.apply(x, y)
    assert np.max(cj.annulus_distance(ax, ay, (bx + 1.0 / q) % 1.0, by)) < 1e-9


def test_lift_q_one_is_kmap(km1):
    x, y = RNG.random(100), RNG.uniform(-1, 1, 100)
    hx, hy = cj.lift_to_cover(km1, 1).apply(x, y)
    kx, ky = km1.forward(x, y)
    assert np.max(cj.annulus_distance(hx, hy, kx % 1.0, ky)) < 1e-15


def test_lift_fixes_vertical_lines(km1):
    q = 7
    y = np.linspace(-1, 1, 41)
    for j in range(q):
        ox, oy = cj.lift_to_cover(km1, q).apply(np.full(41, j / q), y)
        assert np.max(cj.annulus_distance(ox, oy, j / q, y)) < 1e-15


def test_lift_rejects_zero():
    with pytest.raises(ValueError):
        cj.lift_to_cover(cj.build_kmap(SCHEDULE.stage(1), amplitude=0.0), 0)


def test_chain_roundtrip(km1, km_example):
    chain = cj.Chain().then(cj.lift_to_cover(km1, 3)).then(cj.lift_to_cover(km_example, 40))
    x, y = RNG.random(300), RNG.uniform(-1, 1, 300)
    bx, by = cj.apply_composed(chain, *cj.apply_composed(chain, x, y, inverse=True))
    assert np.max(cj.annulus_distance(bx, by, x, y)) < 1e-8
    assert cj.roundtrip_residual(chain, (x, y)) < 1e-8


def test_fixed_point_chain_matches_float(km1):
    chain = cj.Chain().then(cj.lift_to_cover(km1, 9))
    x, y = RNG.random(100), RNG.uniform(-1, 1, 100)
    fx, fy = chain.apply(x, y)
    gx, gy = chain.maps[0].apply(x, y)
    assert np.max(cj.annulus_distance(fx, fy, gx, gy)) < 1e-12


def test_conjugated_rotation_periodic(km1):
    f = cj.ConjugatedRotation(cj.Chain().then(cj.lift_to_cover(km1, 3)), Fraction(2, 5))
    x, y = RNG.random(50), RNG.uniform(-0.7, 0.7, 50)
    state = [f.start(a, b) for a, b in zip(x, y)]
    for _ in range(5):
        state = [f.step(s)[0] for s in state]
    ox = cj.to_floats([s[0] for s in state], f.bits)
    oy = np.array([s[1] for s in state])
    assert np.max(cj.annulus_distance(ox, oy, x, y)) < 1e-6
    px, py = f.power(x, y, 5)
    assert np.max(cj.annulus_distance(px, py, x, y)) < 1e-6


def test_conjugated_rotation_area(km1):
    f = cj.ConjugatedRotation(cj.Chain().then(cj.lift_to_cover(km1, 3)), Fraction(2, 5))
    for x0, y0 in [(0.05, 0.1), (0.4, -0.3)]:
        assert abs(cj.quad_area_ratio(f.apply, x0, y0, 1e-3) - 1) < 1e-6


def test_orbit_block_matches_power(km1):
    f = cj.ConjugatedRotation(cj.Chain().then(cj.lift_to_cover(km1, 3)), Fraction(2, 5))
    x, y = RNG.random(4), RNG.uniform(-1, 1, 4)
    bx, by = f.orbit_block(x, y, [1, 3])
    px, py = f.power(x, y, 3)
    assert np.array_equal(bx[1], px) and np.array_equal(by[1], py)


def test_rotation_estimate_of_conjugated_rotation(km1):
    f = cj.ConjugatedRotation(cj.Chain().then(cj.lift_to_cover(km1, 9)), Fraction(110001, 10 ** 6))
    m = 2000
    est = rotation_number_estimate(f, f.start(0.37, 0.1), m)
    assert est.within(110001 / 10 ** 6, 1.0 / m)


def test_polygon_area_unit_square():
    assert cj.polygon_area([0, 1, 1, 0], [0, 0, 1, 1]) == 1.0


# Lipschitz estimates -------------------------------------------------------

def test_lipschitz_estimate_identity_and_rotation():
    x, y = RNG.random(200), RNG.uniform(-1, 1, 200)
    assert cj.lipschitz_estimate(lambda a, b: (a, b), x, y) == pytest.approx(1.0, abs=1e-9)
    shift = lambda a, b: ((a + 0.3) % 1.0, b)  # noqa: E731
    assert cj.lipschitz_estimate(shift, x, y) == pytest.approx(1.0, abs=1e-9)


def test_lift_lipschitz_at_most_q_times_kmap(km1):
    q = 9
    h = cj.lift_to_cover(km1, q)
    x, y = RNG.random(2000), RNG.uniform(-0.75, 0.75, 2000)
    assert cj.lipschitz_estimate(h.apply, x, y) <= km1.lipschitz() * q + 1e-6
    assert cj.lipschitz_estimate(km1.forward, x % 1.0, y) <= km1.lipschitz()


# band certification and the alpha search ----------------------------------

def test_band_check_single_point_orbit(km1):
    stage = make_stage(km1, cj.first_alpha(LIOUV))
    for method in ("grid", "lipschitz"):
        assert not cj.band_intersection_check(stage, 1, method=method).ok


def test_band_check_large_q_lipschitz(km1):
    stage = make_stage(km1, cj.first_alpha(LIOUV))
    cert = cj.band_intersection_check(stage, 10 ** 6)
    assert cert.kind == "LipschitzCriterion"
    assert cert.detail["bound"] == pytest.approx(km1.lipschitz() * 9 * 16)


@pytest.mark.parametrize("q", [70001, 99991])
def test_band_check_grid_and_criterion_agree(km1, q):
    stage = make_stage(km1, cj.first_alpha(LIOUV))
    assert stage.lipschitz_H / float(stage.bands.c - stage.bands.b) < q
    assert cj.band_intersection_check(stage, q, method="grid").kind == "GridOrbit"
    assert cj.band_intersection_check(stage, q, method="lipschitz").kind == "LipschitzCriterion"


def test_band_check_unknown_method(km1):
    with pytest.raises(ValueError):
        cj.band_intersection_check(make_stage(km1, cj.first_alpha(LIOUV)), 5, method="magic")


def test_liouville_stage_one_choice(km1):
    stage = make_stage(km1, cj.first_alpha(LIOUV), C_next=km1.lipschitz() * 3)
    res = cj.choose_next_alpha(stage, LIOUV)
    assert isinstance(res, cj.NextAlpha)
    assert (res.rational.p, res.rational.q) == (110001, 10 ** 6)
    assert all(res.checks.values()) and res.flags == ()
    # exact oracle for the monotone clause
    assert nt.error_bounds(LIOUV, res.rational)[1] < nt.error_bounds(LIOUV, stage.alpha_n)[0]


def test_degenerate_stage_takes_first_convergent_past_bound(km1):
    stage = make_stage(km1, cj.first_alpha(LIOUV), C=1.0, C_next=1.0, Q=1, eps=Fraction(1, 2))
    res = cj.choose_next_alpha(stage, LIOUV, band_method="lipschitz")
    # bound 1 / (c_1 - b_1) = 16; convergents of the series are 1/9, 11/100, ...
    assert str(res.rational) == "11/100"


def test_golden_is_infeasible_on_the_second_constraint(km1):
    stage = make_stage(km1, cj.first_alpha(GOLDEN), C_next=km1.lipschitz() * 3)
    res = cj.choose_next_alpha(stage, GOLDEN)
    assert isinstance(res, cj.Infeasible)
    assert res.binding == "distance"
    assert res.failures["distance"] == res.candidates > 0
    # oracle: golden convergents satisfy |alpha - p/q| > 1/(3 q^2), above the bound for q >= 2
    ratio = stage.eps / (2 * Fraction(stage.C_next) * stage.q_product)
    assert ratio < Fraction(1, 3)


def test_cinf_mode_flags_surrogate(km1):
    stage = make_stage(km1, cj.first_alpha(LIOUV), C_next=km1.lipschitz() * 3)
    res = cj.choose_next_alpha(stage, LIOUV, mode="cinf")
    assert "surrogate-constant" in res.flags
    assert res.rational.q > 10 ** 6
    with pytest.raises(ValueError):
        cj.choose_next_alpha(stage, LIOUV, mode="c2")


# stage distances and the scheme --------------------------------------------

def test_stage_distance_identical_is_zero(km1):
    f = cj.ConjugatedRotation(cj.Chain().then(cj.lift_to_cover(km1, 3)), Fraction(2, 5))
    assert cj.stage_distance(f, f, 5, (RNG.random(4), RNG.uniform(-1, 1, 4))) == 0.0


def test_stage_distance_small_q_bound(km1):
    # f_1 = H S_{1/3} H^-1 and f_2 = H S_{r} H^-1 with r close to 1/3 (H = h_1 only)
    chain = cj.Chain().then(cj.lift_to_cover(km1, 2))
    r_a, r_b = Fraction(1, 3), Fraction(33334, 100001)
    fa, fb = cj.ConjugatedRotation(chain, r_a), cj.ConjugatedRotation(chain, r_b)
    grid = (RNG.random(8), RNG.uniform(-1, 1, 8))
    j_max = 3
    dist = cj.stage_distance(fa, fb, j_max, grid)
    bound = km1.lipschitz() * 2 * j_max * float(abs(r_a - r_b))
    assert 0 < dist <= bound + 10 * cj.integrator_floor(fa, grid, j_max) + 1e-12


def test_run_scheme_zero_stages():
    rep = cj.run_scheme(LIOUV, 0)
    (entry,) = rep.stages
    assert entry["alpha_next"] == "1/9"
    assert abs(entry["rotation_estimate"] - 1 / 9) <= entry["rotation_error_bar"] + 1e-12
    assert rep.feasible and json.loads(rep.to_json())["n_stages"] == 0


def test_run_scheme_stage_cap():
    with pytest.raises(ValueError):
        cj.run_scheme(LIOUV, 5)


def test_first_alpha_skips_q_one():
    assert cj.first_alpha(GOLDEN).q == 2
    assert cj.first_alpha(LIOUV).q == 9


def test_fixed_point_conversion_roundtrip():
    x = RNG.random(100)
    assert np.array_equal(cj.to_floats(cj.to_fixed(x, 200), 200), x)
