"""Approximation by conjugation: f_n = H_n o S_{alpha_{n+1}} o H_n^{-1}.

Each stage n has bands a_n < b_n < c_n < a_{n+1}.  k_n is the time-1 map
of the cutoff shear flow in ``nicis.flow`` (amplitude c_n, cutoff between
d = (c_n + a_{n+1}) / 2 and a_{n+1}); h_n is its lift to the q_n-fold cyclic
cover, and H_n = h_1 o ... o h_n.

Denominators reach 10**120 and beyond, so the circle coordinate of a point
is carried as a B-bit fixed-point integer X / 2**B with B sized from the
largest denominator in play; only the in-cell coordinate u = {q x} and the
height y are doubles.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from nicis import flow
from nicis.dynamics import RigidRotation, RotationEstimate, rotation_number_estimate
from nicis.errors import IntegratorTolerance, NicisError
from nicis.number_theory import Rational, RotationNumber, cf_expand, error_bounds

JACOBIAN_TOL = 1e-8
MAX_HALVINGS = 6
STEP_DENSITY = 260  # GL steps per unit of peak horizontal speed
NEWTON_TOL = 1e-15
GRID_CAP = 10 ** 5
PRECISION_MARGIN = 128
NOISE_FACTOR = 10.0  # distances are compared against bound + NOISE_FACTOR * round-trip floor


# ---------------------------------------------------------------------------
# bands
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bands:
    """Stage-n band endpoints a < b < c < a_next, as exact rationals."""

    n: int
    a: Fraction
    b: Fraction
    c: Fraction
    a_next: Fraction

    def __post_init__(self):
        if not (0 <= self.a < self.b < self.c < self.a_next <= 1):
            raise ValueError(f"stage {self.n}: need 0 <= a < b < c < a_next <= 1, got "
                             f"{self.a}, {self.b}, {self.c}, {self.a_next}")

    @property
    def d(self) -> Fraction:
        return (self.c + self.a_next) / 2

    def as_dict(self) -> dict:
        return {k: str(getattr(self, k)) for k in ("a", "b", "c", "a_next")} | {"n": self.n}


class BandSchedule:
    """Per-stage bands; default a_n = 1 - 2^-n, b_n = a_n + 2^-(n+2), c_n = a_n + 3 * 2^-(n+3)."""

    def __init__(self, stages: Optional[Sequence[tuple]] = None):
        self._explicit = None
        if stages is not None:
            rows = [tuple(Fraction(str(v)) for v in row) for row in stages]
            if any(len(r) != 3 for r in rows):
                raise ValueError("each stage needs (a, b, c)")
            self._explicit = rows

    @staticmethod
    def default_row(n: int) -> tuple[Fraction, Fraction, Fraction]:
        a = 1 - Fraction(1, 2 ** n)
        return a, a + Fraction(1, 2 ** (n + 2)), a + Fraction(3, 2 ** (n + 3))

    def row(self, n: int) -> tuple[Fraction, Fraction, Fraction]:
        if n < 1:
            raise ValueError("stages start at 1")
        if self._explicit is None:
            return self.default_row(n)
        if n > len(self._explicit):
            raise ValueError(f"band schedule defines {len(self._explicit)} stages, stage {n} requested")
        return self._explicit[n - 1]

    def stage(self, n: int) -> Bands:
        a, b, c = self.row(n)
        if self._explicit is not None and n == len(self._explicit):
            a_next = (c + 1) / 2  # beyond the last listed stage: halfway to the boundary
        else:
            a_next = self.row(n + 1)[0]
        return Bands(n, a, b, c, a_next)

    def eps(self, n: int) -> Fraction:
        """eps_n = min_k (b_k - a_k) / 2^(n - k + 1), k = 1..n."""
        return min((self.row(k)[1] - self.row(k)[0]) / 2 ** (n - k + 1) for k in range(1, n + 1))

    def check(self, n_max: int) -> None:
        prev = None
        for n in range(1, n_max + 1):
            b = self.stage(n)
            if prev is not None and not prev.a < b.a:
                raise ValueError("a_n must increase")
            prev = b

    def as_list(self, n_max: int) -> list[list[str]]:
        return [[str(v) for v in self.row(n)] for n in range(1, n_max + 1)]


# ---------------------------------------------------------------------------
# k_n
# ---------------------------------------------------------------------------

def default_steps(c: float, d: float, e: float) -> int:
    peak = c / math.pi * (140.0 / 64.0) / (e - d) + 2 * math.pi * c
    return max(64, int(math.ceil(STEP_DENSITY * peak)))


@dataclass(frozen=True)
class KMap:
    """Time-1 map of the cutoff shear flow for one stage, with its build-time checks."""

    bands: Optional[Bands]
    c: float  # amplitude
    d: float
    e: float
    n_steps: int
    tol: float = NEWTON_TOL
    checks: dict = field(default_factory=dict, compare=False)

    @property
    def is_identity(self) -> bool:
        return self.c == 0.0

    def apply(self, u, y, inverse: bool = False):
        u = np.ascontiguousarray(u, dtype=float)
        y = np.ascontiguousarray(y, dtype=float)
        if self.is_identity:
            return u.copy(), y.copy()
        ou, oy, status = flow.flow_many(u, y, self.c, self.d, self.e, self.n_steps,
                                        -1.0 if inverse else 1.0, self.tol)
        if status != flow.STATUS_OK:
            raise IntegratorTolerance("Newton iteration did not converge")
        return ou, oy

    def forward(self, u, y):
        return self.apply(u, y)

    def inverse(self, u, y):
        return self.apply(u, y, inverse=True)

    def jacobians(self, u, y, inverse: bool = False) -> np.ndarray:
        """Jacobian matrices by complex-step differentiation, shape (n, 2, 2)."""
        u = np.ascontiguousarray(u, dtype=float)
        y = np.ascontiguousarray(y, dtype=float)
        if self.is_identity:
            return np.broadcast_to(np.eye(2), (u.size, 2, 2)).copy()
        jac, status = flow.jacobian_complex_step(u, y, self.c, self.d, self.e, self.n_steps,
                                                 -1.0 if inverse else 1.0, self.tol, 1e-30)
        if status != flow.STATUS_OK:
            raise IntegratorTolerance("Newton iteration did not converge")
        return jac

    def lipschitz(self) -> float:
        return float(self.checks.get("lipschitz", 1.0))


def jacobian_residual(kmap: KMap, u, y) -> float:
    """max |det Dk - 1| over the points (complex-step Jacobian)."""
    jac = kmap.jacobians(u, y)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    return float(np.max(np.abs(det - 1.0))) if det.size else 0.0


def jacobian_residual_fd(kmap: KMap, u, y, delta: float = 1e-5) -> np.ndarray:
    """|det - 1| per point from a fourth-order central-difference Jacobian."""
    u = np.asarray(u, float)
    y = np.asarray(y, float)

    def diff(du, dy):
        acc_u = np.zeros_like(u)
        acc_y = np.zeros_like(u)
        for k, w in ((1, 8.0), (2, -1.0)):
            pu, py = kmap.forward(u + k * du, y + k * dy)
            mu, my = kmap.forward(u - k * du, y - k * dy)
            acc_u += w * (pu - mu)
            acc_y += w * (py - my)
        return acc_u / (12 * delta), acc_y / (12 * delta)

    ju_u, jy_u = diff(delta, 0.0)
    ju_y, jy_y = diff(0.0, delta)
    return np.abs(ju_u * jy_y - ju_y * jy_u - 1.0)


def graph_residual(kmap: KMap, points: int = 1000) -> float:
    """max |k(x, 0) - (x, c sin 2 pi x)| over an equispaced grid."""
    x = np.arange(points) / points
    ou, oy = kmap.forward(x, np.zeros(points))
    return float(max(np.max(np.abs(ou - x)), np.max(np.abs(oy - kmap.c * np.sin(2 * np.pi * x)))))


def fixed_line_residual(kmap: KMap, points: int = 201) -> float:
    y = np.linspace(-1.0, 1.0, points)
    ou, oy = kmap.forward(np.zeros(points), y)
    return float(max(np.max(np.abs(ou)), np.max(np.abs(oy - y))))


def identity_residual(kmap: KMap, points: int = 1000, seed: int = 0) -> float:
    """max displacement of k on |y| >= a_next (where the cutoff vanishes)."""
    rng = np.random.default_rng(seed)
    x = rng.random(points)
    y = rng.uniform(kmap.e, 1.0, points) * rng.choice([-1.0, 1.0], points)
    ou, oy = kmap.forward(x, y)
    return float(max(np.max(np.abs(ou - x)), np.max(np.abs(oy - y))))


def kmap_lipschitz(kmap: KMap, grid: tuple[int, int] = (8, 48), refine: int = 4,
                   max_evals: int = 60, safety: float = 1.25) -> float:
    """Estimate sup |Dk| (operator norm) times a safety factor.

    The stretch peaks in a thin layer of the cutoff zone d < |y| < e, so the scan
    uses ``grid[1]`` heights there (plus a few below d), then Nelder-Mead from the
    best seeds.  The flow commutes with (x, y) -> (-x, -y), so y >= 0 suffices.
    """
    if kmap.is_identity:
        return 1.0
    nx, ny = grid
    ys = np.concatenate([np.linspace(0.0, kmap.d, 4, endpoint=False),
                         np.linspace(kmap.d, kmap.e, ny, endpoint=False)])
    u, y = np.meshgrid((np.arange(nx) + 0.5) / nx, ys, indexing="ij")
    u, y = u.ravel(), y.ravel()
    norms = np.linalg.norm(kmap.jacobians(u, y), 2, axis=(1, 2))
    best = float(norms.max())
    dy = (kmap.e - kmap.d) / ny

    def neg_norm(p):
        j = kmap.jacobians(np.array([p[0] % 1.0]), np.array([min(max(p[1], 0.0), kmap.e)]))
        return -float(np.linalg.norm(j[0], 2))

    for i in np.argsort(norms)[::-1][:refine]:
        simplex = [[u[i], y[i]], [u[i] + 0.5 / nx, y[i]], [u[i], y[i] + 0.5 * dy]]
        res = optimize.minimize(neg_norm, [u[i], y[i]], method="Nelder-Mead",
                                options={"maxfev": max_evals, "xatol": 1e-7, "fatol": 1e-6,
                                         "initial_simplex": simplex})
        best = max(best, -float(res.fun))
    return max(safety * best, 1.0)


def build_kmap(bands: Bands, *, amplitude: Optional[float] = None, n_steps: Optional[int] = None,
               verify_points: int = 1000, lipschitz: bool = True, seed: int = 0) -> KMap:
    """k_n for one stage, verified on ``verify_points`` random points.

    The step is halved (up to six times) while the Jacobian residual exceeds 1e-8.
    """
    c = float(bands.c) if amplitude is None else float(amplitude)
    d = float(bands.d)
    e = float(bands.a_next)
    if c == 0.0:
        return KMap(bands, 0.0, d, e, 0, checks={"jacobian": 0.0, "graph": 0.0, "fixed_line": 0.0,
                                                  "identity": 0.0, "lipschitz": 1.0, "halvings": 0})
    steps = n_steps or default_steps(c, d, e)
    rng = np.random.default_rng(seed)
    u = rng.random(verify_points)
    y = rng.uniform(-e, e, verify_points)
    last = math.inf
    for halving in range(MAX_HALVINGS + 1):
        km = KMap(bands, c, d, e, steps)
        try:
            last = jacobian_residual(km, u, y)
        except IntegratorTolerance:
            last = math.inf
        if last <= JACOBIAN_TOL:
            break
        steps *= 2
    else:
        raise IntegratorTolerance(f"Jacobian residual {last:.3g} after {MAX_HALVINGS} halvings")
    checks = {"jacobian": last, "graph": graph_residual(km), "fixed_line": fixed_line_residual(km),
              "identity": identity_residual(km, seed=seed), "halvings": halving,
              "verify_points": verify_points}
    if lipschitz:
        checks["lipschitz"] = kmap_lipschitz(km)
    return KMap(bands, c, d, e, steps, checks=checks)


def stage_kmap(a: float, b: float, c: float, a_next: float, **kw) -> KMap:
    """build_kmap from plain numbers (a, b, c, a_next)."""
    bands = Bands(0, Fraction(str(a)), Fraction(str(b)), Fraction(str(c)), Fraction(str(a_next)))
    return build_kmap(bands, **kw)


# ---------------------------------------------------------------------------
# fixed-point helpers
# ---------------------------------------------------------------------------

def to_fixed(x, bits: int) -> list[int]:
    """Exact B-bit images of doubles in [0, 1) (reduced mod 1)."""
    out = []
    mask = (1 << bits) - 1
    for v in np.atleast_1d(np.asarray(x, float)).tolist():
        num, den = (v % 1.0).as_integer_ratio()
        out.append(((num << bits) // den) & mask)
    return out


def to_floats(xs: Sequence[int], bits: int) -> np.ndarray:
    shift = bits - 64
    return np.array([(v >> shift) for v in xs], dtype=np.float64) * 2.0 ** -64


def bits_for(qs: Sequence[int]) -> int:
    return PRECISION_MARGIN + 2 * max((q.bit_length() for q in qs), default=1)


# ---------------------------------------------------------------------------
# h_n, H_n, f_n
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftedMap:
    """h(x, y) = ((j + k_u(u, y)) / q, k_y(u, y)) with x = (j + u) / q; commutes with S_{1/q}."""

    kmap: KMap
    q: int

    def apply_fixed(self, xs: Sequence[int], y: np.ndarray, bits: int, inverse: bool = False):
        """Map B-bit points; returns (xs, y, lift displacement in x)."""
        if self.kmap.is_identity:
            return list(xs), np.array(y, float), np.zeros(len(xs))
        q = self.q
        mask = (1 << bits) - 1
        shift = bits - 64
        js = []
        us = np.empty(len(xs))
        for i, v in enumerate(xs):
            t = v * q
            js.append(t >> bits)
            us[i] = ((t & mask) >> shift) * 2.0 ** -64
        ou, oy = self.kmap.apply(us, np.asarray(y, float), inverse=inverse)
        out = []
        for j, w in zip(js, ou.tolist()):
            num = ((j << 64) + int(w * 2.0 ** 64)) << shift
            out.append((num // q) & mask)
        return out, oy, (ou - us) / q

    def apply(self, x, y, inverse: bool = False):
        """Float convenience wrapper (adequate while q is far below 2**40)."""
        x = np.asarray(x, float) % 1.0
        y = np.asarray(y, float)
        j = np.floor(x * self.q)
        u = x * self.q - j
        ou, oy = self.kmap.apply(u, y, inverse=inverse)
        return ((j + ou) / self.q) % 1.0, oy

    def inverse(self, x, y):
        return self.apply(x, y, inverse=True)


def lift_to_cover(kmap: KMap, q: int) -> LiftedMap:
    if q < 1:
        raise ValueError("q must be >= 1")
    return LiftedMap(kmap, int(q))


@dataclass(frozen=True)
class Chain:
    """H = h_1 o h_2 o ... o h_n (h_n acts first)."""

    maps: tuple[LiftedMap, ...] = ()

    def then(self, h: LiftedMap) -> "Chain":
        return Chain(self.maps + (h,))

    @property
    def qs(self) -> list[int]:
        return [h.q for h in self.maps]

    def apply_fixed(self, xs, y, bits, inverse: bool = False):
        disp = np.zeros(len(xs))
        order = self.maps if inverse else tuple(reversed(self.maps))
        for h in order:
            xs, y, dd = h.apply_fixed(xs, y, bits, inverse=inverse)
            disp += dd
        return xs, y, disp

    def apply(self, x, y, inverse: bool = False, bits: Optional[int] = None):
        bits = bits or bits_for(self.qs)
        xs, oy, _ = self.apply_fixed(to_fixed(x, bits), np.asarray(y, float), bits, inverse)
        return to_floats(xs, bits), oy

    def inverse(self, x, y, bits: Optional[int] = None):
        return self.apply(x, y, inverse=True, bits=bits)


def apply_composed(chain: "Chain | ConjugatedRotation", x, y, inverse: bool = False):
    """Evaluate H_n, H_n^{-1} or f_n (f_n^{-1}) at float points."""
    if isinstance(chain, ConjugatedRotation):
        return chain.power(x, y, -1 if inverse else 1)
    return chain.apply(x, y, inverse=inverse)


@dataclass(frozen=True)
class ConjugatedRotation:
    """f = H o S_r o H^{-1} for a rational rotation r = p/q."""

    chain: Chain
    rotation: Fraction

    @property
    def bits(self) -> int:
        return bits_for(self.chain.qs + [self.rotation.denominator])

    def _shift(self, j: int, bits: int) -> int:
        r = self.rotation * j
        return math.floor(r * (1 << bits)) & ((1 << bits) - 1)

    def power_fixed(self, xs, y, j: int, bits: Optional[int] = None):
        bits = bits or self.bits
        px, py, d1 = self.chain.apply_fixed(xs, y, bits, inverse=True)
        s = self._shift(j, bits)
        mask = (1 << bits) - 1
        px = [(v + s) & mask for v in px]
        ox, oy, d2 = self.chain.apply_fixed(px, py, bits)
        return ox, oy, d1 + d2 + float(self.rotation * j)

    def power(self, x, y, j: int):
        """f^j at float points (closed form through S_{j r})."""
        bits = self.bits
        ox, oy, _ = self.power_fixed(to_fixed(x, bits), np.asarray(y, float), j, bits)
        return to_floats(ox, bits), oy

    def apply(self, x, y):
        return self.power(x, y, 1)

    def orbit_block(self, x, y, js: Sequence[int]):
        """f^j(p) for every point p and every j in js; arrays of shape (len(js), n)."""
        bits = self.bits
        xs = to_fixed(x, bits)
        px, py, _ = self.chain.apply_fixed(xs, np.asarray(y, float), bits, inverse=True)
        mask = (1 << bits) - 1
        allx, ally = [], []
        for j in js:
            s = self._shift(int(j), bits)
            allx.extend((v + s) & mask for v in px)
            ally.append(py)
        ox, oy, _ = self.chain.apply_fixed(allx, np.concatenate(ally), bits)
        n = len(xs)
        return to_floats(ox, bits).reshape(len(js), n), oy.reshape(len(js), n)

    # rotation-number interface: state is (B-bit x, y)
    def step(self, state):
        x, y = state
        ox, oy, disp = self.power_fixed([x], np.array([y]), 1)
        return (ox[0], float(oy[0])), float(disp[0])

    def start(self, x: float, y: float):
        return to_fixed(x, self.bits)[0], float(y)


def annulus_distance(x1, y1, x2, y2) -> np.ndarray:
    dx = np.abs(np.asarray(x1) - np.asarray(x2)) % 1.0
    return np.maximum(np.minimum(dx, 1.0 - dx), np.abs(np.asarray(y1) - np.asarray(y2)))


def lipschitz_estimate(fn: Callable, x, y, delta: float = 1e-6, directions: int = 8) -> float:
    """max stretch |f(p') - f(p)| / |p' - p| over pairs p' = p + delta * v, v on the unit circle."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    fx, fy = fn(x, y)
    best = 0.0
    for k in range(directions):
        th = math.pi * k / directions
        x2 = x + delta * math.cos(th)
        y2 = y + delta * math.sin(th)
        gx, gy = fn(x2, y2)
        dx_in = np.abs(x2 - x)
        dx_in = np.minimum(dx_in, 1.0 - dx_in)
        dx_out = np.abs(gx - fx) % 1.0
        dx_out = np.minimum(dx_out, 1.0 - dx_out)
        num = np.hypot(dx_out, gy - fy)
        den = np.hypot(dx_in, y2 - y)
        best = max(best, float(np.max(num / den)))
    return best


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

@dataclass
class StageState:
    n: int
    alpha_n: Rational
    bands: Bands
    kmap: KMap
    h: LiftedMap
    H: Chain
    L_k: float  # L(k_n)
    C: float  # C_n = L(k_1) ... L(k_n)
    C_next: float  # C_{n+1} = C_n L(k_{n+1})
    eps: Fraction
    q_product: int  # q_1 ... q_n
    record: dict = field(default_factory=dict)

    @property
    def lipschitz_H(self) -> float:
        """Product bound L(H_n) <= C_n q_1 ... q_n."""
        return self.C * self.q_product


@dataclass(frozen=True)
class Certificate:
    kind: str  # "GridOrbit", "LipschitzCriterion" or "NotCertified"
    q: int
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.kind != "NotCertified"


def image_circle_witnesses(stage: StageState, samples: int = 200) -> float:
    """min over fiber heights of the height reached by H_n at the witness point of that circle.

    The circle y = y0 contains (x*, y0) with c_n sin(2 pi x*) = c_n - |y0| (signed), whose
    k_n-image lies on |y| = c_n; for |y0| >= c_n the fixed point (0, y0) serves.
    Returns min |H_n(witness)_y| - c_n (>= 0 up to rounding when the property holds).
    """
    c = float(stage.bands.c)
    y0 = np.linspace(-1.0, 1.0, samples)
    u = np.zeros(samples)
    inner = np.abs(y0) < c
    s = np.arcsin(np.clip((c - np.abs(y0[inner])) / c, -1.0, 1.0)) / (2 * math.pi)
    u[inner] = np.where(y0[inner] >= 0, s, 1.0 - s)
    q = stage.h.q
    x = u / q
    ox, oy = stage.H.apply(x, y0)
    return float(np.min(np.abs(oy) - c))


def _quasi_random_order(q: int, count: int) -> np.ndarray:
    """First ``count`` terms of k * s mod q with s near q / golden ratio and gcd(s, q) = 1."""
    s = max(1, int(round(q * 0.6180339887498949)))
    while math.gcd(s, q) != 1:
        s += 1
    k = np.arange(min(count, q), dtype=object)
    return np.array([(int(v) * s) % q for v in k], dtype=object)


def band_intersection_check(stage: StageState, q: int, *, method: str = "auto",
                            samples: int = 200, grid_cap: int = GRID_CAP, batch: int = 32,
                            seed: int = 0) -> Certificate:
    """Certify that every orbit of H_n S_{1/q} H_n^{-1} meets |y| >= b_n.

    "grid" maps the q-point orbits of ``samples`` fiber representatives through H_n;
    "lipschitz" uses q >= L(H_n) / (c_n - b_n) plus the witness check that each
    H_n-image circle reaches |y| >= c_n.  "auto" picks grid for q <= grid_cap.
    """
    b = float(stage.bands.b)
    c = float(stage.bands.c)
    if method == "auto":
        method = "grid" if q <= grid_cap else "lipschitz"
    if method == "lipschitz":
        bound = stage.lipschitz_H / (c - b)
        witness = image_circle_witnesses(stage)
        ok = q >= bound and witness >= -1e-9
        return Certificate("LipschitzCriterion" if ok else "NotCertified", q,
                           {"bound": bound, "witness_margin": witness, "method": "lipschitz"})
    if method != "grid":
        raise ValueError(f"unknown method {method!r}")
    if q > grid_cap:
        return Certificate("NotCertified", q, {"reason": "q above grid cap", "method": "grid"})
    rng = np.random.default_rng(seed)
    y0 = np.linspace(-1.0, 1.0, samples)
    x0 = rng.random(samples) / q
    x0[samples // 2] = 0.0  # the fixed vertical line through the central fiber
    order = _quasi_random_order(q, q)
    pending = np.arange(samples)
    bits = bits_for(stage.H.qs + [q])
    mask = (1 << bits) - 1
    base = to_fixed(x0, bits)
    step = Fraction(1, q)
    pos = 0
    while pending.size and pos < len(order):
        ks = order[pos:pos + batch]
        pos += len(ks)
        xs, ys = [], []
        for k in ks:
            s = math.floor(step * int(k) * (1 << bits))
            xs.extend((base[i] + s) & mask for i in pending)
            ys.append(y0[pending])
        _, oy, _ = stage.H.apply_fixed(xs, np.concatenate(ys), bits)
        hit = (np.abs(oy.reshape(len(ks), pending.size)) >= b).any(axis=0)
        pending = pending[~hit]
    ok = pending.size == 0
    return Certificate("GridOrbit" if ok else "NotCertified", q,
                       {"samples": samples, "unresolved": int(pending.size), "method": "grid",
                        "points_scanned": pos})


@dataclass(frozen=True)
class NextAlpha:
    rational: Rational
    certificate: Certificate
    checks: dict
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Infeasible:
    stage: int
    binding: str
    candidates: int
    failures: dict
    detail: list = field(default_factory=list)


def _frac(v: float) -> Fraction:
    return Fraction(v)


def choose_next_alpha(stage: StageState, alpha: RotationNumber, mode: str = "c0", *,
                      max_depth: int = 64, safety: float = 1e3, band_method: str = "auto",
                      grid_cap: int = GRID_CAP, samples: int = 200, seed: int = 0) -> "NextAlpha | Infeasible":
    """Smallest convergent p/q of alpha past alpha_n passing every constraint.

    Constraints: "monotone" (closer to alpha than alpha_n), "distance"
    (|alpha - p/q| < eps_n / (2 C_{n+1} Q q^2)), the mode's "convergence" bound
    and the "band" certificate.  C_{n+1} = C_n L(k_{n+1}); the convergence bound
    uses the surrogate C_4 = 2 C_{n+1} in c0 mode and 2 C_{n+1} * safety in cinf mode.
    """
    mode = mode.lower()
    if mode not in ("c0", "cinf"):
        raise ValueError("mode must be c0 or cinf")
    n = stage.n
    qn = stage.alpha_n.q
    cur_lo, _ = error_bounds(alpha, stage.alpha_n)
    C_next = _frac(stage.C_next)
    Q = stage.q_product
    c4 = 2 * C_next * (_frac(safety) if mode == "cinf" else 1)
    conv_key = "convergence-cinf" if mode == "cinf" else "convergence"
    failures = {"monotone": 0, "distance": 0, conv_key: 0, "band": 0}
    detail = []
    rn = alpha
    depth = rn.depth
    idx = 0
    seen = 0
    while True:
        convs = rn.convergents
        if idx >= len(convs):
            if depth >= max_depth:
                break
            depth = min(max_depth, 2 * depth)
            rn = cf_expand(alpha.spec, depth, min_bits=alpha.bits)
            continue
        r = convs[idx]
        idx += 1
        if r.q <= qn:
            continue
        seen += 1
        lo, hi = error_bounds(alpha, r)
        checks = {
            "monotone": hi < cur_lo,
            "distance": hi < stage.eps / (2 * C_next * Q * r.q ** 2),
        }
        if mode == "c0":
            checks[conv_key] = hi <= 1 / (2 ** n * c4 * Q * r.q)
        else:
            e = (n + 1) ** 2
            qpow = 1
            for h in stage.H.qs:
                qpow *= h ** e
            checks[conv_key] = hi <= 1 / (2 ** n * c4 * qpow * r.q ** e)
        row = {"p": str(r.p), "q": str(r.q), "error_hi": float(hi), **checks}
        if all(checks.values()):
            cert = band_intersection_check(stage, r.q, method=band_method, samples=samples,
                                           grid_cap=grid_cap, seed=seed)
            checks["band"] = cert.ok
            row["band"] = cert.kind
            detail.append(row)
            if cert.ok:
                flags = ("surrogate-constant",) if mode == "cinf" else ()
                return NextAlpha(r, cert, checks, flags)
        else:
            detail.append(row)
        for k, v in checks.items():
            if not v:
                failures[k] += 1
    if seen == 0:
        binding = "depth"
    else:
        total = [k for k, v in failures.items() if v == seen]
        order = ["distance", conv_key, "band", "monotone"]
        binding = next((k for k in order if k in total), max(failures, key=failures.get))
    return Infeasible(n, binding, seen, failures, detail)


def stage_distance(f_a: ConjugatedRotation, f_b: ConjugatedRotation, j_max: int, grid) -> float:
    """max over grid points and 1 <= j <= j_max of the sup distance between f_a^j and f_b^j."""
    x, y = (np.asarray(v, float) for v in grid)
    js = list(range(1, int(j_max) + 1))
    if f_a == f_b:
        return 0.0
    ax, ay = f_a.orbit_block(x, y, js)
    bx, by = f_b.orbit_block(x, y, js)
    return float(np.max(annulus_distance(ax, ay, bx, by)))


def roundtrip_residual(chain: Chain, grid) -> float:
    """max distance between p and H(H^{-1}(p)): the floating-point floor of any f-comparison."""
    x, y = (np.asarray(v, float) for v in grid)
    bits = bits_for(chain.qs)
    xs = to_fixed(x, bits)
    px, py, _ = chain.apply_fixed(xs, y, bits, inverse=True)
    ox, oy, _ = chain.apply_fixed(px, py, bits)
    return float(np.max(annulus_distance(to_floats(ox, bits), oy, to_floats(xs, bits), y)))


def refined(f: ConjugatedRotation, factor: int = 2) -> ConjugatedRotation:
    """The same conjugated rotation with every k_i integrated ``factor`` times more finely."""
    maps = tuple(LiftedMap(replace(h.kmap, n_steps=h.kmap.n_steps * factor), h.q) for h in f.chain.maps)
    return ConjugatedRotation(Chain(maps), f.rotation)


def integrator_floor(f: ConjugatedRotation, grid, j_max: int = 8) -> float:
    """Distance between f^j and its step-doubled recomputation (GL error is O(h^4))."""
    return stage_distance(f, refined(f), j_max, grid)


def orbit_entry(f: ConjugatedRotation, a: float, starts: tuple[np.ndarray, np.ndarray],
                cap: int, batch: int = 16) -> dict:
    """Check that the f-orbit of each start meets |y| > a.

    With rotation p/q the orbit of a start is the set of H S_{k/q} H^{-1}(start),
    k = 0..q-1, and the point with index k is reached at iterate j = k p^{-1} mod q.
    Indices are scanned in a quasi-random order, at most ``cap`` of them.
    """
    x, y = starts
    p, q = f.rotation.numerator, f.rotation.denominator
    p_inv = pow(p, -1, q) if q > 1 else 0
    bits = f.bits
    xs = to_fixed(x, bits)
    px, py, _ = f.chain.apply_fixed(xs, np.asarray(y, float), bits, inverse=True)
    mask = (1 << bits) - 1
    pending = np.flatnonzero(np.abs(y) <= a)
    entered_at = np.zeros(len(xs), dtype=object)
    order = _quasi_random_order(q, min(q, cap))
    step = Fraction(1, q)
    pos = 0
    while pending.size and pos < len(order):
        ks = [int(k) for k in order[pos:pos + batch]]
        pos += len(ks)
        allx, ally = [], []
        for k in ks:
            s = math.floor(step * k * (1 << bits)) & mask
            allx.extend((px[i] + s) & mask for i in pending)
            ally.append(py[pending])
        _, oy, _ = f.chain.apply_fixed(allx, np.concatenate(ally), bits)
        inside = np.abs(oy.reshape(len(ks), pending.size)) > a
        hit = inside.any(axis=0)
        first = np.argmax(inside, axis=0)
        for i, kk in zip(pending[hit], first[hit]):
            entered_at[i] = (ks[kk] * p_inv) % q
        pending = pending[~hit]
    times = [int(v) for v in entered_at]
    return {"samples": len(xs), "not_entered": int(pending.size), "cap": int(cap),
            "indices_scanned": pos, "max_entry_iterate": str(max(times, default=0))}


# ---------------------------------------------------------------------------
# the full scheme
# ---------------------------------------------------------------------------

@dataclass
class SchemeOptions:
    verify_points: int = 200
    orbit_samples: int = 200
    orbit_cap: int = GRID_CAP
    distance_points: int = 16
    distance_j_max: int = 128
    rotation_steps: int = 2000
    safety: float = 1e3
    max_depth: int = 64
    band_method: str = "auto"
    grid_cap: int = GRID_CAP
    seed: int = 0


@dataclass
class SchemeReport:
    alpha_spec: str
    mode: str
    n_stages: int
    bands: list
    stages: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    infeasible: Optional[dict] = None
    flags: list = field(default_factory=list)
    maps: list = field(default_factory=list, repr=False)  # f_1, f_2, ... (not serialized)

    @property
    def feasible(self) -> bool:
        return self.infeasible is None

    def as_dict(self) -> dict:
        return {"alpha_spec": self.alpha_spec, "mode": self.mode, "n_stages": self.n_stages,
                "bands": self.bands, "stages": self.stages, "distances": self.distances,
                "feasible": self.feasible, "infeasible": self.infeasible, "flags": self.flags}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)


def first_alpha(alpha: RotationNumber) -> Rational:
    """alpha_1: the first convergent with denominator >= 2."""
    for r in alpha.convergents:
        if r.q >= 2:
            return r
    raise NicisError("alpha has no convergent with q >= 2 at this depth")


def _fraction_str(v: Fraction) -> str:
    return f"{v.numerator}/{v.denominator}"


def run_scheme(alpha: RotationNumber, n_stages: int, bands: Optional[BandSchedule] = None,
               mode: str = "c0", options: Optional[SchemeOptions] = None,
               stage_cap: int = 4) -> SchemeReport:
    """Run ``n_stages`` stages; each stage n builds h_n and picks alpha_{n+1}."""
    if n_stages < 0 or n_stages > stage_cap:
        raise ValueError(f"n_stages must lie in [0, {stage_cap}]")
    opt = options or SchemeOptions()
    bands = bands or BandSchedule()
    bands.check(max(n_stages + 1, 1))
    report = SchemeReport(alpha.spec.label, mode, n_stages, bands.as_list(max(n_stages, 1)))
    if mode.lower() == "cinf":
        report.flags.append("surrogate-constant")
    a1 = first_alpha(alpha)
    if n_stages == 0:
        est = rotation_number_estimate(RigidRotation(float(a1)), (0.0, 0.0), opt.rotation_steps)
        report.stages.append({"n": 0, "alpha_next": str(a1), "q_next": str(a1.q),
                              "rotation_estimate": est.value, "rotation_error_bar": est.error_bar})
        return report

    km = build_kmap(bands.stage(1), verify_points=opt.verify_points, seed=opt.seed)
    C = km.lipschitz()
    chain = Chain()
    alpha_n = a1
    Q = 1
    rng = np.random.default_rng(opt.seed)
    for n in range(1, n_stages + 1):
        b_n = bands.stage(n)
        km_next = build_kmap(bands.stage(n + 1), verify_points=opt.verify_points, seed=opt.seed)
        C_next = C * km_next.lipschitz()
        h = lift_to_cover(km, alpha_n.q)
        chain = chain.then(h)
        Q *= alpha_n.q
        stage = StageState(n, alpha_n, b_n, km, h, chain, km.lipschitz(), C, C_next,
                           bands.eps(n), Q)
        choice = choose_next_alpha(stage, alpha, mode, max_depth=opt.max_depth, safety=opt.safety,
                                   band_method=opt.band_method, grid_cap=opt.grid_cap,
                                   samples=opt.orbit_samples, seed=opt.seed)
        entry = {"n": n, "alpha_n": str(alpha_n), "q_n": str(alpha_n.q), "bands": b_n.as_dict(),
                 "eps_n": _fraction_str(stage.eps), "eps_n_float": float(stage.eps),
                 "L_k": stage.L_k, "C_n": C, "C_next": C_next, "lipschitz_H_bound": stage.lipschitz_H,
                 "kmap_checks": dict(km.checks), "kmap_steps": km.n_steps}
        if isinstance(choice, Infeasible):
            report.infeasible = {"stage": n, "binding": choice.binding, "candidates": choice.candidates,
                                 "failures": choice.failures}
            entry["infeasible"] = report.infeasible
            report.stages.append(entry)
            break
        a_next = choice.rational
        f = ConjugatedRotation(chain, a_next.fraction)
        report.maps.append(f)
        entry.update({"alpha_next": str(a_next), "q_next": str(a_next.q),
                      "certificate": {"kind": choice.certificate.kind, **_jsonable(choice.certificate.detail)},
                      "checks": {k: bool(v) for k, v in choice.checks.items()},
                      "flags": list(choice.flags)})
        # sampled orbits of f_n must enter U_n = {|y| > a_n}
        a_f = float(b_n.a)
        starts = (rng.random(opt.orbit_samples), rng.uniform(-a_f, a_f, opt.orbit_samples))
        cap = min(a_next.q, opt.orbit_cap)
        ent = orbit_entry(f, a_f, starts, cap)
        ent["certified_by"] = "orbit" if ent["not_entered"] == 0 else (
            "lipschitz" if choice.certificate.kind == "LipschitzCriterion" else "none")
        entry["orbit_entry"] = ent
        est = rotation_number_estimate(f, f.start(0.37, 0.1), opt.rotation_steps)
        entry["rotation_estimate"] = est.value
        entry["rotation_error_bar"] = est.error_bar
        entry["rotation_target"] = float(a_next)
        entry["rotation_steps"] = opt.rotation_steps
        report.stages.append(entry)
        km = km_next
        C = C_next
        alpha_n = a_next

    grid = (rng.random(opt.distance_points), rng.uniform(-1.0, 1.0, opt.distance_points))
    for i in range(len(report.maps) - 1):
        n = i + 1
        f_n, f_next = report.maps[i], report.maps[i + 1]
        j_max = min(int(Fraction(f_n.rotation).denominator), opt.distance_j_max, 10 ** 4)
        dist = stage_distance(f_next, f_n, j_max, grid)
        st = report.stages[i]
        st_next = report.stages[i + 1]
        err = error_bounds(alpha, f_n.rotation)[1]
        row = _distance_entry(n, dist, bands.eps(n), st, st_next, err, j_max)
        row["noise_floor"] = integrator_floor(f_next, grid, j_max) + integrator_floor(f_n, grid, j_max)
        row["within_bound"] = dist <= row["lipschitz_bound"] + NOISE_FACTOR * row["noise_floor"]
        row["within_product_bound"] = dist <= row["product_bound"] + NOISE_FACTOR * row["noise_floor"]
        report.distances.append(row)
    return report


def _distance_entry(n, dist, eps, st, st_next, err, j_max) -> dict:
    q_n1 = int(st["q_next"])
    return {"n": n, "distance": dist, "eps_n": float(eps), "below_eps": dist < float(eps),
            "j_max": j_max,
            "product_bound": float(Fraction(st["C_n"]) * _qprod(st) * q_n1 ** 2 * 2 * err),
            "lipschitz_bound": float(Fraction(st_next["C_n"]) * _qprod(st) * q_n1 * j_max * 2 * err)}


def _qprod(st) -> int:
    return int(round(Fraction(st["lipschitz_H_bound"]) / Fraction(st["C_n"])))


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        out[k] = v
    return out


def polygon_area(x, y) -> float:
    """Shoelace area of a closed polygon (vertices in order)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def quad_area_ratio(fn: Callable, x0: float, y0: float, side: float, per_edge: int = 1000) -> float:
    """area(fn(Q)) / area(Q) for the square Q with corner (x0, y0), boundary sampled densely."""
    t = np.arange(per_edge) / per_edge * side
    bx = np.concatenate([x0 + t, np.full(per_edge, x0 + side), x0 + side - t, np.full(per_edge, x0)])
    by = np.concatenate([np.full(per_edge, y0), y0 + t, np.full(per_edge, y0 + side), y0 + side - t])
    ox, oy = fn(bx % 1.0, by)
    ox = ox[0] + np.cumsum(np.concatenate([[0.0], (np.diff(ox) + 0.5) % 1.0 - 0.5]))  # unwrap
    return polygon_area(ox, oy) / polygon_area(bx, by)
