"""The Anzai skew product F(x, y) = (x + alpha, y + phi(x)) and its transfer function.

phi is the real-form series

    phi(x) = sum_n (2/n) [sin 2 pi q_n (x + alpha) - sin 2 pi q_n x]

and h(x) = sum_n (2/n) sin 2 pi q_n x solves h(x + alpha) - h(x) = phi(x)
term by term.  The two are evaluated along independent routes: h as a sum
of sines, phi in the product form (4/n) sin(pi q_n alpha) cos(2 pi q_n x + pi q_n alpha).
All products q_n * x are reduced mod 1 in 128-bit fixed point first.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import mpmath
import numpy as np
from numba import njit

from nicis import fixedpoint as fp
from nicis.number_theory import (
    RotationNumber,
    cf_expand,
    parse_alpha,
    rotation_number,
    select_phi_denominators,
)

TWO_PI = 2.0 * math.pi
MACHINE_TOL = 1e-16
_U0 = np.uint64(0)


def _centered_fraction(v: Fraction) -> Fraction:
    v = v - math.floor(v)
    return v - 1 if v >= Fraction(1, 2) else v


@dataclass(frozen=True)
class PhiSeries:
    """Truncated phi: denominators q_n and coefficients 2/n."""

    alpha: RotationNumber
    qs: tuple[int, ...]
    coeffs: tuple[float, ...]
    # per-term kernel constants, derived in __post_init__
    freq_hi: np.ndarray = field(init=False, repr=False, compare=False)
    freq_lo: np.ndarray = field(init=False, repr=False, compare=False)
    shift_hi: np.ndarray = field(init=False, repr=False, compare=False)
    shift_lo: np.ndarray = field(init=False, repr=False, compare=False)
    amp: np.ndarray = field(init=False, repr=False, compare=False)
    rot: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.qs)
        if len(self.coeffs) != n:
            raise ValueError("qs and coeffs differ in length")
        freq = [fp.split(q) for q in self.qs]
        shifts, amps, rots = [], [], []
        bits = max(self.alpha.bits, max((q.bit_length() for q in self.qs), default=0) + 192)
        lo, hi = self.alpha.spec.enclose(bits)
        a_mid = Fraction(lo + hi, 2 << bits)
        with mpmath.workdps(40):
            for q, c in zip(self.qs, self.coeffs):
                qa = q * a_mid
                half = qa / 2
                shifts.append(fp.split(round((half - math.floor(half)) * fp.ONE)))
                # sin(pi q alpha) from the representative of q alpha/2 in [-1/2, 1/2)
                # keeps full relative precision when ||q alpha|| is tiny
                r = _centered_fraction(half)
                amps.append(2.0 * c * float(mpmath.sin(2 * mpmath.pi * mpmath.mpf(r.numerator) / r.denominator)))
                t = _centered_fraction(qa)
                theta = TWO_PI * float(mpmath.mpf(t.numerator) / t.denominator)
                rots.append(complex(math.cos(theta), math.sin(theta)))
        object.__setattr__(self, "freq_hi", np.array([f[0] for f in freq], dtype=np.uint64))
        object.__setattr__(self, "freq_lo", np.array([f[1] for f in freq], dtype=np.uint64))
        object.__setattr__(self, "shift_hi", np.array([s[0] for s in shifts], dtype=np.uint64))
        object.__setattr__(self, "shift_lo", np.array([s[1] for s in shifts], dtype=np.uint64))
        object.__setattr__(self, "amp", np.array(amps, dtype=np.float64))
        object.__setattr__(self, "rot", np.array(rots, dtype=np.complex128).reshape(n))

    @property
    def n_terms(self) -> int:
        return len(self.qs)

    @property
    def hcoef(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=np.float64)

    def term_bounds(self) -> np.ndarray:
        """4 pi / (n q_n): the a-priori sup bound of each term."""
        return np.array([4 * math.pi / (n * q) for n, q in enumerate(self.qs, start=1)])

    def truncated(self, n_terms: int) -> "PhiSeries":
        return PhiSeries(self.alpha, self.qs[:n_terms], self.coeffs[:n_terms])

    def transfer(self) -> "TransferFunction":
        return TransferFunction(self)

    def to_json(self) -> str:
        return json.dumps({"alpha_spec": self.alpha.spec.label,
                           "qs": [str(q) for q in self.qs],
                           "n_terms": self.n_terms}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PhiSeries":
        d = json.loads(text)
        qs = tuple(int(q) for q in d["qs"])
        if len(qs) != int(d["n_terms"]):
            raise ValueError("n_terms does not match qs")
        alpha = rotation_number(parse_alpha(d["alpha_spec"]))
        return cls(alpha, qs, tuple(2.0 / n for n in range(1, len(qs) + 1)))

    @classmethod
    def zero(cls, alpha: RotationNumber) -> "PhiSeries":
        """phi identically 0 (no terms)."""
        return cls(alpha, (), ())


@dataclass(frozen=True)
class TransferFunction:
    """h(x) = sum_n (2/n) sin 2 pi q_n x, truncated at the same N as its phi."""

    phi: PhiSeries

    @property
    def qs(self) -> tuple[int, ...]:
        return self.phi.qs

    @property
    def coeffs(self) -> tuple[float, ...]:
        return self.phi.coeffs


def machine_precision_terms(alpha: RotationNumber, tol: float = MACHINE_TOL, max_terms: int = 64) -> int:
    """Number of terms kept before the bound 4 pi/(n q_n) drops under ``tol``."""
    qs = select_phi_denominators(alpha, max_terms)
    for n, q in enumerate(qs, start=1):
        if 4 * math.pi / (n * q) < tol:
            return n - 1
    return max_terms


def build_phi(alpha: RotationNumber, n_terms: Optional[int] = None) -> PhiSeries:
    """phi with ``n_terms`` terms; None means truncation at machine precision."""
    if n_terms is None:
        n_terms = machine_precision_terms(alpha)
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1 (use PhiSeries.zero for phi = 0)")
    qs = select_phi_denominators(alpha, n_terms)
    need = 2 * qs[-1].bit_length() + 64
    if alpha.bits < need:
        alpha = cf_expand(alpha.spec, alpha.depth, min_bits=need)
    return PhiSeries(alpha, tuple(qs), tuple(2.0 / n for n in range(1, n_terms + 1)))


# ---------------------------------------------------------------------------
# pointwise kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _phi_kernel(xh, xl, qh, ql, ch, cl, amp):
    out = np.empty(xh.size)
    for i in range(xh.size):
        s = 0.0
        for n in range(qh.size):
            ph, pl = fp.mul(qh[n], ql[n], xh[i], xl[i])
            ph, pl = fp.add(ph, pl, ch[n], cl[n])
            s += amp[n] * math.cos(TWO_PI * fp.centered(ph, pl))
        out[i] = s
    return out


@njit(cache=True)
def _h_kernel(xh, xl, qh, ql, coef):
    out = np.empty(xh.size)
    for i in range(xh.size):
        s = 0.0
        for n in range(qh.size):
            ph, pl = fp.mul(qh[n], ql[n], xh[i], xl[i])
            s += coef[n] * math.sin(TWO_PI * fp.centered(ph, pl))
        out[i] = s
    return out


@njit(cache=True)
def _shift_points(xh, xl, ah, al, m):
    """x + m alpha for every x (m may be negative)."""
    mh = _U0
    ml = np.uint64(abs(m))
    sh, sl = fp.mul(mh, ml, ah, al)
    if m < 0:
        sh, sl = fp.neg(sh, sl)
    oh = np.empty_like(xh)
    ol = np.empty_like(xl)
    for i in range(xh.size):
        oh[i], ol[i] = fp.add(xh[i], xl[i], sh, sl)
    return oh, ol


def _as_words(x) -> tuple[np.ndarray, np.ndarray]:
    """Accept floats, a fixed-point int, a list of ints, or an (hi, lo) pair of arrays."""
    if isinstance(x, tuple) and len(x) == 2 and isinstance(x[0], np.ndarray):
        return x
    if isinstance(x, int):
        return fp.arrays_from_ints([x])
    arr = np.asarray(x)
    if arr.dtype == object:
        return fp.arrays_from_ints(arr.ravel().tolist())
    return fp.arrays_from_floats(np.atleast_1d(arr).ravel())


def _maybe_scalar(x, out: np.ndarray):
    if isinstance(x, (float, int)) or (np.ndim(x) == 0 and not isinstance(x, tuple)):
        return float(out[0])
    return out


def eval_phi(phi: PhiSeries, x):
    """phi at x (float, array of floats, fixed-point int(s), or (hi, lo) word arrays)."""
    xh, xl = _as_words(x)
    out = _phi_kernel(xh, xl, phi.freq_hi, phi.freq_lo, phi.shift_hi, phi.shift_lo, phi.amp)
    return _maybe_scalar(x, out)


def eval_h(transfer: TransferFunction | PhiSeries, x, n_terms: Optional[int] = None):
    """h_N at x; N defaults to the truncation of the underlying phi."""
    phi = transfer.phi if isinstance(transfer, TransferFunction) else transfer
    n = phi.n_terms if n_terms is None else n_terms
    xh, xl = _as_words(x)
    out = _h_kernel(xh, xl, phi.freq_hi[:n], phi.freq_lo[:n], phi.hcoef[:n])
    return _maybe_scalar(x, out)


def shift(alpha: RotationNumber, x, m: int):
    """Fixed-point x + m alpha as word arrays."""
    xh, xl = _as_words(x)
    ah, al = alpha.words
    return _shift_points(xh, xl, ah, al, int(m))


# ---------------------------------------------------------------------------
# Birkhoff sums
# ---------------------------------------------------------------------------

@njit(cache=True)
def _birkhoff_direct_kernel(xh, xl, ah, al, m, qh, ql, ch, cl, amp, wr, wi, resync):
    """Compensated sum_{i<m} phi(x + i alpha) for each x.

    phi(x_i) = sum_n amp_n Re z_n(i) with z_n(i) = exp(2 pi i (q_n x_i + c_n)),
    advanced by z_n(i+1) = z_n(i) * exp(2 pi i q_n alpha) and recomputed
    from the exact fixed-point x_i every ``resync`` steps.
    """
    k_count = xh.size
    n_count = qh.size
    total = np.zeros(k_count)
    comp = np.zeros(k_count)
    vals = np.empty(k_count)
    zr = np.empty((n_count, k_count))
    zi = np.empty((n_count, k_count))
    start = 0
    while start < m:
        bh, bl = fp.mul(_U0, np.uint64(start), ah, al)
        for k in range(k_count):
            px, pl = fp.add(xh[k], xl[k], bh, bl)
            for n in range(n_count):
                th, tl = fp.mul(qh[n], ql[n], px, pl)
                th, tl = fp.add(th, tl, ch[n], cl[n])
                ang = TWO_PI * fp.centered(th, tl)
                zr[n, k] = math.cos(ang)
                zi[n, k] = math.sin(ang)
        stop = min(m, start + resync)
        for _ in range(start, stop):
            for k in range(k_count):
                vals[k] = 0.0
            for n in range(n_count):
                a = amp[n]
                c = wr[n]
                s = wi[n]
                for k in range(k_count):
                    r = zr[n, k]
                    im = zi[n, k]
                    vals[k] += a * r
                    zr[n, k] = r * c - im * s
                    zi[n, k] = r * s + im * c
            for k in range(k_count):
                y = vals[k] - comp[k]
                t = total[k] + y
                comp[k] = (t - total[k]) - y
                total[k] = t
        start = stop
    return total


def birkhoff_sum_direct(phi: PhiSeries, x, m: int, *, resync: int = 64):
    """phi_m(x) = sum_{i<m} phi(x + i alpha) by compensated direct summation (m >= 0)."""
    if m < 0:
        raise ValueError("direct summation needs m >= 0")
    xh, xl = _as_words(x)
    ah, al = phi.alpha.words
    if m == 0 or phi.n_terms == 0:
        return _maybe_scalar(x, np.zeros(xh.size))
    out = _birkhoff_direct_kernel(xh, xl, ah, al, int(m), phi.freq_hi, phi.freq_lo,
                                  phi.shift_hi, phi.shift_lo, phi.amp,
                                  phi.rot.real.copy(), phi.rot.imag.copy(), int(resync))
    return _maybe_scalar(x, out)


def birkhoff_sum_closed(phi: PhiSeries, x, m: int):
    """phi_m(x) = h_N(x + m alpha) - h_N(x); O(N) per point for any m (negative m allowed)."""
    xh, xl = _as_words(x)
    sh, sl = shift(phi.alpha, (xh, xl), m)
    coef = phi.hcoef
    out = (_h_kernel(sh, sl, phi.freq_hi, phi.freq_lo, coef)
           - _h_kernel(xh, xl, phi.freq_hi, phi.freq_lo, coef))
    return _maybe_scalar(x, out)


# ---------------------------------------------------------------------------
# the map
# ---------------------------------------------------------------------------

Point = tuple[int, float]  # (fixed-point x, y)


@dataclass(frozen=True)
class OrbitTrace:
    """Sampled orbit of F: recorded steps, positions and vertical displacements."""

    x0: int
    y0: float
    steps: np.ndarray  # recorded m (signed)
    x_hi: np.ndarray
    x_lo: np.ndarray
    displacement: np.ndarray  # y_m - y_0
    y_min: float  # running extrema of y_m over every step
    y_max: float
    m_max: int

    @property
    def positions(self) -> list[int]:
        return fp.ints_from_arrays(self.x_hi, self.x_lo)

    def end(self) -> Point:
        return fp.join(self.x_hi[-1], self.x_lo[-1]), self.y0 + float(self.displacement[-1])

    def to_csv(self, stream: io.TextIOBase | None = None, digits: int = 40) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["m", "x_m", "y_m_minus_y0"])
        for m, x, d in zip(self.steps.tolist(), self.positions, self.displacement.tolist()):
            w.writerow([m, fp.to_decimal(x, digits), repr(d)])
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text


@njit(cache=True)
def _iterate_kernel(x0h, x0l, ah, al, m, stride, qh, ql, ch, cl, amp):
    """Orbit of (x0, 0) for |m| steps forward (m > 0) or backward (m < 0)."""
    steps = abs(m)
    n_rec = steps // stride + 1
    if steps % stride != 0:
        n_rec += 1
    rec_m = np.empty(n_rec, dtype=np.int64)
    rec_h = np.empty(n_rec, dtype=np.uint64)
    rec_l = np.empty(n_rec, dtype=np.uint64)
    rec_d = np.empty(n_rec)
    sign = 1 if m >= 0 else -1
    total = 0.0
    comp = 0.0
    ymin = 0.0
    ymax = 0.0
    rec_m[0] = 0
    rec_h[0] = x0h
    rec_l[0] = x0l
    rec_d[0] = 0.0
    r = 1
    nah, nal = fp.neg(ah, al)
    xh = x0h
    xl = x0l
    for i in range(1, steps + 1):
        if sign > 0:
            # (x, y) -> (x + alpha, y + phi(x))
            px, pl = xh, xl
            xh, xl = fp.add(xh, xl, ah, al)
        else:
            # (x, y) -> (x - alpha, y - phi(x - alpha))
            xh, xl = fp.add(xh, xl, nah, nal)
            px, pl = xh, xl
        v = 0.0
        for n in range(qh.size):
            th, tl = fp.mul(qh[n], ql[n], px, pl)
            th, tl = fp.add(th, tl, ch[n], cl[n])
            v += amp[n] * math.cos(TWO_PI * fp.centered(th, tl))
        y = sign * v - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if total < ymin:
            ymin = total
        if total > ymax:
            ymax = total
        if i % stride == 0 or i == steps:
            rec_m[r] = sign * i
            rec_h[r] = xh
            rec_l[r] = xl
            rec_d[r] = total
            r += 1
    return rec_m[:r], rec_h[:r], rec_l[:r], rec_d[:r], ymin, ymax


@dataclass(frozen=True)
class SkewProduct:
    """F(x, y) = (x + alpha, y + phi(x)) on S^1 x R."""

    alpha: RotationNumber
    phi: PhiSeries

    @classmethod
    def from_phi(cls, phi: PhiSeries) -> "SkewProduct":
        return cls(phi.alpha, phi)

    def apply(self, p: Point) -> Point:
        x, y = p
        return (x + self.alpha.fixed128) % fp.ONE, y + eval_phi(self.phi, x)

    def apply_inverse(self, p: Point) -> Point:
        x, y = p
        xp = (x - self.alpha.fixed128) % fp.ONE
        return xp, y - eval_phi(self.phi, xp)

    def iterate(self, p: Point, m: int, record_stride: int = 1) -> OrbitTrace:
        """m steps from p (m < 0 uses the inverse map); x_m is x_0 + m alpha in fixed point."""
        x0, y0 = p
        h, l = fp.split(x0)
        ah, al = self.alpha.words
        phi = self.phi
        rm, rh, rl, rd, ymin, ymax = _iterate_kernel(
            np.uint64(h), np.uint64(l), ah, al, int(m), max(1, int(record_stride)),
            phi.freq_hi, phi.freq_lo, phi.shift_hi, phi.shift_lo, phi.amp)
        return OrbitTrace(x0 % fp.ONE, float(y0), rm, rh, rl, rd,
                          float(y0 + ymin), float(y0 + ymax), abs(int(m)))

    # rotation-number interface: lift displacement of one step
    def step(self, state: Point) -> tuple[Point, float]:
        return self.apply(state), fp.to_float(self.alpha.fixed128)

    def displacements(self, start: Point, m: int) -> np.ndarray:
        # the base coordinate advances by alpha at every step, whatever y is
        return np.full(m, fp.to_float(self.alpha.fixed128))


def apply(F: SkewProduct, p: Point) -> Point:
    return F.apply(p)


def iterate(F: SkewProduct, p: Point, m: int, record_stride: int = 1) -> OrbitTrace:
    return F.iterate(p, m, record_stride)


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------

@njit(cache=True)
def _involution_kernel(xh, xl, ys, ah, al, m, qh, ql, ch, cl, amp):
    """max over starts and k <= m of |J F J F (p_k) - p_k| along p_k = F^k(p_0)."""
    worst = 0.0
    nah, nal = fp.neg(ah, al)
    for s in range(xh.size):
        ph = xh[s]
        pl = xl[s]
        y = ys[s]
        for _ in range(m + 1):
            # F(p)
            v = 0.0
            for n in range(qh.size):
                th, tl = fp.mul(qh[n], ql[n], ph, pl)
                th, tl = fp.add(th, tl, ch[n], cl[n])
                v += amp[n] * math.cos(TWO_PI * fp.centered(th, tl))
            fh, fl = fp.add(ph, pl, ah, al)
            fy = y + v
            # J
            jh, jl = fp.neg(fh, fl)
            jy = -fy
            # F
            v2 = 0.0
            for n in range(qh.size):
                th, tl = fp.mul(qh[n], ql[n], jh, jl)
                th, tl = fp.add(th, tl, ch[n], cl[n])
                v2 += amp[n] * math.cos(TWO_PI * fp.centered(th, tl))
            gh, gl = fp.add(jh, jl, ah, al)
            gy = jy + v2
            # J
            rh, rl = fp.neg(gh, gl)
            ry = -gy
            nh, nl = fp.neg(ph, pl)
            dh, dl = fp.add(rh, rl, nh, nl)
            d = max(fp.circle_dist(dh, dl), abs(ry - y))
            if d > worst:
                worst = d
            ph, pl = fh, fl
            y = fy
    return worst


def involution_residual(F: SkewProduct, sample_count: int, m: int, *, seed: int = 0,
                        y_range: float = 1.0) -> float:
    """Largest distance between J F J F (p) and p over sampled orbit points, J(x, y) = (-x, -y)."""
    rng = np.random.default_rng(seed)
    xh, xl = fp.random_points(rng, sample_count)
    ys = rng.uniform(-y_range, y_range, sample_count)
    ah, al = F.alpha.words
    phi = F.phi
    return float(_involution_kernel(xh, xl, ys, ah, al, int(m), phi.freq_hi, phi.freq_lo,
                                    phi.shift_hi, phi.shift_lo, phi.amp))


def symmetry_residual(phi: PhiSeries, x) -> float:
    """max |phi(-x - alpha) - phi(x)| over the given points."""
    xh, xl = _as_words(x)
    ints = fp.ints_from_arrays(xh, xl)
    a = phi.alpha.fixed128
    mirrored = [(-v - a) % fp.ONE for v in ints]
    return float(np.max(np.abs(eval_phi(phi, (xh, xl)) - eval_phi(phi, fp.arrays_from_ints(mirrored)))))


def coboundary_residual(phi: PhiSeries, x) -> float:
    """max |h(x + alpha) - h(x) - phi(x)| over the given points."""
    xh, xl = _as_words(x)
    return float(np.max(np.abs(birkhoff_sum_closed(phi, (xh, xl), 1) - eval_phi(phi, (xh, xl)))))


@njit(cache=True)
def _grid_mean_kernel(step_h, step_l, count, qh, ql, ch, cl, amp):
    total = 0.0
    comp = 0.0
    xh = _U0
    xl = _U0
    for _ in range(count):
        v = 0.0
        for n in range(qh.size):
            th, tl = fp.mul(qh[n], ql[n], xh, xl)
            th, tl = fp.add(th, tl, ch[n], cl[n])
            v += amp[n] * math.cos(TWO_PI * fp.centered(th, tl))
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
        xh, xl = fp.add(xh, xl, step_h, step_l)
    return total / count


def mean_residual(phi: PhiSeries, points: Optional[int] = None, *, max_points: int = 1 << 24) -> float:
    """|periodic trapezoid rule for the integral of phi over S^1|.

    The default grid has 2 * q_N * 16 points (capped at ``max_points``).
    """
    if phi.n_terms == 0:
        return 0.0
    if points is None:
        points = min(2 * phi.qs[-1] * 16, max_points)
    sh, sl = fp.split(fp.ONE // points)
    return abs(float(_grid_mean_kernel(np.uint64(sh), np.uint64(sl), int(points), phi.freq_hi,
                                       phi.freq_lo, phi.shift_hi, phi.shift_lo, phi.amp)))


@njit(cache=True)
def _grid_abs_derivative(step_h, step_l, count, qh, ql, ch, cl, damp):
    """Mean of |phi'| over an equispaced grid."""
    total = 0.0
    comp = 0.0
    xh = _U0
    xl = _U0
    for _ in range(count):
        v = 0.0
        for n in range(qh.size):
            th, tl = fp.mul(qh[n], ql[n], xh, xl)
            th, tl = fp.add(th, tl, ch[n], cl[n])
            v -= damp[n] * math.sin(TWO_PI * fp.centered(th, tl))
        y = abs(v) - comp
        t = total + y
        comp = (t - total) - y
        total = t
        xh, xl = fp.add(xh, xl, step_h, step_l)
    return total / count


def variation(phi: PhiSeries, points: Optional[int] = None, *, max_points: int = 1 << 25) -> float:
    """Total variation of phi_N, i.e. the integral of |phi'| over one period, by quadrature.

    The default grid has 32 points per period of the fastest term; when that
    exceeds ``max_points`` the termwise bound sum_n 4 q_n |amp_n| is returned instead.
    """
    if phi.n_terms == 0:
        return 0.0
    if points is None:
        points = 32 * phi.qs[-1]
        if points > max_points:
            return float(sum(4 * q * abs(a) for q, a in zip(phi.qs, phi.amp)))
    damp = phi.amp * TWO_PI * np.array([float(q) for q in phi.qs])
    sh, sl = fp.split(fp.ONE // points)
    return float(_grid_abs_derivative(np.uint64(sh), np.uint64(sl), int(points), phi.freq_hi,
                                      phi.freq_lo, phi.shift_hi, phi.shift_lo, damp))


def series_variation_bound(n_terms: int) -> float:
    """4 sqrt(2) pi^2 sum_{n<=N} 1/n^2, the L^2 bound on the integral of |phi'|."""
    return 4 * math.sqrt(2) * math.pi ** 2 * sum(1.0 / n ** 2 for n in range(1, n_terms + 1))


def eval_phi_complex(phi: PhiSeries, x: Sequence[float]) -> np.ndarray:
    """phi from the complex exponential form, in mpmath at 40 digits (test oracle)."""
    out = []
    with mpmath.workdps(40):
        lo, hi = phi.alpha.interval()
        a = mpmath.mpf((lo + hi).numerator) / (lo + hi).denominator / 2
        for xv in np.atleast_1d(x):
            xm = mpmath.mpf(float(xv))
            s = mpmath.mpc(0)
            for n, q in enumerate(phi.qs, start=1):
                e1 = mpmath.expjpi(2 * q * a) - 1
                e2 = mpmath.expjpi(-2 * q * a) - 1
                s += (e1 * mpmath.expjpi(2 * q * xm) - e2 * mpmath.expjpi(-2 * q * xm)) / (n * 1j)
            out.append(float(s.real))
    return np.array(out)


def phase_perturbed(phi: PhiSeries, index: int, turns: float) -> PhiSeries:
    """Copy of phi with the phase of one term moved by ``turns``.

    Changing q_n alone keeps every term symmetric; moving a phase does not, so
    this is the negative control for the symmetry and involution checks.
    """
    out = PhiSeries(phi.alpha, phi.qs, phi.coeffs)
    sh, sl = out.shift_hi.copy(), out.shift_lo.copy()
    v = (fp.join(int(sh[index]), int(sl[index])) + round(turns * fp.ONE)) % fp.ONE
    sh[index], sl[index] = (np.uint64(w) for w in fp.split(v))
    object.__setattr__(out, "shift_hi", sh)
    object.__setattr__(out, "shift_lo", sl)
    return out
