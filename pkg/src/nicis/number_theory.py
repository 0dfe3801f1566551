"""Continued fractions and Diophantine bookkeeping for an irrational rotation number.

Every alpha comes from an :class:`AlphaSpec` that can enclose the true value
in a dyadic interval of any requested width (or of a fixed width for decimal
input).  Partial quotients are only emitted when both ends of that interval
agree on them, so a quotient in a :class:`RotationNumber` is certified.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd, isqrt
from typing import Iterable, Optional, Sequence

import mpmath
import numpy as np
from numba import njit

from nicis import fixedpoint as fp
from nicis.errors import ConfigError, HorizonExceeded, InsufficientPrecision

MIN_BITS = 128
MAX_BITS = 1 << 17


# ---------------------------------------------------------------------------
# alpha specifications
# ---------------------------------------------------------------------------

class AlphaSpec:
    """Source of certified dyadic enclosures of an irrational in (0, 1)."""

    label: str = ""
    exact: bool = True  # False when only a fixed number of digits is known

    def enclose(self, bits: int) -> tuple[int, int]:
        """Return (lo, hi) with lo <= alpha * 2**bits <= hi."""
        raise NotImplementedError

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class QuadraticSurd(AlphaSpec):
    """(a + b*sqrt(d)) / c with d a positive non-square."""

    a: int
    b: int
    d: int
    c: int

    def __post_init__(self):
        if self.d <= 0 or isqrt(self.d) ** 2 == self.d:
            raise ConfigError(f"surd radicand must be a positive non-square, got {self.d}")
        if self.b == 0 or self.c == 0:
            raise ConfigError("surd needs b != 0 and c != 0")
        lo, hi = self.enclose(64)
        if not (0 < lo and hi < 1 << 64):
            raise ConfigError(f"surd {self.label} does not lie in (0, 1)")

    @property
    def label(self) -> str:  # type: ignore[override]
        return f"surd:{self.a},{self.b},{self.d},{self.c}"

    def enclose(self, bits: int) -> tuple[int, int]:
        # floor and ceil of |b| sqrt(d) 2**bits
        r = isqrt(self.b * self.b * self.d << (2 * bits))
        s_lo, s_hi = (r, r + 1) if self.b > 0 else (-r - 1, -r)
        n_lo = (self.a << bits) + s_lo
        n_hi = (self.a << bits) + s_hi
        if self.c < 0:
            n_lo, n_hi = -n_hi, -n_lo
        c = abs(self.c)
        return n_lo // c, -((-n_hi) // c)


@dataclass(frozen=True)
class FactorialSeries(AlphaSpec):
    """The Liouville-type number sum_{k>=1} base**(-k!)."""

    base: int = 10

    def __post_init__(self):
        if self.base < 2:
            raise ConfigError("factorial series base must be >= 2")

    @property
    def label(self) -> str:  # type: ignore[override]
        return f"series:factorial{self.base}"

    def partial_sum(self, terms: int) -> Fraction:
        return sum((Fraction(1, self.base ** math.factorial(k)) for k in range(1, terms + 1)),
                   Fraction(0))

    def enclose(self, bits: int) -> tuple[int, int]:
        # keep terms until the next one is below 2**-(bits+2); the tail is
        # then < 2 * base**-(K+1)! <= 2**-bits
        k = 1
        log2b = math.log2(self.base)
        while math.factorial(k + 1) * log2b <= bits + 2:
            k += 1
        s = self.partial_sum(k)
        lo = (s.numerator << bits) // s.denominator
        return lo, lo + 2


@dataclass(frozen=True)
class DecimalAlpha(AlphaSpec):
    """A decimal string, read as the true value rounded to the digits given."""

    text: str
    exact = False  # type: ignore[assignment]

    def __post_init__(self):
        if not re.fullmatch(r"0\.\d+", self.text):
            raise ConfigError(f"decimal alpha must look like 0.ddd..., got {self.text!r}")

    @property
    def label(self) -> str:  # type: ignore[override]
        return self.text

    @property
    def digits(self) -> int:
        return len(self.text) - 2

    def enclose(self, bits: int) -> tuple[int, int]:
        v = Fraction(self.text)
        half_ulp = Fraction(1, 2 * 10 ** self.digits)
        lo, hi = v - half_ulp, v + half_ulp
        return (lo.numerator << bits) // lo.denominator, -((-hi.numerator << bits) // hi.denominator)


GOLDEN = QuadraticSurd(-1, 1, 5, 2)
SILVER = QuadraticSurd(-1, 1, 2, 1)
LIOUVILLE = FactorialSeries(10)

_NAMED = {
    "golden": GOLDEN,
    "sqrt2": SILVER,
    "silver": SILVER,
    "liouville": LIOUVILLE,
}


def parse_alpha(text: str) -> AlphaSpec:
    """Parse an alpha specification string.

    Accepted forms: ``golden``, ``sqrt2``, ``liouville``,
    ``surd:a,b,d,c`` for (a + b sqrt d)/c, ``series:factorialB`` for
    sum_k B**(-k!), or a decimal string ``0.ddd...``.
    """
    text = text.strip()
    if text in _NAMED:
        return _NAMED[text]
    m = re.fullmatch(r"surd:(-?\d+),(-?\d+),(\d+),(-?\d+)", text)
    if m:
        return QuadraticSurd(*(int(g) for g in m.groups()))
    m = re.fullmatch(r"series:factorial(\d+)", text)
    if m:
        return FactorialSeries(int(m.group(1)))
    if re.fullmatch(r"0\.\d+", text):
        return DecimalAlpha(text)
    raise ConfigError(f"unrecognised alpha spec {text!r}")


# ---------------------------------------------------------------------------
# rationals and rotation numbers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Rational:
    p: int
    q: int

    def __post_init__(self):
        if self.q <= 0:
            raise ValueError("denominator must be positive")
        if gcd(self.p, self.q) != 1:
            raise ValueError(f"{self.p}/{self.q} is not reduced")

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.p, self.q)

    def __float__(self) -> float:
        return self.p / self.q

    def __str__(self) -> str:
        return f"{self.p}/{self.q}"


@dataclass(frozen=True)
class RotationNumber:
    """An irrational alpha in (0,1) with certified partial quotients and convergents."""

    spec: AlphaSpec
    bits: int
    lo: int  # alpha in [lo, hi] / 2**bits
    hi: int
    partial_quotients: tuple[int, ...]
    convergents: tuple[Rational, ...]
    fixed128: int = field(init=False)

    def __post_init__(self):
        if self.bits < fp.BITS:
            raise ValueError("rotation numbers are held at >= 128 fractional bits")
        shift = self.bits - fp.BITS
        # nearest 128-bit value to the interval midpoint
        object.__setattr__(self, "fixed128", (self.lo + self.hi + (1 << shift)) >> (shift + 1))

    @property
    def value(self) -> float:
        return fp.to_float(self.fixed128)

    @property
    def words(self) -> tuple[np.uint64, np.uint64]:
        h, l = fp.split(self.fixed128)
        return np.uint64(h), np.uint64(l)

    @property
    def denominators(self) -> list[int]:
        return [c.q for c in self.convergents]

    @property
    def depth(self) -> int:
        return len(self.partial_quotients)

    def interval(self) -> tuple[Fraction, Fraction]:
        return Fraction(self.lo, 1 << self.bits), Fraction(self.hi, 1 << self.bits)

    def __str__(self) -> str:
        return self.spec.label


def _interval_cf(lo: Fraction, hi: Fraction, depth: int) -> list[int]:
    """Partial quotients a_1, a_2, ... shared by every real in [lo, hi] (0 < lo)."""
    quotients: list[int] = []
    # x in (0,1): first step inverts
    if lo <= 0 or hi >= 1:
        return quotients
    x_lo, x_hi = 1 / hi, 1 / lo
    while len(quotients) < depth:
        a_lo, a_hi = math.floor(x_lo), math.floor(x_hi)
        if a_lo != a_hi:
            break
        r_lo, r_hi = x_lo - a_lo, x_hi - a_lo
        if r_lo <= 0:
            break
        quotients.append(a_lo)
        x_lo, x_hi = 1 / r_hi, 1 / r_lo
    return quotients


def convergents_from_quotients(quotients: Sequence[int]) -> list[Rational]:
    p_prev, q_prev = 1, 0
    p, q = 0, 1  # a_0 = 0
    out = []
    for a in quotients:
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        out.append(Rational(p, q))
    return out


def cf_expand(alpha_spec: AlphaSpec | str, depth: int, *, min_bits: int = MIN_BITS,
              max_bits: int = MAX_BITS) -> RotationNumber:
    """Expand alpha into ``depth`` certified partial quotients.

    Raises InsufficientPrecision when the enclosure available from the spec
    cannot determine that many quotients.
    """
    spec = parse_alpha(alpha_spec) if isinstance(alpha_spec, str) else alpha_spec
    if depth < 1:
        raise ValueError("depth must be >= 1")
    bits = min_bits
    while True:
        lo, hi = spec.enclose(bits)
        # one extra quotient so the invariant |alpha - p_k/q_k| < 1/(q_k q_{k+1})
        # can be certified for every returned k
        quotients = _interval_cf(Fraction(lo, 1 << bits), Fraction(hi, 1 << bits), depth + 1)
        if len(quotients) > depth:
            break
        if not spec.exact or bits >= max_bits:
            raise InsufficientPrecision(
                f"{spec.label}: only {max(len(quotients) - 1, 0)} partial quotients are "
                f"determined at {bits} bits, {depth} requested")
        bits *= 2
    quotients = quotients[:depth]
    # 128-bit positions of n*alpha need ~50 spare bits beyond log2(q)
    bits_needed = max(min_bits, 2 * quotients_q_bits(quotients) + 64)
    if bits_needed > bits and spec.exact:
        bits = bits_needed
        lo, hi = spec.enclose(bits)
    return RotationNumber(spec, bits, lo, hi, tuple(quotients),
                          tuple(convergents_from_quotients(quotients)))


def quotients_q_bits(quotients: Sequence[int]) -> int:
    conv = convergents_from_quotients(quotients)
    return conv[-1].q.bit_length() if conv else 1


def expand_to_q(alpha: RotationNumber, q_max: int, *, max_depth: int = 4096) -> RotationNumber:
    """Return alpha re-expanded so that its last convergent denominator exceeds q_max."""
    rn = alpha
    depth = max(alpha.depth, 8)
    while rn.convergents[-1].q <= q_max:
        if depth >= max_depth:
            raise InsufficientPrecision(f"depth cap {max_depth} reached before q > {q_max}")
        depth = min(2 * depth, max_depth)
        rn = cf_expand(alpha.spec, depth, min_bits=alpha.bits)
    return rn


def rotation_number(spec: AlphaSpec | str, depth: int = 32) -> RotationNumber:
    """Convenience: expand as deep as the spec allows, up to ``depth``."""
    spec = parse_alpha(spec) if isinstance(spec, str) else spec
    try:
        return cf_expand(spec, depth)
    except InsufficientPrecision:
        if spec.exact:
            raise
        lo, hi = spec.enclose(MIN_BITS)
        got = len(_interval_cf(Fraction(lo, 1 << MIN_BITS), Fraction(hi, 1 << MIN_BITS), depth + 1)) - 1
        if got < 1:
            raise
        return cf_expand(spec, got)


def alpha_bounds(alpha: RotationNumber | AlphaSpec, bits: int) -> tuple[Fraction, Fraction]:
    spec = alpha.spec if isinstance(alpha, RotationNumber) else alpha
    lo, hi = spec.enclose(bits)
    return Fraction(lo, 1 << bits), Fraction(hi, 1 << bits)


def error_bounds(alpha: RotationNumber | AlphaSpec, r: Rational | Fraction,
                 rel: float = 2.0 ** -40) -> tuple[Fraction, Fraction]:
    """Certified bounds (lo, hi) on |alpha - r|, refined to relative width ``rel``."""
    spec = alpha.spec if isinstance(alpha, RotationNumber) else alpha
    r = r.fraction if isinstance(r, Rational) else Fraction(r)
    bits = MIN_BITS
    while True:
        a_lo, a_hi = alpha_bounds(spec, bits)
        d_lo, d_hi = a_lo - r, a_hi - r
        if d_lo > 0 or d_hi < 0:
            lo, hi = sorted((abs(d_lo), abs(d_hi)))
            if hi - lo <= rel * lo:
                return lo, hi
        if not spec.exact or bits >= MAX_BITS * 8:
            if d_lo > 0 or d_hi < 0:
                return tuple(sorted((abs(d_lo), abs(d_hi))))  # type: ignore[return-value]
            raise InsufficientPrecision(f"|alpha - {r}| is not resolved by {spec.label}")
        bits *= 2


def frac_multiple(alpha: RotationNumber, n: int, bits: int | None = None) -> Fraction:
    """Certified midpoint of {n alpha} at the given precision (error <= |n| 2**-bits)."""
    bits = bits or max(alpha.bits, abs(n).bit_length() + 128)
    lo, hi = alpha.spec.enclose(bits)
    v = Fraction(n * (lo + hi), 2 << bits)
    return v - math.floor(v)


# ---------------------------------------------------------------------------
# circle arithmetic and closest returns
# ---------------------------------------------------------------------------

def circle_distance(x: float) -> float:
    """Distance from x to the nearest integer."""
    return abs(x - round(x))


def circle_distance_exact(x: Fraction) -> Fraction:
    return abs(x - round(x))


@njit(cache=True)
def _closest_returns_kernel(ah, al, q_max):
    """Brute-force closest return times 1..q_max for alpha = ah:al / 2**128."""
    out = np.empty(q_max, dtype=np.int64)
    count = 0
    best_h = np.uint64(0xFFFFFFFFFFFFFFFF)
    best_l = np.uint64(0xFFFFFFFFFFFFFFFF)
    xh = np.uint64(0)
    xl = np.uint64(0)
    for j in range(1, q_max + 1):
        xh, xl = fp.add(xh, xl, ah, al)
        dh, dl = fp.dist_words(xh, xl)
        if fp.less(dh, dl, best_h, best_l):
            out[count] = j
            count += 1
            best_h = dh
            best_l = dl
    return out[:count]


def closest_return_times_bruteforce(alpha: RotationNumber, q_max: int) -> list[int]:
    """Scan j = 1..q_max keeping the running minimum of ||j alpha||."""
    ah, al = alpha.words
    return [int(v) for v in _closest_returns_kernel(ah, al, int(q_max))]


def closest_return_times(alpha: RotationNumber, q_max: int, *, cross_check_limit: int = 10 ** 4) -> list[int]:
    """All closest return times q <= q_max, ascending.

    Computed from the convergent denominators; for q_max up to
    ``cross_check_limit`` the brute-force scan is run as well and the two must agree.
    """
    if q_max < 1:
        raise ValueError("q_max must be >= 1")
    rn = expand_to_q(alpha, q_max)
    qs = sorted({q for q in rn.denominators if q <= q_max} | {1})
    if q_max <= cross_check_limit:
        brute = closest_return_times_bruteforce(rn, q_max)
        if brute != qs:
            raise AssertionError(f"closest returns disagree: convergents {qs} vs scan {brute}")
    return qs


@njit(cache=True)
def _min_dist_below(ah, al, q):
    """(min over 0<j<q of ||j alpha||) < ||q alpha|| is False  <=>  q is a closest return."""
    xh = np.uint64(0)
    xl = np.uint64(0)
    best_h = np.uint64(0xFFFFFFFFFFFFFFFF)
    best_l = np.uint64(0xFFFFFFFFFFFFFFFF)
    for j in range(1, q):
        xh, xl = fp.add(xh, xl, ah, al)
        dh, dl = fp.dist_words(xh, xl)
        if fp.less(dh, dl, best_h, best_l):
            best_h = dh
            best_l = dl
    qh, ql = fp.mul(np.uint64(0), np.uint64(q), ah, al)
    dh, dl = fp.dist_words(qh, ql)
    return fp.less(dh, dl, best_h, best_l)


def is_closest_return(alpha: RotationNumber, q: int, *, scan_limit: int = 10 ** 7) -> bool:
    """True iff ||j alpha|| > ||q alpha|| for every 0 < j < q.

    Decided by direct scan for q <= scan_limit; beyond that by membership
    among the convergent denominators.
    """
    if q < 1:
        return False
    if q == 1:
        return True
    if q <= scan_limit:
        ah, al = alpha.words
        return bool(_min_dist_below(ah, al, int(q)))
    rn = expand_to_q(alpha, q)
    return q in rn.denominators


def liouville_witness(alpha: RotationNumber, tau: float, eps: float, q_max: int) -> Optional[Rational]:
    """First convergent p/q (q <= q_max) with |alpha - p/q| < eps / q**tau, else None."""
    if tau <= 0 or eps <= 0:
        raise ValueError("tau and eps must be positive")
    rn = expand_to_q(alpha, q_max) if alpha.spec.exact else alpha
    for r in rn.convergents:
        if r.q > q_max:
            break
        lo, hi = error_bounds(rn, r)
        digits = int(tau * math.log10(r.q + 1)) + 40
        with mpmath.workdps(digits + int(-math.log10(float(hi)) if hi > 0 else 0) + 20):
            threshold = mpmath.mpf(eps) / mpmath.power(r.q, mpmath.mpf(tau))
            if mpmath.mpf(hi.numerator) / hi.denominator < threshold:
                return r
            if mpmath.mpf(lo.numerator) / lo.denominator < threshold:
                raise InsufficientPrecision(f"cannot decide Liouville inequality at q={r.q}")
    return None


@njit(cache=True)
def _refine_scan(ah, al, sh, sl, lh, ll, n1, n2, cap):
    """Smallest j in 1..cap with (j alpha - start) mod 1 in (0, length); -1 if none, -2 on collision."""
    xh = np.uint64(0)
    xl = np.uint64(0)
    nh, nl = fp.neg(sh, sl)
    for j in range(1, cap + 1):
        xh, xl = fp.add(xh, xl, ah, al)
        dh, dl = fp.add(xh, xl, nh, nl)
        if ((dh == 0 and dl == 0) or (dh == lh and dl == ll)) and j != n1 and j != n2:
            return -2
        if (dh != 0 or dl != 0) and fp.less(dh, dl, lh, ll):
            return j
    return -1


def refine_return_step(alpha: RotationNumber, n1: int, n2: int, *, cap: int = 10 ** 7) -> int:
    """Smallest n3 > 0 with n3 alpha in the shorter arc bounded by n1 alpha and n2 alpha.

    When the arc holds no j alpha with 0 < j <= n2 (the refinement-chain
    situation), n3 > n2 and n3 - n2 is a closest return time; that is asserted.
    """
    if not 0 <= n1 < n2:
        raise ValueError("need 0 <= n1 < n2")
    one = fp.ONE
    p1 = (n1 * alpha.fixed128) % one
    p2 = (n2 * alpha.fixed128) % one
    if p1 == p2:
        raise InsufficientPrecision("n1*alpha and n2*alpha collide in fixed point")
    d = (p2 - p1) % one
    start, length = (p1, d) if d < one >> 1 else (p2, one - d)
    ah, al = alpha.words
    sh, sl = fp.split(start)
    lh, ll = fp.split(length)
    n3 = int(_refine_scan(ah, al, np.uint64(sh), np.uint64(sl), np.uint64(lh), np.uint64(ll),
                           int(n1), int(n2), int(cap)))
    if n3 == -2:
        raise InsufficientPrecision("fixed-point collision with an arc endpoint")
    if n3 == -1:
        raise HorizonExceeded(f"no return into the arc within {cap} steps")
    if n3 > n2 and not is_closest_return(alpha, n3 - n2):
        raise AssertionError(f"refinement step ({n1}, {n2}) -> {n3}: {n3 - n2} is not a closest return")
    return n3


def select_phi_denominators(alpha: RotationNumber, count: int, *, ratio: int = 10) -> list[int]:
    """Greedy closest-return times q_1 < q_2 < ... with ||q alpha|| < 1/q and q_{n+1} > ratio q_n.

    The trivial return q = 1 is skipped; the first convergent denominator >= 2 starts the list.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rn = alpha
    chosen: list[int] = []
    i = 0
    while len(chosen) < count:
        if i >= len(rn.convergents):
            if not rn.spec.exact:
                raise InsufficientPrecision(
                    f"{rn.spec.label}: convergents exhausted after {len(chosen)} denominators")
            rn = cf_expand(rn.spec, 2 * rn.depth + 8, min_bits=rn.bits)
            continue
        r = rn.convergents[i]
        i += 1
        if r.q < 2 or (chosen and r.q <= ratio * chosen[-1]):
            continue
        # ||q alpha|| = |q alpha - p| for a convergent; (3.7) asks for < 1/q
        _, err_hi = error_bounds(rn, r)
        if err_hi * r.q * r.q < 1:
            chosen.append(r.q)
    return chosen


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def convergents_table(alpha: RotationNumber) -> list[dict[str, str]]:
    rows = []
    for k, (a, r) in enumerate(zip(alpha.partial_quotients, alpha.convergents), start=1):
        rows.append({"k": str(k), "a_k": str(a), "p_k": str(r.p), "q_k": str(r.q)})
    return rows


def write_convergents_csv(alpha: RotationNumber, stream: io.TextIOBase | None = None) -> str:
    """RFC-4180 CSV of k, a_k, p_k, q_k with exact decimal integers."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["k", "a_k", "p_k", "q_k"], lineterminator="\r\n")
    writer.writeheader()
    writer.writerows(convergents_table(alpha))
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def verify_convergent_bounds(alpha: RotationNumber) -> None:
    """Check 1/(q_k(q_k+q_{k+1})) < |alpha - p_k/q_k| < 1/(q_k q_{k+1}) in exact arithmetic."""
    conv = alpha.convergents
    for k in range(len(conv) - 1):
        r, nxt = conv[k], conv[k + 1]
        lo, hi = error_bounds(alpha, r)
        upper = Fraction(1, r.q * nxt.q)
        lower = Fraction(1, r.q * (r.q + nxt.q))
        if not (lower < lo and hi < upper):
            raise AssertionError(f"convergent bound fails at k={k + 1}: {r}")
        # recurrence and reduction
        if gcd(r.p, r.q) != 1 or not r.q < nxt.q:
            raise AssertionError(f"convergent {r} malformed")


def iter_specs(texts: Iterable[str]) -> list[AlphaSpec]:
    return [parse_alpha(t) for t in texts]
