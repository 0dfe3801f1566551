"""128-bit fixed-point circle coordinates.

A point of S^1 = R/Z is stored as an unsigned 128-bit integer X meaning
X / 2**128.  Inside numba kernels X is split into two uint64 words
(hi, lo); addition and multiplication by integers wrap modulo 2**128,
which is exactly reduction mod 1.

Doubles cannot hold ``q * x mod 1`` once q exceeds 2**53, so every
product of a large frequency with a circle coordinate goes through here.
"""
from __future__ import annotations

import numpy as np
from numba import njit

BITS = 128
ONE = 1 << BITS
MASK64 = (1 << 64) - 1

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_M64 = 2.0 ** -64
_TWO_M128 = 2.0 ** -128


# ---------------------------------------------------------------------------
# python-side conversions
# ---------------------------------------------------------------------------

def split(value: int) -> tuple[int, int]:
    """Split a non-negative int (taken mod 2**128) into (hi, lo) words."""
    value %= ONE
    return value >> 64, value & MASK64


def join(hi: int, lo: int) -> int:
    return (int(hi) << 64) | int(lo)


def from_float(x: float) -> int:
    """Exact fixed-point image of a double, reduced mod 1."""
    frac = float(np.mod(x, 1.0))
    # a double in [0, 1) has at most 53 significant bits below 2**-1074,
    # so scaling by 2**128 and truncating is exact up to the last 2**-128
    hi = int(np.floor(np.ldexp(frac, 64)))
    rest = np.ldexp(frac, 64) - hi
    lo = int(np.floor(np.ldexp(rest, 64)))
    return ((hi << 64) | lo) % ONE


def to_float(value: int) -> float:
    """Nearest double in [0, 1) (may round up to 1.0 for values just below 1)."""
    value %= ONE
    return (value >> 64) * _TWO_M64 + (value & MASK64) * _TWO_M128


def to_centered_float(value: int) -> float:
    """Representative in [-1/2, 1/2)."""
    value %= ONE
    if value >= ONE >> 1:
        value -= ONE
    return value / ONE


def to_decimal(value: int, digits: int = 40) -> str:
    """Decimal string of X / 2**128 truncated to ``digits`` places."""
    value %= ONE
    scaled = (value * 10 ** digits) >> BITS
    return "0." + str(scaled).rjust(digits, "0")


def arrays_from_floats(xs) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised exact conversion of doubles to (hi, lo) word arrays."""
    xs = np.mod(np.asarray(xs, dtype=np.float64), 1.0)
    scaled = np.ldexp(xs, 64)
    hi_f = np.floor(scaled)
    # values that round to 2**64 wrap to 0
    hi_f[hi_f >= 2.0 ** 64] = 0.0
    lo_f = np.floor(np.ldexp(scaled - hi_f, 64))
    lo_f[lo_f >= 2.0 ** 64] = 0.0
    return hi_f.astype(np.uint64), lo_f.astype(np.uint64)


def arrays_from_ints(values) -> tuple[np.ndarray, np.ndarray]:
    values = [int(v) % ONE for v in values]
    hi = np.array([v >> 64 for v in values], dtype=np.uint64)
    lo = np.array([v & MASK64 for v in values], dtype=np.uint64)
    return hi, lo


def ints_from_arrays(hi: np.ndarray, lo: np.ndarray) -> list[int]:
    return [join(h, l) for h, l in zip(hi.tolist(), lo.tolist())]


def random_points(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform fixed-point samples of S^1 using all 128 bits."""
    hi = rng.integers(0, 2 ** 64, size=size, dtype=np.uint64)
    lo = rng.integers(0, 2 ** 64, size=size, dtype=np.uint64)
    return hi, lo


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def mulhi(a, b):
    """High 64 bits of the 128-bit product of two uint64."""
    a_lo = a & _M32
    a_hi = a >> _S32
    b_lo = b & _M32
    b_hi = b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    mid = (p0 >> _S32) + (p1 & _M32) + (p2 & _M32)
    return p3 + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)


@njit(cache=True, inline="always")
def mul(qh, ql, xh, xl):
    """(q * x) mod 2**128 for 128-bit q and x."""
    lo = ql * xl
    hi = ql * xh + qh * xl + mulhi(ql, xl)
    return hi, lo


@njit(cache=True, inline="always")
def add(ah, al, bh, bl):
    lo = al + bl
    carry = np.uint64(1) if lo < al else np.uint64(0)
    return ah + bh + carry, lo


@njit(cache=True, inline="always")
def neg(ah, al):
    # two's complement: (~a) + 1
    lo = ~al + np.uint64(1)
    carry = np.uint64(1) if lo == np.uint64(0) else np.uint64(0)
    return ~ah + carry, lo


@njit(cache=True, inline="always")
def centered(hi, lo):
    """Float representative of hi:lo / 2**128 in [-1/2, 1/2)."""
    s = np.int64(hi)
    return float(s) * _TWO_M64 + float(lo) * _TWO_M128


@njit(cache=True, inline="always")
def unit(hi, lo):
    """Float representative in [0, 1]."""
    return float(hi) * _TWO_M64 + float(lo) * _TWO_M128


@njit(cache=True, inline="always")
def circle_dist(hi, lo):
    """||x|| for a fixed-point x, as a double."""
    return abs(centered(hi, lo))


@njit(cache=True, inline="always")
def less(ah, al, bh, bl):
    return ah < bh or (ah == bh and al < bl)


@njit(cache=True, inline="always")
def dist_words(hi, lo):
    """||x|| as an exact 128-bit word pair (x or 2**128 - x, whichever is smaller)."""
    if hi >= np.uint64(0x8000000000000000):
        return neg(hi, lo)
    return hi, lo
