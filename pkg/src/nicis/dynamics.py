"""Finite-horizon probes of the skew-product dynamics.

Vertical excursions along an orbit are read off the transfer function:
after m steps from (x, 0) the height is h(x + m alpha) - h(x), so fibers
can be scanned far without accumulating summation error.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Protocol, Sequence

import numpy as np
from numba import njit
from scipy import stats

from nicis import fixedpoint as fp
from nicis.errors import HorizonExceeded
from nicis.number_theory import RotationNumber, select_phi_denominators
from nicis.skew_product import (
    TWO_PI,
    PhiSeries,
    SkewProduct,
    _as_words,
    _h_kernel,
    birkhoff_sum_closed,
    birkhoff_sum_direct,
    variation,
)

_U0 = np.uint64(0)

DEFAULT_BAND = (0.5, 1.0)
DEFAULT_STRIP = 1e-3
DEFAULT_HORIZON = 10 ** 6


# ---------------------------------------------------------------------------
# Denjoy-Koksma
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DKEntry:
    q: int
    sup: float
    crosscheck: Optional[float]  # max |closed - direct| at the check points, None if skipped


def denjoy_koksma_profile(phi: PhiSeries, q_list: Sequence[int], grid_size: int, *,
                          check_points: int = 10, direct_limit: int = 10 ** 6,
                          seed: int = 0) -> list[DKEntry]:
    """sup over an equispaced grid of |phi_q| for each q, via the telescoped form.

    Ten random grid points are re-summed directly when q <= ``direct_limit``.
    """
    step = fp.ONE // grid_size
    ints = [i * step for i in range(grid_size)]
    words = fp.arrays_from_ints(ints)
    rng = np.random.default_rng(seed)
    out = []
    for q in q_list:
        vals = birkhoff_sum_closed(phi, words, int(q))
        sup = float(np.max(np.abs(vals)))
        check = None
        if q <= direct_limit and check_points > 0:
            idx = rng.choice(grid_size, size=min(check_points, grid_size), replace=False)
            sub = (words[0][idx], words[1][idx])
            check = float(np.max(np.abs(birkhoff_sum_direct(phi, sub, int(q)) - vals[idx])))
        out.append(DKEntry(int(q), sup, check))
    return out


def dk_csv(entries: Sequence[DKEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["q", "sup_abs_phi_q", "crosscheck"])
    for e in entries:
        w.writerow([e.q, repr(e.sup), "" if e.crosscheck is None else repr(e.crosscheck)])
    return buf.getvalue()


def variation_bound_holds(phi: PhiSeries, entries: Sequence[DKEntry], tol: float = 1e-9) -> bool:
    var = variation(phi)
    return all(e.sup <= var + tol for e in entries)


# ---------------------------------------------------------------------------
# fiber classification
# ---------------------------------------------------------------------------

class Verdict(str, Enum):
    DENSE = "DenseLike"
    POSITIVE = "PositiveLike"
    NEGATIVE = "NegativeLike"
    UNDECIDED = "Undecided"

    def mirror(self) -> "Verdict":
        return {Verdict.POSITIVE: Verdict.NEGATIVE, Verdict.NEGATIVE: Verdict.POSITIVE}.get(self, self)


@dataclass(frozen=True)
class ClassificationReport:
    x: int  # fixed-point fiber coordinate
    verdict: Verdict
    y_min: float
    y_max: float
    strip_returns: np.ndarray = field(repr=False)  # signed return times m
    strip_values: np.ndarray = field(repr=False)  # y at those returns
    horizon: int
    strip_eps: float
    band: tuple[float, float]

    def rederive(self) -> Verdict:
        return decide(self.strip_values, self.y_min, self.y_max, self.band)

    def summary(self) -> dict:
        return {"x": fp.to_decimal(self.x, 40), "verdict": self.verdict.value,
                "y_min": self.y_min, "y_max": self.y_max, "returns": int(self.strip_values.size),
                "horizon": self.horizon, "strip_eps": self.strip_eps, "band": list(self.band)}


def decide(values: np.ndarray, y_min: float, y_max: float, band: tuple[float, float]) -> Verdict:
    """Verdict rule; the tolerance for 'all returns >= 0' is the inner band edge a."""
    a, b = band
    if values.size and values.min() < -a and values.max() > a:
        return Verdict.DENSE
    pos = (values.size == 0 or values.min() >= -a) and y_max > b
    neg = (values.size == 0 or values.max() <= a) and y_min < -b
    if pos != neg:
        # both qualifying is ambiguous; keep the rule mirror-equivariant
        return Verdict.POSITIVE if pos else Verdict.NEGATIVE
    return Verdict.UNDECIDED


@njit(cache=True)
def _strip_times(ah, al, horizon, eps_h, eps_l):
    """All 1 <= m <= horizon with ||m alpha|| < eps (eps as fixed-point words)."""
    out = np.empty(64, dtype=np.int64)
    count = 0
    xh = _U0
    xl = _U0
    for m in range(1, horizon + 1):
        xh, xl = fp.add(xh, xl, ah, al)
        dh, dl = fp.dist_words(xh, xl)
        if fp.less(dh, dl, eps_h, eps_l):
            if count == out.size:
                grown = np.empty(2 * out.size, dtype=np.int64)
                grown[:count] = out[:count]
                out = grown
            out[count] = m
            count += 1
    return out[:count]


@njit(cache=True)
def _h_extrema_kernel(xh, xl, ah, al, horizon, qh, ql, coef, wr, wi, resync):
    """min and max of h(x + m alpha) over |m| <= horizon for each x, by phasor recurrence.

    sin(2 pi q_n x_m) = Im z_n(m), z_n(m +- 1) = z_n(m) * w_n^{+-1}, recomputed
    from the exact position every ``resync`` steps.
    """
    k_count = xh.size
    n_count = qh.size
    lo = np.full(k_count, np.inf)
    hi = np.full(k_count, -np.inf)
    vals = np.empty(k_count)
    zr = np.empty((n_count, k_count))
    zi = np.empty((n_count, k_count))
    nah, nal = fp.neg(ah, al)
    for direction in (1, -1):
        sh = ah if direction == 1 else nah
        sl = al if direction == 1 else nal
        start = 0
        while start <= horizon:
            bh, bl = fp.mul(_U0, np.uint64(start), sh, sl)
            for k in range(k_count):
                px, pl = fp.add(xh[k], xl[k], bh, bl)
                for n in range(n_count):
                    th, tl = fp.mul(qh[n], ql[n], px, pl)
                    ang = TWO_PI * fp.centered(th, tl)
                    zr[n, k] = math.cos(ang)
                    zi[n, k] = math.sin(ang)
            stop = min(horizon + 1, start + resync)
            for _ in range(start, stop):
                for k in range(k_count):
                    vals[k] = 0.0
                for n in range(n_count):
                    a = coef[n]
                    c = wr[n]
                    s = wi[n] * direction
                    for k in range(k_count):
                        r = zr[n, k]
                        im = zi[n, k]
                        vals[k] += a * im
                        zr[n, k] = r * c - im * s
                        zi[n, k] = r * s + im * c
                for k in range(k_count):
                    v = vals[k]
                    if v < lo[k]:
                        lo[k] = v
                    if v > hi[k]:
                        hi[k] = v
            start = stop
    return lo, hi


def strip_return_times(alpha: RotationNumber, horizon: int, strip_eps: float) -> np.ndarray:
    """Signed m with 0 < |m| <= horizon and ||m alpha|| < strip_eps, ascending."""
    eh, el = fp.split(fp.from_float(strip_eps))
    ah, al = alpha.words
    pos = _strip_times(ah, al, int(horizon), np.uint64(eh), np.uint64(el))
    return np.concatenate([-pos[::-1], pos])


def _classify_batch(F: SkewProduct, xs: tuple[np.ndarray, np.ndarray], horizon: int,
                    band: tuple[float, float], strip_eps: float, times: np.ndarray,
                    resync: int = 256) -> list[ClassificationReport]:
    phi = F.phi
    xh, xl = xs
    if phi.n_terms == 0:
        zeros = np.zeros(times.size)
        return [ClassificationReport(fp.join(h, l), decide(zeros, 0.0, 0.0, band), 0.0, 0.0,
                                     times, zeros, horizon, strip_eps, band)
                for h, l in zip(xh.tolist(), xl.tolist())]
    coef = phi.hcoef
    h0 = _h_kernel(xh, xl, phi.freq_hi, phi.freq_lo, coef)
    lo, hi = _h_extrema_kernel(xh, xl, *F.alpha.words, int(horizon), phi.freq_hi, phi.freq_lo,
                               coef, phi.rot.real.copy(), phi.rot.imag.copy(), int(resync))
    reports = []
    for k in range(xh.size):
        if times.size:
            ph = np.repeat(xh[k:k + 1], times.size)
            pl = np.repeat(xl[k:k + 1], times.size)
            sh, sl = _shifted_many(ph, pl, F.alpha, times)
            vals = _h_kernel(sh, sl, phi.freq_hi, phi.freq_lo, coef) - h0[k]
        else:
            vals = np.zeros(0)
        y_min = min(0.0, float(lo[k] - h0[k]), float(vals.min()) if vals.size else 0.0)
        y_max = max(0.0, float(hi[k] - h0[k]), float(vals.max()) if vals.size else 0.0)
        reports.append(ClassificationReport(fp.join(xh[k], xl[k]), decide(vals, y_min, y_max, band),
                                            y_min, y_max, times, vals, horizon, strip_eps, band))
    return reports


@njit(cache=True)
def _shift_each(xh, xl, ah, al, ms):
    oh = np.empty_like(xh)
    ol = np.empty_like(xl)
    nah, nal = fp.neg(ah, al)
    for i in range(xh.size):
        m = ms[i]
        if m >= 0:
            sh, sl = fp.mul(_U0, np.uint64(m), ah, al)
        else:
            sh, sl = fp.mul(_U0, np.uint64(-m), nah, nal)
        oh[i], ol[i] = fp.add(xh[i], xl[i], sh, sl)
    return oh, ol


def _shifted_many(xh, xl, alpha: RotationNumber, ms: np.ndarray):
    ah, al = alpha.words
    return _shift_each(xh, xl, ah, al, ms.astype(np.int64))


def classify_fiber(F: SkewProduct, x, horizon: int = DEFAULT_HORIZON,
                   band: tuple[float, float] = DEFAULT_BAND,
                   strip_eps: float = DEFAULT_STRIP) -> ClassificationReport:
    """Classify the fiber over x from the orbit of (x, 0) over |m| <= horizon."""
    return classify_fibers(F, x, horizon, band, strip_eps)[0]


def classify_fibers(F: SkewProduct, xs, horizon: int = DEFAULT_HORIZON,
                    band: tuple[float, float] = DEFAULT_BAND,
                    strip_eps: float = DEFAULT_STRIP) -> list[ClassificationReport]:
    """Batch version of classify_fiber (fibers share the strip-return times)."""
    a, b = band
    if not 0 < a < b:
        raise ValueError("band must satisfy 0 < a < b")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    words = _as_words(xs)
    try:
        times = strip_return_times(F.alpha, horizon, strip_eps)
    except HorizonExceeded:
        return [ClassificationReport(v, Verdict.UNDECIDED, 0.0, 0.0, np.zeros(0, np.int64),
                                     np.zeros(0), horizon, strip_eps, band)
                for v in fp.ints_from_arrays(*words)]
    return _classify_batch(F, words, horizon, band, strip_eps, times)


def verdict_histogram(reports: Sequence[ClassificationReport]) -> dict[str, int]:
    hist = {v.value: 0 for v in Verdict}
    for r in reports:
        hist[r.verdict.value] += 1
    return hist


def mirror_agreement(reports: Sequence[ClassificationReport],
                     mirrored: Sequence[ClassificationReport]) -> tuple[float, int]:
    """Fraction of decided pairs (x, -x) whose verdicts are mirror images, and the pair count."""
    decided = [(r, s) for r, s in zip(reports, mirrored)
               if r.verdict is not Verdict.UNDECIDED or s.verdict is not Verdict.UNDECIDED]
    if not decided:
        return 1.0, 0
    good = sum(1 for r, s in decided if s.verdict is r.verdict.mirror())
    return good / len(decided), len(decided)


def reports_csv(reports: Sequence[ClassificationReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["x", "verdict", "y_min", "y_max", "strip_returns"])
    for r in reports:
        w.writerow([fp.to_decimal(r.x, 40), r.verdict.value, repr(r.y_min), repr(r.y_max),
                    r.strip_values.size])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# limit-set samples
# ---------------------------------------------------------------------------

def limit_set_sample(F: SkewProduct, x, horizon: int = DEFAULT_HORIZON,
                     strip_eps: float = DEFAULT_STRIP) -> np.ndarray:
    """Sorted heights of all strip returns of (x, 0) in both time directions."""
    times = strip_return_times(F.alpha, horizon, strip_eps)
    if F.phi.n_terms == 0 or times.size == 0:
        return np.zeros(times.size)
    xh, xl = _as_words(x)
    ph = np.repeat(xh[:1], times.size)
    pl = np.repeat(xl[:1], times.size)
    sh, sl = _shifted_many(ph, pl, F.alpha, times)
    phi = F.phi
    h0 = _h_kernel(xh[:1], xl[:1], phi.freq_hi, phi.freq_lo, phi.hcoef)[0]
    return np.sort(_h_kernel(sh, sl, phi.freq_hi, phi.freq_lo, phi.hcoef) - h0)


def sample_spacing(sample: np.ndarray) -> float:
    """Median gap between consecutive sorted sample values."""
    s = np.sort(sample)
    if s.size < 2:
        return 0.0
    return float(np.median(np.diff(s)))


def semigroup_probe(sample: np.ndarray, delta: Optional[float] = None,
                    max_pairs: int = 200_000, seed: int = 0) -> tuple[float, float]:
    """Fraction of pairwise sums that land within delta of a sample or outside its range.

    delta defaults to twice the median sample spacing.  Returns (fraction, delta).
    """
    s = np.sort(np.asarray(sample, dtype=float))
    if delta is None:
        delta = 2.0 * sample_spacing(s)
    n = s.size
    if n == 0:
        return 1.0, delta
    rng = np.random.default_rng(seed)
    if n * n <= max_pairs:
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        i, j = i.ravel(), j.ravel()
    else:
        i = rng.integers(0, n, max_pairs)
        j = rng.integers(0, n, max_pairs)
    sums = s[i] + s[j]
    inside = (sums >= s[0]) & (sums <= s[-1])
    pos = np.clip(np.searchsorted(s, sums), 1, n - 1) if n > 1 else np.zeros(sums.size, int)
    near = np.minimum(np.abs(sums - s[pos]), np.abs(sums - s[pos - 1])) if n > 1 else np.abs(sums - s[0])
    ok = ~inside | (near <= delta)
    return float(ok.mean()), float(delta)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Hausdorff distance between two finite subsets of R."""
    a = np.sort(np.asarray(a, float))
    b = np.sort(np.asarray(b, float))
    if a.size == 0 or b.size == 0:
        return 0.0 if a.size == b.size else math.inf

    def one_side(u, v):
        pos = np.clip(np.searchsorted(v, u), 1, max(v.size - 1, 1))
        if v.size == 1:
            return float(np.max(np.abs(u - v[0])))
        return float(np.max(np.minimum(np.abs(u - v[pos]), np.abs(u - v[pos - 1]))))

    return max(one_side(a, b), one_side(b, a))


# ---------------------------------------------------------------------------
# pushforward of Lebesgue measure under the graph of h
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageReport:
    grid: tuple[int, int]  # (x cells, y cells)
    y_range: float
    n_terms: int
    sample_count: int
    counts: np.ndarray = field(repr=False)  # shape grid; hits per cell
    covered_fraction: float
    x_marginal_pvalue: float
    outside: int  # samples with |h_N(x)| > y_range

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("counts")
        d["grid"] = list(self.grid)
        return d


def pushforward_histogram(alpha: RotationNumber, n_values: Sequence[int],
                          cell_grid: tuple[int, int] = (50, 20), sample_count: int = 10 ** 6,
                          *, y_range: float = 2.0, seed: int = 0) -> list[CoverageReport]:
    """Bin (x, h_N(x)) for uniform x, for each truncation N in ``n_values``."""
    nx, ny = cell_grid
    n_max = max(n_values)
    qs = select_phi_denominators(alpha, n_max) if n_max > 0 else []
    phi_all = PhiSeries(alpha, tuple(qs), tuple(2.0 / n for n in range(1, n_max + 1)))
    rng = np.random.default_rng(seed)
    xh, xl = fp.random_points(rng, sample_count)
    xf = xh.astype(np.float64) * 2.0 ** -64
    col = np.minimum((xf * nx).astype(np.int64), nx - 1)
    marginal = np.bincount(col, minlength=nx)
    pvalue = float(stats.chisquare(marginal).pvalue)
    out = []
    for n in n_values:
        if n == 0:
            y = np.zeros(sample_count)
        else:
            y = _h_kernel(xh, xl, phi_all.freq_hi[:n], phi_all.freq_lo[:n], phi_all.hcoef[:n])
        keep = np.abs(y) <= y_range
        row = np.floor((y[keep] + y_range) / (2 * y_range) * ny).astype(np.int64)
        row = np.clip(row, 0, ny - 1)
        counts = np.zeros((nx, ny), dtype=np.int64)
        np.add.at(counts, (col[keep], row), 1)
        out.append(CoverageReport((nx, ny), y_range, int(n), int(sample_count), counts,
                                  float(np.count_nonzero(counts)) / (nx * ny), pvalue,
                                  int(sample_count - keep.sum())))
    return out


def compactify(y):
    """Display coordinate tanh(y/2) in (-1, 1)."""
    return np.tanh(np.asarray(y) / 2.0)


# ---------------------------------------------------------------------------
# rotation numbers
# ---------------------------------------------------------------------------

class AnnulusMap(Protocol):
    def step(self, state): ...


@dataclass(frozen=True)
class RotationEstimate:
    value: float
    error_bar: float
    steps: int

    def within(self, target: float, tol: float) -> bool:
        return abs(self.value - target) <= tol


def _estimate_from_displacements(d: np.ndarray) -> RotationEstimate:
    m = d.size
    if m == 0:
        raise ValueError("need at least one step")
    total = math.fsum(d.tolist())
    running = np.cumsum(d) / np.arange(1, m + 1)
    tail = running[max(0, m - max(1, m // 10) ):]
    # the last running average uses the compensated total
    value = total / m
    return RotationEstimate(value, float((max(tail.max(), value) - min(tail.min(), value)) / 2), m)


def rotation_number_estimate(f, start, m: int) -> RotationEstimate:
    """Average lift displacement over m steps of ``f``.

    ``f`` needs ``step(state) -> (state, displacement)``; maps offering
    ``displacements(start, m)`` use that bulk path.  The error bar is half the
    spread of the running average over the last tenth of the run.
    """
    if hasattr(f, "displacements"):
        return _estimate_from_displacements(np.asarray(f.displacements(start, m), dtype=float))
    d = np.empty(m)
    state = start
    for i in range(m):
        state, d[i] = f.step(state)
    return _estimate_from_displacements(d)


@dataclass(frozen=True)
class RigidRotation:
    """S_t on the annulus, (x, y) -> (x + t, y), with a float t."""

    t: float

    def step(self, state):
        x, y = state
        return ((x + self.t) % 1.0, y), self.t


# ---------------------------------------------------------------------------
# dense orbits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityReport:
    best_eps: float  # finest dyadic eps with an eps-dense sampled orbit; inf if none
    target_eps: float
    achieved: bool
    horizon: int
    trials: int
    y_range: float
    per_trial: tuple[float, ...]


@njit(cache=True)
def _orbit_cells(x0h, x0l, ah, al, horizon, qh, ql, coef, levels, y_range):
    """Boolean hit map at resolution 2^-levels of the orbit of (x0, 0) in S^1 x [-Y, Y]."""
    nx = 1 << levels
    ny = int(math.ceil(2.0 * y_range * nx))
    hits = np.zeros((nx, ny), dtype=np.bool_)
    h0 = 0.0
    for n in range(qh.size):
        th, tl = fp.mul(qh[n], ql[n], x0h, x0l)
        h0 += coef[n] * math.sin(TWO_PI * fp.centered(th, tl))
    xh = x0h
    xl = x0l
    for _ in range(horizon + 1):
        v = 0.0
        for n in range(qh.size):
            th, tl = fp.mul(qh[n], ql[n], xh, xl)
            v += coef[n] * math.sin(TWO_PI * fp.centered(th, tl))
        y = v - h0
        if -y_range <= y < y_range:
            i = int(fp.unit(xh, xl) * nx)
            if i >= nx:
                i = nx - 1
            j = int((y + y_range) * nx)
            if j >= ny:
                j = ny - 1
            hits[i, j] = True
        xh, xl = fp.add(xh, xl, ah, al)
    return hits


def _finest_dense_level(hits: np.ndarray, levels: int) -> int:
    """Largest k <= levels such that every cell of side 2^-k is hit; -1 if none."""
    best = -1
    cur = hits
    for k in range(levels, -1, -1):
        if cur.all():
            return k
        # pool 2x2 blocks (the y extent may be odd)
        nx, ny = cur.shape
        if ny % 2:
            cur = np.concatenate([cur, cur[:, -1:]], axis=1)
        cur = cur.reshape(nx // 2, 2, -1, 2).any(axis=(1, 3)) if nx > 1 else cur
        if nx == 1:
            break
    return best


def dense_orbit_search(F: SkewProduct, eps: float, horizon: int, trials: int, *,
                       y_range: float = 1.0, levels: int = 10, seed: int = 0) -> DensityReport:
    """Finest dyadic eps such that a sampled orbit hits every eps-cell of S^1 x [-Y, Y]."""
    rng = np.random.default_rng(seed)
    starts = fp.random_points(rng, trials)
    ah, al = F.alpha.words
    phi = F.phi
    per = []
    for k in range(trials):
        hits = _orbit_cells(starts[0][k], starts[1][k], ah, al, int(horizon), phi.freq_hi,
                            phi.freq_lo, phi.hcoef, int(levels), float(y_range))
        lvl = _finest_dense_level(hits, levels)
        per.append(math.inf if lvl < 0 else 2.0 ** -lvl)
    best = min(per) if per else math.inf
    return DensityReport(best, eps, best <= eps, int(horizon), int(trials), float(y_range), tuple(per))


def circle_gaps(alpha: RotationNumber, m: int) -> np.ndarray:
    """Sorted distinct gap lengths (rounded to 1e-15) between the points j alpha, 0 <= j < m."""
    a = alpha.fixed128
    pts = sorted((j * a) % fp.ONE for j in range(m))
    gaps = [b - c for c, b in zip(pts, pts[1:])] + [pts[0] + fp.ONE - pts[-1]]
    return np.unique(np.round(np.array([g / fp.ONE for g in gaps]), 15))


def to_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=str)
