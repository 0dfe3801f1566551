"""Time-1 maps of the cutoff shear flow, integrated with 2-stage Gauss-Legendre.

Stream function  Psi(x, y) = (c / 2 pi) (cos 2 pi x - 1) chi(y)  gives

    x' =  dPsi/dy = (c / 2 pi) (cos 2 pi x - 1) chi'(y)
    y' = -dPsi/dx = c sin(2 pi x) chi(y)

chi is 1 on |y| <= d and 0 on |y| >= e, joined by the C^3 septic smoothstep.
Where chi = 1 the motion is purely vertical with speed c sin 2 pi x; where
chi = 0 nothing moves; the line x = 0 is fixed because both components vanish.

Gauss-Legendre is symplectic and symmetric, so the discrete map preserves
area and running it with the opposite step is its exact inverse (up to the
Newton tolerance).
"""
from __future__ import annotations

import cmath
import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
_SQ3_6 = math.sqrt(3.0) / 6.0
A11 = 0.25
A12 = 0.25 - _SQ3_6
A21 = 0.25 + _SQ3_6
A22 = 0.25

STATUS_OK = 0
STATUS_NEWTON = 1


@njit(cache=True, inline="always")
def _smooth(t):
    # 35 t^4 - 84 t^5 + 70 t^6 - 20 t^7 and its first two derivatives
    t2 = t * t
    t3 = t2 * t
    t4 = t3 * t
    s = t4 * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)))
    s1 = 140.0 * t3 * (1.0 - t) ** 3
    s2 = 420.0 * t2 * (1.0 - t) ** 2 * (1.0 - 2.0 * t)
    return s, s1, s2


@njit(cache=True, inline="always")
def chi3(y, d, e):
    """(chi, chi', chi'') at y."""
    ay = abs(y)
    if ay <= d:
        return 1.0, 0.0, 0.0
    if ay >= e:
        return 0.0, 0.0, 0.0
    w = e - d
    t = (ay - d) / w
    s, s1, s2 = _smooth(t)
    sg = 1.0 if y > 0 else -1.0
    return 1.0 - s, -sg * s1 / w, -s2 / (w * w)


@njit(cache=True, inline="always")
def field(x, y, c, d, e):
    ch, ch1, _ = chi3(y, d, e)
    cs = math.cos(TWO_PI * x)
    sn = math.sin(TWO_PI * x)
    return c / TWO_PI * (cs - 1.0) * ch1, c * sn * ch


@njit(cache=True, inline="always")
def field_jac(x, y, c, d, e):
    ch, ch1, ch2 = chi3(y, d, e)
    cs = math.cos(TWO_PI * x)
    sn = math.sin(TWO_PI * x)
    fx = c / TWO_PI * (cs - 1.0) * ch1
    fy = c * sn * ch
    j11 = -c * sn * ch1
    j12 = c / TWO_PI * (cs - 1.0) * ch2
    j21 = TWO_PI * c * cs * ch
    j22 = c * sn * ch1
    return fx, fy, j11, j12, j21, j22


@njit(cache=True)
def _solve4(m, r):
    """Gaussian elimination with partial pivoting on a 4x4 system (in place)."""
    for col in range(4):
        piv = col
        best = abs(m[col, col])
        for row in range(col + 1, 4):
            if abs(m[row, col]) > best:
                best = abs(m[row, col])
                piv = row
        if piv != col:
            for k in range(4):
                tmp = m[col, k]
                m[col, k] = m[piv, k]
                m[piv, k] = tmp
            tmp = r[col]
            r[col] = r[piv]
            r[piv] = tmp
        for row in range(col + 1, 4):
            f = m[row, col] / m[col, col]
            for k in range(col, 4):
                m[row, k] -= f * m[col, k]
            r[row] -= f * r[col]
    for col in range(3, -1, -1):
        s = r[col]
        for k in range(col + 1, 4):
            s -= m[col, k] * r[k]
        r[col] = s / m[col, col]


@njit(cache=True)
def gl4_step(x, y, h, c, d, e, tol, max_iter, m, r):
    """One Gauss-Legendre step; returns (x, y, ok)."""
    fx, fy = field(x, y, c, d, e)
    k1x = fx
    k1y = fy
    k2x = fx
    k2y = fy
    for _ in range(max_iter):
        x1 = x + h * (A11 * k1x + A12 * k2x)
        y1 = y + h * (A11 * k1y + A12 * k2y)
        x2 = x + h * (A21 * k1x + A22 * k2x)
        y2 = y + h * (A21 * k1y + A22 * k2y)
        g1x, g1y, a11, a12, a21, a22 = field_jac(x1, y1, c, d, e)
        g2x, g2y, b11, b12, b21, b22 = field_jac(x2, y2, c, d, e)
        # residual K - f(z + h A K)
        r[0] = g1x - k1x
        r[1] = g1y - k1y
        r[2] = g2x - k2x
        r[3] = g2y - k2y
        # Jacobian of the residual equation: I - h (A (x) J_i)
        m[0, 0] = 1.0 - h * A11 * a11
        m[0, 1] = -h * A11 * a12
        m[0, 2] = -h * A12 * a11
        m[0, 3] = -h * A12 * a12
        m[1, 0] = -h * A11 * a21
        m[1, 1] = 1.0 - h * A11 * a22
        m[1, 2] = -h * A12 * a21
        m[1, 3] = -h * A12 * a22
        m[2, 0] = -h * A21 * b11
        m[2, 1] = -h * A21 * b12
        m[2, 2] = 1.0 - h * A22 * b11
        m[2, 3] = -h * A22 * b12
        m[3, 0] = -h * A21 * b21
        m[3, 1] = -h * A21 * b22
        m[3, 2] = -h * A22 * b21
        m[3, 3] = 1.0 - h * A22 * b22
        _solve4(m, r)
        k1x += r[0]
        k1y += r[1]
        k2x += r[2]
        k2y += r[3]
        delta = max(max(abs(r[0]), abs(r[1])), max(abs(r[2]), abs(r[3])))
        scale = max(1.0, max(abs(k1x), abs(k1y)))
        if delta * h <= tol * scale:
            return x + 0.5 * h * (k1x + k2x), y + 0.5 * h * (k1y + k2y), True
    return x + 0.5 * h * (k1x + k2x), y + 0.5 * h * (k1y + k2y), False


@njit(cache=True)
def flow_point(u, y, c, d, e, n_steps, direction, tol):
    """Time-(+-1) map of one point of the lift; returns (u, y, status)."""
    if c == 0.0 or abs(y) >= e:
        return u, y, STATUS_OK
    if abs(y) <= d:
        y1 = y + direction * c * math.sin(TWO_PI * u)
        if abs(y1) <= d:
            # the path y + s c sin(2 pi u), 0 <= s <= 1, never leaves |y| <= d
            return u, y1, STATUS_OK
    m = np.empty((4, 4))
    r = np.empty(4)
    h = direction / n_steps
    x = u
    for _ in range(n_steps):
        x, y, ok = gl4_step(x, y, h, c, d, e, tol, 30, m, r)
        if not ok:
            return x, y, STATUS_NEWTON
    return x, y, STATUS_OK


@njit(cache=True)
def flow_many(u, y, c, d, e, n_steps, direction, tol):
    """Vectorised flow_point; status is the max status over all points."""
    ou = np.empty_like(u)
    oy = np.empty_like(y)
    status = STATUS_OK
    for i in range(u.size):
        a, b, s = flow_point(u[i], y[i], c, d, e, n_steps, direction, tol)
        ou[i] = a
        oy[i] = b
        if s > status:
            status = s
    return ou, oy, status


def stiffness(c: float, d: float, e: float) -> float:
    """Upper bound on the operator norm of the field Jacobian."""
    w = e - d
    # max |S'| = 140/64 at t = 1/2; max |S''| over [0, 1] from a fine scan
    t = np.linspace(0.0, 1.0, 4001)
    s2 = np.max(np.abs(420.0 * t ** 2 * (1 - t) ** 2 * (1 - 2 * t)))
    c1 = 140.0 / 64.0 / w
    c2 = s2 / w ** 2
    j11 = c * c1
    j12 = c / math.pi * c2
    j21 = TWO_PI * c
    return float(math.hypot(math.hypot(j11, j12), math.hypot(j21, j11)))


# ---------------------------------------------------------------------------
# complex-step differentiation: the same integrator in complex arithmetic.
# Branches look at real parts only, so Im F(z + i t) / t is the derivative
# of the real map without subtractive cancellation.
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _chi3_c(y, d, e):
    yr = y.real
    ay = y if yr >= 0 else -y
    if ay.real <= d:
        return 1.0 + 0j, 0j, 0j
    if ay.real >= e:
        return 0j, 0j, 0j
    w = e - d
    t = (ay - d) / w
    t2 = t * t
    t3 = t2 * t
    t4 = t3 * t
    s = t4 * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)))
    s1 = 140.0 * t3 * (1.0 - t) ** 3
    s2 = 420.0 * t2 * (1.0 - t) ** 2 * (1.0 - 2.0 * t)
    sg = 1.0 if yr > 0 else -1.0
    return 1.0 - s, -sg * s1 / w, -s2 / (w * w)


@njit(cache=True, inline="always")
def _field_jac_c(x, y, c, d, e):
    ch, ch1, ch2 = _chi3_c(y, d, e)
    cs = cmath.cos(TWO_PI * x)
    sn = cmath.sin(TWO_PI * x)
    fx = c / TWO_PI * (cs - 1.0) * ch1
    fy = c * sn * ch
    return fx, fy, -c * sn * ch1, c / TWO_PI * (cs - 1.0) * ch2, TWO_PI * c * cs * ch, c * sn * ch1


@njit(cache=True)
def _solve4_c(m, r):
    for col in range(4):
        piv = col
        best = abs(m[col, col])
        for row in range(col + 1, 4):
            if abs(m[row, col]) > best:
                best = abs(m[row, col])
                piv = row
        if piv != col:
            for k in range(4):
                tmp = m[col, k]
                m[col, k] = m[piv, k]
                m[piv, k] = tmp
            tmp = r[col]
            r[col] = r[piv]
            r[piv] = tmp
        for row in range(col + 1, 4):
            f = m[row, col] / m[col, col]
            for k in range(col, 4):
                m[row, k] -= f * m[col, k]
            r[row] -= f * r[col]
    for col in range(3, -1, -1):
        s = r[col]
        for k in range(col + 1, 4):
            s -= m[col, k] * r[k]
        r[col] = s / m[col, col]


@njit(cache=True)
def _gl4_step_c(x, y, h, c, d, e, tol, max_iter, m, r):
    fx, fy, _, _, _, _ = _field_jac_c(x, y, c, d, e)
    k1x = fx
    k1y = fy
    k2x = fx
    k2y = fy
    for _ in range(max_iter):
        x1 = x + h * (A11 * k1x + A12 * k2x)
        y1 = y + h * (A11 * k1y + A12 * k2y)
        x2 = x + h * (A21 * k1x + A22 * k2x)
        y2 = y + h * (A21 * k1y + A22 * k2y)
        g1x, g1y, a11, a12, a21, a22 = _field_jac_c(x1, y1, c, d, e)
        g2x, g2y, b11, b12, b21, b22 = _field_jac_c(x2, y2, c, d, e)
        r[0] = g1x - k1x
        r[1] = g1y - k1y
        r[2] = g2x - k2x
        r[3] = g2y - k2y
        m[0, 0] = 1.0 - h * A11 * a11
        m[0, 1] = -h * A11 * a12
        m[0, 2] = -h * A12 * a11
        m[0, 3] = -h * A12 * a12
        m[1, 0] = -h * A11 * a21
        m[1, 1] = 1.0 - h * A11 * a22
        m[1, 2] = -h * A12 * a21
        m[1, 3] = -h * A12 * a22
        m[2, 0] = -h * A21 * b11
        m[2, 1] = -h * A21 * b12
        m[2, 2] = 1.0 - h * A22 * b11
        m[2, 3] = -h * A22 * b12
        m[3, 0] = -h * A21 * b21
        m[3, 1] = -h * A21 * b22
        m[3, 2] = -h * A22 * b21
        m[3, 3] = 1.0 - h * A22 * b22
        _solve4_c(m, r)
        k1x += r[0]
        k1y += r[1]
        k2x += r[2]
        k2y += r[3]
        delta = max(max(abs(r[0]), abs(r[1])), max(abs(r[2]), abs(r[3])))
        scale = max(1.0, max(abs(k1x), abs(k1y)))
        if delta * h <= tol * scale:
            return x + 0.5 * h * (k1x + k2x), y + 0.5 * h * (k1y + k2y), True
    return x + 0.5 * h * (k1x + k2x), y + 0.5 * h * (k1y + k2y), False


@njit(cache=True)
def _flow_point_c(u, y, c, d, e, n_steps, direction, tol):
    if c == 0.0 or abs(y.real) >= e:
        return u, y, STATUS_OK
    if abs(y.real) <= d:
        y1 = y + direction * c * cmath.sin(TWO_PI * u)
        if abs(y1.real) <= d:
            return u, y1, STATUS_OK
    m = np.empty((4, 4), dtype=np.complex128)
    r = np.empty(4, dtype=np.complex128)
    h = direction / n_steps
    x = u
    for _ in range(n_steps):
        x, y, ok = _gl4_step_c(x, y, h, c, d, e, tol, 30, m, r)
        if not ok:
            return x, y, STATUS_NEWTON
    return x, y, STATUS_OK


@njit(cache=True)
def jacobian_complex_step(u, y, c, d, e, n_steps, direction, tol, t):
    """Jacobians of the time-(+-1) map at each point, shape (n, 2, 2), plus status."""
    out = np.empty((u.size, 2, 2))
    status = STATUS_OK
    for i in range(u.size):
        a, b, s1 = _flow_point_c(u[i] + 1j * t, y[i] + 0j, c, d, e, n_steps, direction, tol)
        out[i, 0, 0] = a.imag / t
        out[i, 1, 0] = b.imag / t
        a, b, s2 = _flow_point_c(u[i] + 0j, y[i] + 1j * t, c, d, e, n_steps, direction, tol)
        out[i, 0, 1] = a.imag / t
        out[i, 1, 1] = b.imag / t
        status = max(status, max(s1, s2))
    return out, status
