"""Outward-rounded interval arithmetic.

Scalars use error-free exactness checks: every operation is carried out in
hardware floating point and then compared against the exact rational result
(:class:`fractions.Fraction`).  Exact results stay points; inexact ones get the
neighbouring float on the side where the true value lies.  Array helpers below
use a-priori rounding-error bounds instead, since they sit on hot paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exceptions import DomainError

EPS = np.finfo(float).eps
UNIT_ROUNDOFF = EPS / 2
TINY = np.finfo(float).tiny
TWO_PI_UP = math.nextafter(math.tau, math.inf)


def next_up(x):
    return np.nextafter(x, np.inf)


def next_down(x):
    return np.nextafter(x, -np.inf)


def gamma(n):
    """Classical bound ``n*u/(1-n*u)`` on the relative error of an ``n``-term float sum/dot product."""
    nu = n * UNIT_ROUNDOFF
    if nu >= 1:
        return np.inf
    return nu / (1 - nu) * (1 + 4 * EPS)


def _enclose(exact, approx):
    """Tightest float interval containing ``exact`` given its rounded value ``approx``."""
    if math.isinf(approx) or math.isnan(approx):
        if math.isnan(approx):
            return -math.inf, math.inf
        return (approx, approx) if approx > 0 else (-math.inf, math.nextafter(approx, math.inf))
    fa = Fraction(approx)
    if fa == exact:
        return approx, approx
    if fa < exact:
        return approx, math.nextafter(approx, math.inf)
    return math.nextafter(approx, -math.inf), approx


def _mul_bounds(x, y):
    if x == 0 or y == 0:
        return 0.0, 0.0
    if math.isinf(x) or math.isinf(y):
        v = math.inf if (x > 0) == (y > 0) else -math.inf
        return v, v
    return _enclose(Fraction(x) * Fraction(y), x * y)


def _add_bounds(x, y):
    if math.isinf(x) or math.isinf(y):
        v = x + y
        if math.isnan(v):
            raise DomainError("inf - inf in interval addition")
        return v, v
    return _enclose(Fraction(x) + Fraction(y), x + y)


@dataclass(frozen=True)
class Interval:
    """Closed real interval ``[lo, hi]`` with outward-rounded arithmetic."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        if lo == math.inf or hi == -math.inf:
            raise ValueError("interval must contain a finite part")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x):
        return cls(x, x)

    @classmethod
    def hull_of(cls, values):
        values = [float(v) for v in values]
        return cls(min(values), max(values))

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def is_bounded(self):
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def contains(self, x):
        if isinstance(x, Interval):
            return self.lo <= x.lo and x.hi <= self.hi
        return self.lo <= x <= self.hi

    __contains__ = contains

    def issubset(self, other):
        return other.contains(self)

    def hull(self, other):
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __add__(self, other):
        other = _as_interval(other)
        return Interval(_add_bounds(self.lo, other.lo)[0], _add_bounds(self.hi, other.hi)[1])

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-_as_interval(other))

    def __rsub__(self, other):
        return _as_interval(other) - self

    def __mul__(self, other):
        other = _as_interval(other)
        los, his = [], []
        for x in (self.lo, self.hi):
            for y in (other.lo, other.hi):
                lo, hi = _mul_bounds(x, y)
                los.append(lo)
                his.append(hi)
        return Interval(min(los), max(his))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_interval(other)
        if other.lo <= 0 <= other.hi:
            raise DomainError(f"division by interval containing zero: {other}")
        recip_lo = _enclose(1 / Fraction(other.hi), 1 / other.hi)[0] if math.isfinite(other.hi) else 0.0
        recip_hi = _enclose(1 / Fraction(other.lo), 1 / other.lo)[1]
        recip = Interval(min(recip_lo, recip_hi), max(recip_lo, recip_hi))
        if not all(math.isfinite(v) for v in (self.lo, self.hi, other.lo, other.hi)):
            return self * recip
        # direct quotients are tighter than multiplying by the rounded reciprocal
        los, his = [], []
        for x in (self.lo, self.hi):
            for y in (other.lo, other.hi):
                lo, hi = _enclose(Fraction(x) / Fraction(y), x / y)
                los.append(lo)
                his.append(hi)
        return Interval(min(los), max(his))

    def __pow__(self, n):
        return ival_pow(self, n)

    def __repr__(self):
        return f"Interval({self.lo!r}, {self.hi!r})"


def _as_interval(x):
    if isinstance(x, Interval):
        return x
    return Interval.point(float(x))


def ival_op(a, b, kind):
    """Apply ``kind`` in {"add", "sub", "mul", "div"} to two intervals."""
    a, b = _as_interval(a), _as_interval(b)
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    if kind == "div":
        return a / b
    raise ValueError(f"unknown interval operation {kind!r}")


def _pow_point_bounds(x, n):
    if x == 0:
        return (0.0, 0.0) if n > 0 else (1.0, 1.0)
    if math.isinf(x):
        v = x ** n
        return v, v
    approx = x ** n if abs(math.log2(abs(x)) * n) < 1000 else math.copysign(math.inf, x) ** n
    if n <= 64 and math.isfinite(approx):
        return _enclose(Fraction(x) ** n, approx)
    # binary powering with interval multiplications
    acc = Interval.point(1.0)
    base = Interval.point(x)
    k = n
    while k:
        if k & 1:
            acc = acc * base
        k >>= 1
        if k:
            base = base * base
    return acc.lo, acc.hi


def ival_pow(a, n):
    """Enclosure of ``{x**n : x in a}`` for a natural exponent ``n``."""
    a = _as_interval(a)
    n = int(n)
    if n < 0:
        raise ValueError("exponent must be a natural number")
    if n == 0:
        return Interval.point(1.0)
    lo_lo, lo_hi = _pow_point_bounds(a.lo, n)
    hi_lo, hi_hi = _pow_point_bounds(a.hi, n)
    if n % 2 == 1 or a.lo >= 0:
        return Interval(lo_lo, hi_hi)
    if a.hi <= 0:
        return Interval(hi_lo, lo_hi)
    return Interval(0.0, max(lo_hi, hi_hi))


@dataclass(frozen=True)
class PolarRange:
    """Set of complex numbers ``r * exp(i*t)`` with ``r`` in ``radius`` and ``t`` in ``angle``."""

    radius: Interval
    angle: Interval

    def __post_init__(self):
        if self.radius.lo < 0:
            raise ValueError("radius must be non-negative")
        if self.angle.lo < 0 or self.angle.hi > TWO_PI_UP:
            raise ValueError("angle must lie within [0, 2*pi]")

    def contains(self, z):
        z = complex(z)
        r = abs(z)
        if not self.radius.contains(r):
            return False
        if r == 0 or self.angle.hi >= math.tau:
            return True
        t = math.atan2(z.imag, z.real) % math.tau
        return self.angle.contains(t) or self.angle.contains(math.tau - t)


def polar_pow_range(lam, n):
    """Polar enclosure of ``{lam**k : 0 <= k <= n}``.

    Radius is ``[min(1, |lam|**n), max(1, |lam|**n)]``; the angle range is the
    accumulated rotation ``[0, min(n*theta, 2*pi)]`` with ``theta = |arg lam|``.
    """
    lam = complex(lam)
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    r = math.hypot(lam.real, lam.imag)
    if lam.imag == 0 or lam.real == 0:
        r_int = Interval.point(r)
    else:
        r_int = Interval(max(0.0, math.nextafter(r, -math.inf)), math.nextafter(r, math.inf))
    rn = ival_pow(r_int, n)
    radius = Interval(min(1.0, rn.lo), max(1.0, rn.hi))
    if lam.imag == 0:
        theta_hi = 0.0 if lam.real >= 0 else math.pi
    else:
        theta_hi = math.nextafter(abs(math.atan2(lam.imag, lam.real)), math.inf)
    if theta_hi == 0.0:
        return PolarRange(radius, Interval(0.0, 0.0))
    acc = Interval.point(theta_hi) * n
    angle_hi = acc.hi if acc.hi < math.tau else TWO_PI_UP
    return PolarRange(radius, Interval(0.0, angle_hi))


# --------------------------------------------------------------------------
# array level


@dataclass(frozen=True)
class IntervalMatrix:
    """Elementwise interval matrix stored as ``lo``/``hi`` arrays."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError("lo/hi shape mismatch")
        if np.any(lo > hi):
            raise ValueError("interval matrix with lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m.copy(), m.copy())

    @classmethod
    def from_mid_rad(cls, mid, rad):
        mid = np.asarray(mid, dtype=float)
        rad = np.asarray(rad, dtype=float)
        return cls(next_down(mid - rad), next_up(mid + rad))

    @property
    def shape(self):
        return self.lo.shape

    @property
    def mid(self):
        return 0.5 * self.lo + 0.5 * self.hi

    @property
    def rad(self):
        m = self.mid
        return next_up(np.maximum(self.hi - m, m - self.lo))

    def mag(self):
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, m):
        m = np.asarray(m, dtype=float)
        return bool(np.all(self.lo <= m) and np.all(m <= self.hi))

    def __getitem__(self, idx):
        return Interval(self.lo[idx], self.hi[idx])

    def __add__(self, other):
        other = other if isinstance(other, IntervalMatrix) else IntervalMatrix.point(other)
        return IntervalMatrix(next_down(self.lo + other.lo), next_up(self.hi + other.hi))

    def __sub__(self, other):
        other = other if isinstance(other, IntervalMatrix) else IntervalMatrix.point(other)
        return IntervalMatrix(next_down(self.lo - other.hi), next_up(self.hi - other.lo))

    def __neg__(self):
        return IntervalMatrix(-self.hi, -self.lo)

    def scale(self, c):
        c = float(c)
        a, b = self.lo * c, self.hi * c
        return IntervalMatrix(next_down(np.minimum(a, b)), next_up(np.maximum(a, b)))

    def __matmul__(self, other):
        other = other if isinstance(other, IntervalMatrix) else IntervalMatrix.point(other)
        am, ar = self.mid, self.rad
        bm, br = other.mid, other.rad
        k = am.shape[-1]
        cm = am @ bm
        rad = np.abs(am) @ br + ar @ (np.abs(bm) + br) + gamma(k + 2) * (np.abs(am) @ np.abs(bm)) + k * TINY
        rad = rad * (1 + (k + 4) * EPS)
        return IntervalMatrix.from_mid_rad(cm, rad)

    def __rmatmul__(self, other):
        return IntervalMatrix.point(other) @ self


# --------------------------------------------------------------------------
# error-free transformations, vectorised


_SPLITTER = 134217729.0  # 2**27 + 1


def two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def _widen(res, err_bound, exact):
    lo = np.where(exact, res, next_down(res - err_bound))
    hi = np.where(exact, res, next_up(res + err_bound))
    return lo, hi


def dot_bounds(X, Y):
    """Row-wise enclosure of ``sum(X * Y, axis=-1)`` (compensated, exact results stay exact)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    X, Y = np.broadcast_arrays(X, Y)
    n = X.shape[-1]
    if n == 0:
        z = np.zeros(X.shape[:-1])
        return z, z
    with np.errstate(invalid="ignore", over="ignore"):
        prods = X * Y
        if not np.all(np.isfinite(prods)) or np.max(np.abs(X), initial=0) > 2.0 ** 500 or np.max(np.abs(Y), initial=0) > 2.0 ** 500:
            s = np.sum(prods, axis=-1)
            pad = gamma(n + 1) * np.sum(np.abs(prods), axis=-1) + n * TINY
            return next_down(s - pad), next_up(s + pad)
        p, s = two_prod(X[..., 0], Y[..., 0])
        exact = s == 0
        for i in range(1, n):
            h, r = two_prod(X[..., i], Y[..., i])
            p, q = two_sum(p, h)
            exact &= (q == 0) & (r == 0)
            s = s + (q + r)
        res = p + s
        exact &= s == 0
        g = gamma(n)
        bound = EPS * np.abs(res) + g * g * np.sum(np.abs(prods), axis=-1) + 2 * n * TINY
    return _widen(res, bound, exact)


def sum_bounds(T):
    """Enclosure of ``sum(T, axis=-1)`` for already-exact float terms."""
    T = np.asarray(T, dtype=float)
    n = T.shape[-1]
    if n == 0:
        z = np.zeros(T.shape[:-1])
        return z, z
    with np.errstate(invalid="ignore", over="ignore"):
        if not np.all(np.isfinite(T)):
            s = np.sum(T, axis=-1)
            return s, s
        p = T[..., 0].copy()
        s = np.zeros_like(p)
        exact = np.ones(p.shape, dtype=bool)
        for i in range(1, n):
            p, q = two_sum(p, T[..., i])
            exact &= q == 0
            s = s + q
        res = p + s
        exact &= s == 0
        g = gamma(n)
        bound = EPS * np.abs(res) + g * g * np.sum(np.abs(T), axis=-1)
    return _widen(res, bound, exact)
