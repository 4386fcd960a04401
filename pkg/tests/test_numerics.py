import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from accelera.exceptions import DomainError
from accelera.numerics import (
    Interval,
    IntervalMatrix,
    PolarRange,
    dot_bounds,
    ival_op,
    ival_pow,
    polar_pow_range,
    sum_bounds,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def intervals(draw):
    a, b = draw(finite), draw(finite)
    return Interval(min(a, b), max(a, b))


def exact(x, y, kind):
    x, y = Fraction(x), Fraction(y)
    if kind == "add":
        return x + y
    if kind == "sub":
        return x - y
    if kind == "mul":
        return x * y
    return x / y


def test_add_integer_endpoints():
    assert ival_op(Interval(1, 2), Interval(3, 4), "add") == Interval(4, 6)


def test_zero_annihilates():
    assert ival_op(Interval(0, 0), Interval(-5, 5), "mul") == Interval(0, 0)


def test_tenth_plus_fifth_encloses_three_tenths():
    r = ival_op(Interval.point(0.1), Interval.point(0.2), "add")
    # exact sum of the two binary doubles
    assert r.lo <= Fraction(0.1) + Fraction(0.2) <= r.hi
    with mp.workdps(40):
        assert r.lo <= mp.mpf(0.1) + mp.mpf(0.2) <= r.hi
    assert r.lo < r.hi


def test_division_by_zero_interval():
    with pytest.raises(DomainError):
        ival_op(Interval(1, 2), Interval(-1, 1), "div")


def test_unknown_kind():
    with pytest.raises(ValueError):
        ival_op(Interval(1, 2), Interval(1, 2), "pow")


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        Interval(2, 1)


def within(r, e):
    lo_ok = r.lo == -math.inf or Fraction(r.lo) <= e
    hi_ok = r.hi == math.inf or e <= Fraction(r.hi)
    return lo_ok and hi_ok


@given(intervals(), intervals(), st.sampled_from(["add", "sub", "mul", "div"]), st.data())
def test_containment_of_exact_results(a, b, kind, data):
    if kind == "div" and b.lo <= 0 <= b.hi:
        return
    x = data.draw(st.floats(min_value=a.lo, max_value=a.hi))
    y = data.draw(st.floats(min_value=b.lo, max_value=b.hi))
    r = ival_op(a, b, kind)
    assert within(r, exact(x, y, kind))


def test_containment_bulk(rng):
    kinds = ["add", "sub", "mul", "div"]
    for _ in range(20000):
        x, y = rng.normal(size=2) * 10.0 ** rng.integers(-3, 4, size=2)
        kind = kinds[rng.integers(4)]
        if kind == "div" and y == 0:
            continue
        r = ival_op(Interval.point(x), Interval.point(y), kind)
        assert within(r, exact(x, y, kind))


@given(intervals(), intervals(), st.floats(0, 10), st.floats(0, 10), st.sampled_from(["add", "sub", "mul"]))
def test_monotone_in_operands(a, b, wa, wb, kind):
    a2 = Interval(a.lo - wa, a.hi + wa)
    b2 = Interval(b.lo - wb, b.hi + wb)
    assert ival_op(a, b, kind).issubset(ival_op(a2, b2, kind))


def test_pow_exact_power_of_two():
    assert ival_pow(Interval(2, 2), 5) == Interval(32, 32)


def test_pow_even_symmetry():
    assert ival_pow(Interval(-1, 1), 2) == Interval(0, 1)


def test_pow_thermostat_modulus():
    r = ival_pow(Interval.point(0.985), 32)
    with mp.workdps(50):
        ref = mp.mpf(0.985) ** 32
    assert r.lo <= ref <= r.hi
    # frozen extended-precision value
    assert r.contains(0.6165373280202732)


@given(intervals(), st.integers(0, 80), st.data())
def test_pow_containment(a, n, data):
    lo, hi = (min(max(t, -8.0), 8.0) for t in (a.lo, a.hi))
    a = Interval(lo, hi)
    x = data.draw(st.floats(min_value=a.lo, max_value=a.hi))
    r = ival_pow(a, n)
    e = Fraction(x) ** n
    assert Fraction(r.lo) <= e <= Fraction(r.hi)


def test_pow_negative_exponent_rejected():
    with pytest.raises(ValueError):
        ival_pow(Interval(1, 2), -1)


def test_polar_real_unit():
    pr = polar_pow_range(1 + 0j, 10)
    assert pr.radius == Interval(1, 1)
    assert pr.angle == Interval(0, 0)


def test_polar_thermostat_pair():
    lam = 0.985 * complex(math.cos(0.07), math.sin(0.07))
    pr = polar_pow_range(lam, 32)
    assert pr.radius.hi >= 1.0
    assert pr.radius.lo <= 0.6165373280202732
    assert pr.angle.lo == 0.0
    assert pr.angle.hi == pytest.approx(2.24, abs=1e-12)
    for k in range(33):
        assert pr.contains(lam ** k)


def test_polar_angle_saturates():
    pr = polar_pow_range(2 * complex(math.cos(math.pi), math.sin(math.pi)), 2)
    assert pr.radius.lo == 1.0
    assert pr.radius.hi == pytest.approx(4.0)
    assert pr.angle.hi >= 2 * math.pi


@given(st.floats(0.05, 1.5), st.floats(-math.pi, math.pi), st.integers(1, 64))
def test_polar_radius_brute_force(r, t, n):
    lam = r * complex(math.cos(t), math.sin(t))
    pr = polar_pow_range(lam, n)
    for k in range(n + 1):
        with mp.workdps(40):
            mod = abs(mp.mpc(lam.real, lam.imag) ** k)
        assert pr.radius.lo <= mod <= pr.radius.hi


def test_polar_range_rejects_bad_angle():
    with pytest.raises(ValueError):
        PolarRange(Interval(0, 1), Interval(0, 7))


def test_interval_matrix_product_encloses(rng):
    A = rng.normal(size=(4, 4))
    B = rng.normal(size=(4, 4))
    P = IntervalMatrix.point(A) @ IntervalMatrix.point(B)
    with mp.workdps(50):
        E = mp.matrix(A.tolist()) * mp.matrix(B.tolist())
    for i in range(4):
        for j in range(4):
            assert P.lo[i, j] <= E[i, j] <= P.hi[i, j]


def test_sum_and_dot_bounds(rng):
    T = rng.normal(size=(50, 30)) * 10.0 ** rng.integers(-8, 8, size=(50, 30))
    lo, hi = sum_bounds(T)
    for row, a, b in zip(T, lo, hi):
        e = sum(Fraction(x) for x in row)
        assert Fraction(a) <= e <= Fraction(b)
    X = rng.normal(size=(20, 5))
    y = rng.normal(size=5)
    lo, hi = dot_bounds(X, y[None, :])
    for row, a, b in zip(X, lo, hi):
        e = sum(Fraction(u) * Fraction(v) for u, v in zip(row, y))
        assert Fraction(a) <= e <= Fraction(b)
