import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from accelera.exceptions import EmptySetError, UnboundedError
from accelera.geometry import (
    Ball,
    HullJoin,
    Intersection,
    LinearImage,
    MinkowskiSum,
    PointSet,
    Polytope,
    Scaled,
    ball_overapprox,
    rotate_direction,
    support,
    support_props_combinators,
    template_concretize,
)
from accelera.numerics import Interval
from oracles import box_vertices, polytope_vertices, vertex_support

UNIT = Polytope.box([-1, -1], [1, 1])


def random_polytope(rng, p, r=None):
    r = r or 3 * p + 4
    C = np.vstack([rng.normal(size=(r, p)), np.eye(p), -np.eye(p)])
    d = np.concatenate([rng.uniform(0.5, 2.0, size=r), np.full(2 * p, 3.0)])
    return Polytope(C, d)


def test_unit_box_axis():
    assert support(UNIT, [1, 0]) == Interval(1, 1)


def test_thermostat_initial_set():
    X0 = Polytope.box([5, 0], [40, 1])
    assert support(X0, [1, 0]).hi == 40


@pytest.mark.parametrize("p", [2, 3])
def test_random_polytope_against_vertices(rng, p):
    for _ in range(5):
        P = random_polytope(rng, p)
        V = polytope_vertices(P.C, P.d)
        dirs = rng.normal(size=(20, p))
        lo, hi = P.pair(dirs)
        for v, a, b in zip(dirs, lo, hi):
            ref = vertex_support(V, v)
            assert b >= ref - 1e-12
            assert b - ref <= 1e-9 * (1 + abs(ref))
            assert a <= b


def test_vertex_path_matches_lp(rng):
    P = random_polytope(rng, 4, 30)
    Q = Polytope(P.C, P.d)
    dirs = rng.normal(size=(200, 4))
    fast = P.upper(dirs)
    slow = np.array([Q._lp(v)[1] for v in dirs])
    assert np.all(np.abs(fast - slow) <= 1e-9 * (1 + np.abs(slow)))


def test_unbounded_direction_is_infinite():
    half = Polytope(np.array([[1.0, 0.0]]), np.array([1.0]))
    assert support(half, [0, 1]).hi == math.inf
    assert support(half, [1, 0]).hi == pytest.approx(1.0)


def test_empty_polytope_raises():
    P = Polytope(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]), np.array([0.0, -1.0, 1.0]))
    assert P.is_empty()
    with pytest.raises(EmptySetError):
        support(P, [1, 0])


def test_zero_row_rejected():
    with pytest.raises(ValueError):
        Polytope(np.array([[0.0, 0.0]]), np.array([1.0]))


def test_scaled_box():
    assert support_props_combinators(UNIT, k=2, v=[0, 1], kind="scale").hi == pytest.approx(2)


def test_minkowski_doubling():
    assert support_props_combinators(UNIT, UNIT, v=[1, 0], kind="sum").hi == pytest.approx(2)


def test_linear_image_swap():
    X = Polytope.box([0, 0], [1, 2])
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    r = support_props_combinators(X, A_map=A, v=[1, 0], kind="image")
    ref = vertex_support(box_vertices([0, 0], [1, 2]) @ A.T, [1, 0])
    assert r.hi == pytest.approx(ref) == pytest.approx(2)


def test_hull_and_meet():
    X = Polytope.box([0, 0], [1, 1])
    Y = Polytope.box([2, -1], [3, 0])
    assert support_props_combinators(X, Y, v=[1, 0], kind="hull").hi == pytest.approx(3)
    meet = support_props_combinators(X, Y, v=[1, 0], kind="meet")
    assert meet.hi == pytest.approx(1)


@pytest.mark.parametrize("p", [2, 3])
def test_minkowski_against_sum_oracle(rng, p):
    P = random_polytope(rng, p)
    Q = random_polytope(rng, p)
    VP = polytope_vertices(P.C, P.d)
    VQ = polytope_vertices(Q.C, Q.d)
    S = (VP[:, None, :] + VQ[None, :, :]).reshape(-1, p)
    M = MinkowskiSum(P, Q)
    for v in rng.normal(size=(30, p)):
        ref = vertex_support(S, v)
        hi = M.support(v).hi
        assert ref - 1e-9 <= hi <= ref + 1e-8 * (1 + abs(ref))


def test_template_of_circle_is_box():
    circle = Ball(np.zeros(2), [(0, 1)], [1.0])
    T = template_concretize(circle, np.vstack([np.eye(2), -np.eye(2)]))
    assert T.is_box
    lo, hi = T.box_bounds()
    assert np.allclose(lo, -1) and np.allclose(hi, 1)


def test_template_contains_zonotope_samples(rng):
    G = rng.normal(size=(2, 5))
    Z = LinearImage(G, Polytope.box(-np.ones(5), np.ones(5)))
    ang = 2 * np.pi * np.arange(32) / 32
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    T = template_concretize(Z, dirs)
    pts = rng.uniform(-1, 1, size=(2000, 5)) @ G.T
    assert np.all(pts @ T.C.T <= T.d + 1e-12)


def test_ball_of_point_has_zero_radius():
    B = ball_overapprox(Polytope.point([3.0, 4.0]), [(0, 1)])
    assert np.allclose(B.center, [3, 4])
    assert B.radii[0] == 0.0


def test_ball_of_square_reaches_corner():
    B = ball_overapprox(UNIT, [(0, 1)])
    assert B.radii[0] >= math.sqrt(2)
    # dense sweep oracle of the centred square
    t = np.linspace(0, 2 * np.pi, 20001)
    sweep = np.max(np.abs(np.cos(t)) + np.abs(np.sin(t)))
    assert B.radii[0] == pytest.approx(sweep, rel=2e-3)


def test_ball_thermostat_input_image():
    from accelera.linalg import jordan_decompose

    A = np.array([[0.97, 0.1], [-0.05, 1.0]])
    Bm = np.array([[0.02, 0.0], [0.0, 0.05]])
    jf = jordan_decompose(A)
    U = Polytope.box([5, 0], [40, 300])
    image = LinearImage(jf.S_inv @ Bm, U)
    ball = ball_overapprox(image, [(0, 1)])
    verts = box_vertices([5, 0], [40, 300]) @ (jf.S_inv @ Bm).T
    t = np.linspace(0, 2 * np.pi, 20001)
    dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
    sweep = np.max(np.max((verts - ball.center) @ dirs.T, axis=0))
    assert sweep <= ball.radii[0] <= sweep * 1.01
    assert np.all(np.linalg.norm(verts - ball.center, axis=1) <= ball.radii[0])


def test_ball_unbounded_raises():
    half = Polytope(np.array([[1.0, 0.0]]), np.array([1.0]))
    with pytest.raises(UnboundedError):
        ball_overapprox(half, [(0, 1)])


def test_ball_dominates_set(rng):
    for _ in range(10):
        P = random_polytope(rng, 4)
        B = ball_overapprox(P, [(0, 1), (2, 3)])
        for v in rng.normal(size=(100, 4)):
            w = v.copy()
            w[2:] = 0 if rng.random() < 0.5 else w[2:]
            assert B.support(w).hi >= P.support(w).hi - 1e-12


def test_rotation_ball_invariant():
    ball = Ball(np.zeros(2), [(0, 1)], [1.0])
    r = rotate_direction(ball, np.array([1.0, 0.0]), Interval(0.3, 2.0))
    assert r.hi == pytest.approx(1.0)


def test_rotation_box_quarter_turn():
    r = rotate_direction(UNIT, np.array([1.0, 0.0]), Interval(0.0, math.pi / 2))
    t = np.linspace(0, math.pi / 2, 100001)
    sweep = float(np.max(np.cos(t) + np.sin(t)))
    assert r.hi >= sweep - 1e-12
    assert r.hi == pytest.approx(math.sqrt(2), rel=1e-3)


def test_rotation_zero_angle():
    r = rotate_direction(UNIT, np.array([0.3, 0.7]), Interval(0.0, 0.0))
    assert r.hi == pytest.approx(support(UNIT, [0.3, 0.7]).hi)


@st.composite
def small_polytopes(draw):
    p = draw(st.integers(2, 4))
    seed = draw(st.integers(0, 2 ** 31))
    r = np.random.default_rng(seed)
    return random_polytope(r, p), r


@given(small_polytopes())
def test_sublinear(data):
    P, r = data
    for _ in range(10):
        v1, v2 = r.normal(size=(2, P.dim))
        assert P.support(v1 + v2).hi <= P.support(v1).hi + P.support(v2).hi + 1e-9


@given(small_polytopes(), st.floats(0, 100))
def test_positive_homogeneity(data, k):
    P, r = data
    v = r.normal(size=P.dim)
    assert P.support(k * v).hi == pytest.approx(k * P.support(v).hi, rel=1e-9, abs=1e-9)


@given(small_polytopes())
def test_template_contains_points(data):
    P, r = data
    V = polytope_vertices(P.C, P.d)
    w = r.dirichlet(np.ones(V.shape[0]), size=200)
    pts = w @ V
    dirs = r.normal(size=(12, P.dim))
    T = template_concretize(P, dirs)
    assert np.all(pts @ T.C.T <= T.d + 1e-9)


def test_pointset_and_scaled():
    S = PointSet([[1, 2], [3, -1]])
    assert S.support([1, 0]).hi == 3
    assert Scaled(0.5, S).support([0, 1]).hi == pytest.approx(1.0)
    with pytest.raises(ValueError):
        Scaled(-1, S)


def test_intersection_lower_unknown():
    lo, hi = Intersection(UNIT, Polytope.box([0, 0], [2, 2])).pair(np.array([[1.0, 0.0]]))
    assert lo[0] == -math.inf and hi[0] == pytest.approx(1)


def test_hull_join_lower_bound():
    H = HullJoin(Polytope.box([0, 0], [1, 1]), Polytope.point([5, 5]))
    r = H.support([1, 1])
    assert r.lo <= 10 <= r.hi
