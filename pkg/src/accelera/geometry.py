"""Convex sets described by their support functions.

Every set answers ``pair(V)``: for each row ``v`` of ``V`` a lower and an upper
bound on ``rho(v) = sup{<x, v> : x in X}``.  The upper bound is the one that
matters for soundness; lower bounds are best-effort and may be ``-inf``.
Combinators evaluate lazily through the tree.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, nnls
from scipy.spatial import HalfspaceIntersection

from .exceptions import EmptySetError, NumericError, UnboundedError
from .numerics import EPS, Interval, IntervalMatrix, dot_bounds, gamma, next_down, next_up, sum_bounds

BALL_SAMPLES = 64
VERTEX_DIM_MAX = 8
VERTEX_ROWS_MAX = 400
VERTEX_COUNT_MAX = 20000


def _as_dirs(V, dim):
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[None, :]
    if V.shape[1] != dim:
        raise ValueError(f"direction has dimension {V.shape[1]}, set has {dim}")
    return V


def _up_sum(terms):
    """Upper bound of the row sums of exact float terms (``inf`` propagates)."""
    return sum_bounds(terms)[1]


def _down_sum(terms):
    return sum_bounds(terms)[0]


def _dot_pair(V, x):
    """Bounds on ``V @ x`` row by row."""
    return dot_bounds(V, x[None, :])


class SupportEvaluator:
    """Base class: a closed convex set known through its support function."""

    dim: int

    def pair(self, V):
        """Lower and upper bounds on the support in every row of ``V``."""
        V = _as_dirs(V, self.dim)
        return self._pair(V)

    def _pair(self, V):
        raise NotImplementedError

    def upper(self, V):
        return self.pair(V)[1]

    def support(self, v):
        lo, hi = self.pair(np.asarray(v, dtype=float))
        lo, hi = float(lo[0]), float(hi[0])
        if lo > hi:
            lo = hi
        if hi == -math.inf:
            raise EmptySetError("support of an empty set")
        if lo == math.inf:
            lo = sys.float_info.max
        return Interval(lo, hi)

    def magnitude(self):
        """Upper bound on ``max |x_i|`` over the set (cached)."""
        cached = getattr(self, "_mag", None)
        if cached is not None:
            return cached
        eye = np.eye(self.dim)
        hi = self.upper(np.vstack([eye, -eye])) if self.dim else np.zeros(1)
        mag = float(np.max(hi)) if hi.size else 0.0
        mag = max(mag, 0.0)
        object.__setattr__(self, "_mag", mag)
        return mag

    def box_hull(self):
        """Sound outer box ``(lo, hi)`` per coordinate."""
        eye = np.eye(self.dim)
        hi = self.upper(np.vstack([eye, -eye]))
        return -hi[self.dim:], hi[: self.dim]

    # combinator sugar
    def __add__(self, other):
        return MinkowskiSum(self, other)

    def __rmatmul__(self, M):
        return LinearImage(M, self)


# --------------------------------------------------------------------------
# leaves


class Polytope(SupportEvaluator):
    """``{x : C x <= d}``.

    Boxes (one non-zero per row) use a closed form; everything else goes through
    a linear program whose optimum is certified from the dual solution.
    """

    def __init__(self, C, d, name=None):
        C = np.asarray(C, dtype=float)
        d = np.asarray(d, dtype=float).reshape(-1)
        if C.ndim != 2 or C.shape[0] != d.shape[0]:
            raise ValueError("C must be r x p with len(d) == r")
        if np.any(np.isnan(C)) or np.any(np.isnan(d)) or np.any(np.isinf(C)):
            raise ValueError("polytope data must be finite")
        if C.shape[0] and np.any(np.all(C == 0, axis=1)):
            raise ValueError("polytope has a zero constraint row")
        keep = d < np.inf
        self.C = C[keep]
        self.d = d[keep]
        self.dim = C.shape[1]
        self.name = name
        self._box = self._detect_box()
        self._cache = {}
        self._radius = None
        self._empty = None
        self._vdata = False
        self.lp_calls = 0
        self.uncertified = 0

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        p = lo.shape[0]
        C = np.vstack([np.eye(p), -np.eye(p)])
        d = np.concatenate([hi, -lo])
        return cls(C, d)

    @classmethod
    def point(cls, x):
        x = np.asarray(x, dtype=float)
        return cls.box(x, x)

    def _detect_box(self):
        C, d = self.C, self.d
        p = self.dim
        if C.shape[0] == 0:
            return (np.full(p, -np.inf), np.full(p, np.inf))
        nz = C != 0
        if not np.all(nz.sum(axis=1) == 1):
            return None
        lo = np.full(p, -np.inf)
        hi = np.full(p, np.inf)
        for row, off in zip(C, d):
            j = int(np.flatnonzero(row)[0])
            c = row[j]
            b = Interval.point(off) / Interval.point(c)
            if c > 0:
                hi[j] = min(hi[j], b.hi)
            else:
                lo[j] = max(lo[j], b.lo)
        return lo, hi

    @property
    def is_box(self):
        return self._box is not None

    def box_bounds(self):
        return self._box

    def is_empty(self):
        if self._empty is None:
            if self._box is not None:
                lo, hi = self._box
                self._empty = bool(np.any(lo > hi))
            else:
                res = linprog(np.zeros(self.dim), A_ub=self.C, b_ub=self.d,
                              bounds=[(None, None)] * self.dim, method="highs")
                if res.status == 2:
                    self._empty = True
                elif res.status == 0:
                    self._empty = False
                else:
                    raise NumericError(f"feasibility LP failed: {res.message}")
        return self._empty

    def is_bounded(self):
        lo, hi = self.box_hull()
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def _pair(self, V):
        if self.is_empty():
            raise EmptySetError("support requested on an empty polytope")
        if self._box is not None:
            return _box_pair(V, *self._box)
        lo = np.full(V.shape[0], np.nan)
        hi = np.full(V.shape[0], np.nan)
        if V.shape[0] > 2 * self.dim:
            self._vertex_pair(V, lo, hi)
        for k in np.flatnonzero(np.isnan(hi)):
            lo[k], hi[k] = self._lp(V[k])
        return lo, hi

    def _vertex_data(self):
        """Vertices and their active constraints for small bounded polytopes (else ``None``)."""
        if self._vdata is not False:
            return self._vdata
        self._vdata = None
        C, d = self.C, self.d
        p, r = self.dim, C.shape[0]
        if not (2 <= p <= VERTEX_DIM_MAX) or r > VERTEX_ROWS_MAX or r <= p:
            return None
        if not np.all(np.isfinite(self._coord_radius())):
            return None
        norms = np.linalg.norm(C, axis=1)
        res = linprog(np.r_[np.zeros(p), -1.0], A_ub=np.hstack([C, norms[:, None]]), b_ub=d,
                      bounds=[(None, None)] * p + [(0, None)], method="highs")
        scale = 1.0 + float(np.max(self._coord_radius()))
        if res.status != 0 or res.x[-1] <= 1e-7 * scale:
            return None
        try:
            hs = HalfspaceIntersection(np.hstack([C, -d[:, None]]), res.x[:p])
        except Exception:
            return None
        verts = np.unique(hs.intersections, axis=0)
        if not np.all(np.isfinite(verts)) or verts.shape[0] > VERTEX_COUNT_MAX:
            return None
        slack = d[None, :] - verts @ C.T
        tol = 1e-8 * (np.abs(d)[None, :] + np.abs(verts) @ np.abs(C).T + 1.0)
        active = [np.flatnonzero(row <= t) for row, t in zip(slack, tol)]
        self._vdata = (verts, active)
        return self._vdata

    def _vertex_pair(self, V, lo, hi):
        """Fill ``lo``/``hi`` for the directions a vertex certificate settles; leave the rest NaN.

        Any ``y >= 0`` gives ``rho(v) <= <y, d> + sum |v - C^T y| * radius``, so
        the vertex only chooses ``y``; the bound is sound regardless.
        """
        data = self._vertex_data()
        if data is None:
            return
        verts, active = data
        rad = self._coord_radius()
        best = np.empty(V.shape[0], dtype=int)
        primal = np.empty(V.shape[0])
        step = max(1, 4_000_000 // max(verts.shape[0], 1))
        for i in range(0, V.shape[0], step):
            vals = V[i:i + step] @ verts.T
            best[i:i + step] = np.argmax(vals, axis=1)
            primal[i:i + step] = vals[np.arange(vals.shape[0]), best[i:i + step]]
        for vi in np.unique(best):
            rows = np.flatnonzero(best == vi)
            act = active[vi]
            if act.size < self.dim:
                continue
            Ca = self.C[act]
            Vs = V[rows]
            if act.size == self.dim:
                try:
                    Y = np.linalg.solve(Ca.T, Vs.T).T
                except np.linalg.LinAlgError:
                    continue
            else:
                Y = np.array([nnls(Ca.T, v)[0] for v in Vs])
            Y = np.maximum(Y, 0.0)
            R = Vs - Y @ Ca
            r_err = gamma(act.size + 1) * (Y @ np.abs(Ca) + np.abs(Vs))
            r_abs = np.abs(R) + r_err
            dual = _up_sum(Y * self.d[act][None, :])
            extra = _up_sum(r_abs * rad[None, :])
            h = next_up(dual + extra * (1 + 4 * EPS))
            pr = primal[rows]
            ok = h - pr <= 1e-9 * (1 + np.abs(pr))
            lo[rows[ok]] = np.minimum(pr[ok] - 1e-9 * (1 + np.abs(pr[ok])), h[ok])
            hi[rows[ok]] = h[ok]

    def _coord_radius(self):
        """Certified per-coordinate magnitude bounds (inf where unbounded)."""
        if self._radius is None:
            p = self.dim
            rad = np.full(p, np.inf)
            vals = []
            residuals = []
            for i in range(p):
                for s in (1.0, -1.0):
                    v = np.zeros(p)
                    v[i] = s
                    out = self._solve(v)
                    if out is None:
                        vals.append(np.inf)
                        residuals.append(0.0)
                    else:
                        vals.append(abs(out[0]))
                        residuals.append(out[1])
            vals = np.array(vals).reshape(p, 2)
            res = np.array(residuals).reshape(p, 2)
            rmax = float(np.max(res)) if res.size else 0.0
            if np.all(np.isfinite(vals)) and rmax < 0.5:
                bound = float(np.max(vals)) / (1 - rmax)
                rad[:] = next_up(bound * (1 + 4 * EPS))
            else:
                for i in range(p):
                    m = np.max(vals[i])
                    if np.isfinite(m) and np.max(res[i]) == 0:
                        rad[i] = next_up(m)
            self._radius = rad
        return self._radius

    def _solve(self, v):
        """Solve max <v, x>; return (dual bound, |residual|_1, residual vector, primal value) or None if unbounded."""
        self.lp_calls += 1
        C, d = self.C, self.d
        res = linprog(-v, A_ub=C, b_ub=d, bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 4 or (res.status not in (0, 2, 3)):
            # badly scaled rows: retry on unit normals (same set, different certificate rows)
            norms = np.linalg.norm(C, axis=1)
            C, d = C / norms[:, None], d / norms
            res = linprog(-v, A_ub=C, b_ub=d, bounds=[(None, None)] * self.dim, method="highs-ipm")
        if res.status == 3:
            return None
        if res.status == 2:
            raise EmptySetError("support requested on an empty polytope")
        if res.status != 0:
            raise NumericError(f"support LP failed: {res.message}")
        y = np.maximum(-np.asarray(res.ineqlin.marginals, dtype=float), 0.0)
        r = v - C.T @ y
        r_err = gamma(C.shape[0] + 1) * (np.abs(C.T) @ y + np.abs(v))
        r_abs = np.abs(r) + r_err
        terms = d * y
        dual = float(_up_sum(terms)) if terms.size else 0.0
        primal = float(v @ res.x)
        return dual, float(np.sum(r_abs)), r_abs, primal

    def _lp(self, v):
        key = v.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        out = self._solve(v)
        if out is None:
            val = (math.inf, math.inf)
        else:
            dual, _, r_abs, primal = out
            if np.all(r_abs == 0):
                hi = dual
            else:
                rad = self._coord_radius()
                with np.errstate(invalid="ignore"):
                    extra = np.where(r_abs > 0, r_abs * rad, 0.0)
                hi = float(next_up(dual + float(np.sum(extra)) * (1 + 4 * EPS)))
                if not math.isfinite(hi):
                    # unbounded coordinates with a non-zero dual residual: no certificate
                    self.uncertified += 1
                    hi = float(next_up(max(dual, primal) + 1e-9 * (1 + abs(primal))))
            lo = min(primal - 1e-9 * (1 + abs(primal)), hi)
            val = (lo, hi)
        self._cache[key] = val
        return val

    def __repr__(self):
        return f"Polytope(r={self.C.shape[0]}, p={self.dim})"


def _box_pair(V, lo, hi):
    with np.errstate(invalid="ignore"):
        pick = np.where(V > 0, hi[None, :], np.where(V < 0, lo[None, :], 0.0))
    if np.all(np.isfinite(pick)):
        return dot_bounds(V, pick)
    with np.errstate(invalid="ignore"):
        terms = np.where(V != 0, V * pick, 0.0)
    s = np.sum(terms, axis=1)
    return s, s


class PointSet(SupportEvaluator):
    """Finite set of points (its convex hull)."""

    def __init__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 0:
            raise EmptySetError("empty point set")
        self.points = pts
        self.dim = pts.shape[1]

    def _pair(self, V):
        lo, hi = dot_bounds(V[:, None, :], self.points[None, :, :])
        return np.max(lo, axis=1), np.max(hi, axis=1)


class Ball(SupportEvaluator):
    """``center + product of Euclidean balls``: coordinates in ``groups[s]`` vary within radius ``radii[s]``.

    Coordinates that belong to no group are fixed at the centre.
    """

    def __init__(self, center, groups, radii, meta=None):
        self.center = np.asarray(center, dtype=float)
        self.dim = self.center.shape[0]
        self.groups = [np.asarray(g, dtype=int) for g in groups]
        self.radii = np.asarray(radii, dtype=float)
        if len(self.groups) != self.radii.shape[0]:
            raise ValueError("one radius per group")
        if np.any(self.radii < 0) or np.any(np.isnan(self.radii)):
            raise ValueError("radii must be non-negative")
        seen = np.concatenate(self.groups) if self.groups else np.zeros(0, int)
        if len(set(seen.tolist())) != seen.size:
            raise ValueError("ball groups must be disjoint")
        self.meta = dict(meta or {})

    def radius_of(self, i):
        for g, r in zip(self.groups, self.radii):
            if i in g:
                return float(r)
        return 0.0

    def _pair(self, V):
        lo, hi = _dot_pair(V, self.center)
        if not self.groups:
            return lo, hi
        norms = np.stack([np.linalg.norm(V[:, g], axis=1) for g in self.groups], axis=1)
        norms = norms * (1 + 2 * EPS * max(len(g) for g in self.groups))
        with np.errstate(invalid="ignore"):
            terms = np.where(norms == 0, 0.0, norms * self.radii[None, :])
        return lo + _down_sum(terms * (1 - 8 * EPS)), next_up(hi + _up_sum(terms))


# --------------------------------------------------------------------------
# combinators


class LinearImage(SupportEvaluator):
    """``{M x : x in X}``; ``M`` may be a point or an interval matrix."""

    def __init__(self, M, X):
        if isinstance(M, IntervalMatrix):
            self.M = M
        else:
            self.M = IntervalMatrix.point(np.asarray(M, dtype=float))
        if self.M.shape[1] != X.dim:
            raise ValueError("linear map is not conformable with the set")
        self.X = X
        self.dim = self.M.shape[0]
        self._mid = self.M.mid
        self._rad = self.M.rad
        self._exact_point = bool(np.all(self.M.lo == self.M.hi))

    def _pair(self, V):
        W = V @ self._mid
        lo, hi = self.X.pair(W)
        # rounding of M^T v plus the radius of an interval map
        slack = gamma(self.dim + 1) * (np.abs(V) @ np.abs(self._mid))
        if not self._exact_point:
            slack = slack + np.abs(V) @ self._rad
        err = np.sum(slack, axis=1)
        if np.any(err > 0):
            mag = self.X.magnitude()
            with np.errstate(invalid="ignore"):
                pad = np.where(err > 0, err * mag * (1 + 4 * EPS), 0.0)
            hi = next_up(hi + pad)
            lo = next_down(lo - pad)
        return lo, hi


class MinkowskiSum(SupportEvaluator):
    def __init__(self, *sets):
        if not sets:
            raise ValueError("empty Minkowski sum")
        dims = {s.dim for s in sets}
        if len(dims) != 1:
            raise ValueError("Minkowski operands must share a dimension")
        self.sets = sets
        self.dim = sets[0].dim

    def _pair(self, V):
        los, his = zip(*(s.pair(V) for s in self.sets))
        lo = np.stack(los, axis=1)
        hi = np.stack(his, axis=1)
        return _down_sum(lo), _up_sum(hi)


class HullJoin(SupportEvaluator):
    """Convex hull of a union."""

    def __init__(self, *sets):
        if not sets:
            raise ValueError("empty hull")
        self.sets = sets
        self.dim = sets[0].dim

    def _pair(self, V):
        los, his = zip(*(s.pair(V) for s in self.sets))
        return np.max(np.stack(los), axis=0), np.max(np.stack(his), axis=0)


class Intersection(SupportEvaluator):
    """Upper bound ``min_i rho_{X_i}``; the lower bound is not available."""

    def __init__(self, *sets):
        if not sets:
            raise ValueError("empty intersection")
        self.sets = sets
        self.dim = sets[0].dim

    def _pair(self, V):
        his = np.stack([s.pair(V)[1] for s in self.sets])
        hi = np.min(his, axis=0)
        return np.full_like(hi, -np.inf), hi


class Scaled(SupportEvaluator):
    """``k X`` for ``k >= 0``."""

    def __init__(self, k, X):
        k = float(k)
        if k < 0:
            raise ValueError("scale factor must be non-negative")
        self.k = k
        self.X = X
        self.dim = X.dim

    def _pair(self, V):
        lo, hi = self.X.pair(V)
        a, b = lo * self.k, hi * self.k
        with np.errstate(invalid="ignore"):
            a = np.where(a == a, a, 0.0)
            b = np.where(b == b, b, 0.0)
        return next_down(a) if self.k else a, next_up(b) if self.k else b


def support(X, v):
    """Interval enclosing ``sup{<x, v> : x in X}``."""
    return X.support(v)


def support_props_combinators(X, Y=None, A_map=None, k=None, v=None, kind="sum"):
    """Evaluate one of the support-function identities through the combinator tree.

    ``kind`` selects ``"scale"`` (k X), ``"image"`` (A X), ``"sum"`` (X + Y),
    ``"hull"`` (conv(X u Y)) or ``"meet"`` (X n Y, upper bound only).
    """
    if kind == "scale":
        node = Scaled(k, X)
    elif kind == "image":
        node = LinearImage(A_map, X)
    elif kind == "sum":
        node = MinkowskiSum(X, Y)
    elif kind == "hull":
        node = HullJoin(X, Y)
    elif kind == "meet":
        node = Intersection(X, Y)
    else:
        raise ValueError(f"unknown combinator {kind!r}")
    return node.support(v)


def template_concretize(X, dirs):
    """Outer template polytope ``{x : <d_i, x> <= rho_X(d_i)}``; unbounded rows are dropped."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if dirs.shape[0] == 0:
        return Polytope(np.zeros((0, X.dim)), np.zeros(0))
    hi = X.upper(dirs)
    return Polytope(dirs, hi)


def _circle_dirs(n=BALL_SAMPLES):
    t = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(t), np.sin(t)], axis=1)


def ball_overapprox(X, pairs, groups=None, samples=BALL_SAMPLES):
    """Ball enclosure of ``X`` around its per-axis midpoint.

    Each index pair spans a 2-d subspace whose radius is the largest support of
    the centred set over ``samples`` unit directions, inflated by
    ``1/cos(pi/samples)`` which covers every direction between two samples.
    Extra ``groups`` of three or more coordinates use the circumscribed box
    radius; every other coordinate keeps its exact half-width.
    """
    p = X.dim
    eye = np.eye(p)
    hi = X.upper(eye)
    lo = -X.upper(-eye)
    if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
        raise UnboundedError("ball over-approximation of an unbounded set")
    center = 0.5 * lo + 0.5 * hi
    Xc = MinkowskiSum(X, PointSet(-center[None, :]))
    used = set()
    out_groups, radii = [], []
    inflation = 1.0 / math.cos(math.pi / samples)
    inflation = float(next_up(inflation * (1 + 4 * EPS)))
    for pair in pairs:
        i, j = (int(pair[0]), int(pair[1]))
        if i in used or j in used or i == j:
            raise ValueError("ball pairs must be disjoint")
        used.update((i, j))
        dirs = np.zeros((samples, p))
        dirs[:, [i, j]] = _circle_dirs(samples)
        rho = Xc.upper(dirs)
        r = float(next_up(max(float(np.max(rho)), 0.0) * inflation))
        # the box corner radius is also sound and wins for thin sets
        hw = [max(float(hi[k]) - float(center[k]), float(center[k]) - float(lo[k]), 0.0) for k in (i, j)]
        corner = float(next_up(math.hypot(*hw) * (1 + 4 * EPS))) if any(hw) else 0.0
        out_groups.append((i, j))
        radii.append(min(r, corner))
    for g in groups or ():
        g = tuple(int(i) for i in g)
        if used.intersection(g):
            raise ValueError("ball groups must be disjoint")
        used.update(g)
        half = np.maximum(Xc.upper(eye[list(g)]), Xc.upper(-eye[list(g)]))
        half = np.maximum(half, 0.0)
        r = math.sqrt(float(np.sum(half ** 2))) * (1 + 4 * EPS * len(g))
        out_groups.append(g)
        radii.append(float(next_up(r)))
    for i in range(p):
        if i not in used:
            half = max(float(Xc.upper(eye[i])[0]), float(Xc.upper(-eye[i])[0]), 0.0)
            out_groups.append((i,))
            radii.append(half)
    meta = {"samples": samples, "inflation": inflation}
    return Ball(center, out_groups, radii, meta)


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def rotate_direction(X, v, theta, plane=(0, 1), samples=64):
    """Bounds on ``sup_{t in theta} rho_X(R(t) v)`` where ``R`` rotates the ``plane`` coordinates.

    Balls use a closed form.  Other sets are sampled at ``samples + 1`` evenly
    spaced angles; any intermediate direction is a non-negative combination of
    two neighbouring samples with weight sum at most ``1/cos(step/2)``, which
    yields the certified upper bound.
    """
    v = np.asarray(v, dtype=float)
    i, j = plane
    if not isinstance(theta, Interval):
        theta = Interval(float(theta), float(theta))
    if theta.width == 0:
        return X.support(_rotated(v, theta.lo, i, j))
    vp = v[[i, j]]
    rest = v.copy()
    rest[[i, j]] = 0.0
    if isinstance(X, Ball) and _plane_is_group(X, i, j):
        return _ball_rotation(X, v, vp, rest, theta, i, j)
    n = max(int(samples), 1)
    ts = np.linspace(theta.lo, theta.hi, n + 1)
    W = np.stack([_rotated(v, t, i, j) for t in ts])
    lo, hi = X.pair(W)
    step = (theta.hi - theta.lo) / n
    scale = 1.0 / math.cos(min(step / 2, math.pi / 3)) * (1 + 8 * EPS)
    best = float(np.max(hi))
    cand = best
    if best >= 0:
        cand = best * scale
    if np.any(rest != 0):
        neg = float(X.upper(-rest)[0])
        cand = max(best, best * scale + (scale - 1) * neg) if best >= 0 else max(best, best + (scale - 1) * neg)
    return Interval(min(float(np.max(lo)), cand), float(next_up(cand)))


def _rotated(v, t, i, j):
    w = v.copy()
    w[[i, j]] = _rotation(t) @ v[[i, j]]
    return w


def _plane_is_group(X, i, j):
    for g in X.groups:
        if set(g.tolist()) == {i, j}:
            return True
    return False


def _ball_rotation(X, v, vp, rest, theta, i, j):
    # the ball term is rotation invariant; only <center, R(t) v> moves
    c = X.center
    r_plane = X.radius_of(i)
    others = Ball(c * 0, [g for g in X.groups if not set(g.tolist()) == {i, j}],
                  [r for g, r in zip(X.groups, X.radii) if not set(g.tolist()) == {i, j}])
    base = float(c @ rest) + float(others.upper(rest)[0])
    cp = c[[i, j]]
    # <cp, R(t) vp> = |cp||vp| cos(t - phi) for some phase phi
    a = float(cp @ vp)
    b = float(cp @ (np.array([[0.0, 1.0], [-1.0, 0.0]]) @ vp))
    amp = math.hypot(a, b)
    phi = math.atan2(b, a)
    best = max(a * math.cos(t) + b * math.sin(t) for t in (theta.lo, theta.hi))
    k = math.ceil((theta.lo - phi) / (2 * math.pi))
    if phi + 2 * math.pi * k <= theta.hi:
        best = amp
    val = base + best + r_plane * float(np.linalg.norm(vp))
    pad = 16 * EPS * (abs(base) + amp + r_plane * float(np.linalg.norm(vp)))
    return Interval(val - pad, float(next_up(val + pad)))
