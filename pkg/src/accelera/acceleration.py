"""Accelerated reach tubes for guarded linear loops ``while (G x <= h) x := A x + B u``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .abstraction import (
    abstract_apply,
    ball_growth,
    ball_term,
    input_decompose,
    synthesize_abstract_matrix,
)
from .exceptions import AcceleraError, AnalysisError, ModelError, NumericError, UnboundedError
from .geometry import (
    LinearImage,
    MinkowskiSum,
    PointSet,
    Polytope,
    SupportEvaluator,
    ball_overapprox,
)
from .linalg import jordan_decompose
from .numerics import EPS, Interval, gamma, next_up

INF = math.inf


# --------------------------------------------------------------------------
# model


@dataclass
class LinearLoop:
    """Loop ``while (G x <= h) x := A x + B u`` with ``x0 in X0`` and ``u in U``."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    h: np.ndarray
    X0: Polytope
    U: Polytope
    name: str = "loop"
    template: object = None
    options: dict = field(default_factory=dict)
    var_names: tuple = ()

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        p = self.A.shape[0]
        if self.A.shape != (p, p):
            raise ModelError(f"A must be square, got {self.A.shape}")
        self.B = np.asarray(self.B, dtype=float).reshape(p, -1)
        q = self.B.shape[1]
        self.G = np.asarray(self.G, dtype=float).reshape(-1, p)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        if self.G.shape[0] != self.h.shape[0]:
            raise ModelError(f"guard has {self.G.shape[0]} rows but {self.h.shape[0]} offsets")
        if self.X0.dim != p:
            raise ModelError(f"initial set has dimension {self.X0.dim}, expected {p}")
        if self.U.dim != q:
            raise ModelError(f"input set has dimension {self.U.dim}, expected {q}")
        if not np.all(np.isfinite(self.A)) or not np.all(np.isfinite(self.B)):
            raise ModelError("A and B must be finite")
        if self.X0.is_empty():
            raise ModelError("initial set is empty")
        if self.U.is_empty():
            raise ModelError("input set is empty")
        if not self.U.is_bounded():
            raise ModelError("input set is unbounded")
        if not self.var_names:
            self.var_names = tuple(f"x{i}" for i in range(p))

    @property
    def p(self):
        return self.A.shape[0]

    @property
    def q(self):
        return self.B.shape[1]

    @property
    def r(self):
        return self.G.shape[0]

    def simulate(self, x0, inputs):
        """Run the loop from ``x0`` with the given input sequence; returns visited states (guard-respecting)."""
        xs = [np.asarray(x0, dtype=float)]
        x = xs[0]
        for u in inputs:
            if self.r and np.any(self.G @ x > self.h):
                break
            x = self.A @ x + self.B @ u
            xs.append(x)
        return np.array(xs)


@dataclass
class GuardFace:
    """One guard half-space ``<g, x> <= gamma`` with unit ``g``."""

    g: np.ndarray
    gamma: float
    n_lower: float = 0
    n_upper: float = INF
    index: int = 0


@dataclass
class AnalysisOptions:
    dir_budget: int = 12
    exact_steps: int = 4096
    exact_steps_lp: int = 256
    input_mode: str = "varying"
    upper_start: int = 2 ** 15
    upper_limit: int = 2 ** 30
    max_iterations: int = 100
    horizon: float = INF

    def __post_init__(self):
        if self.input_mode not in ("varying", "ball", "constant"):
            raise ValueError("input_mode must be 'varying', 'ball' or 'constant'")
        if self.dir_budget < 8:
            raise ValueError("dir_budget must be at least 8")
        if self.horizon is None or self.horizon == "inf":
            self.horizon = INF
        self.horizon = float(self.horizon)
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class ReachTube:
    """Template over-approximation of all states visited by the loop."""

    template: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_lower: float
    n_upper: float
    mode: str
    provenance: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def bounds(self):
        return [Interval(float(a), float(b)) if a <= b else None for a, b in zip(self.lo, self.hi)]

    def contains(self, x, slack=0.0):
        vals = self.template @ np.asarray(x, dtype=float)
        return bool(np.all(vals <= self.hi + slack) and np.all(vals >= self.lo - slack))

    def violations(self, X, slack=0.0):
        """Number of (point, direction) pairs outside the tube."""
        vals = np.atleast_2d(X) @ self.template.T
        return int(np.sum(vals > self.hi + slack) + np.sum(vals < self.lo - slack))

    def to_polytope(self):
        return Polytope(np.vstack([self.template, -self.template]), np.concatenate([self.hi, -self.lo]))


# --------------------------------------------------------------------------
# templates


def box_directions(p):
    return np.eye(p)


def octagon_directions(p):
    rows = [np.eye(p)]
    for i in range(p):
        for j in range(i + 1, p):
            for s in (1.0, -1.0):
                r = np.zeros(p)
                r[i], r[j] = 1.0, s
                rows.append(r[None, :])
    return np.vstack(rows)


def eigen_directions(jf):
    rows = []
    for b in jf.blocks:
        for j in range(b.start, b.stop):
            v = jf.S[:, j].copy()
            n = np.linalg.norm(v)
            if n > 0:
                rows.append(v / n)
    return np.array(rows).reshape(-1, jf.p)


def _dedupe(T):
    out = []
    for r in T:
        n = np.max(np.abs(r))
        if n == 0:
            continue
        r = r / n
        if not any(np.allclose(r, o, atol=1e-12) or np.allclose(r, -o, atol=1e-12) for o in out):
            out.append(r)
    return np.array(out).reshape(-1, T.shape[1])


def default_template(p, jf=None):
    """Octagon plus eigenvector directions for small systems, plain box beyond 12 variables."""
    if p > 12:
        return box_directions(p)
    T = octagon_directions(p)
    if jf is not None:
        T = np.vstack([T, eigen_directions(jf)])
    return _dedupe(T)


def make_template(spec, p, jf=None):
    """Template from ``box``, ``octagon``, ``eigen``, ``octagon+eigen``, ``default`` or an explicit array."""
    if spec is None or (isinstance(spec, str) and spec == "default"):
        return default_template(p, jf)
    if not isinstance(spec, str):
        T = np.atleast_2d(np.asarray(spec, dtype=float))
        if T.size == 0:
            return np.zeros((0, p))
        if T.shape[1] != p:
            raise ModelError(f"template directions must have {p} entries")
        return T
    parts = []
    for part in spec.split("+"):
        part = part.strip()
        if part == "box":
            parts.append(box_directions(p))
        elif part == "octagon":
            parts.append(octagon_directions(p))
        elif part == "eigen":
            if jf is None:
                jf = jordan_decompose(np.eye(p))
            parts.append(eigen_directions(jf))
        else:
            raise ModelError(f"unknown template kind {part!r}")
    return _dedupe(np.vstack(parts))


# --------------------------------------------------------------------------
# guards


def guard_faces(G, h):
    """Normalise guard rows to unit normals with distances ``gamma = h / |g|``."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    faces = []
    for i, (row, off) in enumerate(zip(G, h)):
        n = float(np.linalg.norm(row))
        if n == 0 or not math.isfinite(n):
            raise ModelError(f"guard row {i} is zero")
        faces.append(GuardFace(g=row / n, gamma=float(off) / n, index=i))
    return faces


def _inside_guard(X, model):
    """``X meet G`` as a Polytope (``X`` itself when it already lies inside)."""
    if model.r == 0:
        return X
    if isinstance(X, Polytope):
        _, hi = X.pair(model.G)
        if np.all(hi <= model.h):
            return X
        return Polytope(np.vstack([X.C, model.G]), np.concatenate([X.d, model.h]))
    raise TypeError("guard intersection needs a polytope")


def one_step_image(X, model):
    """``A (X meet G) + B U`` or ``None`` when ``X`` misses the guard."""
    Y = _inside_guard(X, model)
    if isinstance(Y, Polytope) and Y is not X and Y.is_empty():
        return None
    return MinkowskiSum(LinearImage(model.A, Y), LinearImage(model.B, model.U))


# --------------------------------------------------------------------------
# exact stepping of support directions


def _walk(model, V, limit, chunk=256):
    """Upper supports of the unguarded reach sets ``X_k``, ``k = 0..limit``, in chunks.

    ``hi_k(v) = rho_X0(d_k) + sum_{j<k} rho_BU(d_j)`` with ``d_k = (A^T)^k v``.
    The float recursion for ``d_k`` is padded by a first-order margin.
    Yields ``(ks, hi)`` with ``hi`` of shape ``(len(ks), len(V))``.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    nv, p = V.shape
    D = V.copy()
    acc = np.zeros(nv)
    acc_abs = np.zeros(nv)
    magX = model.X0.magnitude()
    magU = model.U.magnitude()
    g = gamma(2 * p + 4)
    k0 = 0
    while k0 <= limit:
        n = min(chunk, limit + 1 - k0)
        Ds = np.empty((n, nv, p))
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n):
                Ds[i] = D
                D = D @ model.A
        flat = Ds.reshape(n * nv, p)
        if not np.all(np.isfinite(flat)):
            good = np.all(np.isfinite(Ds.reshape(n, -1)), axis=1)
            n = int(np.argmin(good)) if not np.all(good) else n
            if n == 0:
                return
            Ds = Ds[:n]
            flat = Ds.reshape(n * nv, p)
        _, hx = model.X0.pair(flat)
        _, hu = model.U.pair(flat @ model.B)
        hx = hx.reshape(n, nv)
        hu = hu.reshape(n, nv)
        ubs = np.sum(np.abs(flat @ model.B), axis=1).reshape(n, nv) * magU
        before = acc[None, :] + np.vstack([np.zeros((1, nv)), np.cumsum(hu, axis=0)[:-1]])
        before_abs = acc_abs[None, :] + np.vstack([np.zeros((1, nv)), np.cumsum(ubs, axis=0)[:-1]])
        ks = np.arange(k0, k0 + n)
        lin = np.sum(np.abs(Ds), axis=2) * magX
        with np.errstate(invalid="ignore", over="ignore"):
            margin = (ks[:, None] + 1) * g * (lin + before_abs + np.abs(hx) + np.abs(before))
            hi = next_up(hx + before + margin)
        yield ks, hi
        acc = acc + np.sum(hu, axis=0)
        acc_abs = acc_abs + np.sum(ubs, axis=0)
        k0 += n
        if n < chunk and k0 <= limit:
            return


def exact_reach_support(model, V, n):
    """Upper supports of the unguarded ``X_n`` in directions ``V``."""
    n = int(n)
    last = None
    for ks, hi in _walk(model, V, n):
        last = (ks, hi)
    if last is None or last[0][-1] != n:
        return np.full(np.atleast_2d(V).shape[0], INF)
    return last[1][-1]


def input_series(model, dec, jf, V, n_hi, max_terms=8192, chunk=256):
    """Upper bound on ``sum_{j<n} rho_{BU - B u_c}((A^T)^j v)`` over all ``n <= n_hi``.

    Negative terms are clipped to zero so the bound holds for every ``n`` in the
    range.  Terms beyond ``max_terms`` (or once they have decayed) are covered
    by the per-block ball tail ``|(S^T v)_s| R_s (sigma_s + eta)^K / (1 - sigma_s - eta)``.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    nv, p = V.shape
    limit = max_terms if math.isinf(n_hi) else min(int(n_hi), max_terms)
    uc = np.asarray(dec.U_c, dtype=float)
    total = np.zeros(nv)
    D = V.copy()
    magU = model.U.magnitude()
    g = gamma(2 * p + 4)
    k = 0
    # residual growth bound for the tail
    s2 = np.linalg.norm(jf.S, 2)
    si2 = np.linalg.norm(jf.S_inv, 2)
    eta = float(s2 * si2 * p * jf.delta_max * (1 + 1e-6))
    W = V @ jf.S
    wn = np.stack([np.linalg.norm(W[:, b.start:b.stop], axis=1) for b in jf.blocks], axis=1)
    sig = np.array([b.sigma_max for b in jf.blocks]) + eta
    R = np.asarray(dec.radii)
    cu_mag = float(np.max(np.abs(uc))) if uc.size else 0.0
    while k < limit:
        n = min(chunk, limit - k)
        Ds = np.empty((n, nv, p))
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n):
                Ds[i] = D
                D = D @ model.A
        flat = Ds.reshape(n * nv, p)
        if not np.all(np.isfinite(flat)):
            return np.full(nv, INF)
        _, hu = model.U.pair(flat @ model.B)
        cl, _ = PointSet([uc]).pair(flat)
        absb = np.sum(np.abs(flat @ model.B), axis=1) * magU + np.sum(np.abs(flat), axis=1) * cu_mag
        term = hu - cl + (k + np.repeat(np.arange(n), nv) + 1) * g * absb
        term = np.maximum(next_up(term), 0.0).reshape(n, nv)
        total = total + np.sum(term, axis=0)
        k += n
        if not math.isinf(n_hi) and k >= n_hi:
            return next_up(total * (1 + gamma(k)))
        # stop early when the remaining tail is negligible
        if k >= 64 and np.all(sig < 1):
            tail = np.sum(wn * R[None, :] * sig[None, :] ** k / (1 - sig[None, :]), axis=1)
            if np.all(tail <= 1e-12 * np.maximum(np.abs(total), 1e-300)):
                break
    remaining = INF if math.isinf(n_hi) else n_hi - k
    if remaining > 0:
        with np.errstate(over="ignore", invalid="ignore"):
            if math.isinf(remaining):
                if np.any((sig >= 1) & (R > 0)):
                    ok = np.all(np.where((sig >= 1) & (R > 0), wn == 0, True), axis=1)
                    tail_mult = np.where(sig < 1, sig ** k / (1 - np.minimum(sig, 0.999999)), 0.0)
                    tail = np.sum(wn * R[None, :] * tail_mult[None, :], axis=1)
                    tail = np.where(ok, tail, INF)
                else:
                    mult = np.where(R > 0, sig ** k / (1 - np.where(R > 0, sig, 0.0)), 0.0)
                    tail = np.sum(wn * R[None, :] * mult[None, :], axis=1)
            else:
                geo = np.array([ball_growth(sg, remaining) * sg ** k if r > 0 else 0.0 for sg, r in zip(sig, R)])
                tail = np.sum(wn * R[None, :] * geo[None, :], axis=1)
        tail = np.where(np.isnan(tail), INF, tail)
        total = total + tail
    return next_up(total * (1 + gamma(k + 2)))


# --------------------------------------------------------------------------
# analytic bound on <g, x_n>


def _pow(x, n):
    try:
        return x ** n
    except OverflowError:
        return INF


class _FaceBound:
    """Closed-form upper bound on ``sup { <g, x> : x in X_n }`` for any ``n``.

    Uses ``x_n = S (J^n y0 + sum_{j<n} J^j (c' + b_j))`` with ``S^-1 x0`` in a
    per-block ball around ``c0`` and ``b_j`` in the input balls.  The
    factorisation residual enters through ``||(J + D)^n - J^n|| <= (s + e)^n - s^n``.
    """

    def __init__(self, model, jf, dec):
        self.jf = jf
        self.dec = dec
        pairs, groups = [], []
        for b in jf.blocks:
            idx = tuple(range(b.start, b.stop))
            if len(idx) == 2:
                pairs.append(idx)
            elif len(idx) > 2:
                groups.append(idx)
        xb = ball_overapprox(LinearImage(jf.S_inv, model.X0), pairs, groups)
        self.c0 = xb.center
        # each block is one ball group, so any coordinate gives the block radius
        self.r0 = np.array([xb.radius_of(b.start) for b in jf.blocks])
        self.sig = np.array([b.sigma_max for b in jf.blocks])
        s2 = np.linalg.norm(jf.S, 2)
        si2 = np.linalg.norm(jf.S_inv, 2)
        self.eta = float(s2 * si2 * jf.p * jf.delta_max * (1 + 1e-6))
        self.sigma = float(np.max(self.sig)) if self.sig.size else 0.0
        self.Y0 = float(np.linalg.norm(self.c0) + np.linalg.norm(self.r0))
        self.Yu = float(np.linalg.norm(dec.c_prime) + np.linalg.norm(dec.radii))

    def _w(self, g):
        return self.jf.S.T @ g

    def _delta_terms(self, wn, n):
        eta, s = self.eta, self.sigma
        if eta == 0:
            return 0.0
        q = s + eta
        if math.isinf(n):
            if q >= 1:
                return INF
            # sup_n n q^(n-1) eta and sum_j j eta q^(j-1)
            peak = eta / (math.e * q * math.log(1 / q)) if q > 0 else 0.0
            return wn * (peak * self.Y0 + eta / (1 - q) ** 2 * self.Yu)
        a = eta * n * _pow(max(1.0, q), max(n - 1, 0))
        b = eta * n * n / 2 * _pow(max(1.0, q), n)
        return wn * (a * self.Y0 + b * self.Yu)

    def at(self, g, n):
        """Upper bound on ``<g, x>`` over ``X_n`` for one ``n`` (oscillation-aware)."""
        from .abstraction import _block_geometric_closed, _block_power_points

        w = self._w(g)
        total = 0.0
        absum = 0.0
        for s, b in enumerate(self.jf.blocks):
            ws = w[b.slice]
            c0 = self.c0[b.slice]
            cp = self.dec.c_prime[b.slice]
            if math.isinf(n):
                if b.sigma_max >= 1 and (np.any(c0 != 0) or self.r0[s] > 0 or np.any(cp != 0) or self.dec.radii[s] > 0):
                    if np.any(ws != 0):
                        return INF
                Jn_row = np.zeros(2 if b.is_conjugate_pair else b.size)
            else:
                Jn_row = _block_power_points(b, np.array([float(n)]))[0]
            Gn_row, Gn_mag = (a[0] for a in _block_geometric_closed(b, np.array([float(n)]), magnitude=True))
            t1 = float(ws @ (self._shape_mat(b, Jn_row) @ c0))
            t2 = float(ws @ (self._shape_mat(b, Gn_row) @ cp))
            m2 = float(np.abs(ws) @ (np.abs(self._shape_mat(b, Gn_mag)) @ np.abs(cp)))
            wn = float(np.linalg.norm(ws))
            sn = 0.0 if math.isinf(n) else _pow(b.sigma_max, n)
            t3 = wn * (sn * self.r0[s] + ball_growth(b.sigma_max, n) * self.dec.radii[s]) if wn else 0.0
            if not all(math.isfinite(t) for t in (t1, t2, t3)):
                return INF
            total += t1 + t2 + t3
            absum += abs(t1) + max(abs(t2), m2) + abs(t3)
        wn = float(np.linalg.norm(w))
        extra = self._delta_terms(wn, n)
        return next_up(total + extra + absum * 1e-10 + 1e-300)

    @staticmethod
    def _shape_mat(b, row):
        if b.is_conjugate_pair:
            return np.array([[row[0], row[1]], [-row[1], row[0]]])
        return sum(np.eye(b.size, k=t) * row[t] for t in range(b.size))

    def sup_over(self, g, k_lo, k_hi):
        """Monotone majorant of ``sup_{k_lo <= n <= k_hi} <g, x_n>`` (``k_hi`` may be ``inf``)."""
        w = self._w(g)
        total = 0.0
        for s, b in enumerate(self.jf.blocks):
            ws = w[b.slice]
            wn = float(np.linalg.norm(ws))
            if wn == 0:
                continue
            c0 = float(np.linalg.norm(self.c0[b.slice])) + self.r0[s]
            cu = float(np.linalg.norm(self.dec.c_prime[b.slice])) + self.dec.radii[s]
            sg = b.sigma_max
            with np.errstate(over="ignore"):
                if math.isinf(k_hi):
                    if sg >= 1 and (c0 > 0 or cu > 0):
                        return INF
                    pw = sg ** k_lo
                else:
                    pw = max(sg ** k_lo, sg ** k_hi)
            grow = ball_growth(sg, k_hi) if cu > 0 else 0.0
            total += wn * (pw * c0 + grow * cu)
        total += self._delta_terms(float(np.linalg.norm(w)), k_hi)
        if not math.isfinite(total):
            return INF
        return next_up(total * (1 + 1e-10))


# --------------------------------------------------------------------------
# crossing bounds


def _step_faces(model, faces, limit):
    """Exact stepping for all faces at once: (first k above, first k fully beyond) per face."""
    if not faces:
        return [], [], 0
    G = np.array([f.g for f in faces])
    V = np.vstack([G, -G])
    gam = np.array([f.gamma for f in faces])
    r = len(faces)
    first_above = [None] * r
    first_beyond = [None] * r
    covered = -1
    for ks, hi in _walk(model, V, limit):
        up, down = hi[:, :r], hi[:, r:]
        for i in range(r):
            if first_above[i] is None:
                idx = np.flatnonzero(~(up[:, i] <= gam[i]))
                if idx.size:
                    first_above[i] = int(ks[idx[0]])
            if first_beyond[i] is None:
                idx = np.flatnonzero(-down[:, i] > gam[i])
                if idx.size:
                    first_beyond[i] = int(ks[idx[0]])
        covered = int(ks[-1])
        if all(b is not None for b in first_beyond):
            break
    return first_above, first_beyond, max(covered, 0)


def estimate_n_lower(face, X0, dec, jf, model, opts=None, _stepped=None, _bound=None):
    """Largest ``n`` such that every ``X_k`` with ``k <= n`` lies inside the face.

    Exact support stepping up to ``opts.exact_steps``; beyond that the monotone
    closed-form majorant is iterated (doubling then bisection) to extend the
    certified range.  Returns ``inf`` when the face can never be reached.
    """
    opts = opts or AnalysisOptions()
    if _stepped is None:
        model = _with_initial(model, X0)
        fa, fb, k = _step_faces(model, [face], _limit(model, opts))
        _stepped = (fa[0], fb[0], k)
    first_above, _, covered = _stepped
    if first_above is not None:
        return max(first_above - 1, 0)
    bound = _bound or _FaceBound(model, jf, dec)
    start = covered + 1
    if bound.sup_over(face.g, start, INF) <= face.gamma:
        return INF
    if bound.sup_over(face.g, start, start) > face.gamma:
        return covered
    lo, hi = start, start * 2
    it = 0
    while bound.sup_over(face.g, start, hi) <= face.gamma and it < opts.max_iterations:
        lo, hi = hi, hi * 2
        it += 1
    if it >= opts.max_iterations:
        return lo
    while hi - lo > 1 and it < opts.max_iterations:
        mid = (lo + hi) // 2
        if bound.sup_over(face.g, start, mid) <= face.gamma:
            lo = mid
        else:
            hi = mid
        it += 1
    return lo


def estimate_n_upper(face, X0, dec, jf, model, opts=None, _stepped=None, _bound=None):
    """An ``n`` at which the whole unguarded ``X_n`` lies strictly beyond the face, or ``inf``.

    Exact stepping first; then candidates ``upper_start, 2 upper_start, ...``
    up to ``upper_limit`` are checked with the closed-form bound.
    """
    opts = opts or AnalysisOptions()
    if _stepped is None:
        model = _with_initial(model, X0)
        fa, fb, k = _step_faces(model, [face], _limit(model, opts))
        _stepped = (fa[0], fb[0], k)
    _, first_beyond, _ = _stepped
    if first_beyond is not None:
        return first_beyond
    bound = _bound or _FaceBound(model, jf, dec)
    n = opts.upper_start
    while n <= opts.upper_limit:
        if -bound.at(-face.g, n) > face.gamma:
            return n
        n *= 2
    return INF


def _with_initial(model, X0):
    if X0 is None or X0 is model.X0:
        return model
    return replace(model, X0=X0)


def _limit(model, opts):
    boxy = model.X0.is_box and model.U.is_box
    return opts.exact_steps if boxy else opts.exact_steps_lp


# --------------------------------------------------------------------------
# tube assembly


class _Segment(SupportEvaluator):
    """``{A^k x + sum_{j<k} A^j B u_j : x in X, k in [1, N]}`` through abstract matrices.

    ``input_mode="varying"``: the constant input part is handled through its
    fixed point ``w = (I - A)^-1 B u_c`` (``A^k x + (I - A^k) w`` keeps both
    terms tied to one ``k``) and the varying remainder ``B u - B u_c`` through
    the summed support series.  ``"constant"`` uses the fixed points of all of
    ``BU``, which assumes the input is held fixed along each run.  ``"ball"``
    adds the accumulated-sum abstraction on ``B u_c`` and the per-block ball
    growth instead.  Without a fixed point (1 is an eigenvalue) the
    accumulated-sum abstraction takes over the constant part.
    """

    def __init__(self, jf, dec, X, n_hi, opts, model):
        self.dim = jf.p
        self.X = X
        self.jf, self.dec, self.model, self.n_hi = jf, dec, model, n_hi
        self.mode = opts.input_mode
        self.A_abs = synthesize_abstract_matrix(jf, (1, n_hi), opts.dir_budget, "power")
        self.fixed = None
        self.sums = []
        if self.mode == "constant":
            self.fixed = dec.U_a
            src = dec.BU
        else:
            self.fixed = dec.fixed_point_set() if self.mode == "varying" else None
            src = PointSet([dec.U_c])
        if self.fixed is None and not _is_origin(src, jf.p):
            self.B_abs = synthesize_abstract_matrix(jf, (1, n_hi), opts.dir_budget, "geometric")
            self.sums.append((self.B_abs, src))
        self.ball = ball_term(jf, dec, n_hi) if self.mode == "ball" else None

    def _pair(self, V):
        _, hi = abstract_apply(self.A_abs, self.X, V, fixed=self.fixed)
        for Mabs, Y in self.sums:
            _, h2 = abstract_apply(Mabs, Y, V)
            hi = hi + h2
        if self.mode == "varying":
            hi = hi + input_series(self.model, self.dec, self.jf, V, self.n_hi)
        elif self.ball is not None:
            _, h3 = self.ball.pair(V)
            hi = hi + h3
        with np.errstate(invalid="ignore"):
            hi = next_up(hi + gamma(4) * np.abs(hi))
        hi = np.where(np.isnan(hi), INF, hi)
        return np.full(V.shape[0], -INF), hi


def _is_origin(X, p):
    _, hi = X.pair(np.vstack([np.eye(p), -np.eye(p)]))
    return bool(np.all(hi <= 0))


def _meet_guard(supports, V, model, T2):
    """Supports in ``T2`` of ``{x : V x <= supports} meet G``."""
    keep = np.isfinite(supports)
    C = np.vstack([V[keep], model.G])
    d = np.concatenate([supports[keep], model.h])
    P = Polytope(C, d)
    if P.is_empty():
        return np.full(T2.shape[0], -INF), P
    _, hi = P.pair(T2)
    return hi, P


def _segment_supports(seg, T2, model):
    if model.r == 0:
        return seg.upper(T2)
    V = np.vstack([T2, model.G])
    vals = seg.upper(V)
    hi, _ = _meet_guard(vals, V, model, T2)
    return hi


def accelerate(model, template=None, opts=None):
    """Reach tube of the loop over all iterations.

    With no certified exit the tube is ``X0 join ((A^[1,inf) (X0 meet G) + inputs) meet G)``.
    With crossing bounds ``n_lo <= n_hi`` the tube joins the segment up to
    ``n_lo`` and the segment of ``n_hi - n_lo`` more steps from the exact
    ``X_{n_lo}``; both forms are computed when only ``n_lo`` is finite and the
    tighter bound per direction is kept.
    """
    opts = opts if isinstance(opts, AnalysisOptions) else AnalysisOptions.from_dict(opts or model.options)
    t0 = time.perf_counter()
    timings = {}
    try:
        jf = jordan_decompose(model.A)
    except AcceleraError as e:
        raise AnalysisError("decomposition", e) from e
    timings["decomposition"] = time.perf_counter() - t0
    try:
        dec = input_decompose(model.B, model.U, jf)
    except AcceleraError as e:
        raise AnalysisError("inputs", e) from e
    T = make_template(template if template is not None else model.template, model.p, jf)
    T2 = np.vstack([T, -T])

    t1 = time.perf_counter()
    faces = guard_faces(model.G, model.h) if model.r else []
    n_lower, n_upper = INF, INF
    if faces:
        try:
            fa, fb, covered = _step_faces(model, faces, _limit(model, opts))
            bound = None
            for i, face in enumerate(faces):
                need_bound = fa[i] is None or fb[i] is None
                if need_bound and bound is None:
                    bound = _FaceBound(model, jf, dec)
                face.n_lower = estimate_n_lower(face, model.X0, dec, jf, model, opts, (fa[i], fb[i], covered), bound)
                face.n_upper = estimate_n_upper(face, model.X0, dec, jf, model, opts, (fa[i], fb[i], covered), bound)
                face.n_upper = max(face.n_upper, face.n_lower + 1)
        except AcceleraError as e:
            raise AnalysisError("crossing", e) from e
        n_lower = min(f.n_lower for f in faces)
        n_upper = min(f.n_upper for f in faces)
        n_upper = max(n_upper, n_lower + 1) if math.isfinite(n_lower) else n_upper
    timings["crossing"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    X0 = model.X0
    _, hx0 = X0.pair(T2)
    try:
        X0g = _inside_guard(X0, model)
        x0_inside = not (isinstance(X0g, Polytope) and X0g is not X0 and X0g.is_empty())
        H = opts.horizon
        cap = min(n_upper, H)
        if math.isfinite(H):
            mode = "horizon"
        elif not faces or not math.isfinite(n_lower):
            mode = "guardless-inf"
        elif math.isfinite(n_upper):
            mode = "guarded-finite"
        else:
            mode = "guarded-partial"
        candidates = []
        if x0_inside and cap >= 1:
            split_ok = math.isfinite(n_lower) and n_lower <= _limit(model, opts) and n_lower < cap
            if math.isinf(cap):
                seg = _Segment(jf, dec, X0g, INF, opts, model)
                candidates.append(("unbounded", _segment_supports(seg, T2, model)))
            elif not split_ok:
                seg = _Segment(jf, dec, X0g, int(cap), opts, model)
                candidates.append(("single", _segment_supports(seg, T2, model)))
            if split_ok:
                try:
                    parts = []
                    if n_lower >= 1:
                        seg1 = _Segment(jf, dec, X0g, int(n_lower), opts, model)
                        parts.append(_segment_supports(seg1, T2, model))
                    Xn = _exact_set(model, int(n_lower), T2)
                    if Xn is not None:
                        seg2 = _Segment(jf, dec, Xn, cap - n_lower, opts, model)
                        parts.append(_segment_supports(seg2, T2, model))
                    combined = np.max(np.vstack(parts), axis=0) if parts else np.full(T2.shape[0], -INF)
                    candidates.append(("split", combined))
                except (NumericError, UnboundedError):
                    # the exact set at the split is numerically out of reach; one segment still covers it
                    if math.isfinite(cap):
                        seg = _Segment(jf, dec, X0g, int(cap), opts, model)
                        candidates.append(("single", _segment_supports(seg, T2, model)))
        if candidates:
            body = np.min(np.vstack([c for _, c in candidates]), axis=0)
        else:
            body = np.full(T2.shape[0], -INF)
        hi2 = np.maximum(hx0, body)
    except AcceleraError as e:
        raise AnalysisError("assembly", e) from e
    timings["assembly"] = time.perf_counter() - t2
    timings["total"] = time.perf_counter() - t0

    k = T.shape[0]
    hi = hi2[:k]
    lo = -hi2[k:]
    prov = {
        "delta_max": float(jf.delta_max),
        "cond_S": float(jf.cond),
        "dir_budget": int(opts.dir_budget),
        "input_mode": opts.input_mode,
        "ball_meta": dec.meta.get("ball", {}),
        "input_radii": [float(r) for r in dec.radii],
        "faces": [{"index": f.index, "gamma": f.gamma, "n_lower": f.n_lower, "n_upper": f.n_upper} for f in faces],
        "forms": [name for name, _ in candidates],
        "horizon": opts.horizon,
        "exact_steps": int(_limit(model, opts)),
    }
    return ReachTube(template=T, lo=lo, hi=hi, n_lower=n_lower, n_upper=n_upper, mode=mode,
                     provenance=prov, timings=timings)


def _exact_set(model, n, T2):
    """Template polytope of the exact unguarded ``X_n`` meet ``G``; ``None`` if empty."""
    V = np.vstack([T2, model.G]) if model.r else T2
    vals = exact_reach_support(model, V, n)
    keep = np.isfinite(vals)
    C = np.vstack([V[keep], model.G]) if model.r else V[keep]
    d = np.concatenate([vals[keep], model.h]) if model.r else vals[keep]
    P = Polytope(C, d)
    if P.is_empty():
        return None
    if not P.is_bounded():
        raise UnboundedError("reach set at the crossing bound is unbounded in the template")
    return P
