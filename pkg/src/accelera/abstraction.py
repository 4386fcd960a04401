"""Abstract matrices over-approximating families of loop powers.

An abstract matrix is ``{S phi(m) S^-1 : Phi m <= f}``: ``phi`` places the
vector ``m`` into the Jordan shape and the polyhedron ``Phi m <= f`` encloses
the points ``m(k)`` for every ``k`` in an iteration range.  ``m(k)`` holds the
first-row entries of ``J^k`` (powers) or of ``sum_{j<k} J^j`` (accumulated
inputs).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.special import comb, gammaln

from .exceptions import DivergenceError, NumericError
from .geometry import Ball, LinearImage, SupportEvaluator, ball_overapprox
from .linalg import JordanBlock, JordanForm, reconstruction_error
from .numerics import EPS, TINY, IntervalMatrix, gamma, next_up

EXACT_K_LIMIT = 65536
VERTEX_BUDGET = 10_000
# relative outward shift of f before vertex enumeration, absorbs float error in the vertices
VERTEX_SLACK = 1e-12


# --------------------------------------------------------------------------
# matrix shape


@dataclass(frozen=True)
class MatrixShape:
    """Layout of ``m`` inside a real Jordan-shaped matrix.

    Block ``s`` owns the ``m`` indices ``offsets[s] : offsets[s] + widths[s]``.
    A real block of size ``p`` stores its first row (entry ``(r, r+t)`` is
    ``m[t]``); a conjugate pair stores ``(re, im)`` laid out as
    ``[[re, im], [-im, re]]``.
    """

    blocks: tuple
    offsets: tuple
    p: int

    @classmethod
    def from_jordan(cls, jf):
        offsets = []
        o = 0
        for b in jf.blocks:
            offsets.append(o)
            o += 2 if b.is_conjugate_pair else b.size
        return cls(tuple(jf.blocks), tuple(offsets), jf.p)

    @property
    def m_dim(self):
        if not self.blocks:
            return 0
        last = self.blocks[-1]
        return self.offsets[-1] + (2 if last.is_conjugate_pair else last.size)

    def width(self, s):
        b = self.blocks[s]
        return 2 if b.is_conjugate_pair else b.size

    def m_slice(self, s):
        return slice(self.offsets[s], self.offsets[s] + self.width(s))

    def block_of(self, idx):
        for s in range(len(self.blocks)):
            sl = self.m_slice(s)
            if sl.start <= idx < sl.stop:
                return s
        raise IndexError(idx)

    def phi(self, m):
        """Real ``p x p`` matrix with the Jordan shape filled from ``m``."""
        m = np.asarray(m, dtype=float)
        out = np.zeros((self.p, self.p))
        for s, b in enumerate(self.blocks):
            ms = m[self.m_slice(s)]
            sl = b.slice
            if b.is_conjugate_pair:
                out[sl, sl] = [[ms[0], ms[1]], [-ms[1], ms[0]]]
            else:
                for t in range(b.size):
                    out[sl, sl] += np.eye(b.size, k=t) * ms[t]
        return out

    def phi_t_apply(self, M, W):
        """``phi(m)^T w`` for every row ``m`` of ``M`` and row ``w`` of ``W``.

        Returns an array of shape ``(len(M), len(W), p)``.
        """
        M = np.atleast_2d(M)
        W = np.atleast_2d(W)
        out = np.zeros((M.shape[0], W.shape[0], self.p))
        for s, b in enumerate(self.blocks):
            ms = M[:, self.m_slice(s)]
            ws = W[:, b.slice]
            if b.is_conjugate_pair:
                r, i = ms[:, 0:1], ms[:, 1:2]
                # phi^T = [[r, -i], [i, r]]
                out[:, :, b.start] = r * ws[None, :, 0] - i * ws[None, :, 1]
                out[:, :, b.start + 1] = i * ws[None, :, 0] + r * ws[None, :, 1]
            else:
                # (phi^T w)[c] = sum_{r <= c} m[c - r] w[r]
                for c in range(b.size):
                    acc = np.zeros((M.shape[0], W.shape[0]))
                    for r in range(c + 1):
                        acc += ms[:, c - r][:, None] * ws[None, :, r]
                    out[:, :, b.start + c] = acc
        return out


# --------------------------------------------------------------------------
# point clouds m(k)


def _binom(k, t):
    return comb(k, t, exact=False) if t else np.ones_like(np.asarray(k, dtype=float))


def _block_power_points(b, ks):
    """First-row entries of ``J_s^k`` for every ``k`` in ``ks`` (shape ``len(ks) x width``)."""
    ks = np.asarray(ks, dtype=float)
    lam = complex(b.lam)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        if b.is_conjugate_pair:
            r = abs(lam)
            th = math.atan2(lam.imag, lam.real)
            mod = np.power(r, ks)
            return np.stack([mod * np.cos(ks * th), mod * np.sin(ks * th)], axis=1)
        lr = lam.real
        cols = []
        for t in range(b.size):
            e = ks - t
            val = np.where(e >= 0, _binom(ks, t) * np.power(lr, np.maximum(e, 0)), 0.0)
            cols.append(val)
        return np.stack(cols, axis=1)


_GAMMAS = 2.0 ** -np.arange(1, 41)


def _perturbation(jf):
    """``(rho, eps, s)``: ``S^-1 A S = J + F`` with ``||F||_2 <= eps``.

    ``rho`` is the spectral radius of ``J`` and ``s`` the largest real Jordan
    block.  The residual ``A - S J S_inv`` and the inverse defect of ``S_inv``
    are both folded into ``delta_max``; the conditioning of ``S`` carries
    them into Jordan coordinates.
    """
    p = jf.p
    s = max((1 if b.is_conjugate_pair else b.size) for b in jf.blocks)
    if jf.delta_max == 0:
        return jf.spectral_radius, 0.0, s
    kappa = jf.cond
    jn = float(np.linalg.norm(jf.J, 2))
    eps = p * jf.delta_max * kappa * (1 + kappa * jn) * (1 + 1e-6)
    return float(jf.spectral_radius), float(eps), s


def _scaled(rho, eps, s):
    """Per-``gamma`` data ``(r, eps_g, c)`` for the weighted norm ``D = diag(gamma^i)``.

    In that norm ``||J|| <= rho + gamma`` and ``||F|| <= eps c``; an entry of a
    Jordan-coordinate matrix is at most ``c`` times its weighted norm.
    """
    if s == 1:
        return np.array([rho]), np.array([eps]), np.array([1.0])
    c = _GAMMAS ** -(s - 1)
    return rho + _GAMMAS, eps * c, c


def _kq_sup(q, k_hi):
    """``sup_{1 <= k <= k_hi} k q^(k-1)`` for ``q >= 0``."""
    if q >= 1:
        if math.isinf(k_hi):
            return math.inf
        with np.errstate(over="ignore"):
            return float(k_hi * np.power(q, k_hi - 1))
    if q == 0:
        return 1.0
    kstar = -1.0 / math.log(q)
    if kstar <= 1:
        return 1.0
    kstar = min(kstar, k_hi)
    return float(kstar * q ** (kstar - 1)) * (1 + 1e-9)


def perturbation_power(jf, ks):
    """Entrywise bound on ``(J + F)^k - J^k`` for each ``k`` in ``ks``.

    Telescoping gives ``||(J+F)^k - J^k|| <= (r + e)^k - r^k <= k e (r + e)^(k-1)``
    in any submultiplicative norm; the weighting ``gamma`` is picked per ``k``.
    """
    ks = np.asarray(ks, dtype=float)
    rho, eps, s = _perturbation(jf)
    if eps == 0:
        return np.zeros(ks.shape[0])
    r, e, c = _scaled(rho, eps, s)
    with np.errstate(over="ignore", invalid="ignore"):
        q = (r + e)[:, None]
        vals = c[:, None] * ks[None, :] * e[:, None] * np.power(q, np.maximum(ks[None, :] - 1, 0))
        vals = np.where(np.isnan(vals), np.inf, vals)
    return np.min(vals, axis=0) * (1 + 1e-9)


def perturbation_geometric(jf, ks):
    """Entrywise bound on ``sum_{j<k} ((J + F)^j - J^j)``."""
    ks = np.asarray(ks, dtype=float)
    rho, eps, s = _perturbation(jf)
    if eps == 0:
        return np.zeros(ks.shape[0])
    r, e, c = _scaled(rho, eps, s)
    out = np.full(ks.shape[0], np.inf)
    with np.errstate(over="ignore", invalid="ignore"):
        for ri, ei, ci in zip(r, e, c):
            q = ri + ei
            # sum_{j<k} j q^(j-1), bounded two ways
            lin = np.where(np.isinf(ks), np.inf, ks * (ks - 1) / 2 * np.power(max(1.0, q), np.maximum(ks - 2, 0)))
            lim = 1.0 / (1.0 - q) ** 2 if q < 1 else np.inf
            val = ci * ei * np.minimum(lin, lim)
            out = np.minimum(out, np.where(np.isnan(val), np.inf, val))
    return out * (1 + 1e-9)


def perturbation_power_sup(jf, k_hi):
    """Bound on ``(J + F)^k - J^k`` entries uniform over ``1 <= k <= k_hi``."""
    rho, eps, s = _perturbation(jf)
    if eps == 0:
        return 0.0
    r, e, c = _scaled(rho, eps, s)
    return min(float(ci * ei * _kq_sup(ri + ei, k_hi)) for ri, ei, ci in zip(r, e, c)) * (1 + 1e-9)


def _is_consecutive(ks):
    return ks.size > 0 and ks[0] == 0 and np.all(np.diff(ks) == 1)


def _round_margin(vals, ks):
    ks = np.asarray(ks, dtype=float)[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        return np.abs(vals) * (ks + 8) * 4 * EPS + TINY


def power_points(jf, ks):
    """``m(k)`` for ``J^k`` at every ``k`` in ``ks`` plus per-entry error bounds."""
    shape = MatrixShape.from_jordan(jf)
    ks = np.asarray(ks)
    pts = np.concatenate([_block_power_points(b, ks) for b in shape.blocks], axis=1)
    err = perturbation_power(jf, ks)[:, None] * np.ones((1, shape.m_dim))
    return pts, err + _round_margin(pts, ks)


def geometric_points(jf, ks):
    """``m(k)`` for ``sum_{j<k} J^j`` (consecutive ``ks`` starting at 0 are summed directly)."""
    shape = MatrixShape.from_jordan(jf)
    ks = np.asarray(ks)
    if _is_consecutive(ks):
        base, base_err = power_points(jf, ks)
        pts = np.cumsum(np.vstack([np.zeros((1, shape.m_dim)), base[:-1]]), axis=0)
        absum = np.cumsum(np.vstack([np.zeros((1, shape.m_dim)), np.abs(base[:-1])]), axis=0)
        errsum = np.cumsum(np.vstack([np.zeros((1, shape.m_dim)), base_err[:-1]]), axis=0)
        kk = ks.astype(float)[:, None]
        return pts, errsum + absum * gamma(int(ks[-1]) + 2) + TINY * (kk + 1)
    cols, errs = [], []
    for b in shape.blocks:
        g, mag = _block_geometric_closed(b, ks, magnitude=True)
        cols.append(g)
        errs.append(_round_margin(mag, ks) * 4)
    pert = perturbation_geometric(jf, ks)[:, None]
    return np.concatenate(cols, axis=1), np.concatenate(errs, axis=1) + pert


def _block_geometric_closed(b, ks, magnitude=False):
    """First row of ``sum_{j<k} J_s^j`` by closed form (``k`` may be ``inf``).

    With ``magnitude`` also returns the summed absolute values of the terms,
    which is what rounding error scales with (the defective-block formula
    cancels heavily for small ``k``).
    """
    ks = np.asarray(ks, dtype=float)
    lam = complex(b.lam)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        if b.is_conjugate_pair:
            lk = np.where(np.isinf(ks), 0.0, np.power(lam, np.where(np.isinf(ks), 0, ks)))
            g = (1 - lk) / (1 - lam)
            vals = np.stack([g.real, g.imag], axis=1)
            mag = ((1 + np.abs(lk)) / abs(1 - lam))[:, None] * np.ones((1, 2))
            return (vals, mag) if magnitude else vals
        lr = lam.real
        out = np.zeros((ks.shape[0], b.size))
        mag = np.zeros((ks.shape[0], b.size))
        for t in range(b.size):
            if lr == 1.0:
                out[:, t] = np.where(np.isinf(ks), np.inf, comb(ks, t + 1, exact=False))
                mag[:, t] = out[:, t]
                continue
            acc = np.zeros(ks.shape[0])
            macc = np.zeros(ks.shape[0])
            for a in range(t + 1):
                if np.isinf(ks).any():
                    xa = np.where(np.isinf(ks), 1.0 if a == 0 else 0.0, 0.0)
                else:
                    xa = np.zeros(ks.shape[0])
                fin = ~np.isinf(ks)
                kf = np.where(fin, ks, 0)
                e = kf - a
                pw = np.where(e >= 0, _binom(kf, a) * np.power(lr, np.maximum(e, 0)), 0.0)
                xa = np.where(fin, (1.0 if a == 0 else 0.0) - pw, xa)
                xm = np.where(fin, (1.0 if a == 0 else 0.0) + np.abs(pw), np.abs(xa))
                f = abs(1.0 / (1.0 - lr)) ** (t - a + 1)
                acc += xa * (1.0 / (1.0 - lr)) ** (t - a + 1)
                macc += xm * f
            out[:, t] = acc
            mag[:, t] = macc
        return (out, mag) if magnitude else out


# --------------------------------------------------------------------------
# closed form for the accumulated sum


def geometric_sum_matrix(jf, n):
    """Interval enclosure of ``sum_{k<n} A^k = (I - A^n)(I - A)^-1``, assembled as ``S G S^-1``.

    ``G`` is block diagonal with the per-block closed forms: ``n`` (and
    ``binom(n, t+1)`` on the t-th superdiagonal) for ``lam = 1`` and the
    ``(1 - lam^n)/(1 - lam)`` family otherwise.  ``n = inf`` needs every
    ``|lam| < 1``.
    """
    n = float(n)
    if n < 0:
        raise ValueError("n must be non-negative")
    p = jf.p
    if math.isinf(n):
        for b in jf.blocks:
            if abs(complex(b.lam)) >= 1:
                raise DivergenceError(f"infinite sum diverges: eigenvalue {complex(b.lam):.6g} has modulus >= 1")
    mid = np.zeros((p, p))
    rad = np.zeros((p, p))
    shape = MatrixShape.from_jordan(jf)
    pert = float(perturbation_geometric(jf, np.array([n]))[0])
    for s, b in enumerate(shape.blocks):
        row, mag = (a[0] for a in _block_geometric_closed(b, np.array([n]), magnitude=True))
        sl = b.slice
        scale = (8 + 4 * (0 if math.isinf(n) else math.log2(n + 1))) * EPS
        if b.is_conjugate_pair:
            mid[sl, sl] = [[row[0], row[1]], [-row[1], row[0]]]
            rad[sl, sl] = scale * (mag[0] + mag[1]) * (1 + abs(1 / (1 - complex(b.lam))))
        else:
            for t in range(b.size):
                mid[sl, sl] += np.eye(b.size, k=t) * row[t]
                rad[sl, sl] += np.eye(b.size, k=t) * (scale * mag[t] * (t + 2) + TINY)
    # the perturbation couples every pair of Jordan coordinates
    rad = rad + pert
    G = IntervalMatrix.from_mid_rad(mid, rad)
    return IntervalMatrix.point(jf.S) @ G @ _exact_inverse(jf)


def _exact_inverse(jf):
    """Interval enclosure of the exact inverse of ``S`` around ``S_inv``.

    ``S_inv - S^-1 = S^-1 (S S_inv - I)``, so with ``||I - S S_inv|| <= eta < 1``
    its entries are at most ``||S_inv|| eta / (1 - eta)``.
    """
    p = jf.p
    eta = p * jf.delta_max
    if eta == 0:
        return IntervalMatrix.point(jf.S_inv)
    if eta >= 0.5:
        raise NumericError("inverse of the Jordan basis is too inaccurate")
    r = float(np.linalg.norm(jf.S_inv, 2)) * eta / (1 - eta) * (1 + 1e-6)
    return IntervalMatrix.from_mid_rad(jf.S_inv, np.full((p, p), r))


# --------------------------------------------------------------------------
# abstract matrices


@dataclass
class AbstractMatrix:
    """``{L phi(m) R : Phi m <= f}`` for ``k`` in ``n_range``.

    ``groups`` lists the connected ``m`` index sets and their enumerated
    vertices (``None`` when the group is unbounded).
    """

    L: np.ndarray
    R: np.ndarray
    shape: MatrixShape
    Phi: np.ndarray
    f: np.ndarray
    n_range: tuple
    kind: str = "power"
    groups: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def m_dim(self):
        return self.shape.m_dim

    def contains_m(self, m, tol=0.0):
        return bool(np.all(self.Phi @ np.asarray(m, dtype=float) <= self.f + tol))

    def support_in_m(self, u):
        """``max{<u, m> : Phi m <= f}`` by LP (for reporting)."""
        res = linprog(-np.asarray(u, dtype=float), A_ub=self.Phi, b_ub=self.f,
                      bounds=[(None, None)] * self.m_dim, method="highs")
        if res.status == 3:
            return math.inf
        if res.status != 0:
            raise NumericError(res.message)
        return float(-res.fun)

    def matrices(self):
        """Concrete matrices at the enumerated vertices (joint groups only)."""
        combos = _joint_vertices(self)
        if combos is None:
            raise NumericError("vertex budget exceeded")
        return [self.L @ self.shape.phi(m) @ self.R for m in combos]


def _pair_list(shape, cross_limit=6):
    pairs = []
    for s in range(len(shape.blocks)):
        idx = list(range(shape.m_slice(s).start, shape.m_slice(s).stop))
        pairs.extend(itertools.combinations(idx, 2))
    if shape.m_dim <= cross_limit:
        for s1, s2 in itertools.combinations(range(len(shape.blocks)), 2):
            for a in range(shape.m_slice(s1).start, shape.m_slice(s1).stop):
                for b in range(shape.m_slice(s2).start, shape.m_slice(s2).stop):
                    pairs.append((a, b))
    return pairs


_BASE_DIRS = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=float)


def _chord_dirs(P, count):
    if count <= 0 or P.shape[0] < 3:
        return np.zeros((0, 2))
    span = np.ptp(P, axis=0)
    if not np.all(np.isfinite(P)) or np.any(span == 0):
        return np.zeros((0, 2))
    try:
        hull = ConvexHull(P, qhull_options="QJ")
    except Exception:
        return np.zeros((0, 2))
    out = []
    for simplex, eq in zip(hull.simplices, hull.equations):
        a, b = P[simplex[0]], P[simplex[1]]
        n = eq[:2]
        nn = np.linalg.norm(n)
        if nn == 0:
            continue
        n = n / nn
        ang = np.arctan2(n[1], n[0])
        if np.min(np.abs(((ang - np.arctan2(_BASE_DIRS[:, 1], _BASE_DIRS[:, 0])) + np.pi) % (2 * np.pi) - np.pi)) < 1e-3:
            continue
        out.append((float(np.linalg.norm(b - a)), n))
    out.sort(key=lambda e: -e[0])
    dirs = []
    for _, n in out:
        if all(abs(float(n @ d)) < 1 - 1e-9 for d in dirs):
            dirs.append(n)
        if len(dirs) >= count:
            break
    return np.array(dirs).reshape(-1, 2)


def _tail_box(jf, shape, kind, K, n_hi):
    """Per-coordinate box ``(lo, hi)`` covering ``m(k)`` (or its growth past ``K``) for ``K < k <= n_hi``.

    Entries of a block with real ``lam >= 0`` never go negative, and the
    diagonal of a ``lam = 1`` block is exactly 1.
    """
    lo = np.zeros(shape.m_dim)
    hi = np.zeros(shape.m_dim)
    for s, b in enumerate(shape.blocks):
        sl = shape.m_slice(s)
        lam = complex(b.lam)
        rho = abs(lam)
        nonneg = not b.is_conjugate_pair and lam.real >= 0
        tmax = 0 if b.is_conjugate_pair else b.size - 1
        for t in range(tmax + 1):
            val = _tail_bound(rho, t, K, n_hi) if kind == "power" else _tail_sum_bound(rho, t, K, n_hi)
            low = 0.0 if nonneg else -val
            if kind == "power" and lam == 1 and t == 0:
                low = 1.0
            if b.is_conjugate_pair:
                lo[sl], hi[sl] = low, val
            else:
                lo[sl.start + t], hi[sl.start + t] = low, val
    if kind == "power":
        err = perturbation_power_sup(jf, n_hi)
    else:
        err = float(perturbation_geometric(jf, np.array([float(n_hi)]))[0])
    with np.errstate(invalid="ignore"):
        return lo - err, hi + err


def _tail_bound(rho, t, K, n_hi):
    """``max_{K < k <= n_hi} C(k,t) rho^(k-t)``."""
    if rho == 0:
        return 0.0
    if math.isinf(n_hi):
        if rho > 1 or (rho == 1 and t > 0):
            return math.inf
        if rho == 1:
            return 1.0
        # ratio C(k+1,t) rho / C(k,t) = rho (k+1)/(k+1-t) decreases in k; past the peak values decrease
        k0 = K + 1
        while (k0 + 1) / (k0 + 1 - t) * rho > 1 if k0 + 1 - t > 0 else True:
            k0 += 1
            if k0 > 10 ** 9:
                return math.inf
        ks = np.arange(K + 1, k0 + 1, dtype=float)
        vals = np.exp(gammaln(ks + 1) - gammaln(t + 1) - gammaln(np.maximum(ks - t, 0) + 1) + (ks - t) * math.log(rho))
        return float(np.max(vals)) * (1 + 1e-9)
    n_hi = int(n_hi)
    if n_hi <= K:
        return 0.0
    # unimodal: the max over the range sits at an endpoint or at the peak
    cand = [K + 1, n_hi]
    if rho < 1 and t > 0:
        peak = math.floor((t - rho * 1) / (1 - rho)) if rho < 1 else n_hi
        for c in (peak, peak + 1):
            if K + 1 <= c <= n_hi:
                cand.append(c)
    vals = []
    for k in cand:
        if k < t:
            vals.append(0.0)
            continue
        lv = float(gammaln(k + 1) - gammaln(t + 1) - gammaln(k - t + 1)) + (k - t) * math.log(rho)
        vals.append(math.exp(lv) if lv < 700 else math.inf)
    return max(vals) * (1 + 1e-9)


def _tail_sum_bound(rho, t, K, n_hi):
    """``sum_{K <= j < n_hi} C(j,t) rho^(j-t)``."""
    if rho == 0:
        return 0.0
    if math.isinf(n_hi):
        if rho >= 1:
            return math.inf
        # geometric domination past the peak
        j0 = K
        while j0 - t < 0 or (j0 + 1) / (j0 + 1 - t) * rho > 1:
            j0 += 1
        head = 0.0
        if j0 > K:
            j = np.arange(K, j0, dtype=float)
            head = float(np.sum(np.exp(gammaln(j + 1) - gammaln(t + 1) - gammaln(np.maximum(j - t, 0) + 1) + np.maximum(j - t, 0) * math.log(rho))))
        q = (j0 + 1) / (j0 + 1 - t) * rho
        lead = math.exp(float(gammaln(j0 + 1) - gammaln(t + 1) - gammaln(j0 - t + 1)) + (j0 - t) * math.log(rho))
        return (head + lead / (1 - q)) * (1 + 1e-9)
    n_hi = int(n_hi)
    if n_hi <= K:
        return 0.0
    return _tail_bound(rho, t, K - 1, n_hi) * (n_hi - K) * (1 + 1e-9)


def _enumeration_cut(jf, kind, n_lo, n_hi):
    """Largest ``k`` enumerated exactly; beyond it a tail box is used."""
    K = n_hi if not math.isinf(n_hi) else EXACT_K_LIMIT
    K = int(min(K, EXACT_K_LIMIT))
    if all(abs(complex(b.lam)) + jf.delta_max < 1 for b in jf.blocks):
        # stop once every coordinate has decayed to nothing
        rho = max(abs(complex(b.lam)) for b in jf.blocks) + jf.delta_max
        tmax = max((0 if b.is_conjugate_pair else b.size - 1) for b in jf.blocks)
        if rho == 0:
            return max(min(K, tmax + 2 + n_lo), n_lo)
        need = n_lo + tmax + 1
        while need < K:
            if _tail_bound(rho, tmax, need, math.inf) * max(1.0, (tmax + 1) / (1 - rho)) < 1e-18:
                break
            need = int(need * 1.5) + 8
        K = min(K, max(need, n_lo))
    return max(K, n_lo)


def _polygon_vertices(Phi, f):
    """Vertices of ``{x in R^2 : Phi x <= f}`` by successive half-plane clipping."""
    big = np.max(np.abs(f[np.isfinite(f)])) if np.any(np.isfinite(f)) else 1.0
    # start from the box implied by the axis rows
    poly = None
    lo = np.full(2, -np.inf)
    hi = np.full(2, np.inf)
    for row, off in zip(Phi, f):
        nz = np.flatnonzero(row)
        if nz.size == 1:
            j = nz[0]
            if row[j] > 0:
                hi[j] = min(hi[j], off / row[j])
            else:
                lo[j] = max(lo[j], off / row[j])
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return None
    if np.any(lo > hi):
        return np.zeros((0, 2))
    poly = [np.array([lo[0], lo[1]]), np.array([hi[0], lo[1]]), np.array([hi[0], hi[1]]), np.array([lo[0], hi[1]])]
    for row, off in zip(Phi, f):
        if not poly:
            break
        new = []
        n = len(poly)
        for i in range(n):
            a, b = poly[i], poly[(i + 1) % n]
            va, vb = row @ a - off, row @ b - off
            if va <= 0:
                new.append(a)
            if (va < 0 < vb) or (vb < 0 < va):
                tpar = va / (va - vb)
                new.append(a + tpar * (b - a))
        poly = new
    if not poly:
        return np.zeros((0, 2))
    pts = np.unique(np.round(np.array(poly), 15), axis=0) if len(poly) > 1 else np.array(poly)
    return pts


def _axis_box(Phi, f):
    d = Phi.shape[1]
    lo = np.full(d, -np.inf)
    hi = np.full(d, np.inf)
    for row, off in zip(Phi, f):
        nz = np.flatnonzero(row)
        if nz.size == 1:
            j = nz[0]
            if row[j] > 0:
                hi[j] = min(hi[j], off / row[j])
            else:
                lo[j] = max(lo[j], off / row[j])
    return lo, hi


def _group_vertices(Phi_g, f_g):
    """Points whose convex hull contains ``{m : Phi_g m <= f_g}`` (``None`` if unbounded).

    Coordinates pinned to a negligible width are split off: the remaining
    constraints are relaxed over their box and the result is the product of the
    reduced vertices with the pinned box corners.
    """
    scale = np.max(np.abs(f_g[np.isfinite(f_g)]), initial=0.0)
    f_s = f_g + VERTEX_SLACK * (np.abs(f_g) + scale * 1e-3 + 1e-300)
    lo, hi = _axis_box(Phi_g, f_s)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return None
    if np.any(lo > hi):
        return np.zeros((0, Phi_g.shape[1]))
    width = hi - lo
    flat = width <= 1e-9 * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    if np.any(flat) and not np.all(flat):
        free = ~flat
        Pf = Phi_g[:, flat]
        shift = np.maximum(Pf * hi[flat][None, :], Pf * lo[flat][None, :]).sum(axis=1)
        rows = np.any(Phi_g[:, free] != 0, axis=1)
        sub = _reduced_vertices(Phi_g[rows][:, free], next_up(f_s[rows] - shift[rows]), lo[free], hi[free])
        corners = np.array(list(itertools.product(*zip(lo[flat], hi[flat]))))
        out = np.zeros((sub.shape[0] * corners.shape[0], Phi_g.shape[1]))
        for i, (a, b) in enumerate(itertools.product(range(sub.shape[0]), range(corners.shape[0]))):
            out[i, free] = sub[a]
            out[i, flat] = corners[b]
        return np.unique(out, axis=0)
    if np.all(flat):
        return np.unique(np.array(list(itertools.product(*zip(lo, hi)))), axis=0)
    return _reduced_vertices(Phi_g, f_s, lo, hi)


def _reduced_vertices(Phi_g, f_s, lo, hi):
    d = Phi_g.shape[1]
    box = np.array(list(itertools.product(*zip(lo, hi))))
    if d == 1:
        return np.array([[lo[0]], [hi[0]]])
    if d == 2:
        verts = _polygon_vertices(Phi_g, f_s)
        return box if verts is None or verts.shape[0] == 0 else verts
    norms = np.linalg.norm(Phi_g, axis=1)
    res = linprog(np.r_[np.zeros(d), -1.0], A_ub=np.c_[Phi_g, norms], b_ub=f_s,
                  bounds=[(None, None)] * d + [(0, None)], method="highs")
    if res.status != 0 or res.x[-1] <= 1e-9 * max(1.0, float(np.max(hi - lo))):
        return box
    try:
        hs = HalfspaceIntersection(np.c_[Phi_g, -f_s], res.x[:d])
        verts = hs.intersections
        if verts.shape[0] > VERTEX_BUDGET or not np.all(np.isfinite(verts)):
            return box
        return np.unique(verts, axis=0)
    except Exception:
        return box


def _connected_groups(m_dim, pairs):
    parent = list(range(m_dim))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        parent[find(a)] = find(b)
    groups = {}
    for i in range(m_dim):
        groups.setdefault(find(i), []).append(i)
    return [sorted(g) for g in groups.values()]


def synthesize_abstract_matrix(jf, n_range, dir_budget=12, kind="power", L=None, R=None):
    """Abstract matrix for ``J^k`` (``kind="power"``) or ``sum_{j<k} J^j`` (``"geometric"``), ``k`` in ``n_range``.

    Every ``k <= min(n_hi, 65536)`` is enumerated (earlier when the sequence
    has decayed below 1e-18); the rest is covered by a per-coordinate tail box.
    For each pair of ``m`` coordinates the hull of the points is bounded in the
    axis and diagonal directions and in up to ``dir_budget - 8`` hull-edge
    normals.  Offsets ``f`` include the ``delta_max`` majorant and rounding
    margins of each point.
    """
    n_lo, n_hi = n_range
    n_lo = int(n_lo)
    n_hi = math.inf if n_hi is None or (isinstance(n_hi, float) and math.isinf(n_hi)) else int(n_hi)
    if n_lo < 0 or n_hi < n_lo:
        raise ValueError("empty iteration range")
    shape = MatrixShape.from_jordan(jf)
    K = _enumeration_cut(jf, kind, n_lo, n_hi)
    ks = np.arange(0, K + 1)
    if kind == "power":
        pts, err = power_points(jf, ks)
    elif kind == "geometric":
        pts, err = geometric_points(jf, ks)
    else:
        raise ValueError(f"unknown abstract matrix kind {kind!r}")
    pts, err = pts[n_lo:], err[n_lo:]
    tail = not (not math.isinf(n_hi) and n_hi <= K)
    tail_pts = None
    if tail:
        t_lo, t_hi = _tail_box(jf, shape, kind, K, n_hi)
        if kind != "power":
            # partial sum at K (the last enumerated point) plus its error
            t_lo = t_lo + pts[-1] - err[-1]
            t_hi = t_hi + pts[-1] + err[-1]
        tail_pts = (t_lo, t_hi)
    pairs = _pair_list(shape)
    rows = []
    # single-coordinate bounds for every m entry
    for a in range(shape.m_dim):
        for sgn in (1.0, -1.0):
            r = np.zeros(shape.m_dim)
            r[a] = sgn
            rows.append(r)
    for a, b in pairs:
        P = pts[:, [a, b]]
        dirs = np.vstack([_BASE_DIRS[4:], _chord_dirs(P, max(dir_budget - 8, 0))])
        for d2 in dirs:
            r = np.zeros(shape.m_dim)
            r[a], r[b] = d2
            rows.append(r)
    Phi = np.array(rows)
    f = _offsets(Phi, pts, err, tail_pts)
    keep = np.isfinite(f)
    groups_idx = _connected_groups(shape.m_dim, pairs)
    groups = []
    for g in groups_idx:
        sel = keep & np.all(Phi[:, [i for i in range(shape.m_dim) if i not in g]] == 0, axis=1) & np.any(Phi[:, g] != 0, axis=1)
        verts = _group_vertices(Phi[sel][:, g], f[sel])
        groups.append((np.array(g), verts))
    meta = {
        "kind": kind,
        "enumerated_up_to": int(K),
        "tail": bool(tail),
        "dir_budget": int(dir_budget),
        "rows": int(Phi.shape[0]),
        "dropped_rows": int(np.sum(~keep)),
        "delta_max": float(jf.delta_max),
        "inverse_defect": float(np.max(_exact_inverse(jf).rad)) if R is None else 0.0,
    }
    return AbstractMatrix(
        L=jf.S if L is None else L,
        R=jf.S_inv if R is None else R,
        shape=shape,
        Phi=Phi[keep],
        f=f[keep],
        n_range=(n_lo, n_hi),
        kind=kind,
        groups=groups,
        meta=meta,
    )


def _sparse_dot(X, Phi):
    """``X @ Phi.T`` where ``0 * inf`` counts as 0 (coordinates a row ignores stay ignored)."""
    if np.all(np.isfinite(X)):
        return X @ Phi.T
    out = np.empty((X.shape[0], Phi.shape[0]))
    for r, row in enumerate(Phi):
        nz = row != 0
        out[:, r] = X[:, nz] @ row[nz]
    return out


def _offsets(Phi, pts, err, tail_pts):
    with np.errstate(invalid="ignore", over="ignore"):
        vals = _sparse_dot(pts, Phi) + _sparse_dot(err, np.abs(Phi))
        f = np.max(vals, axis=0) if vals.shape[0] else np.full(Phi.shape[0], -np.inf)
        if tail_pts is not None:
            t_lo, t_hi = tail_pts
            tv = np.where(Phi != 0, np.maximum(Phi * t_lo[None, :], Phi * t_hi[None, :]), 0.0).sum(axis=1)
            f = np.maximum(f, tv)
        f = np.where(np.isnan(f), np.inf, f)
        pad = gamma(Phi.shape[1] + 2) * _sparse_dot(np.max(np.abs(pts), axis=0, initial=0)[None, :], np.abs(Phi))[0] + TINY
    return next_up(f + pad)


def _joint_vertices(M):
    total = 1
    for _, v in M.groups:
        if v is None:
            return None
        total *= max(v.shape[0], 1)
        if total > VERTEX_BUDGET:
            return None
    combos = []
    for parts in itertools.product(*[range(v.shape[0]) for _, v in M.groups]):
        m = np.zeros(M.m_dim)
        for (idx, v), j in zip(M.groups, parts):
            m[idx] = v[j]
        combos.append(m)
    return np.array(combos)


def _direction_pad(M, V, Mverts):
    """Rounding bound (1-norm) of the computed ``R^T phi(m)^T L^T v``."""
    p = M.L.shape[0]
    absW = np.abs(V) @ np.abs(M.L)
    absphi = M.shape.phi_t_apply(np.abs(Mverts), absW)
    pad = gamma(3 * p + 4) * np.sum(absphi @ np.abs(M.R), axis=-1)
    # R = S_inv only approximates the exact inverse of S
    defect = M.meta.get("inverse_defect", 0.0)
    if defect:
        pad = pad + defect * M.R.shape[1] * np.sum(absphi, axis=-1)
    return pad


def abstract_apply(M, X, v, fixed=None):
    """Bounds on ``sup{rho_X(d) [+ rho_W(v - d)] : d = (L phi(m) R)^T v, Phi m <= f}`` per row of ``v``.

    Without ``fixed`` this bounds ``rho`` of ``{A^k x : k in n_range}``.  With
    ``fixed = W`` it bounds ``{A^k x + (I - A^k) w}``, the reach set around
    the fixed points ``w`` of a constant input, keeping both parts tied to the
    same ``k``.

    With few enough vertex combinations the maximum is taken over the joint
    vertices (exact for the polytope, since the objective is convex in ``m``);
    otherwise groups are maximised separately and added up (sublinearity).
    Returns ``(lo, hi)`` arrays.
    """
    V = np.atleast_2d(np.asarray(v, dtype=float))
    W = V @ M.L
    joint = _joint_vertices(M)
    magX = X.magnitude()
    magW = fixed.magnitude() if fixed is not None else 0.0
    if joint is not None:
        dirs = M.shape.phi_t_apply(joint, W) @ M.R  # (nv, nd, q)
        nv, nd, q = dirs.shape
        lo, hi = X.pair(dirs.reshape(nv * nd, q))
        lo = lo.reshape(nv, nd)
        hi = hi.reshape(nv, nd)
        pad = _direction_pad(M, V, joint)
        if fixed is not None:
            rest = V[None, :, :] - dirs
            lw, hw = fixed.pair(rest.reshape(nv * nd, q))
            lo = lo + lw.reshape(nv, nd)
            hi = hi + hw.reshape(nv, nd)
            pad = pad + EPS * np.sum(np.abs(rest), axis=-1)
        with np.errstate(invalid="ignore"):
            hi = next_up(hi + pad * (magX + magW) * (1 + 4 * EPS) + gamma(2) * np.abs(hi))
        return np.max(lo, axis=0), np.max(hi, axis=0)
    # separable bound: rho_W(v - sum d_g) <= rho_W(v) + sum rho_W(-d_g)
    total_hi = np.zeros(V.shape[0])
    q = M.R.shape[1]
    if fixed is not None:
        _, hv = fixed.pair(V)
        total_hi = total_hi + hv
    for idx, verts in M.groups:
        blocks = sorted({M.shape.block_of(i) for i in idx})
        cols = np.concatenate([np.arange(M.shape.blocks[s].start, M.shape.blocks[s].stop) for s in blocks])
        if verts is None:
            active = np.any(np.abs(W[:, cols]) > 0, axis=1)
            total_hi = np.where(active, np.inf, total_hi)
            continue
        Wg = np.zeros_like(W)
        Wg[:, cols] = W[:, cols]
        full = np.zeros((verts.shape[0], M.m_dim))
        full[:, idx] = verts
        dirs = M.shape.phi_t_apply(full, Wg) @ M.R
        nv, nd, _ = dirs.shape
        _, hi = X.pair(dirs.reshape(nv * nd, q))
        hi = hi.reshape(nv, nd)
        pad = _direction_pad(M, V, full)
        if fixed is not None:
            _, hw = fixed.pair(-dirs.reshape(nv * nd, q))
            hi = hi + hw.reshape(nv, nd)
        with np.errstate(invalid="ignore"):
            hi = hi + pad * (magX + magW) * (1 + 4 * EPS)
        total_hi = total_hi + np.max(hi, axis=0)
    n = max(len(M.groups), 1) + 1
    with np.errstate(invalid="ignore"):
        total_hi = next_up(total_hi + gamma(n) * np.abs(total_hi))
    total_hi = np.where(np.isnan(total_hi), np.inf, total_hi)
    # the separable sum is an upper bound only
    return np.full(V.shape[0], -np.inf), total_hi


# --------------------------------------------------------------------------
# input decomposition and ball dynamics


@dataclass
class InputDecomposition:
    """``S^-1 B U`` split into a centre and per-block balls.

    ``U_c`` is the constant part mapped to state space (``B u_c = S c'``);
    ``U_b`` is the centred ball in eigen coordinates with one radius per block;
    ``U_a`` is ``(I - A)^-1 B U`` or ``None`` when 1 is an eigenvalue.
    """

    U_c: np.ndarray
    c_prime: np.ndarray
    U_b: Ball
    radii: np.ndarray
    U_a: SupportEvaluator
    BU: SupportEvaluator
    resolvent: IntervalMatrix = None
    meta: dict = field(default_factory=dict)

    def fixed_point_set(self):
        """``(I - A)^-1 B u_c`` as a support evaluator, or ``None`` when 1 is an eigenvalue."""
        if self.resolvent is None:
            return None
        from .geometry import PointSet
        return LinearImage(self.resolvent, PointSet([self.U_c]))


def _pair_groups(jf):
    pairs, groups = [], []
    for b in jf.blocks:
        idx = list(range(b.start, b.stop))
        if len(idx) == 2:
            pairs.append(tuple(idx))
        elif len(idx) > 2:
            groups.append(tuple(idx))
    return pairs, groups


def block_radii(ball, jf):
    """Radius of ``ball`` in each Jordan block's subspace."""
    radii = []
    for b in jf.blocks:
        idx = set(range(b.start, b.stop))
        r2 = 0.0
        for g, r in zip(ball.groups, ball.radii):
            if set(g.tolist()) & idx:
                if not set(g.tolist()) <= idx:
                    raise ValueError("ball groups straddle Jordan blocks")
                r2 += float(r) ** 2
        radii.append(float(next_up(math.sqrt(r2) * (1 + 4 * EPS))) if r2 else 0.0)
    return np.array(radii)


def resolvent(A):
    """Interval enclosure of ``(I - A)^-1`` or ``None`` if ``I - A`` is (numerically) singular."""
    p = A.shape[0]
    M = np.eye(p) - A
    try:
        X = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(X)):
        return None
    E = np.eye(p) - M @ X
    e = float(np.max(np.sum(np.abs(E), axis=1))) + gamma(p + 2) * float(np.max(np.abs(M) @ np.abs(X)) * p)
    if e >= 0.5:
        return None
    xn = float(np.max(np.sum(np.abs(X), axis=1)))
    rad = xn * e / (1 - e) * (1 + 8 * EPS)
    return IntervalMatrix.from_mid_rad(X, np.full((p, p), rad))


def input_decompose(B, U, jf):
    """Split ``S^-1 B U`` into ``{c'}`` plus per-block balls; also build ``U_a``."""
    B = np.asarray(B, dtype=float)
    p = jf.p
    BU = LinearImage(B, U)
    T = IntervalMatrix.point(jf.S_inv) @ IntervalMatrix.point(B)
    UJ = LinearImage(T, U)
    pairs, groups = _pair_groups(jf)
    ball = ball_overapprox(UJ, pairs, groups)
    c_prime = ball.center
    radii = block_radii(ball, jf)
    Ub = Ball(np.zeros(p), [np.arange(b.start, b.stop) for b in jf.blocks], radii, ball.meta)
    U_c = jf.S @ c_prime
    Rinv = resolvent(jf.A) if jf.A is not None else None
    U_a = LinearImage(Rinv, BU) if Rinv is not None else None
    return InputDecomposition(U_c=U_c, c_prime=c_prime, U_b=Ub, radii=radii, U_a=U_a, BU=BU,
                              resolvent=Rinv, meta={"ball": ball.meta})


def build_ball_dynamics(jf):
    """``A_b = S diag(sigma_s I) S^-1``: every block replaced by its norm times identity."""
    p = jf.p
    Jb = np.zeros((p, p))
    blocks = []
    for b in jf.blocks:
        sl = b.slice
        Jb[sl, sl] = np.eye(b.dim) * b.sigma_max
        for j in range(b.dim):
            blocks.append(JordanBlock(complex(b.sigma_max), 1, b.sigma_max, False, b.start + j))
    Ab = jf.S @ Jb @ jf.S_inv
    delta = reconstruction_error(Ab, jf.S, Jb, jf.S_inv)
    return JordanForm(jf.S.copy(), Jb, jf.S_inv.copy(), delta, tuple(blocks), Ab)


def ball_growth(sigma, n):
    """``sum_{j<n} sigma^j`` rounded up (``n`` may be ``inf``)."""
    sigma = float(sigma)
    if math.isinf(n):
        if sigma >= 1:
            return math.inf
        return float(next_up(1.0 / (1.0 - sigma) * (1 + 4 * EPS)))
    n = int(n)
    if n <= 0:
        return 0.0
    if sigma == 1.0:
        return float(n)
    with np.errstate(over="ignore"):
        val = (1.0 - float(np.power(sigma, float(n)))) / (1.0 - sigma)
    return float(next_up(abs(val) * (1 + (8 + 2 * math.log2(n + 1)) * EPS)))


def ball_term(jf, dec, n_hi):
    """Support evaluator of the accumulated ball part ``S * Ball(R_s * sum_{j<n} sigma_s^j)``."""
    radii = []
    for b, r in zip(jf.blocks, dec.radii):
        g = ball_growth(b.sigma_max, n_hi) if r > 0 else 0.0
        radii.append(float(next_up(r * g)) if g and math.isfinite(g) else (math.inf if r > 0 and not math.isfinite(g) else 0.0))
    ball = Ball(np.zeros(jf.p), [np.arange(b.start, b.stop) for b in jf.blocks], radii)
    return LinearImage(jf.S, ball)
