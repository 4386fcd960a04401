"""Reference computations the tests compare against.

Nothing here imports the package's numerics: sums run in mpmath, polytope
supports come from explicit vertex lists, and reach sets from brute-force
vertex propagation or trajectory simulation.
"""

import itertools

import mpmath as mp
import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection


def mp_matrix_sum(A, n, dps=50):
    """``sum_{k<n} A^k`` in extended precision, returned as floats."""
    with mp.workdps(dps):
        M = mp.matrix(A.tolist())
        p = A.shape[0]
        acc = mp.zeros(p, p)
        P = mp.eye(p)
        for _ in range(n):
            acc += P
            P = P * M
        return np.array([[float(acc[i, j]) for j in range(p)] for i in range(p)])


def mp_residual(A, S, J, S_inv, dps=60):
    """``max |A - S J S_inv|`` evaluated exactly enough to be a reference."""
    with mp.workdps(dps):
        R = mp.matrix(A.tolist()) - mp.matrix(S.tolist()) * mp.matrix(J.tolist()) * mp.matrix(S_inv.tolist())
        return float(max(abs(R[i, j]) for i in range(R.rows) for j in range(R.cols)))


def box_vertices(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return np.array([np.where(bits, hi, lo) for bits in itertools.product([0, 1], repeat=lo.size)])


def polytope_vertices(C, d):
    """Vertices of a bounded full-dimensional ``{x : C x <= d}``."""
    C, d = np.asarray(C, float), np.asarray(d, float)
    p = C.shape[1]
    if p == 1:
        up = [d[i] / C[i, 0] for i in range(len(d)) if C[i, 0] > 0]
        dn = [d[i] / C[i, 0] for i in range(len(d)) if C[i, 0] < 0]
        return np.array([[max(dn)], [min(up)]])
    norm = np.linalg.norm(C, axis=1, keepdims=True)
    res = linprog(np.r_[np.zeros(p), -1.0], A_ub=np.hstack([C, norm]), b_ub=d,
                  bounds=[(None, None)] * p + [(0, None)], method="highs")
    hs = HalfspaceIntersection(np.hstack([C, -d[:, None]]), res.x[:p])
    pts = hs.intersections
    return pts[ConvexHull(pts).vertices] if p > 1 else pts


def vertex_support(vertices, v):
    return float(np.max(vertices @ np.asarray(v, float)))


def reach_vertices(A, B, X0_vertices, U_vertices, n):
    """Vertex clouds of the unguarded reach sets ``X_0 .. X_n`` (hull-pruned when possible)."""
    X = np.asarray(X0_vertices, float)
    BU = np.asarray(U_vertices, float) @ B.T
    out = [X]
    for _ in range(n):
        X = (X @ A.T)[:, None, :] + BU[None, :, :]
        X = X.reshape(-1, A.shape[0])
        X = _prune(X)
        out.append(X)
    return out


def _prune(X):
    X = np.unique(np.round(X, 12), axis=0)
    if X.shape[0] <= X.shape[1] + 1:
        return X
    try:
        return X[ConvexHull(X, qhull_options="QJ").vertices] if X.shape[1] > 1 else np.array([[X.min()], [X.max()]])
    except Exception:
        return X


def simulate_batch(model, X0, inputs_fn, steps, rng):
    """Vectorised trajectories; returns every state that satisfies the guard, plus the start states."""
    X = X0.copy()
    alive = np.ones(X.shape[0], dtype=bool)
    visited = [X.copy()]
    for _ in range(steps):
        if model.r:
            alive &= np.all(X @ model.G.T <= model.h, axis=1)
        if not alive.any():
            break
        U = inputs_fn(X.shape[0], rng)
        X = np.where(alive[:, None], X @ model.A.T + U @ model.B.T, X)
        inside = alive & np.all(X @ model.G.T <= model.h, axis=1) if model.r else alive
        visited.append(X[inside])
    return np.vstack(visited)


def first_exit_step(model, x0, inputs):
    """Index of the first state violating the guard (``None`` when it never does)."""
    x = np.asarray(x0, float)
    for k in range(len(inputs) + 1):
        if np.any(model.G @ x > model.h):
            return k
        if k < len(inputs):
            x = model.A @ x + model.B @ inputs[k]
    return None
