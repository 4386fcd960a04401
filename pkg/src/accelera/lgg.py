"""Bounded-horizon support-function propagation, the baseline the accelerated tube is compared with."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .numerics import gamma, next_up


@dataclass
class LggRun:
    """Supports of every reach set ``X_k`` for ``k = 0..N``.

    ``upper[k, i]`` bounds ``max <t_i, x>`` over ``X_k`` and ``lower[k, i]``
    bounds the minimum, for template row ``t_i``.
    """

    template: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    N: int
    elapsed: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def supports(self):
        return self.upper

    @property
    def hi(self):
        return np.max(self.upper, axis=0)

    @property
    def lo(self):
        return np.min(self.lower, axis=0)


def lgg_propagate(model, N, template):
    """Propagate ``rho_{X_k}(v) = rho_X0((A^T)^k v) + sum_{j<k} rho_BU((A^T)^j v)`` for ``k <= N``.

    The guard is ignored (bounded-time, unguarded tube).  One step per
    iteration: the direction is pushed through ``A^T`` and the input support is
    accumulated with upward rounding; the float recursion of the directions is
    padded with a first-order margin.
    """
    N = int(N)
    if N < 0:
        raise ValueError("horizon must be non-negative")
    t0 = time.perf_counter()
    T = np.atleast_2d(np.asarray(template, dtype=float))
    k = T.shape[0]
    if k == 0:
        return LggRun(T, np.zeros((N + 1, 0)), np.zeros((N + 1, 0)), N, time.perf_counter() - t0)
    V = np.vstack([T, -T])
    p = model.p
    g = gamma(2 * p + 4)
    magX = model.X0.magnitude()
    magU = model.U.magnitude()
    D = V.copy()
    acc = np.zeros(V.shape[0])
    acc_abs = np.zeros(V.shape[0])
    out = np.empty((N + 1, V.shape[0]))
    for step in range(N + 1):
        _, hx = model.X0.pair(D)
        margin = (step + 1) * g * (np.sum(np.abs(D), axis=1) * magX + acc_abs + np.abs(hx) + np.abs(acc))
        out[step] = next_up(hx + acc + margin)
        if step == N:
            break
        BD = D @ model.B
        _, hu = model.U.pair(BD)
        acc = next_up(acc + hu)
        acc_abs = acc_abs + np.sum(np.abs(BD), axis=1) * magU
        D = D @ model.A
    upper = out[:, :k]
    lower = -out[:, k:]
    return LggRun(T, upper, lower, N, time.perf_counter() - t0)
