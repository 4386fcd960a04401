"""Numerical Jordan decomposition with a certified reconstruction residual.

The decomposition is computed in floating point; every downstream consumer
relies on ``delta_max`` (an upper bound on ``max|A - S J S^-1|``) instead of
trusting the factors to be exact.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DecompositionError
from .numerics import EPS, gamma, next_up

# condition number accepted without looking for a better-clustered decomposition
_SOFT_COND = 1e8
_HARD_COND = 1e12


@dataclass(frozen=True)
class JordanBlock:
    """One block of the real Jordan form.

    ``lam`` is the eigenvalue (the one with positive imaginary part for a
    conjugate pair).  A real eigenvalue gives a ``size`` x ``size`` upper
    bidiagonal block; a conjugate pair gives the 2x2 block
    ``[[a, b], [-b, a]]`` with ``lam = a + ib``.  ``start`` is the index of the
    block's first column in ``S``.
    """

    lam: complex
    size: int
    sigma_max: float
    is_conjugate_pair: bool = False
    start: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("block size must be at least 1")
        if self.is_conjugate_pair and self.size != 1:
            raise ValueError("only semisimple conjugate pairs are supported")
        if self.sigma_max < abs(self.lam) * (1 - 4 * EPS):
            raise ValueError("sigma_max must dominate |lambda|")

    @property
    def dim(self):
        """Number of real coordinates the block occupies."""
        return 2 if self.is_conjugate_pair else self.size

    @property
    def stop(self):
        return self.start + self.dim

    @property
    def slice(self):
        return slice(self.start, self.stop)

    def matrix(self):
        lam = complex(self.lam)
        if self.is_conjugate_pair:
            return np.array([[lam.real, lam.imag], [-lam.imag, lam.real]])
        m = np.eye(self.size) * lam.real
        m += np.eye(self.size, k=1)
        return m


@dataclass(frozen=True)
class JordanForm:
    """``A ~ S J S_inv`` with the residual bounded by ``delta_max``.

    ``A`` keeps the source matrix so that derived forms can be re-certified.
    A complex (not yet realified) form stores complex ``S``/``J`` and uses
    ``is_conjugate_pair=False`` blocks with complex ``lam``.
    """

    S: np.ndarray
    J: np.ndarray
    S_inv: np.ndarray
    delta_max: float
    blocks: tuple
    A: np.ndarray = field(default=None, repr=False)

    @property
    def p(self):
        return self.S.shape[0]

    @property
    def is_real(self):
        return not np.iscomplexobj(self.S) and not np.iscomplexobj(self.J)

    @property
    def eigenvalues(self):
        out = []
        for b in self.blocks:
            out.extend([b.lam] * b.size)
            if b.is_conjugate_pair:
                out.append(np.conj(b.lam))
        return np.array(out, dtype=complex)

    @property
    def spectral_radius(self):
        return max(abs(b.lam) for b in self.blocks)

    @property
    def cond(self):
        return float(np.linalg.norm(self.S, 2) * np.linalg.norm(self.S_inv, 2))


# above this size the exact dyadic residual is replaced by an a-priori bound
_EXACT_RESIDUAL_MAX_DIM = 128


def _dyadic(M):
    """Exact representation ``M = ints * 2**e`` with a Python-int object array."""
    M = np.asarray(M, dtype=float)
    mant, ex = np.frexp(M)
    ints = (mant * 2.0 ** 53).astype(np.int64)
    ex = ex - 53
    nz = M != 0
    e0 = int(ex[nz].min()) if np.any(nz) else 0
    out = np.empty(M.shape, dtype=object)
    for idx in np.ndindex(M.shape):
        out[idx] = int(ints[idx]) << int(ex[idx] - e0) if nz[idx] else 0
    return out, e0


def _dyadic_sub(a, b):
    (ia, ea), (ib, eb) = a, b
    e = min(ea, eb)
    return ia * (1 << (ea - e)) - ib * (1 << (eb - e)), e


def _dyadic_max_abs_up(d):
    ints, e = d
    m = max((abs(v) for v in ints.flat), default=0)
    if m == 0:
        return 0.0
    exact = Fraction(m) * (Fraction(2) ** e)
    approx = float(exact)
    if Fraction(approx) < exact:
        approx = math.nextafter(approx, math.inf)
    return approx


def _exact_residual(A, factors):
    """``max |A - prod(factors)|`` evaluated exactly on the float inputs, rounded up."""
    prod = _dyadic(factors[0])
    for f in factors[1:]:
        i2, e2 = _dyadic(f)
        prod = (prod[0].dot(i2), prod[1] + e2)
    return _dyadic_max_abs_up(_dyadic_sub(_dyadic(A), prod))


def reconstruction_error(A, S, J, S_inv):
    """Upper bound on ``max |A - S J S_inv|``.

    Real factors of moderate size are checked exactly in dyadic integer
    arithmetic; otherwise the float residual is padded with the rounding bound
    of the check itself.
    """
    A = np.asarray(A)
    S, J, S_inv = np.asarray(S), np.asarray(J), np.asarray(S_inv)
    p = A.shape[0]
    if S.shape != (p, p) or J.shape != (p, p) or S_inv.shape != (p, p):
        raise ValueError("factors are not conformable with A")
    real = not any(np.iscomplexobj(m) for m in (A, S, J, S_inv))
    if real and p <= _EXACT_RESIDUAL_MAX_DIM:
        return _exact_residual(A, (S, J, S_inv))
    prod = (S @ J) @ S_inv
    resid = np.abs(A - prod)
    err = gamma(2 * p + 2) * ((np.abs(S) @ np.abs(J)) @ np.abs(S_inv))
    err += gamma(1) * np.abs(prod)
    bound = float(np.max(resid + err)) if p else 0.0
    return float(next_up(bound)) if bound > 0 else 0.0


def _inverse_error(S, S_inv):
    p = S.shape[0]
    if not np.iscomplexobj(S) and not np.iscomplexobj(S_inv) and p <= _EXACT_RESIDUAL_MAX_DIM:
        return _exact_residual(np.eye(p), (S, S_inv))
    resid = np.abs(S @ S_inv - np.eye(p))
    err = gamma(p + 1) * (np.abs(S) @ np.abs(S_inv))
    return float(next_up(np.max(resid + err)))


def _sigma_bound(lam, size, pair):
    lam = complex(lam)
    r = math.hypot(lam.real, lam.imag)
    if pair or size == 1:
        return r if (lam.imag == 0 or lam.real == 0) else math.nextafter(r, math.inf)
    m = np.eye(size) * lam.real + np.eye(size, k=1)
    s = float(np.linalg.svd(m, compute_uv=False)[0]) * (1 + 8 * size * EPS)
    return float(next_up(max(s, r)))


def block_sigma_max(block):
    """Upper bound on the largest singular value of ``block``'s matrix."""
    return _sigma_bound(block.lam, block.size, block.is_conjugate_pair)


def _sort_key(lam):
    lam = complex(lam)
    return (-abs(lam), -lam.real, -lam.imag)


def _cluster(values, tol_abs):
    n = len(values)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(values[i] - values[j]) <= tol_abs:
                parent[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def _null_space(M, thr):
    _, s, vh = np.linalg.svd(M)
    rank = int(np.sum(s > thr))
    return vh[rank:].conj().T


def _orth(M, thr=1e-10):
    if M.shape[1] == 0:
        return M
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0:
        return M[:, :0]
    return u[:, s > thr * max(1.0, s[0])]


def _real_chains(A, lam, mult, tol_abs):
    """Jordan chains for the real eigenvalue ``lam`` of algebraic multiplicity ``mult``."""
    p = A.shape[0]
    N = A - lam * np.eye(p)
    norm_n = max(1.0, float(np.linalg.norm(N, 2)))
    powers = [np.eye(p)]
    nulls = [np.zeros((p, 0))]
    for k in range(1, mult + 1):
        powers.append(powers[-1] @ N)
        thr = p * tol_abs * norm_n ** (k - 1)
        nulls.append(_null_space(powers[k], thr))
    dims = [K.shape[1] for K in nulls]
    if dims[mult] != mult or any(dims[k] < dims[k - 1] for k in range(1, mult + 1)):
        raise DecompositionError(f"cannot resolve Jordan structure of eigenvalue {lam:.6g}")
    at_least = [0] + [dims[k] - dims[k - 1] for k in range(1, mult + 1)] + [0]
    exactly = {s: at_least[s] - at_least[s + 1] for s in range(1, mult + 1)}
    if any(v < 0 for v in exactly.values()) or sum(s * c for s, c in exactly.items()) != mult:
        raise DecompositionError(f"inconsistent Jordan structure for eigenvalue {lam:.6g}")
    tops = []
    for s in range(mult, 0, -1):
        need = exactly[s]
        if need == 0:
            continue
        existing = [nulls[s - 1]] + [
            (powers[t - s] @ x)[:, None] for t, x in tops
        ]
        Q = _orth(np.hstack(existing)) if existing else np.zeros((p, 0))
        K = nulls[s]
        P = K - Q @ (Q.T @ K)
        u, sv, _ = np.linalg.svd(P, full_matrices=False)
        if sv.size < need or sv[need - 1] < 1e-6:
            raise DecompositionError(f"cannot build Jordan chains for eigenvalue {lam:.6g}")
        for c in range(need):
            tops.append((s, u[:, c]))
    cols = []
    sizes = []
    for s, x in tops:
        chain = [powers[s - 1 - j] @ x for j in range(s)]
        cols.extend(chain)
        sizes.append(s)
    return cols, sizes


def _complex_vectors(A, lam, mult, tol_abs, eigvecs):
    if mult == 1 and eigvecs is not None:
        return [eigvecs]
    p = A.shape[0]
    norm_a = max(1.0, float(np.linalg.norm(A, 2)))
    K = _null_space(A - lam * np.eye(p), p * tol_abs * norm_a)
    if K.shape[1] != mult:
        raise DecompositionError(
            f"defective complex eigenvalue {lam:.6g} (multiplicity {mult}) is not supported"
        )
    return [K[:, j] for j in range(mult)]


def _decompose(A, tol, max_cond):
    p = A.shape[0]
    w, V = np.linalg.eig(A)
    tol_abs = tol * max(1.0, float(np.linalg.norm(A, np.inf)))
    groups = _cluster(w, tol_abs)
    entries = []  # (lam, kind, columns, sizes)
    used = set()
    for gi, g in enumerate(groups):
        if gi in used:
            continue
        lam = complex(np.mean(w[g]))
        mult = len(g)
        if abs(lam.imag) <= tol_abs:
            lam_r = float(lam.real)
            if mult == 1:
                v = np.real(V[:, g[0]])
                cols, sizes = [v / np.linalg.norm(v)], [1]
            else:
                cols, sizes = _real_chains(A, lam_r, mult, tol_abs)
            entries.append((lam_r, False, cols, sizes))
            used.add(gi)
            continue
        # conjugate partner
        partner = None
        for gj, h in enumerate(groups):
            if gj != gi and gj not in used and len(h) == mult:
                if abs(np.mean(w[h]) - np.conj(lam)) <= tol_abs * max(1, mult):
                    partner = gj
                    break
        if partner is None:
            raise DecompositionError(f"unmatched conjugate eigenvalue {lam:.6g}")
        used.update({gi, partner})
        if lam.imag < 0:
            lam = np.conj(lam)
            g = groups[partner]
        vecs = _complex_vectors(A, lam, mult, tol_abs, V[:, g[0]] if mult == 1 else None)
        cols = []
        for v in vecs:
            v = v / np.linalg.norm(v)
            cols.extend([np.real(v), np.imag(v)])
        entries.append((lam, True, cols, [1] * mult))

    entries.sort(key=lambda e: _sort_key(e[0]))
    S_cols = []
    blocks = []
    start = 0
    for lam, pair, cols, sizes in entries:
        idx = 0
        for s in sizes:
            width = 2 if pair else s
            blk_cols = cols[idx:idx + width]
            idx += width
            blk = JordanBlock(complex(lam), s, _sigma_bound(lam, s, pair), pair, start)
            blocks.append(blk)
            S_cols.extend(blk_cols)
            start += blk.dim
    if start != p:
        raise DecompositionError("eigenvector columns do not span the space")
    S = np.column_stack(S_cols).astype(float)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > max_cond:
        raise DecompositionError(f"eigenvector matrix is nearly singular (cond {cond:.3g})")
    S_inv = np.linalg.inv(S)
    J = _assemble_J(blocks, p)
    delta = max(reconstruction_error(A, S, J, S_inv), _inverse_error(S, S_inv))
    return JordanForm(S, J, S_inv, delta, tuple(blocks), A.copy()), cond


def _assemble_J(blocks, p):
    J = np.zeros((p, p))
    for b in blocks:
        J[b.slice, b.slice] = b.matrix()
    return J


def _validate_square(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise ValueError("A must be a non-empty square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("A must have finite entries")
    return A


def jordan_decompose(A, tol=1e-8, real=True):
    """Real Jordan form of ``A`` (or the complex one with ``real=False``).

    Eigenvalues closer than ``tol * max(1, |A|_inf)`` are merged into one
    cluster whose block structure is read off the ranks of ``(A - lam I)^k``.
    When the first attempt fails or yields a badly conditioned ``S`` the
    clustering tolerance is widened by 1e4 once.
    """
    A = _validate_square(A)
    if tol <= 0:
        raise ValueError("tol must be positive")
    first = second = None
    err = None
    try:
        first = _decompose(A, tol, _HARD_COND)
    except DecompositionError as exc:
        err = exc
    if first is None or first[1] > _SOFT_COND:
        try:
            second = _decompose(A, tol * 1e4, _HARD_COND)
        except DecompositionError as exc:
            err = err or exc
    candidates = [c for c in (first, second) if c is not None]
    if not candidates:
        raise err
    jf = min(candidates, key=lambda c: c[1])[0]
    return jf if real else complexify(jf)


def complexify(jf):
    """Diagonalise the 2x2 conjugate-pair blocks of a real Jordan form."""
    if not jf.is_real:
        return jf
    p = jf.p
    S = jf.S.astype(complex)
    blocks = []
    start = 0
    cols = []
    for b in jf.blocks:
        if b.is_conjugate_pair:
            u, v = jf.S[:, b.start], jf.S[:, b.start + 1]
            w = u + 1j * v
            cols.extend([w, np.conj(w)])
            blocks.append(JordanBlock(b.lam, 1, b.sigma_max, False, start))
            blocks.append(JordanBlock(np.conj(b.lam), 1, b.sigma_max, False, start + 1))
            start += 2
        else:
            cols.extend(jf.S[:, b.start:b.stop].T)
            blocks.append(replace(b, start=start))
            start += b.dim
    S = np.column_stack(cols)
    J = np.zeros((p, p), dtype=complex)
    for b in blocks:
        J[b.start:b.start + b.size, b.start:b.start + b.size] = (
            np.eye(b.size) * b.lam + np.eye(b.size, k=1)
        )
    S_inv = np.linalg.inv(S)
    A = jf.A if jf.A is not None else np.real(S @ J @ S_inv)
    delta = max(reconstruction_error(A, S, J, S_inv), _inverse_error(S, S_inv))
    return JordanForm(S, J, S_inv, delta, tuple(blocks), A)


def realify(jf):
    """Replace each conjugate pair ``(lam, conj(lam))`` by its real 2x2 block.

    The eigenvector ``w`` of ``lam = a + ib`` (``b > 0``) becomes the two real
    columns ``Re w, Im w`` and the block becomes ``[[a, b], [-b, a]]``.
    Already-real forms are returned unchanged.
    """
    if jf.is_real:
        return jf
    p = jf.p
    used = set()
    items = []
    for i, b in enumerate(jf.blocks):
        if i in used:
            continue
        lam = complex(b.lam)
        if abs(lam.imag) == 0:
            cols = [np.real(c) for c in jf.S[:, b.start:b.start + b.size].T]
            items.append((lam.real, False, cols, b.size))
            used.add(i)
            continue
        if b.size != 1:
            raise DecompositionError("defective complex eigenvalues are not supported")
        match = None
        for j, c in enumerate(jf.blocks):
            if j != i and j not in used and c.size == 1 and abs(complex(c.lam) - np.conj(lam)) <= 1e-9 * max(1, abs(lam)):
                match = j
                break
        if match is None:
            raise DecompositionError(f"unmatched conjugate eigenvalue {lam:.6g}")
        used.update({i, match})
        k = i if lam.imag > 0 else match
        top = jf.blocks[k]
        w = jf.S[:, top.start]
        items.append((complex(top.lam), True, [np.real(w), np.imag(w)], 1))
    items.sort(key=lambda e: _sort_key(e[0]))
    cols, blocks, start = [], [], 0
    for lam, pair, c, size in items:
        blk = JordanBlock(complex(lam), size, _sigma_bound(lam, size, pair), pair, start)
        blocks.append(blk)
        cols.extend(c)
        start += blk.dim
    S = np.column_stack(cols).astype(float)
    S_inv = np.linalg.inv(S)
    J = _assemble_J(blocks, p)
    A = np.real(jf.A) if jf.A is not None else np.real(jf.S @ jf.J @ jf.S_inv)
    delta = max(reconstruction_error(A, S, J, S_inv), _inverse_error(S, S_inv))
    return JordanForm(S, J, S_inv, delta, tuple(blocks), A)
