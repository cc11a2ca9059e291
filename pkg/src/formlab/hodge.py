"""Hodge star, Lefschetz operators and primitive decomposition at fiber level.

Every operator has a matrix form acting on coefficient vectors in the
monomial basis of :mod:`formlab.exterior`; the Form-level functions are thin
wrappers. Matrices are cached per (metric, bidegree).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exterior import (
    Form,
    FormError,
    HermitianMetric,
    basis,
    basis_index,
    compound,
    dim,
    gram_matrix,
    left_wedge_matrix,
    multi_indices,
    perm_sign,
)

__all__ = [
    "euclidean_star_matrix",
    "star_matrix",
    "hodge_star",
    "lefschetz_matrix",
    "lambda_matrix",
    "lambda_power_matrix",
    "lefschetz_L",
    "lambda_contraction",
    "primitive_projector",
    "PrimitiveDecomposition",
    "primitive_decompose",
    "decomposition_matrices",
    "star_of_wedge_power",
    "star_of_wedge_power_matrix",
]


def _complement(I, n):
    return tuple(j for j in range(1, n + 1) if j not in I)


@lru_cache(maxsize=None)
def euclidean_star_matrix(n, p, q):
    """Star for the standard metric, Lambda^{p,q} -> Lambda^{n-q,n-p}.

    For y = dz_A ^ dzbar_B the image is c dz_{B^c} ^ dzbar_{A^c} with c fixed by
    (dz_B ^ dzbar_A) ^ (c dz_{B^c} ^ dzbar_{A^c}) = (-1)^{pq} dV.
    """
    src = basis(n, p, q)
    dst = basis_index(n, n - q, n - p)
    S = np.zeros((len(dst), len(src)), dtype=complex)
    top = 1j ** (n * n)
    for b, (A, B) in enumerate(src):
        Bc, Ac = _complement(B, n), _complement(A, n)
        # dz_B ^ dzbar_A ^ dz_Bc ^ dzbar_Ac = s * dz_{1..n} ^ dzbar_{1..n}
        s = (-1) ** (len(A) * len(Bc)) * perm_sign(B + Bc) * perm_sign(A + Ac)
        S[dst[(Bc, Ac)], b] = (-1) ** (p * q) * top / s
    S.setflags(write=False)
    return S


@lru_cache(maxsize=256)
def _frame_change(metric, p, q):
    # dw = A dz orthonormal; returns (to_w, from_w) on coefficient vectors
    A = metric.cholesky_coframe()
    B = np.linalg.inv(A)
    to_w = np.kron(compound(B, p), compound(B.conj(), q)).T
    from_w = np.kron(compound(A, p), compound(A.conj(), q)).T
    return to_w, from_w


@lru_cache(maxsize=256)
def _star_cached(metric, p, q):
    n = metric.n
    to_w, _ = _frame_change(metric, p, q)
    _, from_w = _frame_change(metric, n - q, n - p)
    S = from_w @ euclidean_star_matrix(n, p, q) @ to_w
    S.setflags(write=False)
    return S


def star_matrix(metric, p, q):
    return _star_cached(metric, p, q)


def hodge_star(u, metric):
    if u.n != metric.n:
        raise FormError("dimension mismatch")
    S = star_matrix(metric, u.p, u.q)
    return Form.from_vector(u.n, u.n - u.q, u.n - u.p, S @ u.to_vector())


@lru_cache(maxsize=256)
def _lefschetz_cached(metric, p, q):
    M = left_wedge_matrix(metric.form(), p, q)
    M.setflags(write=False)
    return M


def lefschetz_matrix(metric, p, q):
    """L : Lambda^{p,q} -> Lambda^{p+1,q+1}."""
    if p + 1 > metric.n or q + 1 > metric.n:
        return np.zeros((0, dim(metric.n, p, q)), dtype=complex)
    return _lefschetz_cached(metric, p, q)


@lru_cache(maxsize=256)
def _lambda_cached(metric, p, q):
    # metric adjoint of L : (p-1,q-1) -> (p,q)
    L = lefschetz_matrix(metric, p - 1, q - 1)
    M_lo = gram_matrix(metric, p - 1, q - 1)
    M_hi = gram_matrix(metric, p, q)
    Lam = np.linalg.solve(M_lo, L.conj().T @ M_hi)
    Lam.setflags(write=False)
    return Lam


def lambda_matrix(metric, p, q):
    """Lambda : Lambda^{p,q} -> Lambda^{p-1,q-1}."""
    if p == 0 or q == 0:
        return np.zeros((0, dim(metric.n, p, q)), dtype=complex)
    return _lambda_cached(metric, p, q)


@lru_cache(maxsize=256)
def lambda_power_matrix(metric, p, q, s):
    out = np.eye(dim(metric.n, p, q), dtype=complex)
    for t in range(s):
        out = lambda_matrix(metric, p - t, q - t) @ out
    out.setflags(write=False)
    return out


@lru_cache(maxsize=256)
def lefschetz_power_matrix(metric, p, q, s):
    out = np.eye(dim(metric.n, p, q), dtype=complex)
    for t in range(s):
        out = lefschetz_matrix(metric, p + t, q + t) @ out
    out.setflags(write=False)
    return out


def lefschetz_L(u, metric, power=1):
    M = lefschetz_power_matrix(metric, u.p, u.q, power)
    return Form.from_vector(u.n, u.p + power, u.q + power, M @ u.to_vector())


def lambda_contraction(u, metric, power=1):
    if u.p < power or u.q < power:
        return Form.zero(u.n, max(u.p - power, 0), max(u.q - power, 0))
    M = lambda_power_matrix(metric, u.p, u.q, power)
    return Form.from_vector(u.n, u.p - power, u.q - power, M @ u.to_vector())


@lru_cache(maxsize=256)
def primitive_projector(metric, p, q):
    """Metric-orthogonal projector onto ker Lambda in Lambda^{p,q}."""
    d = dim(metric.n, p, q)
    Lam = lambda_matrix(metric, p, q)
    if Lam.shape[0] == 0:
        P = np.eye(d, dtype=complex)
    else:
        _, s, Vh = np.linalg.svd(Lam)
        rank = int(np.sum(s > 1e-12 * max(s[0], 1.0)))
        Z = Vh[rank:].conj().T
        M = gram_matrix(metric, p, q)
        P = Z @ np.linalg.solve(Z.conj().T @ M @ Z, Z.conj().T @ M)
    P.setflags(write=False)
    return P


def _cls(l, s, n, r):
    # Lambda^s L^l v = _cls * L^{l-s} v for v primitive of bidegree (r-l, r-l)
    out = 1.0
    for t in range(s):
        out *= (l - t) * (n - 2 * r + l + t + 1)
    return out


@lru_cache(maxsize=128)
def decomposition_matrices(metric, r):
    """Matrices D_l with zeta_prim^(l) = D_l zeta for zeta of bidegree (r,r).

    The top two components use closed forms in powers of Lambda; lower ones
    follow from the triangular system Lambda^s zeta = sum_l c(l,s) L^{l-s} zeta^(l).
    """
    n = metric.n
    if r < 0 or 2 * r > n:
        raise FormError(f"primitive decomposition needs 2r <= n (r={r}, n={n})")
    D = [None] * (r + 1)
    D[r] = (math.factorial(n - r) / (math.factorial(n) * math.factorial(r))) * lambda_power_matrix(metric, r, r, r)
    if r >= 1:
        coef = math.factorial(n - r - 1) / (math.factorial(n - 2) * math.factorial(r - 1))
        omega_col = lefschetz_matrix(metric, 0, 0)  # (1,1) image of the scalar 1
        D[r - 1] = coef * (lambda_power_matrix(metric, r, r, r - 1)
                           - (1.0 / n) * omega_col @ lambda_power_matrix(metric, r, r, r))
    for s in range(r - 2, -1, -1):
        acc = lambda_power_matrix(metric, r, r, s).copy()
        for l in range(s + 1, r + 1):
            acc -= _cls(l, s, n, r) * lefschetz_power_matrix(metric, r - l, r - l, l - s) @ D[l]
        D[s] = acc / _cls(s, s, n, r)
    for Dl in D:
        Dl.setflags(write=False)
    return tuple(D)


@dataclass
class PrimitiveDecomposition:
    r: int
    components: list
    metric: HermitianMetric

    def reconstruct(self):
        n = self.metric.n
        out = Form.zero(n, self.r, self.r)
        for l, c in enumerate(self.components):
            out = out + lefschetz_L(c, self.metric, l) if l else out + c
        return out

    def __getitem__(self, l):
        return self.components[l]


def primitive_decompose(zeta, metric):
    if zeta.p != zeta.q:
        raise FormError("primitive_decompose expects an (r,r)-form")
    r = zeta.p
    D = decomposition_matrices(metric, r)
    v = zeta.to_vector()
    comps = [Form.from_vector(zeta.n, r - l, r - l, D[l] @ v) for l in range(r + 1)]
    return PrimitiveDecomposition(r, comps, metric)


@lru_cache(maxsize=128)
def star_of_wedge_power_matrix(metric, r):
    """(1/(r-1)!) (-Lambda^{r-1} + (1/r) L Lambda^r) on (r,r)-forms."""
    n = metric.n
    Lr1 = lambda_power_matrix(metric, r, r, r - 1)
    Lr = lambda_power_matrix(metric, r, r, r)
    omega_col = lefschetz_matrix(metric, 0, 0)
    M = (-Lr1 + (1.0 / r) * omega_col @ Lr) / math.factorial(r - 1)
    M.setflags(write=False)
    return M


def star_of_wedge_power(zeta, metric, r, strict=True):
    """Closed form of star(zeta ^ omega_{n-r-1}) for an (r,r)-form zeta."""
    n = metric.n
    if r < 1:
        raise FormError("star_of_wedge_power needs r >= 1")
    if zeta.bidegree != (r, r):
        raise FormError("zeta must have bidegree (r,r)")
    if r > n - 1 or (strict and 2 * r > n):
        raise FormError(f"r={r} outside the range 2r <= n for n={n}")
    M = star_of_wedge_power_matrix(metric, r)
    return Form.from_vector(n, 1, 1, M @ zeta.to_vector())
