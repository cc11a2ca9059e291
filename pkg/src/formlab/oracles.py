"""Brute-force reference constructions, kept independent of the fast paths.

Forms are viewed here as antisymmetric tensors over the 2n generators
dz_1..dz_n, dzbar_1..dzbar_n. Nothing in this module reuses the cached
structure tensors or frame changes of the main implementation.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .exterior import Form, basis


def _gens(I, J, n):
    return tuple(i - 1 for i in I) + tuple(n + j - 1 for j in J)


def _split(gens, n):
    I = tuple(g + 1 for g in gens if g < n)
    J = tuple(g - n + 1 for g in gens if g >= n)
    return I, J


def _parity(seq):
    # parity by explicit cycle decomposition
    seq = list(seq)
    order = sorted(range(len(seq)), key=lambda i: seq[i])
    seen = [False] * len(seq)
    sign = 1
    for i in range(len(seq)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = order[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def to_components(f):
    """Map from increasing generator tuples to coefficients."""
    return {_gens(I, J, f.n): c for (I, J), c in f.coeffs.items()}


def shuffle_wedge(a, b):
    """Wedge product by summing over (k,l)-shuffles of each output index set."""
    n = a.n
    A, B = to_components(a), to_components(b)
    k, l = a.p + a.q, b.p + b.q
    out = {}
    for gens in itertools.combinations(range(2 * n), k + l):
        total = 0j
        for S in itertools.combinations(range(k + l), k):
            rest = tuple(i for i in range(k + l) if i not in S)
            left = tuple(gens[i] for i in S)
            right = tuple(gens[i] for i in rest)
            ca, cb = A.get(left), B.get(right)
            if ca is None or cb is None:
                continue
            total += _parity(S + rest) * ca * cb
        if total != 0:
            I, J = _split(gens, n)
            if len(I) == a.p + b.p and len(J) == a.q + b.q:
                out[(I, J)] = total
    return Form(n, a.p + b.p, a.q + b.q, out)


def generator_gram(H):
    """Gram matrix of the 2n generators for the metric with matrix H."""
    n = H.shape[0]
    Hinv = np.linalg.inv(H)
    G = np.zeros((2 * n, 2 * n), dtype=complex)
    G[:n, :n] = Hinv.conj()
    G[n:, n:] = Hinv
    return G


def inner_product(u, v, H):
    """<u, v> as sum over monomial pairs of det of generator Gram minors."""
    G = generator_gram(np.asarray(H))
    total = 0j
    for (I, J), cu in u.coeffs.items():
        gu = list(_gens(I, J, u.n))
        for (K, L), cv in v.coeffs.items():
            gv = list(_gens(K, L, v.n))
            total += cu * np.conj(cv) * np.linalg.det(G[np.ix_(gu, gv)]) if gu else cu * np.conj(cv)
    return total


def volume_coefficient(H):
    n = H.shape[0]
    return (1j ** (n * n)) * np.linalg.det(H)


def star_oracle_matrix(H, p, q):
    """Solve u ^ star(conj v) = <u,v> dV over monomials, as a linear system.

    Returns the matrix of star on Lambda^{p,q}.
    """
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    src = basis(n, p, q)                 # star acts here
    dual = basis(n, q, p)                # u ranges here, conj(v) in (p,q) means v in (q,p)
    tgt = basis(n, n - q, n - p)
    top = (tuple(range(1, n + 1)), tuple(range(1, n + 1)))
    mono = lambda nn, pp, qq, key: Form(nn, pp, qq, {key: 1.0})
    # pairing matrix P[a, c] = top coefficient of dual_a ^ tgt_c
    P = np.zeros((len(dual), len(tgt)), dtype=complex)
    for a, ka in enumerate(dual):
        for c, kc in enumerate(tgt):
            P[a, c] = shuffle_wedge(mono(n, q, p, ka), mono(n, n - q, n - p, kc))[top]
    vol = volume_coefficient(H)
    S = np.zeros((len(tgt), len(src)), dtype=complex)
    for b, kb in enumerate(src):
        # src_b = conj(v) with v = conj(src_b), a (q,p)-form
        I, J = kb
        v = Form(n, q, p, {(J, I): (-1) ** (p * q)})
        rhs = np.array([inner_product(mono(n, q, p, ka), v, H) * vol for ka in dual])
        S[:, b] = np.linalg.solve(P, rhs)
    return S


def lambda_oracle_matrix(H, p, q):
    """Adjoint of wedge with omega, assembled from oracle inner products."""
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    omega = Form(n, 1, 1, {((j + 1,), (k + 1,)): 1j * H[j, k] for j in range(n) for k in range(n)})
    lo, hi = basis(n, p - 1, q - 1), basis(n, p, q)
    # <L e_a, f_b> = <e_a, Lambda f_b>, solved with the low-degree Gram
    A = np.array([[inner_product(shuffle_wedge(omega, Form(n, p - 1, q - 1, {ka: 1.0})), Form(n, p, q, {kb: 1.0}), H)
                   for ka in lo] for kb in hi])  # A[b, a]
    G = np.array([[inner_product(Form(n, p - 1, q - 1, {ka: 1.0}), Form(n, p - 1, q - 1, {kc: 1.0}), H)
                   for ka in lo] for kc in lo])  # G[c, a] = <e_a, e_c>
    # <e_a, Lambda f_b> = sum_c conj(X[c,b]) G[c,a], i.e. A = X^H G
    X = np.linalg.solve(G.conj().T, A.conj().T)
    return X


def lefschetz_lstsq(zeta, H):
    """Primitive components by least squares over explicit primitive bases."""
    H = np.asarray(H, dtype=complex)
    n, r = zeta.n, zeta.p
    omega = Form(n, 1, 1, {((j + 1,), (k + 1,)): 1j * H[j, k] for j in range(n) for k in range(n)})
    cols, owners = [], []
    blocks = []
    for l in range(r + 1):
        d = r - l
        B = basis(n, d, d)
        if d > 0:
            Lam = lambda_oracle_matrix(H, d, d)
            _, s, Vh = np.linalg.svd(Lam)
            rank = int(np.sum(s > 1e-10))
            Z = Vh[rank:].conj().T
        else:
            Z = np.eye(1)
        blocks.append((l, B, Z))
        for col in Z.T:
            f = Form.from_vector(n, d, d, col)
            for _ in range(l):
                f = shuffle_wedge(omega, f)
            cols.append(f.to_vector())
            owners.append(l)
    A = np.array(cols).T
    x, *_ = np.linalg.lstsq(A, zeta.to_vector(), rcond=None)
    comps, pos = [], 0
    for l, B, Z in blocks:
        k = Z.shape[1]
        comps.append(Form.from_vector(n, r - l, r - l, Z @ x[pos:pos + k]))
        pos += k
    return comps


def binom(n, k):
    return math.comb(n, k)
