"""Pointwise exterior algebra of (p,q)-forms on C^n.

Basis monomials are dz_I ^ dzbar_J with I, J strictly increasing 1-based
multi-indices and all holomorphic factors written first. Signs are computed
by mapping dz_j to generator j and dzbar_j to generator n + j and taking the
parity of the sorting permutation.
"""
from __future__ import annotations

import itertools
import json
import math
from functools import lru_cache

import numpy as np

__all__ = [
    "FormError",
    "multi_indices",
    "basis",
    "basis_index",
    "dim",
    "perm_sign",
    "Form",
    "wedge",
    "wedge_tensor",
    "left_wedge_matrix",
    "conjugate",
    "conjugation_matrix",
    "simple_positive_form",
    "HermitianMetric",
    "compound",
    "gram_matrix",
    "metric_inner_product",
    "volume_form",
    "top_index",
    "random_form",
    "real_part",
]


class FormError(ValueError):
    pass


@lru_cache(maxsize=None)
def multi_indices(n, k):
    return tuple(itertools.combinations(range(1, n + 1), k))


@lru_cache(maxsize=None)
def basis(n, p, q):
    return tuple((I, J) for I in multi_indices(n, p) for J in multi_indices(n, q))


@lru_cache(maxsize=None)
def basis_index(n, p, q):
    return {key: i for i, key in enumerate(basis(n, p, q))}


def dim(n, p, q):
    if not (0 <= p <= n and 0 <= q <= n):
        return 0
    return math.comb(n, p) * math.comb(n, q)


def perm_sign(seq):
    """Sign of the permutation sorting ``seq``; 0 if an entry repeats."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    sign = 1
    # count inversions, sequences here have length <= 2n <= 8
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def _check_index(I, n):
    I = tuple(int(i) for i in I)
    if any(i < 1 or i > n for i in I) or any(a >= b for a, b in zip(I, I[1:])):
        raise FormError(f"invalid multi-index {I} for n={n}")
    return I


class Form:
    """Element of Lambda^{p,q} on C^n stored as a sparse coefficient map."""

    __slots__ = ("n", "p", "q", "coeffs")

    def __init__(self, n, p, q, coeffs=None):
        n, p, q = int(n), int(p), int(q)
        if n < 1 or not (0 <= p <= n and 0 <= q <= n):
            raise FormError(f"bidegree ({p},{q}) out of range for n={n}")
        clean = {}
        for (I, J), c in (coeffs or {}).items():
            I, J = _check_index(I, n), _check_index(J, n)
            if len(I) != p or len(J) != q:
                raise FormError(f"key {(I, J)} does not match bidegree ({p},{q})")
            clean[(I, J)] = complex(c)
        self.n, self.p, self.q, self.coeffs = n, p, q, clean

    @property
    def bidegree(self):
        return (self.p, self.q)

    @property
    def degree(self):
        return self.p + self.q

    @classmethod
    def zero(cls, n, p, q):
        return cls(n, p, q)

    @classmethod
    def scalar(cls, n, c=1.0):
        return cls(n, 0, 0, {((), ()): c})

    @classmethod
    def from_vector(cls, n, p, q, vec):
        vec = np.asarray(vec, dtype=complex)
        keys = basis(n, p, q)
        if vec.shape != (len(keys),):
            raise FormError("vector length does not match basis")
        f = cls.__new__(cls)
        f.n, f.p, f.q = n, p, q
        f.coeffs = {k: complex(c) for k, c in zip(keys, vec) if c != 0}
        return f

    def to_vector(self):
        idx = basis_index(self.n, self.p, self.q)
        v = np.zeros(len(idx), dtype=complex)
        for k, c in self.coeffs.items():
            v[idx[k]] = c
        return v

    def __getitem__(self, key):
        I, J = key
        return self.coeffs.get((tuple(I), tuple(J)), 0j)

    def _same(self, other):
        if not isinstance(other, Form):
            raise TypeError("expected Form")
        if (self.n, self.p, self.q) != (other.n, other.p, other.q):
            raise FormError("forms of different type")

    def __add__(self, other):
        self._same(other)
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, 0j) + c
        return Form(self.n, self.p, self.q, out)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return Form(self.n, self.p, self.q, {k: -c for k, c in self.coeffs.items()})

    def __mul__(self, s):
        if isinstance(s, Form):
            return wedge(self, s)
        s = complex(s)
        return Form(self.n, self.p, self.q, {k: s * c for k, c in self.coeffs.items()})

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / complex(s))

    def __xor__(self, other):
        return wedge(self, other)

    def __eq__(self, other):
        if not isinstance(other, Form):
            return NotImplemented
        if (self.n, self.p, self.q) != (other.n, other.p, other.q):
            return False
        return np.array_equal(self.to_vector(), other.to_vector())

    def __repr__(self):
        return f"Form(n={self.n}, p={self.p}, q={self.q}, nnz={len(self.coeffs)})"

    def norm(self):
        """Euclidean norm of the coefficient vector."""
        return float(np.linalg.norm(self.to_vector()))

    def allclose(self, other, rtol=1e-12, atol=1e-14):
        self._same(other)
        a, b = self.to_vector(), other.to_vector()
        return bool(np.linalg.norm(a - b) <= atol + rtol * max(np.linalg.norm(a), np.linalg.norm(b)))

    def is_real(self, tol=0.0):
        if self.p != self.q:
            return False
        d = self.to_vector() - conjugate(self).to_vector()
        return bool(np.max(np.abs(d), initial=0.0) <= tol)

    # serialization
    def to_dict(self):
        coeffs = {}
        for (I, J), c in sorted(self.coeffs.items()):
            key = ",".join(map(str, I)) + "|" + ",".join(map(str, J))
            coeffs[key] = [float(c.real), float(c.imag)]
        return {"n": self.n, "p": self.p, "q": self.q, "coeffs": coeffs}

    @classmethod
    def from_dict(cls, d):
        coeffs = {}
        for key, (re, im) in d["coeffs"].items():
            a, b = key.split("|")
            I = tuple(int(x) for x in a.split(",") if x != "")
            J = tuple(int(x) for x in b.split(",") if x != "")
            coeffs[(I, J)] = complex(float(re), float(im))
        return cls(d["n"], d["p"], d["q"], coeffs)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


@lru_cache(maxsize=None)
def _monomial_product(I, J, K, L, n):
    # dz_I ^ dzbar_J ^ dz_K ^ dzbar_L = sign * dz_{IK} ^ dzbar_{JL}
    if set(I) & set(K) or set(J) & set(L):
        return 0, None
    sign = (-1) ** (len(J) * len(K)) * perm_sign(I + K) * perm_sign(J + L)
    return sign, (tuple(sorted(I + K)), tuple(sorted(J + L)))


@lru_cache(maxsize=None)
def wedge_tensor(n, p1, q1, p2, q2):
    """Dense structure tensor T[o, a, b] with (e_a ^ e_b) = sum_o T[o,a,b] e_o."""
    p, q = p1 + p2, q1 + q2
    if p > n or q > n:
        raise FormError(f"wedge bidegree ({p},{q}) exceeds ({n},{n})")
    out_idx = basis_index(n, p, q)
    B1, B2 = basis(n, p1, q1), basis(n, p2, q2)
    T = np.zeros((len(out_idx), len(B1), len(B2)))
    for a, (I, J) in enumerate(B1):
        for b, (K, L) in enumerate(B2):
            s, key = _monomial_product(I, J, K, L, n)
            if s:
                T[out_idx[key], a, b] = s
    T.setflags(write=False)
    return T


def wedge(a, b):
    if a.n != b.n:
        raise FormError("dimension mismatch")
    T = wedge_tensor(a.n, a.p, a.q, b.p, b.q)
    v = np.einsum("oab,a,b->o", T, a.to_vector(), b.to_vector())
    return Form.from_vector(a.n, a.p + b.p, a.q + b.q, v)


def left_wedge_matrix(a, p2, q2):
    """Matrix of x -> a ^ x on Lambda^{p2,q2}."""
    T = wedge_tensor(a.n, a.p, a.q, p2, q2)
    return np.einsum("oab,a->ob", T, a.to_vector())


@lru_cache(maxsize=None)
def _conj_perm(n, p, q):
    src = basis(n, p, q)
    dst = basis_index(n, q, p)
    perm = np.array([dst[(J, I)] for (I, J) in src])
    return perm, (-1) ** (p * q)


def conjugation_matrix(n, p, q):
    """Real matrix C with vec(conj(a)) = C @ conj(vec(a))."""
    perm, s = _conj_perm(n, p, q)
    C = np.zeros((len(perm), len(perm)))
    C[perm, np.arange(len(perm))] = s
    return C


def conjugate(a):
    # conj(c dz_I ^ dzbar_J) = conj(c) (-1)^{pq} dz_J ^ dzbar_I
    s = (-1) ** (a.p * a.q)
    f = Form.__new__(Form)
    f.n, f.p, f.q = a.n, a.q, a.p
    f.coeffs = {(J, I): s * c.conjugate() for (I, J), c in a.coeffs.items()}
    return f


def real_part(a):
    if a.p != a.q:
        raise FormError("real part only defined for (p,p)-forms")
    return (a + conjugate(a)) * 0.5


def simple_positive_form(J, n):
    """tau_J = i^{m^2} dz_J ^ dzbar_J."""
    J = _check_index(J, n)
    m = len(J)
    return Form(n, m, m, {(J, J): 1j ** (m * m)})


def top_index(n):
    I = tuple(range(1, n + 1))
    return (I, I)


def compound(M, k):
    """k-th compound matrix: minors det(M[I, K]) over increasing I, K.

    Leading batch axes are allowed: M has shape (..., n, n).
    """
    M = np.asarray(M)
    n = M.shape[-1]
    batch = M.shape[:-2]
    if k == 0:
        return np.ones(batch + (1, 1), dtype=np.result_type(M, float))
    idx = np.array(multi_indices(n, k)) - 1
    sub = M[..., idx[:, None, :, None], idx[None, :, None, :]]
    return np.linalg.det(sub)


class HermitianMetric:
    """Positive-definite (1,1)-form gamma = i sum H_jk dz_j ^ dzbar_k."""

    def __init__(self, matrix, check=True):
        H = np.array(matrix, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise FormError("metric matrix must be square")
        if check:
            if np.max(np.abs(H - H.conj().T)) > 1e-13 * max(1.0, np.max(np.abs(H))):
                raise FormError("metric matrix is not Hermitian")
            H = 0.5 * (H + H.conj().T)
            if np.min(np.linalg.eigvalsh(H)) <= 0:
                raise FormError("metric matrix is not positive definite")
        self.matrix = H
        self.matrix.setflags(write=False)
        self.n = H.shape[0]
        self._key = (self.n, H.tobytes())

    @classmethod
    def euclidean(cls, n):
        return cls(np.eye(n))

    @classmethod
    def random(cls, n, rng, spread=0.5):
        A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        H = np.eye(n) + spread * (A @ A.conj().T) / n
        return cls(H)

    def __eq__(self, other):
        return isinstance(other, HermitianMetric) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"HermitianMetric(n={self.n})"

    def form(self):
        n = self.n
        return Form(n, 1, 1, {((j + 1,), (k + 1,)): 1j * self.matrix[j, k]
                              for j in range(n) for k in range(n) if self.matrix[j, k] != 0})

    def power(self, p):
        """omega_p = omega^p / p!."""
        return _metric_power(self, p)

    def det(self):
        return float(np.linalg.det(self.matrix).real)

    def cholesky_coframe(self):
        """Matrix A with dw = A dz orthonormal: H = A^T conj(A)."""
        L = np.linalg.cholesky(self.matrix)
        return L.T

    def to_list(self):
        return [[[float(z.real), float(z.imag)] for z in row] for row in self.matrix]

    @classmethod
    def from_list(cls, rows):
        return cls(np.array([[complex(a, b) for a, b in row] for row in rows]))


@lru_cache(maxsize=256)
def _metric_power(metric, p):
    n = metric.n
    if p < 0 or p > n:
        raise FormError(f"power {p} out of range")
    out = Form.scalar(n)
    w = metric.form()
    for _ in range(p):
        out = wedge(out, w)
    return out / math.factorial(p)


@lru_cache(maxsize=256)
def _gram_cached(metric, p, q):
    Hinv = np.linalg.inv(metric.matrix)
    G1 = Hinv.conj()  # <dz_j, dz_k>
    G2 = Hinv  # <dzbar_j, dzbar_k>
    gram = np.kron(compound(G1, p), compound(G2, q))  # gram[a,b] = <e_a, e_b>
    M = np.ascontiguousarray(gram.T)
    M.setflags(write=False)
    return M


def gram_matrix(metric, p, q):
    """Hermitian M with <x, y> = y^H M x in the monomial basis."""
    return _gram_cached(metric, p, q)


def metric_inner_product(u, v, metric):
    if (u.n, u.p, u.q) != (v.n, v.p, v.q):
        raise FormError("bidegree mismatch")
    M = gram_matrix(metric, u.p, u.q)
    return complex(v.to_vector().conj() @ M @ u.to_vector())


def volume_form(metric):
    """dV = gamma^n / n!."""
    return metric.power(metric.n)


def random_form(n, p, q, rng, real=False, scale=1.0):
    d = dim(n, p, q)
    v = scale * (rng.standard_normal(d) + 1j * rng.standard_normal(d))
    f = Form.from_vector(n, p, q, v)
    return real_part(f) if real else f
