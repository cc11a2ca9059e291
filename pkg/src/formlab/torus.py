"""Form-valued fields on the flat unit torus C^n / (Z^n + iZ^n).

Real coordinates are ordered (x_1..x_n, y_1..y_n) with z_j = x_j + i y_j, so a
field of bidegree (p,q) stores values with shape (dim, N, ..., N) over 2n
spatial axes. Constant-coefficient operators are Fourier multipliers; metrics
that vary in space go through pointwise Gram matrices and products in physical
space (``MetricField``).
"""
from __future__ import annotations

import json
import math
import warnings
import os
import struct
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

from .exterior import (
    Form,
    FormError,
    HermitianMetric,
    basis,
    basis_index,
    compound,
    conjugation_matrix,
    dim,
    gram_matrix,
    left_wedge_matrix,
    wedge_tensor,
)
from .hodge import lambda_matrix, lambda_power_matrix, star_matrix, star_of_wedge_power_matrix, euclidean_star_matrix

DEFAULT_BUDGET = 2 ** 22
MAGIC = b"FLDv1\0"

__all__ = [
    "AliasingError",
    "PreconditionError",
    "TorusGrid",
    "FormField",
    "MetricField",
    "ConstraintSubspaceK",
    "exterior_derivatives",
    "d_holo",
    "d_antiholo",
    "i_ddbar",
    "formal_adjoints",
    "d_holo_star",
    "d_antiholo_star",
    "volume",
    "min_eigenvalue_field",
    "dbar_laplacian",
    "lambda_field",
    "lefschetz_field",
    "star_field",
    "torsion_apply",
    "integrate_top",
    "l2_inner",
    "PoperatorP",
    "apply_P",
    "apply_Q",
    "apply_Q_closed_form",
    "check_weakly_positive_field",
    "mode_symbols",
    "mode_matrices",
    "mode_Q_matrix",
    "solve_i_ddbar",
]


class AliasingError(ValueError):
    pass


class PreconditionError(ValueError):
    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


def fft_workers():
    try:
        return max(1, int(os.environ.get("FORMLAB_THREADS", "1")))
    except ValueError:
        return 1


class TorusGrid:
    """Uniform grid with N points per real axis on the unit torus of C^n."""

    def __init__(self, n, N, budget=DEFAULT_BUDGET):
        n, N = int(n), int(N)
        if n < 1:
            raise ValueError("n must be positive")
        if N < 8 or N % 2:
            raise ValueError(f"N must be even and >= 8, got {N}")
        if N ** (2 * n) > budget:
            raise ValueError(f"grid N={N}, n={n} has {N ** (2 * n)} points, over the budget {budget}")
        self.n, self.N, self.budget = n, N, budget
        self.ndim = 2 * n
        self.shape = (N,) * (2 * n)
        self.size = N ** (2 * n)
        self.axes = tuple(range(1, 2 * n + 1))  # spatial axes of a (dim, ...) array

    def __eq__(self, other):
        return isinstance(other, TorusGrid) and (self.n, self.N) == (other.n, other.N)

    def __hash__(self):
        return hash((self.n, self.N))

    def __repr__(self):
        return f"TorusGrid(n={self.n}, N={self.N})"

    def _bshape(self, axis):
        s = [1] * self.ndim
        s[axis] = self.N
        return tuple(s)

    def coord(self, axis):
        return (np.arange(self.N) / self.N).reshape(self._bshape(axis))

    def x(self, j):
        return self.coord(j)

    def y(self, j):
        return self.coord(self.n + j)

    def wavenumber(self, axis):
        return np.fft.fftfreq(self.N, 1.0 / self.N).reshape(self._bshape(axis))

    @cached_property
    def _nyq(self):
        return [np.abs(self.wavenumber(a)) == self.N // 2 for a in range(self.ndim)]

    def _d(self, axis):
        # symbol of d/d(axis) on exp(2 pi i k t), Nyquist mode removed
        k = self.wavenumber(axis)
        return np.where(self._nyq[axis], 0.0, 2j * np.pi * k)

    @cached_property
    def dz_symbols(self):
        # d/dz_j = (d/dx_j - i d/dy_j) / 2
        return [0.5 * (self._d(j) - 1j * self._d(self.n + j)) for j in range(self.n)]

    @cached_property
    def dzbar_symbols(self):
        return [0.5 * (self._d(j) + 1j * self._d(self.n + j)) for j in range(self.n)]

    @cached_property
    def high_mask(self):
        """Modes with some |k| above N/3 (the aliasing-prone top third)."""
        m = np.zeros(self.shape, dtype=bool)
        for a in range(self.ndim):
            m = m | (np.abs(self.wavenumber(a)) > self.N / 3)
        return m

    @cached_property
    def max_abs_wavenumber(self):
        m = np.zeros(self.shape)
        for a in range(self.ndim):
            m = np.maximum(m, np.abs(self.wavenumber(a)))
        return m

    def fft(self, a):
        return sfft.fftn(a, axes=self.axes, workers=fft_workers())

    def ifft(self, a):
        return sfft.ifftn(a, axes=self.axes, workers=fft_workers())

    def fft_scalar(self, a):
        return sfft.fftn(a, workers=fft_workers())

    def ifft_scalar(self, a):
        return sfft.ifftn(a, workers=fft_workers())

    def euclidean_volume(self):
        """Integral of prod_j (i dz_j ^ dzbar_j) over the unit torus."""
        return float(2 ** self.n)


class FormField:
    """Dense field of (p,q)-form coefficients over a TorusGrid."""

    __slots__ = ("grid", "p", "q", "values", "_hat")

    def __init__(self, grid, p, q, values, hat=None):
        d = dim(grid.n, p, q)
        values = np.asarray(values, dtype=complex)
        if values.shape != (d,) + grid.shape:
            raise FormError(f"values shape {values.shape} does not match ({d},)+{grid.shape}")
        self.grid, self.p, self.q, self.values = grid, int(p), int(q), values
        self._hat = hat

    # constructors
    @classmethod
    def zeros(cls, grid, p, q):
        return cls(grid, p, q, np.zeros((dim(grid.n, p, q),) + grid.shape, dtype=complex))

    @classmethod
    def constant(cls, grid, form):
        v = form.to_vector()
        vals = np.broadcast_to(v.reshape((-1,) + (1,) * grid.ndim), (len(v),) + grid.shape).copy()
        return cls(grid, form.p, form.q, vals)

    @classmethod
    def scalar(cls, grid, arr):
        arr = np.broadcast_to(np.asarray(arr, dtype=complex), grid.shape)
        return cls(grid, 0, 0, arr[None].copy())

    @classmethod
    def from_hat(cls, grid, p, q, hat):
        return cls(grid, p, q, grid.ifft(hat), hat=hat)

    @property
    def n(self):
        return self.grid.n

    @property
    def bidegree(self):
        return (self.p, self.q)

    @property
    def hat(self):
        if self._hat is None:
            self._hat = self.grid.fft(self.values)
        return self._hat

    def scalar_values(self):
        if (self.p, self.q) == (0, 0):
            return self.values[0]
        if (self.p, self.q) == (self.n, self.n):
            return self.values[0] / (1j ** (self.n * self.n))
        raise FormError("scalar_values needs a (0,0) or (n,n) field")

    def component(self, I, J):
        return self.values[basis_index(self.n, self.p, self.q)[(tuple(I), tuple(J))]]

    def at(self, idx):
        return Form.from_vector(self.n, self.p, self.q, self.values[(slice(None),) + tuple(idx)])

    def mean(self):
        return Form.from_vector(self.n, self.p, self.q, self.values.reshape(len(self.values), -1).mean(axis=1))

    def copy(self):
        return FormField(self.grid, self.p, self.q, self.values.copy())

    def _same(self, other):
        if not isinstance(other, FormField):
            raise TypeError("expected FormField")
        if other.grid != self.grid or other.bidegree != self.bidegree:
            raise FormError("fields of different type")

    def __add__(self, other):
        if isinstance(other, Form):
            other = FormField.constant(self.grid, other)
        self._same(other)
        return FormField(self.grid, self.p, self.q, self.values + other.values)

    def __sub__(self, other):
        if isinstance(other, Form):
            other = FormField.constant(self.grid, other)
        self._same(other)
        return FormField(self.grid, self.p, self.q, self.values - other.values)

    def __neg__(self):
        return FormField(self.grid, self.p, self.q, -self.values)

    def __mul__(self, s):
        if isinstance(s, (FormField, Form)):
            return self.wedge(s)
        s = np.asarray(s)
        return FormField(self.grid, self.p, self.q, self.values * s)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return FormField(self.grid, self.p, self.q, self.values / np.asarray(s))

    def wedge(self, other):
        n = self.n
        if isinstance(other, Form):
            M = left_wedge_matrix(other, self.p, self.q)
            # a ^ c = (-1)^{deg a deg c} c ^ a
            s = (-1) ** ((self.p + self.q) * (other.p + other.q))
            return self.apply(s * M, self.p + other.p, self.q + other.q)
        if other.grid != self.grid:
            raise FormError("grid mismatch")
        if self.p + other.p > n or self.q + other.q > n:
            return FormField.zeros(self.grid, self.p + other.p, self.q + other.q)
        T = wedge_tensor(n, self.p, self.q, other.p, other.q)
        out = np.zeros((T.shape[0],) + self.grid.shape, dtype=complex)
        for o, a, b in zip(*np.nonzero(T)):
            out[o] += T[o, a, b] * self.values[a] * other.values[b]
        return FormField(self.grid, self.p + other.p, self.q + other.q, out)

    def apply(self, M, p, q):
        """Apply a constant coefficient matrix pointwise."""
        M = np.asarray(M)
        if M.shape[1] != len(self.values):
            raise FormError("matrix does not match field dimension")
        vals = np.tensordot(M, self.values, axes=(1, 0))
        return FormField(self.grid, p, q, vals)

    def conj(self):
        C = conjugation_matrix(self.n, self.p, self.q)
        return FormField(self.grid, self.q, self.p, np.tensordot(C, self.values.conj(), axes=(1, 0)))

    def real_part(self):
        return (self + self.conj()) * 0.5

    def is_real(self, tol=0.0):
        if self.p != self.q:
            return False
        return bool(np.max(np.abs(self.values - self.conj().values), initial=0.0) <= tol)

    def sup_norm(self):
        return float(np.max(np.abs(self.values), initial=0.0))

    def l2_norm(self, metric=None):
        if metric is None:
            return float(np.sqrt(np.mean(np.sum(np.abs(self.values) ** 2, axis=0))))
        return float(np.sqrt(max(l2_inner(self, self, metric).real, 0.0)))

    def band_limit(self, keep=2.0 / 3.0):
        """Zero the modes outside the lowest ``keep`` fraction of the spectrum."""
        mask = self.grid.max_abs_wavenumber <= keep * self.grid.N / 2
        return FormField.from_hat(self.grid, self.p, self.q, self.hat * mask)

    def high_energy_fraction(self):
        h = np.abs(self.hat) ** 2
        tot = h.sum()
        if tot == 0:
            return 0.0
        return float(h[:, self.grid.high_mask].sum() / tot)

    # serialization
    def header(self):
        return {"format": "formlab-field", "version": 1, "n": self.n, "N": self.grid.N,
                "p": self.p, "q": self.q,
                "basis": [",".join(map(str, I)) + "|" + ",".join(map(str, J)) for I, J in basis(self.n, self.p, self.q)],
                "layout": "component-major; per component a real plane then an imaginary plane; "
                          "each plane C-order over axes (x_1..x_n, y_1..y_n)",
                "dtype": "<f8"}

    def to_bytes(self):
        head = json.dumps(self.header(), sort_keys=True).encode()
        planes = np.stack([self.values.real, self.values.imag], axis=1).astype("<f8")
        return MAGIC + struct.pack("<Q", len(head)) + head + planes.tobytes(order="C")

    @classmethod
    def from_bytes(cls, data):
        if not data.startswith(MAGIC):
            raise ValueError("not a field container")
        off = len(MAGIC)
        (hlen,) = struct.unpack("<Q", data[off:off + 8])
        head = json.loads(data[off + 8: off + 8 + hlen].decode())
        grid = TorusGrid(head["n"], head["N"], budget=max(DEFAULT_BUDGET, head["N"] ** (2 * head["n"])))
        d = dim(grid.n, head["p"], head["q"])
        planes = np.frombuffer(data[off + 8 + hlen:], dtype="<f8").reshape((d, 2) + grid.shape)
        vals = planes[:, 0] + 1j * planes[:, 1]
        return cls(grid, head["p"], head["q"], vals)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# derivative matrices

@lru_cache(maxsize=None)
def _E(n, p, q, bar):
    """Constant matrices of dz_j ^ (or dzbar_j ^) from (p,q)."""
    mats = []
    for j in range(1, n + 1):
        e = Form(n, 0, 1, {((), (j,)): 1.0}) if bar else Form(n, 1, 0, {((j,), ()): 1.0})
        M = left_wedge_matrix(e, p, q).real.copy()
        M.setflags(write=False)
        mats.append(M)
    return tuple(mats)


def _apply_symbols(hat, mats, syms):
    out = None
    for M, s in zip(mats, syms):
        term = np.tensordot(M, hat * s, axes=(1, 0))
        out = term if out is None else out + term
    return out


def d_holo(f):
    n = f.n
    if f.p == n:
        raise FormError("d_holo of an (n,q)-form leaves the bidegree range")
    hat = _apply_symbols(f.hat, _E(n, f.p, f.q, False), f.grid.dz_symbols)
    return FormField.from_hat(f.grid, f.p + 1, f.q, hat)


def d_antiholo(f):
    n = f.n
    if f.q == n:
        raise FormError("d_antiholo of a (p,n)-form leaves the bidegree range")
    hat = _apply_symbols(f.hat, _E(n, f.p, f.q, True), f.grid.dzbar_symbols)
    return FormField.from_hat(f.grid, f.p, f.q + 1, hat)


def exterior_derivatives(f, strict=True, alias_tol=1e-10):
    """(d' f, d'' f) by Fourier multipliers; None where the bidegree is maximal."""
    if strict:
        frac = f.high_energy_fraction()
        if frac > alias_tol:
            raise AliasingError(f"field has {frac:.3e} of its energy in the top third of the spectrum")
    df = d_holo(f) if f.p < f.n else None
    dbf = d_antiholo(f) if f.q < f.n else None
    return df, dbf


def i_ddbar(f):
    """i d' d'' f."""
    g = d_holo(d_antiholo(f))
    return g * 1j


# constant-metric operators

@lru_cache(maxsize=256)
def _adjoint_mats(metric, p, q, bar):
    """K_j with d*_j v = M_{lo}^{-1} E_j^H M_{hi} v, for v of bidegree (p,q)."""
    n = metric.n
    lo = (p, q - 1) if bar else (p - 1, q)
    E = _E(n, lo[0], lo[1], bar)
    Mlo = gram_matrix(metric, *lo)
    Mhi = gram_matrix(metric, p, q)
    out = tuple(np.linalg.solve(Mlo, Ej.T @ Mhi) for Ej in E)
    return out


def d_holo_star(v, metric):
    if v.p == 0:
        return None
    mats = _adjoint_mats(metric, v.p, v.q, False)
    syms = [s.conj() for s in v.grid.dz_symbols]
    return FormField.from_hat(v.grid, v.p - 1, v.q, _apply_symbols(v.hat, mats, syms))


def d_antiholo_star(v, metric):
    if v.q == 0:
        return None
    mats = _adjoint_mats(metric, v.p, v.q, True)
    syms = [s.conj() for s in v.grid.dzbar_symbols]
    return FormField.from_hat(v.grid, v.p, v.q - 1, _apply_symbols(v.hat, mats, syms))


def _require_constant(metric):
    if not isinstance(metric, HermitianMetric):
        raise TypeError("the Fourier fast path needs a constant HermitianMetric; use MetricField for variable metrics")


def formal_adjoints(f, metric):
    """(d'* f, d''* f) for a constant metric; None where the bidegree is minimal."""
    _require_constant(metric)
    return d_holo_star(f, metric), d_antiholo_star(f, metric)


def dbar_laplacian(f, metric):
    _require_constant(metric)
    out = FormField.zeros(f.grid, f.p, f.q)
    if f.q > 0:
        out = out + d_antiholo(d_antiholo_star(f, metric))
    if f.q < f.n:
        out = out + d_antiholo_star(d_antiholo(f), metric)
    return out


@lru_cache(maxsize=64)
def _dbar_laplacian_symbol_scalar(metric, grid):
    # on functions: sum_jk conj(sbar_j) sbar_k (H^{-1})_{kj}
    Hinv = np.linalg.inv(metric.matrix)
    s = grid.dzbar_symbols
    out = 0
    for j in range(grid.n):
        for k in range(grid.n):
            out = out + np.conj(s[j]) * s[k] * Hinv[k, j]
    return np.broadcast_to(out, grid.shape).real.copy()


def lambda_field(f, metric, power=1):
    if f.p < power or f.q < power:
        return FormField.zeros(f.grid, max(f.p - power, 0), max(f.q - power, 0))
    return f.apply(lambda_power_matrix(metric, f.p, f.q, power), f.p - power, f.q - power)


def lefschetz_field(f, metric, power=1):
    from .hodge import lefschetz_power_matrix
    return f.apply(lefschetz_power_matrix(metric, f.p, f.q, power), f.p + power, f.q + power)


def star_field(f, metric):
    return f.apply(star_matrix(metric, f.p, f.q), f.n - f.q, f.n - f.p)


def integrate_top(f):
    """Integral of an (n,n)-field over the unit torus."""
    if f.bidegree != (f.n, f.n):
        raise FormError("integrate_top needs an (n,n)-field")
    return complex(f.grid.euclidean_volume() * np.mean(f.values[0] / (1j ** (f.n * f.n))))


def volume(metric, grid=None):
    """Vol_omega of the unit torus, 2^n det H."""
    return float((2 ** metric.n) * np.linalg.det(metric.matrix).real)


def l2_inner(u, v, metric):
    """<<u, v>> = integral of <u, v>_omega dV_omega."""
    M = gram_matrix(metric, u.p, u.q)
    Mu = np.tensordot(M, u.values, axes=(1, 0))
    dens = np.sum(v.values.conj() * Mu, axis=0)
    return complex(volume(metric) * np.mean(dens))


# variable metrics

class MetricField:
    """Positive-definite (1,1)-field rho used as a variable Hermitian metric."""

    def __init__(self, rho):
        if rho.bidegree != (1, 1):
            raise FormError("metric field must be a (1,1)-field")
        self.rho = rho
        self.grid = rho.grid
        n = rho.n
        H = (-1j * rho.values).reshape((n, n) + rho.grid.shape)
        H = np.moveaxis(H, (0, 1), (-2, -1))
        H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
        lam = np.linalg.eigvalsh(H)
        if np.min(lam) <= 0:
            raise PreconditionError("rho is not positive definite everywhere", violation=float(np.min(lam)))
        self.H = H
        self.Hinv = np.linalg.inv(H)
        self.vol = np.linalg.det(H).real  # dV_rho / prod(i dz ^ dzbar)
        self.min_eig = float(np.min(lam))

    @classmethod
    def constant(cls, grid, metric):
        return cls(FormField.constant(grid, metric.form()))

    @lru_cache(maxsize=32)
    def _compounds(self, p, q, inverse):
        # gram = kron(C_p(G1), C_q(G2))^T with G1 = conj(H^-1), G2 = H^-1
        if inverse:
            A, B = compound(np.conj(self.H), p), compound(self.H, q)
        else:
            A, B = compound(np.conj(self.Hinv), p), compound(self.Hinv, q)
        return A, B

    def gram_apply(self, v, p, q, inverse=False):
        """Pointwise M_rho v (or M_rho^{-1} v) for v of bidegree (p,q)."""
        A, B = self._compounds(p, q, inverse)
        dA, dB = A.shape[-1], B.shape[-1]
        V = v.reshape((dA, dB) + self.grid.shape)
        out = np.einsum("...ca,...db,cd...->ab...", A, B, V, optimize=True)
        return out.reshape((dA * dB,) + self.grid.shape)

    def wedge_adjoint(self, e, v, p_lo, q_lo):
        """Pointwise rho-adjoint of (e ^ .) : (p_lo, q_lo) -> (p_lo+e.p, q_lo+e.q), applied to v."""
        n = self.grid.n
        if p_lo + e.p > n or q_lo + e.q > n:
            return np.zeros((dim(n, p_lo, q_lo),) + self.grid.shape, dtype=complex)
        T = wedge_tensor(n, e.p, e.q, p_lo, q_lo)
        Mv = self.gram_apply(v, p_lo + e.p, q_lo + e.q)
        w = np.einsum("oba,b...,o...->a...", T, e.values.conj(), Mv, optimize=True)
        return self.gram_apply(w, p_lo, q_lo, inverse=True)

    def lam(self, u):
        """Lambda_rho u."""
        if u.p == 0 or u.q == 0 or u.p > u.n or u.q > u.n:
            return FormField.zeros(self.grid, max(u.p - 1, 0), max(u.q - 1, 0))
        vals = self.wedge_adjoint(self.rho, u.values, u.p - 1, u.q - 1)
        return FormField(self.grid, u.p - 1, u.q - 1, vals)

    def weighted(self, v, p, q, inverse=False):
        """W = vol * M_rho applied pointwise."""
        if inverse:
            return self.gram_apply(v, p, q, inverse=True) / self.vol
        return self.gram_apply(v, p, q) * self.vol

    def dbar_star(self, v):
        """d''*_rho v = W^{-1} sum_j (-d_j)(Ebar_j^H W v)."""
        if v.q == 0:
            return None
        n, g = self.grid.n, self.grid
        Wv = self.weighted(v.values, v.p, v.q)
        acc = None
        for Ej, s in zip(_E(n, v.p, v.q - 1, True), g.dz_symbols):
            w = np.tensordot(Ej.T, Wv, axes=(1, 0))
            term = -g.fft(w) * s
            acc = term if acc is None else acc + term
        vals = self.weighted(g.ifft(acc), v.p, v.q - 1, inverse=True)
        return FormField(g, v.p, v.q - 1, vals)

    def d_star(self, v):
        """d'*_rho v = W^{-1} sum_j (-dbar_j)(E_j^H W v)."""
        if v.p == 0:
            return None
        n, g = self.grid.n, self.grid
        Wv = self.weighted(v.values, v.p, v.q)
        acc = None
        for Ej, s in zip(_E(n, v.p - 1, v.q, False), g.dzbar_symbols):
            w = np.tensordot(Ej.T, Wv, axes=(1, 0))
            term = -g.fft(w) * s
            acc = term if acc is None else acc + term
        vals = self.weighted(g.ifft(acc), v.p - 1, v.q, inverse=True)
        return FormField(g, v.p - 1, v.q, vals)

    def dbar_laplacian(self, u):
        out = FormField.zeros(self.grid, u.p, u.q)
        if u.q > 0:
            out = out + d_antiholo(self.dbar_star(u))
        if u.q < u.n:
            out = out + self.dbar_star(d_antiholo(u))
        return out

    @cached_property
    def d_rho(self):
        return d_holo(self.rho)

    @cached_property
    def dbar_rho(self):
        return d_antiholo(self.rho)

    def _commutator(self, e, u):
        # [Lambda_rho, e ^ .] u
        first = self.lam(e.wedge(u))
        second = e.wedge(self.lam(u)) if (u.p > 0 and u.q > 0) else FormField.zeros(self.grid, first.p, first.q)
        return first - second

    def _commutator_adjoint(self, e, v):
        # pointwise adjoint of [Lambda_rho, e ^ .]: [(e^)*, L_rho] v
        p_lo, q_lo = v.p - e.p + 1, v.q - e.q + 1
        # (e^)* L_rho v
        Lv = self.rho.wedge(v)
        a = self.wedge_adjoint(e, Lv.values, p_lo, q_lo)
        # L_rho (e^)* v
        if v.p - e.p >= 0 and v.q - e.q >= 0:
            ev = FormField(self.grid, v.p - e.p, v.q - e.q, self.wedge_adjoint(e, v.values, v.p - e.p, v.q - e.q))
            b = self.rho.wedge(ev).values
        else:
            b = 0
        return FormField(self.grid, p_lo, q_lo, a - b)

    def torsion(self, u):
        """tau_rho u = [Lambda_rho, d' rho ^ .] u, of bidegree (p+1, q)."""
        return self._commutator(self.d_rho, u)

    def torsion_bar(self, u):
        """[Lambda_rho, d'' rho ^ .] u, of bidegree (p, q+1)."""
        return self._commutator(self.dbar_rho, u)

    def torsion_star(self, v):
        return self._commutator_adjoint(self.d_rho, v)

    def torsion_bar_star(self, v):
        return self._commutator_adjoint(self.dbar_rho, v)


def torsion_apply(u, rho):
    """[Lambda_rho, d' rho ^ .] u for a variable metric field rho."""
    mf = rho if isinstance(rho, MetricField) else MetricField(rho)
    return mf.torsion(u)


# pointwise positivity of fields

def _hermitian_field(f):
    n = f.n
    H = (-1j * f.values).reshape((n, n) + f.grid.shape)
    H = np.moveaxis(H, (0, 1), (-2, -1))
    return 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))


def min_eigenvalue_field(f, metric=None):
    """Pointwise smallest eigenvalue of a real (1,1)-field, relative to metric if given."""
    H = _hermitian_field(f)
    if metric is not None:
        L = np.linalg.cholesky(metric.matrix)
        Li = np.linalg.inv(L)
        H = Li @ H @ Li.conj().T
    return np.linalg.eigvalsh(H)[..., 0]


def check_weakly_positive_field(Om, tol=1e-12, seed=0, K=16):
    """Smallest value of a pointwise weak-positivity test over the grid.

    Exact for bidegrees 0, 1, n-1, n (eigenvalues); in between it is the smallest
    pairing with simple forms from a fixed family of frames, a necessary test only.
    """
    n, k = Om.n, Om.p
    if Om.p != Om.q:
        raise FormError("expected a (k,k)-field")
    if k == 0:
        return float(np.min(Om.values[0].real))
    if k == n:
        return float(np.min((Om.values[0] / (1j ** (n * n))).real))
    if k == 1:
        return float(np.min(min_eigenvalue_field(Om)))
    if k == n - 1:
        s = Om.apply(euclidean_star_matrix(n, k, k), 1, 1)
        return float(np.min(min_eigenvalue_field(s)))
    from .positivity import frame_simple_forms, pairing_matrix, random_frames
    P = pairing_matrix(n, k, k)
    frames = [np.eye(n)] + list(random_frames(n, K, seed))
    rows = np.concatenate([frame_simple_forms(F, n - k) for F in frames])
    vals = np.tensordot(rows @ P.T, Om.values, axes=(1, 0)).real
    return float(np.min(vals))


# the operator P

class PoperatorP:
    """phi -> -(i ddbar phi ^ omega^{m-1} ^ Om) / dV_omega on the torus."""

    def __init__(self, metric, Om, m, check=True, ddbar_tol=1e-10, pos_tol=1e-12):
        n = metric.n
        if Om.bidegree != (n - m, n - m):
            raise FormError(f"Om must have bidegree ({n - m},{n - m})")
        self.metric, self.Om, self.m, self.grid = metric, Om, m, Om.grid
        if check:
            v = check_weakly_positive_field(Om)
            if v < -pos_tol:
                raise PreconditionError(f"Om is not weakly positive: min test value {v:.3e}", violation=v)
            if 0 < Om.p < n:
                dd = d_holo(d_antiholo(Om)).sup_norm()
                if dd > ddbar_tol * max(1.0, Om.sup_norm()):
                    raise PreconditionError(f"d'd''Om = {dd:.3e} exceeds tolerance", violation=dd)
        # coefficient fields C[j,k] with P phi = -sum C_jk d_j dbar_k phi
        W = metric.form()
        Wp = Form.scalar(n)
        for _ in range(m - 1):
            from .exterior import wedge
            Wp = wedge(Wp, W)
        self.omega_pow = Wp
        top = 1j ** (n * n) * np.linalg.det(metric.matrix).real
        T = wedge_tensor(n, m, m, n - m, n - m)[0]
        C = np.zeros((n, n) + self.grid.shape, dtype=complex)
        from .exterior import wedge as _w
        for j in range(n):
            for k in range(n):
                e = _w(Form(n, 1, 1, {((j + 1,), (k + 1,)): 1j}), Wp)
                row = e.to_vector() @ T
                C[j, k] = np.tensordot(row, Om.values, axes=(0, 0)) / top
        self.C = C

    def symbols(self):
        g = self.grid
        return [[g.dz_symbols[j] * g.dzbar_symbols[k] for k in range(g.n)] for j in range(g.n)]

    def apply_values(self, phi):
        """P on a complex scalar array of grid shape."""
        g = self.grid
        hat = g.fft_scalar(phi)
        out = np.zeros(g.shape, dtype=complex)
        S = self.symbols()
        for j in range(g.n):
            for k in range(g.n):
                out -= self.C[j, k] * g.ifft_scalar(hat * S[j][k])
        return out

    def adjoint_values(self, psi):
        """Formal L^2 adjoint: -sum conj(d_j dbar_k) applied to conj(C_jk) psi."""
        g = self.grid
        out = np.zeros(g.shape, dtype=complex)
        S = self.symbols()
        for j in range(g.n):
            for k in range(g.n):
                out -= g.ifft_scalar(g.fft_scalar(np.conj(self.C[j, k]) * psi) * np.conj(S[j][k]))
        return out

    def mean_symbol(self):
        """Symbol of the constant-coefficient operator with averaged C."""
        g = self.grid
        S = self.symbols()
        out = np.zeros(g.shape, dtype=complex)
        for j in range(g.n):
            for k in range(g.n):
                out -= np.mean(self.C[j, k]) * S[j][k]
        return out

    def __call__(self, phi):
        vals = phi.values[0] if isinstance(phi, FormField) else phi
        return FormField.scalar(self.grid, self.apply_values(vals))

    def smallest_singular_values(self, k=3, seed=0, tol=1e-9, maxiter=300):
        """Smallest singular values of P on the resolved (non-Nyquist) modes.

        Nyquist modes carry no derivative information on the grid, so they are
        excluded from the domain; LOBPCG runs on P^H P with a Fourier
        preconditioner built from the averaged symbol.
        """
        from scipy.sparse.linalg import LinearOperator, lobpcg
        g = self.grid
        keep = np.ones(g.shape, dtype=bool)
        for a in range(g.ndim):
            keep &= ~np.broadcast_to(g._nyq[a], g.shape)
        keep = keep.ravel()
        sym = np.abs(self.mean_symbol().ravel()) ** 2
        pre = np.where(keep, 1.0 / np.maximum(sym, 1.0), 0.0)

        def restrict(x):
            h = g.fft_scalar(x.reshape(g.shape)).ravel()
            return g.ifft_scalar((h * keep).reshape(g.shape))

        def mv(x):
            x = np.asarray(x).reshape(-1)
            y = restrict(x)
            return restrict(self.adjoint_values(self.apply_values(y))).ravel()

        def pv(x):
            x = np.asarray(x).reshape(-1)
            h = g.fft_scalar(x.reshape(g.shape)).ravel() * pre
            return g.ifft_scalar(h.reshape(g.shape)).ravel()

        A = LinearOperator((g.size, g.size), matvec=mv, dtype=complex)
        M = LinearOperator((g.size, g.size), matvec=pv, dtype=complex)
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(g.size, k)) + 0j
        X = np.stack([restrict(X[:, i]).ravel() for i in range(k)], axis=1)
        with warnings.catch_warnings():
            # lobpcg warns when the last digits stall; the ratio test does not need them
            warnings.simplefilter("ignore", UserWarning)
            w, _ = lobpcg(A, X, M=M, largest=False, tol=tol, maxiter=maxiter)
        return np.sqrt(np.abs(np.sort(w.real)))


def apply_P(phi, metric, Om, m, check=True):
    return PoperatorP(metric, Om, m, check=check)(phi)


def apply_Q(u, metric, m):
    """star(i ddbar u ^ omega_{n-m-1}), a (1,1)-field."""
    n = metric.n
    if u.bidegree != (m - 1, m - 1):
        raise FormError(f"apply_Q expects bidegree ({m - 1},{m - 1})")
    if not (1 <= m <= n - 1):
        raise FormError(f"m={m} out of range for n={n}")
    _require_constant(metric)
    dd = i_ddbar(u)
    W = left_wedge_matrix(metric.power(n - m - 1), m, m)
    S = star_matrix(metric, n - 1, n - 1)
    return dd.apply(S @ W, 1, 1)


def apply_Q_closed_form(u, metric, m):
    """(1/(m-1)!)(-Lambda^{m-1} + (1/m) omega Lambda^m) applied to i ddbar u."""
    dd = i_ddbar(u)
    return dd.apply(star_of_wedge_power_matrix(metric, m), 1, 1)


# the constraint subspace K

class ConstraintSubspaceK:
    """Per-mode projector onto {d'* u = 0, d''* u = 0, Lambda^{m-2} Delta'' u = 0}.

    ``conditions='weak'`` keeps only the first two constraints. Projection is
    orthogonal for the omega inner product at each Fourier mode.
    """

    def __init__(self, grid, metric, m, conditions="full", chunk=8192, rank_tol=1e-10):
        _require_constant(metric)
        if conditions not in ("full", "weak"):
            raise ValueError("conditions must be 'full' or 'weak'")
        self.grid, self.metric, self.m, self.conditions = grid, metric, m, conditions
        self.p = self.q = m - 1
        self.d = dim(grid.n, self.p, self.q)
        self.chunk, self.rank_tol = chunk, rank_tol
        M = gram_matrix(metric, self.p, self.q)
        w, V = np.linalg.eigh(M)
        self.Mh = (V * np.sqrt(w)) @ V.conj().T
        self.Mih = (V / np.sqrt(w)) @ V.conj().T
        self._syms = (np.stack([np.broadcast_to(s, grid.shape).ravel() for s in grid.dz_symbols]),
                      np.stack([np.broadcast_to(s, grid.shape).ravel() for s in grid.dzbar_symbols]))

    def _lap_parts(self):
        # Delta'' symbol = sum_{j,l} conj(sb_l) sb_j A_jl with A from both orders
        n, p, q, metric = self.grid.n, self.p, self.q, self.metric
        Eb = _E(n, p, q, True)
        parts = np.zeros((n, n, self.d, self.d), dtype=complex)
        if q > 0:
            Kb = _adjoint_mats(metric, p, q, True)
            Eb_lo = _E(n, p, q - 1, True)
            for j in range(n):
                for l in range(n):
                    parts[j, l] += Eb_lo[j] @ Kb[l]
        if q < n:
            Kb_hi = _adjoint_mats(metric, p, q + 1, True)
            for j in range(n):
                for l in range(n):
                    parts[j, l] += Kb_hi[l] @ Eb[j]
        return parts

    def constraint_rows(self, idx):
        """Stacked constraint matrices for the flat mode indices ``idx``."""
        n, p, q = self.grid.n, self.p, self.q
        s, sb = self._syms[0][:, idx], self._syms[1][:, idx]
        blocks = []
        if p > 0:
            K = np.array(_adjoint_mats(self.metric, p, q, False))
            blocks.append(np.einsum("jm,jab->mab", s.conj(), K))
        if q > 0:
            Kb = np.array(_adjoint_mats(self.metric, p, q, True))
            blocks.append(np.einsum("jm,jab->mab", sb.conj(), Kb))
        if self.conditions == "full" and self.m >= 2:
            parts = self._lap_parts()
            lap = np.einsum("jm,lm,jlab->mab", sb, sb.conj(), parts)
            Lp = lambda_power_matrix(self.metric, p, q, self.m - 2)
            blocks.append(np.einsum("ab,mbc->mac", Lp, lap))
        if not blocks:
            return np.zeros((len(idx), 0, self.d), dtype=complex)
        return np.concatenate(blocks, axis=1)

    def basis_chunk(self, idx):
        """Z with columns spanning K at each mode (zero columns pad the rank)."""
        C = self.constraint_rows(idx)
        nm = len(idx)
        if C.shape[1] == 0:
            Z = np.broadcast_to(np.eye(self.d, dtype=complex), (nm, self.d, self.d)).copy()
            return Z, Z
        B = C @ self.Mih
        _, s, Vh = np.linalg.svd(B, full_matrices=True)
        sfull = np.zeros((nm, self.d))
        sfull[:, : s.shape[1]] = s
        scale = np.maximum(np.max(s, axis=1, initial=0.0), 1.0)
        null = sfull <= self.rank_tol * scale[:, None]
        Zy = np.conj(np.swapaxes(Vh, 1, 2)) * null[:, None, :]
        return self.Mih @ Zy, Zy

    def _chunks(self):
        total = self.grid.size
        for start in range(0, total, self.chunk):
            yield np.arange(start, min(start + self.chunk, total))

    def project(self, u):
        if u.bidegree != (self.p, self.q) or u.grid != self.grid:
            raise FormError("field does not match the constraint space")
        hat = u.hat.reshape(self.d, -1)
        out = np.empty_like(hat)
        for idx in self._chunks():
            Zx, Zy = self.basis_chunk(idx)
            y = np.einsum("ab,bm->ma", self.Mh, hat[:, idx])
            c = np.einsum("mba,mb->ma", Zy.conj(), y)
            out[:, idx] = np.einsum("mab,mb->am", Zx, c)
        return FormField.from_hat(self.grid, self.p, self.q, out.reshape(hat.shape[:1] + self.grid.shape))

    def residuals(self, u):
        """Sup norms of the three constraint residuals."""
        n = self.grid.n
        res = {}
        a, b = d_holo_star(u, self.metric), d_antiholo_star(u, self.metric)
        res["d_star"] = a.sup_norm() if a is not None else 0.0
        res["dbar_star"] = b.sup_norm() if b is not None else 0.0
        if self.m >= 2:
            res["lambda_laplacian"] = lambda_field(dbar_laplacian(u, self.metric), self.metric, self.m - 2).sup_norm()
        else:
            res["lambda_laplacian"] = 0.0
        return res


# single Fourier modes

def mode_symbols(n, k):
    """Symbols of d/dz_j and d/dzbar_j on exp(2 pi i k.x), k over (x_1..x_n, y_1..y_n)."""
    k = np.asarray(k, dtype=float)
    if k.shape != (2 * n,):
        raise ValueError("wave vector must have 2n entries")
    dx, dy = 2j * np.pi * k[:n], 2j * np.pi * k[n:]
    return 0.5 * (dx - 1j * dy), 0.5 * (dx + 1j * dy)


def mode_matrices(metric, p, q, k):
    """Matrices of d', d'', their adjoints and i d'd'' on a single mode of bidegree (p,q)."""
    n = metric.n
    s, sb = mode_symbols(n, k)
    out = {}
    if p < n:
        out["d"] = sum(s[j] * _E(n, p, q, False)[j] for j in range(n))
    if q < n:
        out["dbar"] = sum(sb[j] * _E(n, p, q, True)[j] for j in range(n))
    if p > 0:
        out["d_star"] = sum(np.conj(s[j]) * _adjoint_mats(metric, p, q, False)[j] for j in range(n))
    if q > 0:
        out["dbar_star"] = sum(np.conj(sb[j]) * _adjoint_mats(metric, p, q, True)[j] for j in range(n))
    if p < n and q < n:
        dbar = out["dbar"]
        d_hi = sum(s[j] * _E(n, p, q + 1, False)[j] for j in range(n))
        out["i_ddbar"] = 1j * d_hi @ dbar
    return out


def mode_Q_matrix(metric, m, k):
    """Q on a single mode: star(i ddbar u ^ omega_{n-m-1}) for u of bidegree (m-1,m-1)."""
    n = metric.n
    dd = mode_matrices(metric, m - 1, m - 1, k)["i_ddbar"]
    W = left_wedge_matrix(metric.power(n - m - 1), m, m)
    return star_matrix(metric, n - 1, n - 1) @ W @ dd


@lru_cache(maxsize=64)
def _ddbar_blocks(n, p):
    # i dz_j ^ dzbar_k ^ . from (p-1,p-1) to (p,p), so i ddbar = sum s_j sb_k G_jk
    G = np.zeros((n, n, dim(n, p, p), dim(n, p - 1, p - 1)), dtype=complex)
    for j in range(n):
        for k in range(n):
            G[j, k] = 1j * _E(n, p - 1, p, False)[j] @ _E(n, p - 1, p - 1, True)[k]
    return G


def solve_i_ddbar(target, kmax=None, chunk=8192, rcond=1e-10):
    """Least-squares S with i ddbar S = target, mode by mode.

    Only modes with every |k| <= kmax enter; returns (S, sup residual). The mean
    of the target is never reachable and is left in the residual.
    """
    g, n, p = target.grid, target.n, target.p
    if target.p != target.q or p < 1:
        raise FormError("solve_i_ddbar expects a (p,p)-field with p >= 1")
    G = _ddbar_blocks(n, p)
    din = G.shape[-1]
    s = np.stack([np.broadcast_to(x, g.shape).ravel() for x in g.dz_symbols])
    sb = np.stack([np.broadcast_to(x, g.shape).ravel() for x in g.dzbar_symbols])
    kk = g.max_abs_wavenumber.ravel()
    lim = g.N / 2 - 1 if kmax is None else kmax
    hat = target.hat.reshape(len(target.values), -1)
    out = np.zeros((din, g.size), dtype=complex)
    for start in range(0, g.size, chunk):
        idx = np.arange(start, min(start + chunk, g.size))
        idx = idx[(kk[idx] <= lim) & (kk[idx] > 0)]
        if len(idx) == 0:
            continue
        A = np.einsum("jm,km,jkab->mab", s[:, idx], sb[:, idx], G)
        out[:, idx] = np.einsum("mab,bm->am", np.linalg.pinv(A, rcond=rcond), hat[:, idx])
    S = FormField.from_hat(g, p - 1, p - 1, out.reshape((din,) + g.shape))
    if target.is_real(1e-12 * max(1.0, target.sup_norm())):
        S = S.real_part()
    res = (i_ddbar(S) - target)
    return S, res
