"""Certificates for positivity cones of real (m,m)-forms.

Verdicts are a trichotomy. ``certified-in`` always carries nonnegative weights
over explicit simple positive forms that rebuild the input; ``certified-out``
always carries a positive test form whose pairing with the input is negative.
Bidegrees 0, 1, n-1 and n are decided exactly through eigenvalues; in between
the answer can be ``undetermined``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize, nnls
from scipy.stats import unitary_group

from .exterior import (
    Form,
    FormError,
    HermitianMetric,
    compound,
    conjugate,
    dim,
    multi_indices,
    wedge,
    wedge_tensor,
)
from .hodge import euclidean_star_matrix

IN, OUT, UNDETERMINED = "certified-in", "certified-out", "undetermined"

__all__ = [
    "IN",
    "OUT",
    "UNDETERMINED",
    "PositivityVerdict",
    "hermitian_matrix",
    "form_from_hermitian",
    "pairing",
    "frame_simple_forms",
    "random_frames",
    "positivity_11",
    "strong_verdict",
    "weak_verdict",
    "m_positivity",
    "simultaneous_frame",
    "holder_gap",
]


def _c2l(z):
    z = np.asarray(z, dtype=complex)
    return np.stack([z.real, z.imag], axis=-1).tolist()


@dataclass
class PositivityVerdict:
    status: str
    certificate: dict | None = None
    tolerance: float = 0.0
    seed: int | None = None

    def to_dict(self):
        return {"status": self.status, "certificate": self.certificate,
                "tolerance": self.tolerance, "seed": self.seed}

    @property
    def is_in(self):
        return self.status == IN

    @property
    def is_out(self):
        return self.status == OUT


def hermitian_matrix(a):
    """A with a = i sum A_jk dz_j ^ dzbar_k."""
    if a.bidegree != (1, 1):
        raise FormError("expected a (1,1)-form")
    n = a.n
    A = np.zeros((n, n), dtype=complex)
    for ((j,), (k,)), c in a.coeffs.items():
        A[j - 1, k - 1] = -1j * c
    return A


def form_from_hermitian(A):
    A = np.asarray(A, dtype=complex)
    A = 0.5 * (A + A.conj().T)  # exactly Hermitian, so the form is exactly real
    n = A.shape[0]
    return Form(n, 1, 1, {((j + 1,), (k + 1,)): 1j * A[j, k]
                          for j in range(n) for k in range(n) if A[j, k] != 0})


def pairing(a, b):
    """Top coefficient of a ^ b relative to prod_j (i dz_j ^ dzbar_j)."""
    n = a.n
    if a.p + b.p != n or a.q + b.q != n:
        raise FormError("pairing needs complementary bidegrees")
    T = wedge_tensor(n, a.p, a.q, b.p, b.q)
    top = np.einsum("ab,a,b->", T[0], a.to_vector(), b.to_vector())
    return complex(top / (1j ** (n * n)))


def pairing_matrix(n, p, q):
    """Matrix P with pairing(a, b) = a_vec @ P @ b_vec."""
    T = wedge_tensor(n, p, q, n - p, n - q)
    return T[0] / (1j ** (n * n))


def frame_simple_forms(F, m):
    """Coefficient vectors of prod_{a in J} (i e_a ^ conj e_a) for all |J| = m.

    ``F`` holds the frame as rows, e_a = sum_j F[a, j] dz_j. Returns an array of
    shape (C(n,m), dim(n,m,m)); row order follows multi_indices(n, m).
    """
    F = np.asarray(F, dtype=complex)
    C = compound(F, m)
    rows = np.einsum("jk,jl->jkl", C, C.conj()).reshape(C.shape[0], -1)
    return (1j ** (m * m)) * rows


@lru_cache(maxsize=64)
def random_frames(n, K, seed):
    """K Haar-random unitary frames, reproducible from the seed."""
    if K == 0:
        return ()
    rng = np.random.default_rng(seed)
    frames = unitary_group.rvs(n, size=K, random_state=rng)
    frames = np.asarray(frames).reshape(K, n, n)
    return tuple(frames)


def _check_real(a, tol=0.0):
    if not a.is_real(tol):
        raise FormError("input form is not real")


def _eig_frame(A):
    lam, V = np.linalg.eigh(0.5 * (A + A.conj().T))
    return lam, V.T  # frame rows e_a = sum_j V[j,a] dz_j


def _complement(J, n):
    return tuple(j for j in range(1, n + 1) if j not in J)


def _frame_dict(F):
    return {"frame": _c2l(F)}


def _simple(F, J, n):
    """prod_{a in J} i e_a ^ conj e_a as a Form."""
    m = len(J)
    rows = frame_simple_forms(F, m)
    k = multi_indices(n, m).index(tuple(J))
    return Form.from_vector(n, m, m, rows[k])


def _diag_verdict(beta, F, tol, definite, seed):
    """Exact verdict if beta is diagonal in frame F, else None."""
    n, m = beta.n, beta.p
    rows = frame_simple_forms(F, m)
    b = beta.to_vector()
    mu, *_ = np.linalg.lstsq(rows.T, b, rcond=None)
    scale = max(np.linalg.norm(b), 1e-300)
    if np.linalg.norm(rows.T @ mu - b) > 1e-10 * scale:
        return None
    mu = mu.real
    floor = tol if definite else -tol
    Js = multi_indices(n, m)
    worst = int(np.argmin(mu))
    if mu[worst] >= floor:
        w = np.maximum(mu, 0.0)
        cert = {"kind": "weights", "frames": [_c2l(F)], "subsets": [list(J) for J in Js],
                "weights": w.tolist(),
                "residual": float(np.linalg.norm(rows.T @ w - b))}
        return PositivityVerdict(IN, cert, tol, seed)
    if mu[worst] < -tol:
        J = Js[worst]
        test = _simple(F, _complement(J, n), n)
        val = pairing(beta, test).real
        if val < -tol:
            cert = {"kind": "test-form", "test_form": test.to_dict(), "pairing": val,
                    "frame": _c2l(F), "subset": list(_complement(J, n))}
            return PositivityVerdict(OUT, cert, tol, seed)
    return PositivityVerdict(UNDETERMINED, {"min_weight": float(mu[worst])}, tol, seed)


def positivity_11(a, tol=1e-12, definite=False, seed=None):
    """Eigenvalue verdict for a real (1,1)-form."""
    _check_real(a, tol=1e-12 * max(a.norm(), 1.0))
    A = hermitian_matrix(a)
    lam, F = _eig_frame(A)
    n = a.n
    if definite:
        ok = lam[0] >= tol
    else:
        ok = lam[0] >= -tol
    if ok:
        cert = {"kind": "weights", "frames": [_c2l(F)], "subsets": [[j] for j in range(1, n + 1)],
                "weights": np.maximum(lam, 0.0).tolist(), "eigenvalues": lam.tolist()}
        return PositivityVerdict(IN, cert, tol, seed)
    if lam[0] < -tol:
        test = _simple(F, tuple(range(2, n + 1)), n) if n > 1 else Form.scalar(1)
        cert = {"kind": "test-form", "direction": _c2l(F[0]), "eigenvalue": float(lam[0]),
                "test_form": test.to_dict(), "pairing": pairing(a, test).real}
        return PositivityVerdict(OUT, cert, tol, seed)
    return PositivityVerdict(UNDETERMINED, {"eigenvalues": lam.tolist()}, tol, seed)


def _hint_frames(beta):
    n, m = beta.n, beta.p
    if m == 1:
        return [_eig_frame(hermitian_matrix(beta))[1]]
    if m == n - 1:
        s = Form.from_vector(n, 1, 1, euclidean_star_matrix(n, m, m) @ beta.to_vector())
        return [_eig_frame(hermitian_matrix(s))[1]]
    return []


def _min_pairing_search(beta, k, frames, refine=True):
    """Smallest pairing of beta with simple (k,k)-forms over frames and local refinement."""
    n = beta.n
    P = pairing_matrix(n, beta.p, beta.q)
    bP = beta.to_vector() @ P
    best = (np.inf, None, None)
    for F in frames:
        vals = (frame_simple_forms(F, k) @ bP).real
        j = int(np.argmin(vals))
        if vals[j] < best[0]:
            best = (float(vals[j]), F, j)
    if refine and best[1] is not None:
        F0, j = best[1], best[2]
        def obj(x):
            X = (x[: n * n] + 1j * x[n * n:]).reshape(n, n)
            Hm = 0.5 * (X + X.conj().T)
            w, V = np.linalg.eigh(Hm)
            U = (V * np.exp(1j * w)) @ V.conj().T
            F = U @ F0
            return float((frame_simple_forms(F, k)[j] @ bP).real)
        res = minimize(obj, np.zeros(2 * n * n), method="BFGS", options={"maxiter": 50})
        if res.fun < best[0]:
            X = (res.x[: n * n] + 1j * res.x[n * n:]).reshape(n, n)
            Hm = 0.5 * (X + X.conj().T)
            w, V = np.linalg.eigh(Hm)
            F = (V * np.exp(1j * w)) @ V.conj().T @ F0
            best = (float(res.fun), F, j)
    return best


def _nnls_certificate(beta, frames, tol):
    n, m = beta.n, beta.p
    blocks = [frame_simple_forms(F, m) for F in frames]
    D = np.concatenate(blocks, axis=0).T  # (dim, ncols)
    b = beta.to_vector()
    A = np.concatenate([D.real, D.imag], axis=0)
    y = np.concatenate([b.real, b.imag])
    w, _ = nnls(A, y, maxiter=20 * A.shape[1])
    resid = float(np.linalg.norm(D @ w - b))
    return w, resid, blocks


def strong_verdict(beta, tol=1e-9, seed=0, K=64, frames=None, definite=False, search=True):
    """Membership of a real (m,m)-form in the strongly positive cone."""
    n, m = beta.n, beta.p
    if beta.p != beta.q or not (1 <= m <= n - 1):
        raise FormError(f"strong_verdict needs bidegree (m,m) with 1 <= m <= n-1, got {beta.bidegree}")
    _check_real(beta, tol=1e-12 * max(beta.norm(), 1.0))
    extra = [np.asarray(F, dtype=complex) for F in (frames or [])]
    for F in _hint_frames(beta) + extra:
        v = _diag_verdict(beta, F, tol, definite, seed)
        if v is not None and v.status != UNDETERMINED:
            return v
    if m in (1, n - 1):
        # diagonalizing frame always exists in these bidegrees
        v = _diag_verdict(beta, _hint_frames(beta)[0], tol, definite, seed)
        return v
    all_frames = [np.eye(n, dtype=complex)] + extra + list(random_frames(n, K, seed))
    w, resid, _ = _nnls_certificate(beta, all_frames, tol)
    scale = max(beta.norm(), 1e-300)
    if resid <= tol * scale and not definite:
        keep = np.nonzero(w > 0)[0]
        nJ = math.comb(n, m)
        cert = {"kind": "weights", "residual": resid,
                "terms": [{"frame": _c2l(all_frames[i // nJ]),
                           "subset": list(multi_indices(n, m)[i % nJ]),
                           "weight": float(w[i])} for i in keep]}
        return PositivityVerdict(IN, cert, tol, seed)
    if search:
        val, F, j = _min_pairing_search(beta, n - m, all_frames)
        if val < -tol:
            J = multi_indices(n, n - m)[j]
            test = _simple(F, J, n)
            cert = {"kind": "test-form", "test_form": test.to_dict(),
                    "pairing": pairing(beta, test).real, "frame": _c2l(F), "subset": list(J)}
            if cert["pairing"] < -tol:
                return PositivityVerdict(OUT, cert, tol, seed)
    return PositivityVerdict(UNDETERMINED, {"nnls_residual": resid}, tol, seed)


def weak_verdict(omega_form, tol=1e-9, seed=0, K=64, frames=None):
    """Membership of a real (q,q)-form in the weakly positive cone."""
    Om = omega_form
    n, q = Om.n, Om.p
    if Om.p != Om.q:
        raise FormError("weak_verdict needs a (q,q)-form")
    _check_real(Om, tol=1e-12 * max(Om.norm(), 1.0))
    if q in (0, n):
        c = Om.to_vector()[0] / (1j ** (q * q))
        c = float(c.real)
        if c >= -tol:
            return PositivityVerdict(IN, {"kind": "scalar", "value": c}, tol, seed)
        test = Form.scalar(n) if q == n else Form(n, n, n, {(tuple(range(1, n + 1)),) * 2: 1j ** (n * n)})
        return PositivityVerdict(OUT, {"kind": "test-form", "test_form": test.to_dict(), "pairing": c}, tol, seed)
    if q in (1, n - 1):
        # weak and strong cones coincide here
        return strong_verdict(Om, tol=tol, seed=seed, K=K, frames=frames)
    extra = [np.asarray(F, dtype=complex) for F in (frames or [])]
    all_frames = [np.eye(n, dtype=complex)] + extra + list(random_frames(n, K, seed))
    val, F, j = _min_pairing_search(Om, n - q, all_frames)
    if val < -tol:
        J = multi_indices(n, n - q)[j]
        test = _simple(F, J, n)
        pv = pairing(Om, test).real
        if pv < -tol:
            cert = {"kind": "test-form", "test_form": test.to_dict(), "pairing": pv,
                    "frame": _c2l(F), "subset": list(J)}
            return PositivityVerdict(OUT, cert, tol, seed)
    # strong positivity implies weak positivity
    sv = strong_verdict(Om, tol=tol, seed=seed, K=K, frames=frames, search=False)
    if sv.is_in:
        cert = dict(sv.certificate)
        cert["via"] = "strong"
        return PositivityVerdict(IN, cert, tol, seed)
    return PositivityVerdict(UNDETERMINED, {"min_sampled_pairing": val}, tol, seed)


def simultaneous_frame(T, metric):
    """Frame F with omega = sum i e_a^conj e_a and T = sum t_a i e_a^conj e_a."""
    A = hermitian_matrix(T)
    A = 0.5 * (A + A.conj().T)
    from scipy.linalg import eigh
    t, X = eigh(A, metric.matrix)
    W = np.linalg.inv(X)
    return t, W.conj()


def m_positivity(T, metric, m, tol=1e-12, definite=False, seed=None):
    """Strong positivity of T ^ omega^{m-1}, decided in a frame adapted to T and omega."""
    _check_real(T, tol=1e-12 * max(T.norm(), 1.0))
    n = metric.n
    if not (1 <= m <= n):
        raise FormError(f"m={m} out of range for n={n}")
    if m == 1:
        return positivity_11(T, tol=tol, definite=definite, seed=seed)
    t, F = simultaneous_frame(T, metric)
    beta = wedge(T, _metric_pow_raw(metric, m - 1))
    if m == n:
        c = float((beta.to_vector()[0] / (1j ** (n * n))).real)
        floor = tol if definite else -tol
        if c >= floor:
            return PositivityVerdict(IN, {"kind": "scalar", "value": c}, tol, seed)
        if c < -tol:
            return PositivityVerdict(OUT, {"kind": "test-form", "test_form": Form.scalar(n).to_dict(),
                                           "pairing": c}, tol, seed)
        return PositivityVerdict(UNDETERMINED, {"value": c}, tol, seed)
    v = _diag_verdict(beta, F, tol, definite, seed)
    if v is None:
        raise RuntimeError("simultaneous frame failed to diagonalize T ^ omega^(m-1)")
    if v.certificate is not None:
        v.certificate["frame_eigenvalues"] = t.tolist()
    return v


@lru_cache(maxsize=128)
def _metric_pow_raw(metric, k):
    out = Form.scalar(metric.n)
    for _ in range(k):
        out = wedge(out, metric.form())
    return out


def _top_ratio(a, b):
    return complex(a.to_vector()[0] / b.to_vector()[0]).real


def holder_gap(rho, beta, Om, metric, check=True, tol=1e-9, seed=0, frames=None):
    """(rho_m^Om / omega_n)(rho_{n-m}^beta / rho_n) - beta^Om / omega_n."""
    n = metric.n
    m = beta.p
    if Om.bidegree != (n - m, n - m):
        raise FormError("Om must have bidegree (n-m, n-m)")
    if check:
        v = positivity_11(rho, tol=0.0, definite=True)
        if not v.is_in:
            raise FormError(f"rho is not positive definite: {v.certificate}")
        if 1 <= m <= n - 1:
            vb = strong_verdict(beta, tol=tol, seed=seed, frames=frames, search=False)
            if not vb.is_in:
                raise FormError(f"beta not certified strongly positive: {vb.status}")
            vo = weak_verdict(Om, tol=tol, seed=seed, frames=frames)
            if not vo.is_in:
                raise FormError(f"Om not certified weakly positive: {vo.status}")
    rm = HermitianMetric(hermitian_matrix(rho))
    omega_n = metric.power(n)
    rho_n = rm.power(n)
    t1 = _top_ratio(wedge(rm.power(m), Om), omega_n)
    t2 = _top_ratio(wedge(rm.power(n - m), beta), rho_n)
    t3 = _top_ratio(wedge(beta, Om), omega_n)
    return t1 * t2 - t3
