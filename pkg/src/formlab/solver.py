"""Monge-Ampere type equation [star((alpha + i ddbar u) ^ omega_{n-m-1})]^n = c dV.

The solve goes through the scalar reduction: for u in the constraint space K,
star((alpha + i ddbar u) ^ omega_{n-m-1}) = alpha_omega + A_m(phi) with
phi = -Lambda^{m-1} u / (m-1)!, where A_m(phi) = i ddbar phi for m >= 2 and
A_1(phi) = i ddbar phi + (Delta'' phi) omega. The scalar equation
n! det R(phi) = c v, R = -i coeff(alpha_omega + A_m phi), dV = v prod(i dz ^ dzbar),
is solved by damped Newton with GMRES and a Fourier preconditioner.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .exterior import Form, FormError, HermitianMetric, dim, left_wedge_matrix
from .hodge import decomposition_matrices, lambda_power_matrix, star_matrix
from .torus import (
    ConstraintSubspaceK,
    FormField,
    PreconditionError,
    _dbar_laplacian_symbol_scalar,
    _hermitian_field,
    check_weakly_positive_field,
    d_antiholo,
    d_holo,
    dbar_laplacian,
    i_ddbar,
    lambda_field,
)

EIG_FLOOR = 1e-8

__all__ = [
    "SolverError",
    "SolveReport",
    "alpha_omega",
    "solve_ma",
    "solve_ma_direct",
    "reconstruction_symbols",
    "form_lhs_ratio",
    "reconstruct_u",
    "uniqueness_gap",
    "jacobian_fd_check",
    "form_equation_residual",
    "normalization_constant",
    "ScalarMA",
]


class SolverError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


def alpha_omega(alpha, metric, m):
    """star(alpha ^ omega_{n-m-1}) as a (1,1)-field."""
    n = metric.n
    if alpha.bidegree != (m, m):
        raise FormError(f"alpha must have bidegree ({m},{m})")
    W = left_wedge_matrix(metric.power(n - m - 1), m, m)
    return alpha.apply(star_matrix(metric, n - 1, n - 1) @ W, 1, 1)


def normalization_constant(alpha_w, dV):
    """c = integral of (alpha_omega)^n over integral of dV, both against prod(i dz ^ dzbar)."""
    H = _hermitian_field(alpha_w)
    n = alpha_w.n
    top = math.factorial(n) * np.linalg.det(H).real
    return float(np.mean(top) / np.mean(dV.scalar_values().real))


def _max_closed_defect(f):
    out = 0.0
    if f.p < f.n:
        out = max(out, d_holo(f).sup_norm())
    if f.q < f.n:
        out = max(out, d_antiholo(f).sup_norm())
    return out


class ScalarMA:
    """Pointwise pieces of the reduced scalar equation for one (alpha_omega, metric, m)."""

    def __init__(self, alpha_w, metric, m):
        self.grid, self.metric, self.m, self.n = alpha_w.grid, metric, m, metric.n
        self.alpha_w = alpha_w
        self.Ha = _hermitian_field(alpha_w)
        g = self.grid
        self.s = g.dz_symbols
        self.sb = g.dzbar_symbols
        self.lap = _dbar_laplacian_symbol_scalar(metric, g) if m == 1 else None

    def A_hermitian(self, phi, hat=None):
        """Hermitian matrix field of -i coeff(A_m phi) for a real function array phi."""
        g, n = self.grid, self.n
        if hat is None:
            hat = g.fft_scalar(phi)
        D = np.empty(g.shape + (n, n), dtype=complex)
        for j in range(n):
            for k in range(j, n):
                v = g.ifft_scalar(hat * self.s[j] * self.sb[k])
                D[..., j, k] = v
                if k != j:
                    D[..., k, j] = np.conj(v)
                else:
                    D[..., j, j] = v.real
        if self.m == 1:
            lp = g.ifft_scalar(hat * self.lap).real
            D += lp[..., None, None] * self.metric.matrix
        return D

    def R(self, phi):
        return self.Ha + self.A_hermitian(phi)

    def logdet(self, R):
        sign, ld = np.linalg.slogdet(R)
        return ld

    def min_eig(self, R):
        return float(np.min(np.linalg.eigvalsh(R)[..., 0]))

    def jvp(self, Rinv, psi):
        """tr(R^{-1} H(A_m psi))."""
        D = self.A_hermitian(psi)
        return np.einsum("...kj,...jk->...", Rinv, D).real

    def precond_symbol(self, Rinv_mean):
        g, n = self.grid, self.n
        L = np.zeros(g.shape, dtype=complex)
        for j in range(n):
            for k in range(n):
                L = L + Rinv_mean[k, j] * self.s[j] * self.sb[k]
        if self.m == 1:
            L = L + self.lap * np.trace(Rinv_mean @ self.metric.matrix)
        L = np.broadcast_to(L, g.shape).real.copy()
        L[(0,) * g.ndim] = -1.0  # mode zero carries the constant shift
        return L

    @property
    def resolved(self):
        """Mask of Fourier modes with no Nyquist component."""
        g = self.grid
        keep = np.ones(g.shape, dtype=bool)
        for a in range(g.ndim):
            keep &= ~np.broadcast_to(g._nyq[a], g.shape)
        return keep


@dataclass
class SolveReport:
    phi: FormField
    u: FormField
    c: float
    residual_sup: float
    iterations: list
    positivity_margin: float
    status: str
    m: int
    n: int
    N: int
    c_normalization: float = float("nan")
    form_residual_sup: float = float("nan")
    k_defect: float = 0.0
    aliasing_floor: float = float("nan")
    alpha_u_positive: object = None
    message: str = ""
    elapsed: float = 0.0

    @property
    def converged(self):
        return self.status == "converged"

    def to_dict(self, field_refs=None):
        field_refs = field_refs or {}
        return {
            "schema": "formlab.solve-report/1",
            "status": self.status,
            "message": self.message,
            "n": self.n, "N": self.N, "m": self.m,
            "c": self.c,
            "c_normalization": self.c_normalization,
            "residual_sup": self.residual_sup,
            "form_residual_sup": self.form_residual_sup,
            "positivity_margin": self.positivity_margin,
            "alpha_u_positive": self.alpha_u_positive,
            "k_defect": self.k_defect,
            "aliasing_floor": self.aliasing_floor,
            "iterations": self.iterations,
            "fields": {k: field_refs.get(k) for k in ("phi", "u")},
        }


def _check_preconditions(alpha, dV, metric, m, closed_tol=1e-10, harmonic_tol=1e-8):
    n = metric.n
    if not (1 <= m <= n - 1):
        raise PreconditionError(f"m must satisfy 1 <= m <= n-1 (m={m}, n={n})")
    if dV.bidegree != (n, n):
        raise PreconditionError("dV must be an (n,n)-field")
    if not alpha.is_real(1e-12 * max(1.0, alpha.sup_norm())):
        raise PreconditionError("alpha is not real")
    defect = _max_closed_defect(alpha)
    if defect > closed_tol * max(1.0, alpha.sup_norm()):
        raise PreconditionError(f"d alpha = {defect:.3e} exceeds tolerance", violation=defect)
    v = dV.scalar_values()
    if np.max(np.abs(v.imag)) > 1e-12 * np.max(np.abs(v)) or np.min(v.real) <= 0:
        raise PreconditionError("dV is not a positive volume form", violation=float(np.min(v.real)))
    pos = _strong_positivity_min(alpha)
    if pos is not None and pos <= 0:
        raise PreconditionError(f"alpha is not strongly positive (min test value {pos:.3e})", violation=pos)
    aw = alpha_omega(alpha, metric, m)
    harm = dbar_laplacian(aw, metric).sup_norm()
    if harm > harmonic_tol * max(1.0, aw.sup_norm()):
        raise PreconditionError(f"Delta'' alpha_omega = {harm:.3e} exceeds tolerance", violation=harm)
    return aw


def _strong_positivity_min(f, tol=1e-9):
    """Smallest pointwise strong-positivity test value, exact in bidegrees 0, 1, n-1, n.

    In other bidegrees every grid point goes through the strong-positivity
    verdict; the return value is then +1 (all in), -1 (some out) or None
    (some undetermined).
    """
    n, k = f.n, f.p
    if k in (0, 1, n - 1, n):
        return check_weakly_positive_field(f)
    from .positivity import strong_verdict
    flat = f.values.reshape(len(f.values), -1)
    seen = {}
    worst = 1.0
    for i in range(flat.shape[1]):
        key = tuple(np.round(flat[:, i], 12))
        if key in seen:
            continue
        vd = strong_verdict(Form.from_vector(n, k, k, flat[:, i]), tol=tol, definite=True)
        seen[key] = vd.status
        if vd.is_out:
            return -1.0
        if not vd.is_in:
            worst = None
    return worst


def _newton(sm, phi0, s0, logv, tol, max_iter, gmres_tol, trace, tstamp):
    g = sm.grid
    keep = sm.resolved
    phi, s = phi0.copy(), s0

    def resid(F):
        # Nyquist modes of F are out of reach of A_m (zero symbol); converge on the rest
        Fp = g.ifft_scalar(g.fft_scalar(F) * keep).real
        return float(np.max(np.abs(Fp)))

    R = sm.R(phi)
    F = sm.logdet(R) - logv - s
    res = resid(F)
    for it in range(max_iter):
        if res <= tol:
            return phi, s, res, True, "ok"
        Rinv = np.linalg.inv(R)
        Rm = Rinv.reshape(-1, sm.n, sm.n).mean(axis=0)
        with np.errstate(divide="ignore"):
            Linv = np.where(keep, 1.0 / sm.precond_symbol(Rm), 0.0)

        def M(y):
            return g.ifft_scalar(g.fft_scalar(y.reshape(g.shape)) * Linv).real

        def J(x):
            # Galerkin: both domain and range restricted to the resolved modes
            x = x.reshape(g.shape)
            xm = x.mean()
            r = sm.jvp(Rinv, x - xm) - xm
            return g.ifft_scalar(g.fft_scalar(r) * keep).real.ravel()

        op = LinearOperator((g.size, g.size), matvec=lambda y: J(M(y)), dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        # Nyquist modes carry no derivative information; drop them from the right side
        b = -g.ifft_scalar(g.fft_scalar(F) * keep).real.ravel()
        rtol = max(gmres_tol, min(1e-2, res))
        y, info = gmres(op, b, rtol=rtol, atol=0.0, restart=60, maxiter=10,
                        callback=cb, callback_type="pr_norm")
        x = M(y)
        dpsi = x - x.mean()
        ds = float(x.mean())
        t = 1.0
        accepted = False
        while t >= 2.0 ** -20:
            phi_t = phi + t * dpsi
            R_t = sm.R(phi_t)
            me = sm.min_eig(R_t)
            if me >= EIG_FLOOR:
                F_t = sm.logdet(R_t) - logv - (s + t * ds)
                res_t = resid(F_t)
                if res_t < (1 - 1e-4 * t) * res or res_t <= tol:
                    accepted = True
                    break
            t *= 0.5
        trace.append({"iter": len(trace), "continuation_t": tstamp, "residual": res,
                      "step": t if accepted else 0.0, "gmres_iters": count[0], "gmres_info": int(info),
                      "min_eig": me})
        if not accepted:
            return phi, s, res, False, "stagnation"
        phi, s, R, F, res = phi_t, s + t * ds, R_t, F_t, res_t
    return phi, s, res, res <= tol, "ok" if res <= tol else "max-iter"


def solve_ma(alpha, dV, metric, m, tol=1e-10, max_iter=40, gmres_tol=1e-12, check=True,
             prescribed=None, phi0=None, min_step=1.0 / 64, reconstruct=True):
    """Best-effort solve; returns a SolveReport whose status reports what was achieved."""
    t0 = time.time()
    n = metric.n
    grid = alpha.grid
    aw = _check_preconditions(alpha, dV, metric, m) if check else alpha_omega(alpha, metric, m)
    sm = ScalarMA(aw, metric, m)
    v = dV.scalar_values().real
    logv = np.log(v)
    c_norm = normalization_constant(aw, dV)
    # trivial right side: v0 = n! det(H_alpha_omega), solved by phi = 0 with c = 1
    logv0 = np.log(math.factorial(n)) + sm.logdet(sm.Ha)
    trace = []
    phi = np.zeros(grid.shape) if phi0 is None else np.asarray(phi0.values[0].real if isinstance(phi0, FormField) else phi0, dtype=float)
    phi = phi - phi.mean()
    if sm.min_eig(sm.R(phi)) < EIG_FLOOR:
        raise SolverError("initial guess is not admissible")

    def s_init(logv_t, ph):
        return float(np.mean(sm.logdet(sm.R(ph)) - logv_t))

    t_done, step = 0.0, 1.0
    ok, why = False, ""
    s = 0.0
    while True:
        # geometric interpolation dV_t = dV_0^{1-t} dV^t
        t_try = min(1.0, t_done + step)
        logv_t = logv if t_try >= 1 else (1 - t_try) * logv0 + t_try * logv
        phi_n, s_n, res, ok, why = _newton(sm, phi, s_init(logv_t, phi), logv_t, tol, max_iter, gmres_tol, trace, t_try)
        if ok:
            phi, s, t_done = phi_n, s_n, t_try
            if t_done >= 1.0:
                break
            step = min(2 * step, 1.0)
        else:
            step *= 0.5
            if step < min_step:
                break
    R = sm.R(phi)
    margin = sm.min_eig(R)
    c = math.factorial(n) * math.exp(s)
    res_abs = float(np.max(np.abs(math.factorial(n) * np.linalg.det(R).real - c * v)))
    F = sm.logdet(R) - logv - s
    alias = float(np.max(np.abs(F - grid.ifft_scalar(grid.fft_scalar(F) * sm.resolved).real)))
    phi_f = FormField.scalar(grid, phi)
    if ok and t_done >= 1.0:
        status, msg = "converged", ""
    elif t_done > 0:
        status, msg = "continuation-failed", f"reached t={t_done:.4f} ({why})"
    else:
        status, msg = ("positivity-lost" if why == "stagnation" else why), f"Newton failed: {why}"
    if reconstruct:
        u, defect = reconstruct_u(phi_f, prescribed, metric, m)
    else:
        u, defect = FormField.zeros(grid, m - 1, m - 1), float("nan")
    rep = SolveReport(phi=phi_f, u=u, c=c, residual_sup=res_abs, iterations=trace, positivity_margin=margin,
                      status=status, m=m, n=n, N=grid.N, c_normalization=c_norm, k_defect=defect,
                      aliasing_floor=alias, message=msg)
    if reconstruct:
        rep.form_residual_sup = form_equation_residual(alpha, u, dV, c, metric, m)
        full = alpha + i_ddbar(u).real_part()
        pos = _strong_positivity_min(full)
        rep.alpha_u_positive = None if pos is None else bool(pos > 0)
        if status == "converged":
            if defect > 1e-8:
                rep.status = "scalar-converged"
                rep.message = f"phi solved but u is not in K: defect {defect:.3e}"
            elif margin <= 0:
                rep.status = "positivity-lost"
    rep.elapsed = time.time() - t0
    return rep


def reconstruction_symbols(grid, metric, m, chunk=4096):
    """Per-mode vectors W with u_hat = W * phi_hat for u = reconstruct_u(phi, None).

    Linear in phi, so the K-basis least-squares fit is done once and reused.
    """
    n = metric.n
    r = m - 1
    d = dim(n, r, r)
    if m == 1:
        return -np.ones((1,) + grid.shape, dtype=complex)
    D = decomposition_matrices(metric, r)
    A = np.vstack([lambda_power_matrix(metric, r, r, r)] + [D[l] for l in range(r - 1)])
    e = np.zeros(A.shape[0], dtype=complex)
    e[0] = -math.factorial(m - 1)
    K = ConstraintSubspaceK(grid, metric, m, chunk=chunk)
    W = np.zeros((d, grid.size), dtype=complex)
    for idx in K._chunks():
        Zx, _ = K.basis_chunk(idx)
        AZ = np.einsum("ab,mbc->mac", A, Zx)
        coef = np.einsum("mca,a->mc", np.linalg.pinv(AZ, rcond=1e-10), e)
        W[:, idx] = np.einsum("mac,mc->am", Zx, coef)
    return W.reshape((d,) + grid.shape)


def form_lhs_ratio(alpha, u, dV, metric, m):
    """[star((alpha + i ddbar u) ^ omega_{n-m-1})]^n / dV, pointwise (real part)."""
    n = metric.n
    beta = alpha_omega(alpha + i_ddbar(u), metric, m)
    top = beta
    for _ in range(n - 1):
        top = top.wedge(beta)
    return (top.scalar_values() / dV.scalar_values()).real


def solve_ma_direct(alpha, dV, metric, m, tol=1e-9, check=True, min_step=1.0 / 64, max_iter=40):
    """Cross-check mode: Newton-Krylov on the full form equation with u parametrized over K.

    The residual is evaluated through the star / wedge pipeline, not the scalar
    reduction, so agreement with ``solve_ma`` checks the reduction itself.
    """
    from scipy.optimize import NoConvergence, newton_krylov
    t0 = time.time()
    n = metric.n
    grid = alpha.grid
    aw = _check_preconditions(alpha, dV, metric, m) if check else alpha_omega(alpha, metric, m)
    sm = ScalarMA(aw, metric, m)
    keep = sm.resolved
    W = reconstruction_symbols(grid, metric, m)
    v = dV.scalar_values().real
    logv = np.log(v)
    logv0 = np.log(math.factorial(n)) + sm.logdet(sm.Ha)
    lognf = math.log(math.factorial(n))

    def u_of(phi):
        return FormField.from_hat(grid, m - 1, m - 1, W * grid.fft_scalar(phi)[None]).real_part()

    def make_F(logv_t):
        def F(x):
            x = x.reshape(grid.shape)
            phi, s = x - x.mean(), x.mean()
            ratio = form_lhs_ratio(alpha, u_of(phi), dV, metric, m) * v
            with np.errstate(invalid="ignore", divide="ignore"):
                r = np.log(ratio) - lognf - logv_t - s
            if not np.all(np.isfinite(r)):
                return np.full(grid.size, 1e6)
            return grid.ifft_scalar(grid.fft_scalar(r) * keep).real.ravel()
        return F

    with np.errstate(divide="ignore"):
        Linv = np.where(keep, 1.0 / sm.precond_symbol(np.linalg.inv(sm.Ha.reshape(-1, n, n).mean(axis=0))), 0.0)
    Mop = LinearOperator((grid.size, grid.size), dtype=float,
                         matvec=lambda y: grid.ifft_scalar(grid.fft_scalar(y.reshape(grid.shape)) * Linv).real.ravel())
    x = np.zeros(grid.size)
    x[:] = float(np.mean(sm.logdet(sm.Ha) - logv0 + lognf))
    t_done, step, trace, ok = 0.0, 1.0, [], False
    while True:
        t_try = min(1.0, t_done + step)
        logv_t = logv if t_try >= 1 else (1 - t_try) * logv0 + t_try * logv
        F = make_F(logv_t)
        try:
            x_new = newton_krylov(F, x, inner_M=Mop, f_tol=tol, maxiter=max_iter, method="gmres",
                                  line_search="armijo")
            res = float(np.max(np.abs(F(x_new))))
            good = res <= tol and sm.min_eig(sm.R(x_new.reshape(grid.shape) - x_new.mean())) >= EIG_FLOOR
        except (NoConvergence, ValueError, np.linalg.LinAlgError):
            good, res = False, float("nan")
        trace.append({"continuation_t": t_try, "residual": res, "accepted": bool(good)})
        if good:
            x, t_done = x_new, t_try
            if t_done >= 1.0:
                ok = True
                break
            step = min(2 * step, 1.0)
        else:
            step *= 0.5
            if step < min_step:
                break
    x = x.reshape(grid.shape)
    phi = x - x.mean()
    c = math.factorial(n) * math.exp(float(x.mean()))
    phi_f = FormField.scalar(grid, phi)
    u = u_of(phi)
    R = sm.R(phi)
    rep = SolveReport(phi=phi_f, u=u, c=c,
                      residual_sup=float(np.max(np.abs(math.factorial(n) * np.linalg.det(R).real - c * v))),
                      iterations=trace, positivity_margin=sm.min_eig(R),
                      status="converged" if ok else ("continuation-failed" if t_done > 0 else "max-iter"),
                      m=m, n=n, N=grid.N, c_normalization=normalization_constant(aw, dV),
                      message="" if ok else f"reached t={t_done:.4f}")
    rep.form_residual_sup = form_equation_residual(alpha, u, dV, c, metric, m)
    rep.k_defect = max(ConstraintSubspaceK(grid, metric, m).residuals(u).values()) if m > 1 else 0.0
    rep.elapsed = time.time() - t0
    return rep


def form_equation_residual(alpha, u, dV, c, metric, m):
    """sup |[star((alpha + i ddbar u) ^ omega_{n-m-1})]^n - c dV| in prod(i dz ^ dzbar) units."""
    n = metric.n
    beta = alpha_omega(alpha + i_ddbar(u), metric, m)
    top = beta
    for _ in range(n - 1):
        top = top.wedge(beta)
    return float(np.max(np.abs(top.scalar_values() - c * dV.scalar_values())))


def reconstruct_u(phi, prescribed, metric, m, chunk=4096):
    """u in K with Lambda^{m-1} u = -(m-1)! phi and prescribed lower primitive components.

    Per Fourier mode, the coefficients of u over a basis of K are fitted by least
    squares. Returns (u, defect) where defect is the sup norm of the misfit.
    """
    grid, n = phi.grid, metric.n
    prescribed = prescribed or {}
    if m == 1:
        if prescribed:
            raise FormError("m = 1 has no lower primitive components")
        return -phi, 0.0
    r = m - 1
    if 2 * r > n:
        raise FormError("reconstruction needs 2(m-1) <= n")
    D = decomposition_matrices(metric, r)
    rows = [lambda_power_matrix(metric, r, r, r)]
    rhs = [-math.factorial(m - 1) * phi.hat.reshape(1, -1)]
    for l in range(r - 1):
        target = prescribed.get(l)
        if target is None:
            target = FormField.zeros(grid, r - l, r - l)
        if target.bidegree != (r - l, r - l):
            raise FormError(f"prescribed component {l} must have bidegree ({r - l},{r - l})")
        if lambda_field(target, metric).sup_norm() > 1e-10 * max(1.0, target.sup_norm()):
            raise FormError(f"prescribed component {l} is not primitive")
        rows.append(D[l])
        rhs.append(target.hat.reshape(D[l].shape[0], -1))
    A = np.vstack(rows)
    B = np.vstack(rhs)
    K = ConstraintSubspaceK(grid, metric, m, chunk=chunk)
    d = dim(n, r, r)
    out = np.zeros((d, grid.size), dtype=complex)
    for idx in K._chunks():
        Zx, _ = K.basis_chunk(idx)
        AZ = np.einsum("ab,mbc->mac", A, Zx)
        coef = np.einsum("mca,am->mc", np.linalg.pinv(AZ, rcond=1e-10), B[:, idx])
        out[:, idx] = np.einsum("mac,mc->am", Zx, coef)
    u = FormField.from_hat(grid, r, r, out.reshape((d,) + grid.shape))
    if phi.values.imag.max(initial=0) == 0 and u.is_real(1e-9 * max(1.0, u.sup_norm())):
        u = u.real_part()
    mis = [(lambda_field(u, metric, r) + phi * math.factorial(m - 1)).sup_norm()]
    for l in range(r - 1):
        target = prescribed.get(l) or FormField.zeros(grid, r - l, r - l)
        mis.append((u.apply(D[l], r - l, r - l) - target).sup_norm())
    res = K.residuals(u)
    defect = max(mis + list(res.values()))
    return u, float(defect)


def uniqueness_gap(u1, u2, metric, m, reports=None, tol=1e-6):
    """Sup deviation of the top primitive component of u1 - u2 from its mean."""
    if reports is not None:
        for rep in reports:
            if rep.residual_sup > tol:
                raise SolverError(f"input is not a solution (residual {rep.residual_sup:.3e})")
    if u1.bidegree != (m - 1, m - 1) or u2.bidegree != u1.bidegree:
        raise FormError("bidegree mismatch")
    diff = u1 - u2
    if m == 1:
        top = diff.values[0]
    else:
        top = diff.apply(decomposition_matrices(metric, m - 1)[m - 1], 0, 0).values[0]
    return float(np.max(np.abs(top - top.mean())))


def jacobian_fd_check(alpha_w, phi, psi, metric, m, h=1e-5):
    """Relative mismatch between the Newton linearization of log det and central differences."""
    sm = ScalarMA(alpha_w, metric, m)
    R = sm.R(phi)
    lin = sm.jvp(np.linalg.inv(R), psi)
    fd = (sm.logdet(sm.R(phi + h * psi)) - sm.logdet(sm.R(phi - h * psi))) / (2 * h)
    return float(np.max(np.abs(lin - fd)) / max(np.max(np.abs(lin)), 1e-300))
