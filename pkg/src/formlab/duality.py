"""Separation, intersection pairings, constructive representatives and bigness witnesses on tori.

On a flat torus with constant Kaehler metric, harmonic representatives are the
Fourier mode-zero parts, and d-closed forms of mean zero are i ddbar-exact, so
the searches below reduce to mode-by-mode linear algebra plus pointwise
eigenvalue checks in the bidegrees where those checks are exact (1 and n-1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .exterior import Form, FormError, conjugate, left_wedge_matrix, wedge
from .hodge import euclidean_star_matrix, star_matrix
from .positivity import hermitian_matrix, pairing
from .solver import _max_closed_defect, _strong_positivity_min, alpha_omega
from .torus import (
    FormField,
    PoperatorP,
    PreconditionError,
    _hermitian_field,
    check_weakly_positive_field,
    d_antiholo,
    d_holo,
    dbar_laplacian,
    i_ddbar,
    integrate_top,
    min_eigenvalue_field,
    solve_i_ddbar,
    volume,
)

S_CERT = "S-certificate"
OMEGA_CERT = "Omega-certificate"

__all__ = [
    "S_CERT",
    "OMEGA_CERT",
    "SeparationUndecided",
    "SeparationCertificate",
    "lamari_separate",
    "PairingReport",
    "intersection_pairing",
    "pairing_lhs",
    "constructive_representative",
    "BignessError",
    "BignessWitness",
    "bigness_witness",
    "holder_chain",
]


class SeparationUndecided(RuntimeError):
    def __init__(self, message, interval):
        super().__init__(message)
        self.interval = interval


class BignessError(RuntimeError):
    def __init__(self, message, best_delta=None):
        super().__init__(message)
        self.best_delta = best_delta


def _positivity_value(f):
    """Exact pointwise minimum of the star-associated Hermitian form (bidegrees 1 and n-1)."""
    return check_weakly_positive_field(f)


def _integral_pairing(a, b):
    return integrate_top(a.wedge(b)).real


@dataclass
class SeparationCertificate:
    kind: str
    theta: FormField
    m: int
    margin: float
    S: FormField = None
    Omega: FormField = None
    pairing: float = None
    basis_size: int = None

    def verify(self, tol=1e-9):
        """Re-check the defining inequalities from the payload alone."""
        if self.kind == S_CERT:
            if self.S is None or self.Omega is not None:
                return False
            if not self.S.is_real(1e-12 * max(1.0, self.S.sup_norm())):
                return False
            val = _positivity_value(self.theta + i_ddbar(self.S).real_part())
            return bool(val >= -tol)
        if self.kind == OMEGA_CERT:
            if self.Omega is None or self.S is not None:
                return False
            Om = self.Omega
            if 0 < Om.p < Om.n and d_holo(d_antiholo(Om)).sup_norm() > 1e-10 * max(1.0, Om.sup_norm()):
                return False
            if check_weakly_positive_field(Om) < -tol:
                return False
            return bool(_integral_pairing(self.theta, Om) < -tol)
        return False

    def to_dict(self, field_refs=None):
        field_refs = field_refs or {}
        return {"schema": "formlab.separation-certificate/1", "kind": self.kind, "m": self.m,
                "margin": self.margin, "pairing": self.pairing, "basis_size": self.basis_size,
                "fields": {k: field_refs.get(k) for k in ("theta", "S", "Omega")}}


def _negative_direction_form(theta0, n, m):
    """Constant weakly positive (n-m,n-m)-form pairing most negatively with theta0."""
    # reduce to a (1,1) Hermitian matrix: theta0 itself (m = 1) or its Euclidean star (m = n-1)
    if m == 1:
        h = theta0
    else:
        h = Form.from_vector(n, 1, 1, euclidean_star_matrix(n, m, m) @ theta0.to_vector())
    w, V = np.linalg.eigh(hermitian_matrix(h))
    best = None
    for v in (V[:, 0], V[:, 0].conj()):
        e = Form(n, 1, 0, {((j + 1,), ()): v[j] for j in range(n)})
        simple = wedge(e, conjugate(e)) * 1j  # i e ^ ebar, positive (1,1)
        if m == 1:
            Om = Form.from_vector(n, n - 1, n - 1, euclidean_star_matrix(n, 1, 1) @ simple.to_vector())
        else:
            Om = simple
        val = pairing(theta0, Om).real
        if best is None or val < best[1]:
            best = (Om, val)
    return best


def lamari_separate(theta, metric, m, basis_size=None, margin=1e-9, check=True):
    """Return an S-certificate or an Omega-certificate for theta; raise if undecided.

    The S search fits i ddbar S to the non-harmonic part of theta over the modes
    with every |k| <= basis_size. That choice maximizes the smallest pointwise
    eigenvalue whenever the fit is exact, since averaging over the torus bounds
    the minimum by the eigenvalue of the mean.
    """
    n = metric.n
    if m not in (1, n - 1) or not (1 <= m <= n - 1):
        raise FormError("lamari_separate handles m = 1 or m = n-1, where pointwise positivity is exact")
    if theta.bidegree != (m, m):
        raise FormError(f"theta must have bidegree ({m},{m})")
    if check:
        if not theta.is_real(1e-12 * max(1.0, theta.sup_norm())):
            raise PreconditionError("theta is not real")
        dfct = _max_closed_defect(theta)
        if dfct > 1e-10 * max(1.0, theta.sup_norm()):
            raise PreconditionError(f"d theta = {dfct:.3e} exceeds tolerance", violation=dfct)
    g = theta.grid
    kmax = basis_size if basis_size is not None else g.N // 3
    theta0 = theta.mean()
    lam0 = _positivity_value(FormField.constant(g, theta0))
    # S search
    fluct = theta - theta0
    if fluct.sup_norm() == 0:
        S = FormField.zeros(g, m - 1, m - 1)
    else:
        S, _ = solve_i_ddbar(-fluct, kmax=kmax)
    val = _positivity_value(theta + i_ddbar(S).real_part())
    if val >= -margin:
        return SeparationCertificate(S_CERT, theta, m, margin=float(val), S=S, basis_size=kmax)
    # Omega search: omega_{n-m} first, then the most negative eigen-direction of the harmonic part
    candidates = [metric.power(n - m)]
    Om_e, _ = _negative_direction_form(theta0, n, m)
    candidates.append(Om_e)
    for Om in candidates:
        Omf = FormField.constant(g, Om)
        p = _integral_pairing(theta, Omf)
        if p < -margin and check_weakly_positive_field(Omf) >= -1e-12:
            return SeparationCertificate(OMEGA_CERT, theta, m, margin=float(-p), Omega=Omf, pairing=float(p),
                                         basis_size=kmax)
    raise SeparationUndecided(
        f"no certificate within budget: best S value {val:.3e}, harmonic eigenvalue {lam0:.3e}",
        interval=(float(val), float(lam0)))


@dataclass
class PairingReport:
    lhs: float
    rhs: float
    hypothesis_holds: bool
    C: float = None
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def to_dict(self):
        return {"schema": "formlab.pairing-report/1", "lhs": self.lhs, "rhs": self.rhs,
                "hypothesis_holds": self.hypothesis_holds, "C": self.C,
                "checks": self.checks, "violations": self.violations}


def _power_field(f, k):
    n = f.n
    out = FormField.constant(f.grid, Form.scalar(n))
    for _ in range(k):
        out = out.wedge(f)
    return out


def pairing_lhs(alpha_w, beta, m):
    """(1/(n-m)!) integral of (alpha_omega)^{n-m} ^ beta."""
    n = alpha_w.n
    return integrate_top(_power_field(alpha_w, n - m).wedge(beta)).real / math.factorial(n - m)


def _lower_constant(beta, metric, m):
    """Largest C with beta - C omega_m strongly positive pointwise (bidegrees 1 and n-1)."""
    n = metric.n
    if m == 1:
        return float(np.min(min_eigenvalue_field(beta, metric)))
    if m == n - 1:
        sb = beta.apply(star_matrix(metric, n - 1, n - 1), 1, 1)
        return float(np.min(min_eigenvalue_field(sb, metric)))
    return None


def intersection_pairing(alpha, beta, metric, m, check=True, tol=1e-10):
    n = metric.n
    aw = alpha_omega(alpha, metric, m)
    checks, violations = {}, []
    checks["d_alpha"] = _max_closed_defect(alpha)
    if checks["d_alpha"] > tol * max(1.0, alpha.sup_norm()):
        violations.append(f"d alpha = {checks['d_alpha']:.3e}")
    pos = _strong_positivity_min(alpha)
    checks["alpha_positivity"] = pos
    if pos is not None and pos <= 0:
        violations.append(f"alpha not strongly positive ({pos:.3e})")
    checks["laplacian_alpha_omega"] = dbar_laplacian(aw, metric).sup_norm()
    if checks["laplacian_alpha_omega"] > 1e-8 * max(1.0, aw.sup_norm()):
        violations.append(f"Delta'' alpha_omega = {checks['laplacian_alpha_omega']:.3e}")
    C = _lower_constant(beta, metric, m)
    checks["beta_lower_constant"] = C
    if C is not None and C <= 0:
        violations.append(f"beta >= C omega_m only with C = {C:.3e}")
    checks["ddbar_beta"] = d_holo(d_antiholo(beta)).sup_norm() if 0 < m < n else 0.0
    if checks["ddbar_beta"] > tol * max(1.0, beta.sup_norm()):
        violations.append(f"ddbar beta = {checks['ddbar_beta']:.3e}")
    if check and violations:
        raise PreconditionError("hypotheses fail: " + "; ".join(violations))
    lhs = pairing_lhs(aw, beta, m)
    rhs = integrate_top(_power_field(aw, n)).real / math.factorial(n)
    return PairingReport(lhs=float(lhs), rhs=float(rhs), hypothesis_holds=bool(lhs < rhs), C=C,
                         checks=checks, violations=violations)


def constructive_representative(alpha0, Om0, metric, m, tol=1e-11, check=True, maxiter=200):
    """Solve P(f) = g - I0/Vol and return (f, margin, info).

    g = alpha0 ^ omega^{m-1} ^ Om0 / dV_omega and I0 = integral of the numerator.
    margin is the pointwise minimum of (alpha0 + i ddbar f) ^ omega^{m-1} ^ Om0 / dV_omega,
    evaluated through wedge products independent of the operator P.
    """
    n = metric.n
    g_ = alpha0.grid
    if alpha0.bidegree != (1, 1):
        raise FormError("alpha0 must be a (1,1)-field")
    if check:
        dfct = _max_closed_defect(alpha0)
        if dfct > 1e-10 * max(1.0, alpha0.sup_norm()):
            raise PreconditionError(f"d alpha0 = {dfct:.3e} exceeds tolerance", violation=dfct)
    P = PoperatorP(metric, Om0, m, check=check)
    W = Form.scalar(n)
    for _ in range(m - 1):
        W = wedge(W, metric.form())
    dv = (1j ** (n * n)) * np.linalg.det(metric.matrix).real

    def density(a):
        return (a.wedge(W).wedge(Om0).values[0] / dv).real

    gfun = density(alpha0)
    vol = volume(metric)
    I0 = float(vol * np.mean(gfun))
    if I0 <= 0:
        raise PreconditionError(f"I0 = {I0:.3e} is not positive")
    rhs = gfun - I0 / vol
    compat = float(vol * np.mean(rhs))
    keep = np.ones(g_.shape, dtype=bool)
    for a in range(g_.ndim):
        keep &= ~np.broadcast_to(g_._nyq[a], g_.shape)
    L = P.mean_symbol().real.copy()
    L[(0,) * g_.ndim] = 1.0
    with np.errstate(divide="ignore"):
        Linv = np.where(keep & (np.abs(L) > 1e-14), 1.0 / L, 0.0)

    def proj(y):
        return g_.ifft_scalar(g_.fft_scalar(y) * keep).real

    def M(y):
        return g_.ifft_scalar(g_.fft_scalar(y.reshape(g_.shape)) * Linv).real

    def A(x):
        x = x.reshape(g_.shape)
        xm = x.mean()
        return proj(P.apply_values(x - xm).real + xm).ravel()

    op = LinearOperator((g_.size, g_.size), matvec=lambda y: A(M(y)), dtype=float)
    b = proj(rhs).ravel()
    y, info = gmres(op, b, rtol=tol, atol=0.0, restart=80, maxiter=maxiter)
    x = M(y).reshape(g_.shape)
    f = x - x.mean()
    resid = float(np.max(np.abs(P.apply_values(f).real - rhs)))
    ff = FormField.scalar(g_, f)
    margin = float(np.min(density(alpha0 + i_ddbar(ff).real_part())))
    info_d = {"gmres_info": int(info), "I0": I0, "volume": vol, "target_margin": I0 / vol,
              "compatibility_integral": compat, "residual_sup": resid}
    if info != 0:
        info_d["warning"] = "linear solve did not reach the requested tolerance"
    return ff, margin, info_d


@dataclass
class BignessWitness:
    eta: Form
    delta: float
    T_potential: FormField
    T: Form
    pairing: PairingReport
    separation: SeparationCertificate
    potential_residual: float

    def to_dict(self, field_refs=None):
        field_refs = field_refs or {}
        return {"schema": "formlab.bigness-witness/1", "eta": self.eta.to_dict(), "delta": self.delta,
                "T": self.T.to_dict(), "potential_residual": self.potential_residual,
                "pairing": self.pairing.to_dict(), "separation": self.separation.to_dict(),
                "fields": {"T_potential": field_refs.get("T_potential")}}


def _generalized_min(Hh, Ha):
    """min over the grid of the smallest eigenvalue of Hh relative to Ha(x)."""
    L = np.linalg.cholesky(Ha)
    Li = np.linalg.inv(L)
    X = Li @ Hh @ np.conj(np.swapaxes(Li, -1, -2))
    return float(np.min(np.linalg.eigvalsh(X)[..., 0]))


def bigness_witness(alpha, beta, metric, check=True):
    """Witness that [(alpha_omega)_{n-1} - beta] contains T >= delta (alpha_omega)_{n-1}, delta > 0."""
    n = metric.n
    m = n - 1
    if alpha.bidegree != (m, m) or beta.bidegree != (m, m):
        raise FormError(f"alpha and beta must have bidegree ({m},{m})")
    rep = intersection_pairing(alpha, beta, metric, m, check=check)
    if not rep.hypothesis_holds:
        raise BignessError(f"intersection hypothesis fails: lhs {rep.lhs:.6g} >= rhs {rep.rhs:.6g}")
    aw = alpha_omega(alpha, metric, m)
    a = _power_field(aw, n - 1) * (1.0 / math.factorial(n - 1))
    D = a - beta
    try:
        cert = lamari_separate(D, metric, m, check=check)
    except SeparationUndecided as exc:
        raise BignessError(f"separation undecided: {exc}")
    if cert.kind != S_CERT:
        raise BignessError("the class is not positive modulo i ddbar (Omega-certificate found)",
                           best_delta=-cert.margin)
    h = D.mean()
    Wm = left_wedge_matrix(metric.power(n - 2), 1, 1)
    eta = Form.from_vector(n, 1, 1, np.linalg.solve(Wm, h.to_vector()))
    hf = FormField.constant(D.grid, h)
    if n >= 2 and (D - h).sup_norm() > 0:
        chi, res = solve_i_ddbar(hf - D)
        pres = res.sup_norm()
    else:
        chi, pres = FormField.zeros(D.grid, n - 2, n - 2), 0.0
    # positivity of T - delta a in bidegree (n-1,n-1) through the Euclidean star
    Sm = euclidean_star_matrix(n, m, m)
    Hh = hermitian_matrix(Form.from_vector(n, 1, 1, Sm @ h.to_vector()))
    Ha = _hermitian_field(a.apply(Sm, 1, 1))
    delta = _generalized_min(Hh, Ha)
    if delta <= 0:
        raise BignessError(f"no positive delta: best {delta:.3e}", best_delta=delta)
    return BignessWitness(eta=eta, delta=delta, T_potential=chi, T=h, pairing=rep, separation=cert,
                          potential_residual=pres)


def holder_chain(report, alpha, beta, Om, metric, m):
    """The two inequalities of the Hoelder / pointwise chain on a converged solve.

    The solve must use dV = beta ^ Om. Returns the three quantities
    first >= middle >= last with rho = alpha_omega + A_m(phi) and
    c = integral of rho_n over integral of beta ^ Om.
    """
    from .solver import ScalarMA
    n = metric.n
    aw = alpha_omega(alpha, metric, m)
    sm = ScalarMA(aw, metric, m)
    R = sm.R(report.phi.values[0].real)
    rho = FormField(aw.grid, 1, 1, (1j * R.reshape(R.shape[:-2] + (n * n,))).transpose((-1,) + tuple(range(aw.grid.ndim))))
    vol = volume(metric)
    dv = (1j ** (n * n)) * np.linalg.det(metric.matrix).real

    def ratio(f):
        return (f.values[0] / dv).real

    rho_m = _power_field(rho, m) * (1.0 / math.factorial(m))
    rho_nm = _power_field(rho, n - m) * (1.0 / math.factorial(n - m))
    rho_n = _power_field(rho, n) * (1.0 / math.factorial(n))
    f1 = ratio(rho_m.wedge(Om))
    f2 = ratio(rho_nm.wedge(beta))
    bo = ratio(beta.wedge(Om))
    rn = ratio(rho_n)
    first = (vol * np.mean(f1)) * (vol * np.mean(f2))
    middle = (vol * np.mean(np.sqrt(np.maximum(f1 * f2, 0.0)))) ** 2
    c = float(np.mean(rn) / np.mean(bo))
    last = c * (vol * np.mean(bo)) ** 2
    return {"first": float(first), "middle": float(middle), "last": float(last), "c": c,
            "slack_1": float(first - middle), "slack_2": float(middle - last),
            "pointwise_equation_residual": float(np.max(np.abs(rn - c * bo)))}
