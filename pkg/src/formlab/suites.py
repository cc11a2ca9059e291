"""Verification suites run by ``formlab verify``.

Every property draws its samples from ``numpy.random.default_rng([seed, tag, i])``
where ``tag`` is a CRC of the property name, so a failure can be replayed from
the ``failing_seed`` triple in the report.
"""
from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass

import numpy as np

from .config import SUITES
from .exterior import (
    Form,
    HermitianMetric,
    conjugate,
    dim,
    multi_indices,
    random_form,
    simple_positive_form,
    wedge,
)
from .hodge import (
    decomposition_matrices,
    hodge_star,
    lambda_matrix,
    lambda_power_matrix,
    lefschetz_power_matrix,
    primitive_projector,
    star_matrix,
    star_of_wedge_power,
)
from .oracles import lambda_oracle_matrix, lefschetz_lstsq, shuffle_wedge, star_oracle_matrix

REGISTRY = {}


@dataclass
class Property:
    suite: str
    name: str
    anchor: str
    tol: float
    compare: str  # "<=" : value <= tol passes, ">=" : value >= tol passes
    fn: object
    fixed_count: int | None = None

    @property
    def tag(self):
        return zlib.crc32(f"{self.suite}.{self.name}".encode())


def prop(suite, name, anchor, tol, compare="<=", fixed_count=None):
    def deco(fn):
        REGISTRY[(suite, name)] = Property(suite, name, anchor, tol, compare, fn, fixed_count)
        return fn
    return deco


class Ctx:
    """Per-run state handed to property functions."""

    def __init__(self, cfg, p):
        self.cfg = cfg
        self.p = p
        self.cache = _RUN_CACHE

    def rng(self, i):
        return np.random.default_rng([self.cfg.seed, self.p.tag, i])

    @property
    def n_values(self):
        return list(range(2, self.cfg.n_max + 1))

    def grid_N(self):
        return int(self.cfg.grid["N"])


_RUN_CACHE = {}


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1.0))


def _pick_n(rng, ctx):
    return int(rng.choice(ctx.n_values))


def low_mode_field(grid, p, q, rng, K=1, scale=1.0):
    """Random field with Fourier support in max|k| <= K, sup of order ``scale``."""
    from .torus import FormField
    d = dim(grid.n, p, q)
    hat = np.zeros((d,) + grid.shape, complex)
    mask = grid.max_abs_wavenumber <= K
    cnt = int(mask.sum())
    hat[:, mask] = rng.normal(size=(d, cnt)) + 1j * rng.normal(size=(d, cnt))
    hat *= scale / np.sqrt(cnt) * grid.size
    return FormField.from_hat(grid, p, q, hat)


# ---------------------------------------------------------------- identities

@prop("identities", "wedge_shuffle_oracle", "a^b = signed shuffle sum over dz_I^dzbar_J", 1e-12)
def _wedge_oracle(ctx, i):
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    p1, q1 = rng.integers(0, n + 1, 2)
    p2, q2 = rng.integers(0, n - p1 + 1), rng.integers(0, n - q1 + 1)
    a, b = random_form(n, p1, q1, rng), random_form(n, p2, q2, rng)
    return _rel(wedge(a, b).to_vector(), shuffle_wedge(a, b).to_vector())


@prop("identities", "graded_commutativity", "a^b = (-1)^(deg a deg b) b^a", 1e-13)
def _graded(ctx, i):
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    p1, q1 = rng.integers(0, n + 1, 2)
    p2, q2 = rng.integers(0, n - p1 + 1), rng.integers(0, n - q1 + 1)
    a, b = random_form(n, p1, q1, rng), random_form(n, p2, q2, rng)
    s = (-1) ** (a.degree * b.degree)
    return _rel(wedge(a, b).to_vector(), s * wedge(b, a).to_vector())


@prop("identities", "simple_positive_product", "tau_J = prod_k (i dz_jk ^ dzbar_jk)", 1e-15, fixed_count=1)
def _tau(ctx, i):
    worst = 0.0
    for n in ctx.n_values:
        for m in range(1, n + 1):
            for J in multi_indices(n, m):
                prod = Form.scalar(n)
                for j in J:
                    prod = wedge(prod, Form(n, 1, 1, {((j,), (j,)): 1j}))
                worst = max(worst, _rel(simple_positive_form(J, n).to_vector(), prod.to_vector()))
    return worst


@prop("identities", "hodge_star_oracle", "u ^ *conj(v) = <u,v> dV", 1e-10)
def _star(ctx, i):
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    p, q = (int(x) for x in rng.integers(0, n + 1, 2))
    met = HermitianMetric.random(n, rng)
    u = random_form(n, p, q, rng)
    ref = star_oracle_matrix(met.matrix, p, q) @ u.to_vector()
    return float(np.linalg.norm(hodge_star(u, met).to_vector() - ref) / np.linalg.norm(ref))


@prop("identities", "star_involution", "** = id on (r,r)-forms", 1e-12, fixed_count=1)
def _starstar(ctx, i):
    rng = ctx.rng(i)
    worst = 0.0
    for n in ctx.n_values:
        met = HermitianMetric.random(n, rng)
        for r in range(n + 1):
            S = star_matrix(met, n - r, n - r) @ star_matrix(met, r, r)
            worst = max(worst, _rel(S, np.eye(S.shape[0])))
    return worst


@prop("identities", "lambda_adjoint_oracle", "<L u, v> = <u, Lambda v>", 1e-10)
def _lam(ctx, i):
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    p, q = (int(x) for x in rng.integers(1, n + 1, 2))
    met = HermitianMetric.random(n, rng)
    return _rel(lambda_matrix(met, p, q), lambda_oracle_matrix(met.matrix, p, q))


def _Lpow(met, p, q, s):
    n = met.n
    if p + s > n or q + s > n:
        return np.zeros((dim(n, p + s, q + s) if p + s <= n and q + s <= n else 0, dim(n, p, q)), complex)
    return lefschetz_power_matrix(met, p, q, s)


def commutation_defect_matrix(met, p, q, r):
    """Matrix of [L^r, Lambda] - r(k-n+r-1) L^(r-1) on bidegree (p,q)."""
    n, k = met.n, p + q
    tgt = dim(n, p + r - 1, q + r - 1) if p + r - 1 <= n and q + r - 1 <= n else 0
    out = np.zeros((tgt, dim(n, p, q)), complex)
    if not tgt:
        return out
    if p >= 1 and q >= 1:
        out += _Lpow(met, p - 1, q - 1, r) @ lambda_matrix(met, p, q)
    if p + r <= n and q + r <= n:
        out -= lambda_matrix(met, p + r, q + r) @ lefschetz_power_matrix(met, p, q, r)
    out -= r * (k - n + r - 1) * _Lpow(met, p, q, r - 1)
    return out


def commutation_residual(met, p, q, r, v):
    """|[L^r, Lambda] v - r(k-n+r-1) L^(r-1) v| / |v| for v of bidegree (p,q)."""
    return float(np.linalg.norm(commutation_defect_matrix(met, p, q, r) @ v) / max(np.linalg.norm(v), 1e-300))


@prop("identities", "commutation_Lr_Lambda", "[L^r, Lambda] = r(k-n+r-1) L^(r-1) on k-forms", 1e-10)
def _comm(ctx, i):
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    met = HermitianMetric.random(n, rng)
    k = int(rng.integers(0, 2 * n + 1))
    r = int(rng.integers(1, n + 1))
    worst = 0.0
    for p in range(max(0, k - n), min(n, k) + 1):
        q = k - p
        v = random_form(n, p, q, rng).to_vector()
        worst = max(worst, commutation_residual(met, p, q, r, v))
    return worst


def _decomp_case(rng, ctx):
    n = _pick_n(rng, ctx)
    r = int(rng.integers(1, n // 2 + 1))
    met = HermitianMetric.random(n, rng)
    zeta = random_form(n, r, r, rng)
    return n, r, met, zeta


@prop("identities", "lefschetz_top_components",
      "zeta_prim^(r) = (n-r)!/(n! r!) Lambda^r zeta and zeta_prim^(r-1) from the Lambda^(r-1) formula", 1e-10)
def _l33(ctx, i):
    rng = ctx.rng(i)
    n, r, met, zeta = _decomp_case(rng, ctx)
    D = decomposition_matrices(met, r)
    ref = lefschetz_lstsq(zeta, met.matrix)
    v = zeta.to_vector()
    worst = 0.0
    for l in (r, r - 1):
        worst = max(worst, _rel(D[l] @ v, ref[l].to_vector()))
    rec = sum((_Lpow(met, r - l, r - l, l) @ (D[l] @ v) for l in range(r + 1)))
    return max(worst, _rel(rec, v))


@prop("identities", "primitive_part_of_lambda_power",
      "zeta_prim^(r-1) = (n-r-1)!/((n-2)!(r-1)!) (Lambda^(r-1) zeta)_prim", 1e-10)
def _cor34(ctx, i):
    rng = ctx.rng(i)
    n, r, met, zeta = _decomp_case(rng, ctx)
    coef = math.factorial(n - r - 1) / (math.factorial(n - 2) * math.factorial(r - 1))
    lhs = coef * primitive_projector(met, 1, 1) @ (lambda_power_matrix(met, r, r, r - 1) @ zeta.to_vector())
    ref = lefschetz_lstsq(zeta, met.matrix)[r - 1].to_vector()
    return _rel(lhs, ref)


@prop("identities", "star_of_wedge_power",
      "*(zeta ^ omega_(n-r-1)) = 1/(r-1)! (-Lambda^(r-1) zeta + (1/r)(Lambda^r zeta) omega)", 1e-10)
def _swp(ctx, i):
    rng = ctx.rng(i)
    n, r, met, zeta = _decomp_case(rng, ctx)
    direct = hodge_star(wedge(zeta, met.power(n - r - 1)), met)
    return _rel(star_of_wedge_power(zeta, met, r).to_vector(), direct.to_vector())


@prop("identities", "primitive_star",
      "*v = (-1)^(k(k+1)/2) i^(p-q) omega^(n-p-q) ^ v / (n-p-q)! for primitive v", 1e-10)
def _pstar(ctx, i):
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    met = HermitianMetric.random(n, rng)
    k = int(rng.integers(0, n + 1))
    p = int(rng.integers(0, k + 1))
    q = k - p
    v = Form.from_vector(n, p, q, primitive_projector(met, p, q) @ random_form(n, p, q, rng).to_vector())
    s = n - k
    rhs = (wedge(met.power(s), v) if s else v) * ((-1) ** (k * (k + 1) // 2) * 1j ** (p - q))
    return _rel(hodge_star(v, met).to_vector(), rhs.to_vector())


# ---------------------------------------------------------------- positivity

def random_strong(n, m, rng, terms=3):
    """sum_k c_k prod_(j in J_k) i a_j ^ conj a_j over random (1,0)-covectors, c_k > 0: strongly positive.

    Each term wedges m distinct covectors; a power (i a ^ conj a)^m would vanish for m >= 2.
    """
    from .positivity import form_from_hermitian
    out = Form.zero(n, m, m)
    for _ in range(terms):
        pw = Form.scalar(n)
        for _ in range(m):
            a = rng.normal(size=n) + 1j * rng.normal(size=n)
            pw = wedge(pw, form_from_hermitian(np.outer(a, a.conj())))
        out = out + pw * float(rng.uniform(0.1, 1.0))
    return out


def random_pd(n, rng):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return A @ A.conj().T + 0.3 * np.eye(n)


def holder_triple(rng, n, m):
    from .positivity import form_from_hermitian
    met = HermitianMetric.random(n, rng)
    rho = form_from_hermitian(random_pd(n, rng))
    beta = random_strong(n, m, rng) if m >= 1 else Form.scalar(n, float(rng.uniform(0.1, 2)))
    Om = random_strong(n, n - m, rng) if n - m >= 1 else Form.scalar(n, float(rng.uniform(0.1, 2)))
    return rho, beta, Om, met


@prop("positivity", "holder_gap_nonnegative",
      "(rho_m^Om/omega_n)(rho_(n-m)^beta/rho_n) >= beta^Om/omega_n", -1e-12, compare=">=")
def _holder(ctx, i):
    from .positivity import holder_gap
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    m = int(rng.integers(1, n))
    rho, beta, Om, met = holder_triple(rng, n, m)
    return holder_gap(rho, beta, Om, met, check=False)


def holder_equality_case(rng, n, m):
    """rho, omega diagonal in one frame, beta = tau_J and Om = tau_(J complement)."""
    from .positivity import holder_gap, form_from_hermitian
    lam = rng.uniform(0.5, 2.0, n)
    mu = rng.uniform(0.5, 2.0, n)
    met = HermitianMetric(np.diag(mu).astype(complex))
    rho = form_from_hermitian(np.diag(lam))
    J = tuple(sorted(rng.choice(np.arange(1, n + 1), m, replace=False).tolist()))
    Jc = tuple(j for j in range(1, n + 1) if j not in J)
    return holder_gap(rho, simple_positive_form(J, n), simple_positive_form(Jc, n), met, check=False)


@prop("positivity", "holder_equality_case", "gap = 0 for beta = tau_J, Om = tau_(J^c)", 1e-12)
def _holder_eq(ctx, i):
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    m = int(rng.integers(1, n))
    return abs(holder_equality_case(rng, n, m))


@prop("positivity", "omega_power_strong_in", "omega_m strongly positive", 0.0)
def _om_in(ctx, i):
    from .positivity import strong_verdict
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    m = int(rng.integers(1, n))
    met = HermitianMetric.random(n, rng)
    return 0.0 if strong_verdict(met.power(m), seed=i).is_in else 1.0


@prop("positivity", "negative_simple_out", "pairing(-tau_J, tau_(J^c)) < 0", 0.0)
def _neg_out(ctx, i):
    from .positivity import strong_verdict
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    m = int(rng.integers(1, n))
    J = tuple(sorted(rng.choice(np.arange(1, n + 1), m, replace=False).tolist()))
    v = strong_verdict(simple_positive_form(J, n) * -1.0, seed=i)
    return 0.0 if v.is_out and v.certificate["pairing"] < 0 else 1.0


@prop("positivity", "dictionary_combination_in", "sum c_k (i a_k^conj a_k)^m with c_k >= 0 is certified in", 0.0)
def _nnls_in(ctx, i):
    from .positivity import random_frames, strong_verdict, frame_simple_forms
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    m = int(rng.integers(1, n))
    frames = list(random_frames(n, 3, int(rng.integers(0, 2 ** 31))))
    beta = Form.zero(n, m, m)
    for F in frames:
        rows = frame_simple_forms(F, m)
        w = rng.uniform(0, 1, rows.shape[0])
        beta = beta + Form.from_vector(n, m, m, w @ rows)
    beta = _realify(beta)
    return 0.0 if strong_verdict(beta, frames=frames, seed=i).is_in else 1.0


def _realify(f):
    return (f + conjugate(f)) * 0.5


@prop("positivity", "duality_consistency", "strong(beta) in and weak(Om) in => beta^Om >= 0", -1e-12, compare=">=")
def _dual(ctx, i):
    from .positivity import pairing, strong_verdict, weak_verdict
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    m = int(rng.integers(1, n))
    beta = _realify(random_strong(n, m, rng) + random_form(n, m, m, rng, real=True) * 0.3)
    Om = _realify(random_strong(n, n - m, rng) + random_form(n, n - m, n - m, rng, real=True) * 0.3)
    sv, wv = strong_verdict(beta, seed=i), weak_verdict(Om, seed=i)
    if sv.is_in and wv.is_in:
        return pairing(beta, Om).real
    return 0.0


@prop("positivity", "verdict_determinism", "identical seed => identical verdict, never both in and out", 0.0)
def _det(ctx, i):
    from .positivity import strong_verdict
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    m = int(rng.integers(1, n))
    beta = random_form(n, m, m, rng, real=True) + random_strong(n, m, rng)
    a, b = strong_verdict(beta, seed=i), strong_verdict(beta, seed=i)
    return 0.0 if a.status == b.status and not (a.is_in and b.is_out) else 1.0


@prop("positivity", "m_positivity_signs", "omega is m-positive, -omega is not", 0.0)
def _mpos(ctx, i):
    from .positivity import m_positivity
    rng = ctx.rng(i)
    n = _pick_n(rng, ctx)
    m = int(rng.integers(1, n + 1))
    met = HermitianMetric.random(n, rng)
    ok = m_positivity(met.form(), met, m).is_in and m_positivity(met.form() * -1.0, met, m).is_out
    return 0.0 if ok else 1.0


# ---------------------------------------------------------------- operators

def _torus(ctx, N=None):
    from .torus import TorusGrid
    return TorusGrid(2, N or ctx.grid_N())


def closed_weight(grid, met, m, rng, scale=0.05):
    """Om = omega_(n-m) + dbar xi + conj(dbar xi): ddbar-closed, not d-closed."""
    from .torus import FormField, d_antiholo
    n = grid.n
    xi = low_mode_field(grid, n - m, n - m - 1, rng, K=1)
    e = d_antiholo(xi)
    e = e * (scale * float(np.min(np.linalg.eigvalsh(met.matrix))) / e.sup_norm())
    return FormField.constant(grid, met.power(n - m)) + e + e.conj()


@prop("operators", "kaehler_identity", "[Lambda, dbar] = -i d^*", 1e-10)
def _kahler(ctx, i):
    from .torus import d_antiholo, d_holo_star, lambda_field
    rng = ctx.rng(i)
    g = _torus(ctx)
    met = HermitianMetric.random(2, rng)
    p, q = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    u = low_mode_field(g, p, q, rng, K=2)
    lhs = lambda_field(d_antiholo(u), met)
    if p >= 1 and q >= 1:
        lhs = lhs - d_antiholo(lambda_field(u, met))
    rhs = d_holo_star(u, met) * (-1j)
    return (lhs - rhs).sup_norm() / max(u.sup_norm(), 1e-300)


def adjoint_defect(g, met, m, rng):
    """|<P* phi, psi> - <P phi, psi> - int conj(psi) i(dbar phi^d Om - d phi^dbar Om)^omega^(m-1)|."""
    from .torus import PoperatorP, FormField, d_antiholo, d_holo, integrate_top, volume
    n = g.n
    Om = closed_weight(g, met, m, rng)
    P = PoperatorP(met, Om, m)
    phi = low_mode_field(g, 0, 0, rng, K=2).values[0]
    psi = low_mode_field(g, 0, 0, rng, K=2).values[0]
    vol = volume(met)
    lhs = vol * np.mean((P.adjoint_values(phi) - P.apply_values(phi)) * np.conj(psi))
    F = FormField.scalar(g, phi)
    integrand = (d_antiholo(F).wedge(d_holo(Om)) - d_holo(F).wedge(d_antiholo(Om))) * 1j
    if m > 1:
        integrand = integrand.wedge(FormField.constant(g, met.power(m - 1) * math.factorial(m - 1)))
    rhs = integrate_top(integrand * np.conj(psi))
    return abs(lhs - rhs) / max(abs(rhs), 1.0), d_holo(Om).sup_norm()


@prop("operators", "adjoint_defect_first_order",
      "<P* phi,psi> - <P phi,psi> = int conj(psi) i(dbar phi^d Om - d phi^dbar Om)^omega^(m-1)", 1e-8)
def _adj(ctx, i):
    rng = ctx.rng(i)
    g = _torus(ctx)
    met = HermitianMetric.random(2, rng)
    val, dOm = adjoint_defect(g, met, 1, rng)
    return val if dOm > 1e-6 else 1.0


@prop("operators", "flat_weight_laplacian", "P with Om = omega_(n-m) is (n-1)!/(n-m)! Laplacian''", 1e-10)
def _flat(ctx, i):
    from .torus import PoperatorP, FormField, dbar_laplacian
    rng = ctx.rng(i)
    g = _torus(ctx)
    n = 2
    met = HermitianMetric.random(n, rng)
    m = int(rng.integers(1, 3))
    P = PoperatorP(met, FormField.constant(g, met.power(n - m)), m)
    F = low_mode_field(g, 0, 0, rng, K=2)
    ref = dbar_laplacian(F, met).values[0] * math.factorial(n - 1) / math.factorial(n - m)
    return _rel(P.apply_values(F.values[0]), ref)


def kernel_ratio(g, met, m, rng):
    from .torus import PoperatorP, FormField
    n = g.n
    Om = closed_weight(g, met, m, rng) if m < n else FormField.scalar(g, np.full(g.shape, 1.3))
    s = PoperatorP(met, Om, m).smallest_singular_values(k=3, seed=int(rng.integers(2 ** 31)))
    return float(s[1] / max(s[0], 1e-300)), s


@prop("operators", "kernel_dimension_one", "ker P = constants (sigma_2 / sigma_1 >= 1e3)", 1e3, compare=">=",
      fixed_count=2)
def _kernel(ctx, i):
    rng = ctx.rng(i)
    g = _torus(ctx, N=min(ctx.grid_N(), 8))
    met = HermitianMetric.random(2, rng)
    return kernel_ratio(g, met, i + 1, rng)[0]


@prop("operators", "i_ddbar_preimage", "i d dbar S = theta - mean(theta) for d-closed real theta", 1e-10)
def _iddbar(ctx, i):
    from .torus import i_ddbar, solve_i_ddbar
    rng = ctx.rng(i)
    g = _torus(ctx)
    S0 = low_mode_field(g, 0, 0, rng, K=2).real_part()
    th = i_ddbar(S0)
    S, res = solve_i_ddbar(th)
    return (i_ddbar(S) - th).sup_norm() / max(th.sup_norm(), 1e-300)


# ---------------------------------------------------------------- solver

def manufactured_instance(N, seed=0, n=2, amps=(0.004, 0.003, 0.002)):
    """(alpha, dV, metric, phi_star) with alpha = omega and dV built from a known phi_star."""
    from .solver import ScalarMA, alpha_omega
    from .torus import FormField, TorusGrid
    rng = np.random.default_rng(seed)
    g = TorusGrid(n, N)
    met = HermitianMetric.random(n, rng)
    alpha = FormField.constant(g, met.power(1))
    x = [g.coord(i) for i in range(2 * n)]
    phis = (amps[0] * np.cos(2 * np.pi * (x[0] + x[-1])) + amps[1] * np.sin(2 * np.pi * (2 * x[1] - x[2]))
            + amps[2] * np.cos(2 * np.pi * (x[0] - 2 * x[2] + x[-1])))
    sm = ScalarMA(alpha_omega(alpha, met, 1), met, 1)
    R = sm.R(phis)
    dV = FormField(g, n, n, (math.factorial(n) * np.linalg.det(R).real * 1j ** (n * n))[None])
    return alpha, dV, met, phis


def _solved(ctx):
    key = ("manufactured", ctx.cfg.seed, ctx.grid_N())
    if key not in ctx.cache:
        from .solver import solve_ma
        alpha, dV, met, phis = manufactured_instance(ctx.grid_N(), seed=ctx.cfg.seed)
        t = time.perf_counter()
        rep = solve_ma(alpha, dV, met, 1)
        ctx.cache[key] = (alpha, dV, met, phis, rep, time.perf_counter() - t)
    return ctx.cache[key]


@prop("solver", "manufactured_potential", "phi - phi_star constant", 1e-6, fixed_count=1)
def _man_phi(ctx, i):
    alpha, dV, met, phis, rep, _ = _solved(ctx)
    if not rep.converged:
        return float("inf")
    err = rep.phi.values[0].real - phis
    return float(np.max(np.abs(err - err.mean())))


@prop("solver", "form_equation_residual", "(1/n!)[*((alpha + i d dbar u)^omega_(n-m-1))]^n = c dV", 1e-6,
      fixed_count=1)
def _man_res(ctx, i):
    rep = _solved(ctx)[4]
    return rep.form_residual_sup if rep.converged else float("inf")


@prop("solver", "normalization_constant", "c = n! int (alpha_omega)_n / int dV", 1e-10, fixed_count=1)
def _man_c(ctx, i):
    rep = _solved(ctx)[4]
    return abs(rep.c - rep.c_normalization) / abs(rep.c_normalization)


@prop("solver", "newton_linearization", "d/dt log det R(phi + t psi) = tr(R^-1 A(psi))", 1e-6)
def _jac(ctx, i):
    from .solver import alpha_omega, jacobian_fd_check
    alpha, dV, met, phis, rep, _ = _solved(ctx)
    rng = ctx.rng(i)
    psi = low_mode_field(alpha.grid, 0, 0, rng, K=2).real_part().values[0].real
    psi /= np.max(np.abs(psi))
    return jacobian_fd_check(alpha_omega(alpha, met, 1), phis, psi, met, 1)


@prop("solver", "uniqueness_same_data", "two solves of one instance agree up to constants", 1e-6, fixed_count=1)
def _uniq(ctx, i):
    from .solver import solve_ma, uniqueness_gap
    alpha, dV, met, phis, rep, _ = _solved(ctx)
    g = alpha.grid
    phi0 = 0.01 * np.cos(2 * np.pi * g.x(0)) + 0 * phis
    rep2 = solve_ma(alpha, dV, met, 1, phi0=phi0)
    return uniqueness_gap(rep.u, rep2.u, met, 1, reports=[rep, rep2])


@prop("solver", "uniqueness_control", "perturbed dV moves the solution", 1e-3, compare=">=", fixed_count=1)
def _uniq_ctl(ctx, i):
    from .solver import solve_ma, uniqueness_gap
    alpha, dV, met, phis, rep, _ = _solved(ctx)
    g = alpha.grid
    dV2 = dV * (1 + 0.05 * np.cos(2 * np.pi * (g.x(1) - g.y(0))))
    rep2 = solve_ma(alpha, dV2, met, 1)
    return uniqueness_gap(rep.u, rep2.u, met, 1)


# ---------------------------------------------------------------- duality

def _dgrid(ctx):
    from .torus import TorusGrid
    return TorusGrid(2, min(ctx.grid_N(), 16))


def planted_theta(g, met, m, rng, amp=None):
    """theta = omega_m + i d dbar S0 with S0 large enough that theta alone is not positive."""
    from .torus import FormField, i_ddbar, min_eigenvalue_field
    if m == 1:
        S0 = low_mode_field(g, 0, 0, rng, K=1).real_part()
    else:
        S0 = FormField.constant(g, met.power(m - 1)) * low_mode_field(g, 0, 0, rng, K=1).real_part().values[0]
    base = FormField.constant(g, met.power(m))
    dd = i_ddbar(S0).real_part()
    # scale so the raw form has negative directions somewhere
    from .duality import _positivity_value
    s = 1.0
    while _positivity_value(base + dd * s) >= 0:
        s *= 2.0
    return base + dd * s


@prop("duality", "separation_signs", "theta = omega_m -> S-certificate; theta = -omega_m -> Omega-certificate",
      0.0, fixed_count=1)
def _sep(ctx, i):
    from .duality import OMEGA_CERT, S_CERT, lamari_separate
    from .torus import FormField
    rng = ctx.rng(i)
    g = _dgrid(ctx)
    met = HermitianMetric.random(2, rng)
    th = FormField.constant(g, met.power(1))
    a, b = lamari_separate(th, met, 1), lamari_separate(th * -1.0, met, 1)
    ok = (a.kind == S_CERT and a.verify() and b.kind == OMEGA_CERT and b.verify() and b.pairing < 0)
    return 0.0 if ok else 1.0


@prop("duality", "separation_planted", "theta = omega_m + i d dbar S0 recovered with an S-certificate", 0.0,
      fixed_count=1)
def _sep_pl(ctx, i):
    from .duality import S_CERT, lamari_separate
    rng = ctx.rng(i)
    g = _dgrid(ctx)
    met = HermitianMetric.random(2, rng)
    c = lamari_separate(planted_theta(g, met, 1, rng), met, 1)
    return 0.0 if c.kind == S_CERT and c.verify() else 1.0


@prop("duality", "pairing_stokes_invariance", "lhs(beta + i d dbar sigma) = lhs(beta)", 1e-9, fixed_count=1)
def _stokes(ctx, i):
    from .duality import intersection_pairing
    from .torus import FormField, i_ddbar
    rng = ctx.rng(i)
    g = _dgrid(ctx)
    met = HermitianMetric.random(2, rng)
    al = FormField.constant(g, met.power(1))
    be = al * 0.1
    sig = low_mode_field(g, 0, 0, rng, K=1, scale=0.01).real_part()
    r1 = intersection_pairing(al, be, met, 1)
    r2 = intersection_pairing(al, be + i_ddbar(sig).real_part(), met, 1, check=False)
    return abs(r2.lhs - r1.lhs) / abs(r1.lhs)


def constructive_instance(g, met, rng, amp=0.08):
    """alpha0 = omega + i d dbar h (pointwise negative somewhere), Om0 ddbar-closed."""
    from .torus import FormField, i_ddbar, min_eigenvalue_field
    m = 1
    Om0 = closed_weight(g, met, m, rng, scale=0.03)
    h = low_mode_field(g, 0, 0, rng, K=2).real_part()
    dd = i_ddbar(h).real_part()
    base = FormField.constant(g, met.form())
    s = amp
    while np.min(min_eigenvalue_field(base + dd * s, met)) >= 0:
        s *= 2.0
    return base + dd * s, Om0


@prop("duality", "constructive_margin", "margin >= 0.9 I0/Vol", 0.9, compare=">=", fixed_count=1)
def _cons(ctx, i):
    from .duality import constructive_representative
    rng = ctx.rng(i)
    g = _dgrid(ctx)
    met = HermitianMetric.random(2, rng)
    a0, Om0 = constructive_instance(g, met, rng)
    f, margin, info = constructive_representative(a0, Om0, met, 1)
    ctx.cache[("constructive", ctx.cfg.seed)] = info
    return margin / (info["I0"] / info["volume"])


@prop("duality", "constructive_compatibility", "int (g - I0/Vol) = I0 - I0 = 0", 1e-12, fixed_count=1)
def _cons_c(ctx, i):
    info = ctx.cache.get(("constructive", ctx.cfg.seed))
    if info is None:
        _cons(ctx, i)
        info = ctx.cache[("constructive", ctx.cfg.seed)]
    return abs(info["compatibility_integral"])


@prop("duality", "bigness_constant_case", "beta = eps omega_(n-1): delta = 1 - eps", 1e-10, fixed_count=1)
def _big(ctx, i):
    from .duality import bigness_witness
    from .torus import FormField
    rng = ctx.rng(i)
    g = _dgrid(ctx)
    met = HermitianMetric.random(2, rng)
    eps = float(rng.uniform(0.05, 0.5))
    al = FormField.constant(g, met.power(1))
    w = bigness_witness(al, al * eps, met)
    return abs(w.delta - (1 - eps))


@prop("duality", "holder_chain", "first >= middle >= last on a converged solve", -1e-9, compare=">=",
      fixed_count=1)
def _chain(ctx, i):
    from .duality import holder_chain
    from .solver import solve_ma
    from .torus import FormField, integrate_top
    rng = ctx.rng(i)
    g = _dgrid(ctx)
    met = HermitianMetric.random(2, rng)
    Om = closed_weight(g, met, 1, rng, scale=0.03)
    beta = FormField.constant(g, met.form())
    Om = Om * (1.0 / integrate_top(beta.wedge(Om)).real)
    alpha = FormField.constant(g, met.form())
    rep = solve_ma(alpha, beta.wedge(Om), met, 1)
    if not rep.converged:
        return float("-inf")
    hc = holder_chain(rep, alpha, beta, Om, met, 1)
    return min(hc["slack_1"], hc["slack_2"]) / max(abs(hc["first"]), 1.0)


# ---------------------------------------------------------------- runner

def properties(suite):
    if suite == "all":
        return [p for s in SUITES for p in properties(s)]
    if suite not in SUITES:
        raise KeyError(suite)
    return [p for (s, _), p in REGISTRY.items() if s == suite]


def _passes(p, val, tol):
    if not np.isfinite(val):
        return False
    return val <= tol if p.compare == "<=" else val >= tol


def run_property(p, cfg):
    ctx = Ctx(cfg, p)
    count = p.fixed_count or cfg.count(p.name)
    tol = cfg.tol(p.suite, p.name, p.tol)
    worst, fail, note = None, None, None
    for i in range(count):
        try:
            val = float(p.fn(ctx, i))
        except Exception as e:  # report, do not abort the suite
            val, note = float("nan"), f"{type(e).__name__}: {e}"
        if worst is None or not np.isfinite(val) or (
                np.isfinite(worst) and (val > worst if p.compare == "<=" else val < worst)):
            worst = val
        if fail is None and not _passes(p, val, tol):
            fail = i
    out = {"property": p.name, "suite": p.suite, "anchor": p.anchor, "samples": count,
           "worst": worst, "tolerance": tol, "compare": p.compare, "passed": fail is None,
           "failing_seed": None if fail is None else [cfg.seed, p.tag, fail]}
    if note:
        out["error"] = note
    return out


def run_suite(cfg, suite):
    """Run one suite (or ``all``); returns (results, all_passed)."""
    _RUN_CACHE.clear()
    t0 = time.perf_counter()
    results = []
    for p in properties(suite):
        results.append(run_property(p, cfg))
        if cfg.budget_seconds is not None and time.perf_counter() - t0 > cfg.budget_seconds:
            raise TimeoutError(f"suite budget of {cfg.budget_seconds}s exceeded after {p.suite}.{p.name}")
    _RUN_CACHE.clear()
    return results, all(r["passed"] for r in results)


def failure_lines(results):
    return [f"FAIL {r['suite']}.{r['property']} [{r['anchor']}] worst={r['worst']!r} "
            f"tol={r['tolerance']!r} seed={r['failing_seed']}" + (f" ({r['error']})" if "error" in r else "")
            for r in results if not r["passed"]]
