"""Acceptance criteria 1-11. Each test records one PASS/FAIL line, printed again in the terminal summary."""
import math
import time

import numpy as np
import pytest

from formlab.duality import (
    OMEGA_CERT,
    S_CERT,
    SeparationUndecided,
    constructive_representative,
    holder_chain,
    intersection_pairing,
    lamari_separate,
)
from formlab.exterior import HermitianMetric, dim, random_form, wedge
from formlab.hodge import (
    decomposition_matrices,
    hodge_star,
    lambda_power_matrix,
    primitive_projector,
    star_matrix,
    star_of_wedge_power,
)
from formlab.oracles import lefschetz_lstsq, star_oracle_matrix
from formlab.positivity import holder_gap
from formlab.solver import alpha_omega, normalization_constant, solve_ma, uniqueness_gap
from formlab.suites import (
    adjoint_defect,
    closed_weight,
    commutation_defect_matrix,
    constructive_instance,
    holder_equality_case,
    holder_triple,
    kernel_ratio,
    low_mode_field,
    manufactured_instance,
    planted_theta,
)
from formlab.torus import FormField, TorusGrid, i_ddbar, integrate_top

# pinned tolerances and budgets
TOL_STAR = 1e-10
STAR_SECONDS = 60.0
TOL_COMM = 1e-10
TOL_PRIM = 1e-10
TOL_HOLDER = -1e-12
TOL_HOLDER_EQ = 1e-12
TOL_ADJ = 1e-8
KERNEL_RATIO = 1e3
TOL_PHI = 1e-6
TOL_FORM_RES = 1e-6
TOL_C = 1e-10
SOLVE_SECONDS = 300.0
TOL_UNIQ = 1e-6
CONTROL_GAP = 1e-3
MARGIN_FRACTION = 0.9
TOL_COMPAT = 1e-12
TOL_CHAIN = -1e-9
TOL_STOKES = 1e-9

RESULTS = {}


def record(cid, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {cid}: {detail}"
    print(line)
    RESULTS[cid] = line
    assert ok, line


def _rel_cols(A, B):
    return float(np.max(np.linalg.norm(A - B, axis=0) / np.maximum(np.linalg.norm(B, axis=0), 1e-300)))


def test_c01_hodge_star_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, worst_single = 0.0, 0.0
    for n in (2, 3, 4):
        for p in range(n + 1):
            for q in range(n + 1):
                met = HermitianMetric.random(n, rng)
                d = dim(n, p, q)
                V = rng.normal(size=(d, 1000)) + 1j * rng.normal(size=(d, 1000))
                ref = star_oracle_matrix(met.matrix, p, q) @ V
                worst = max(worst, _rel_cols(star_matrix(met, p, q) @ V, ref))
                for j in range(5):
                    u = random_form(n, p, q, rng)
                    r = star_oracle_matrix(met.matrix, p, q) @ u.to_vector()
                    worst_single = max(worst_single, _rel_cols(hodge_star(u, met).to_vector()[:, None], r[:, None]))
    el = time.perf_counter() - t0
    ok = worst <= TOL_STAR and worst_single <= TOL_STAR and el <= STAR_SECONDS
    record(1, ok, f"max rel error {max(worst, worst_single):.2e} <= {TOL_STAR:g}, {el:.1f}s <= {STAR_SECONDS:g}s")


def test_c02_commutation():
    rng = np.random.default_rng(102)
    worst = 0.0
    for n in (2, 3, 4):
        met = HermitianMetric.random(n, rng)
        for k in range(2 * n + 1):
            for r in range(1, n + 1):
                num = np.zeros(500)
                den = np.zeros(500)
                for p in range(max(0, k - n), min(n, k) + 1):
                    q = k - p
                    V = rng.normal(size=(dim(n, p, q), 500)) + 1j * rng.normal(size=(dim(n, p, q), 500))
                    num += np.linalg.norm(commutation_defect_matrix(met, p, q, r) @ V, axis=0) ** 2
                    den += np.linalg.norm(V, axis=0) ** 2
                worst = max(worst, float(np.max(np.sqrt(num / den))))
    record(2, worst <= TOL_COMM, f"max residual {worst:.2e} <= {TOL_COMM:g} over 500 k-forms per (n,k,r), n<=4")


def test_c03_primitive_components():
    rng = np.random.default_rng(103)
    worst = {"top": 0.0, "next": 0.0, "star": 0.0, "omega_prim": 0.0}

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))

    for n in (2, 3, 4):
        for r in range(1, n // 2 + 1):
            for _ in range(100):
                met = HermitianMetric.random(n, rng)
                zeta = random_form(n, r, r, rng)
                v = zeta.to_vector()
                D = decomposition_matrices(met, r)
                ref = lefschetz_lstsq(zeta, met.matrix)
                worst["top"] = max(worst["top"], rel(D[r] @ v, ref[r].to_vector()))
                worst["next"] = max(worst["next"], rel(D[r - 1] @ v, ref[r - 1].to_vector()))
                direct = hodge_star(wedge(zeta, met.power(n - r - 1)), met).to_vector()
                worst["star"] = max(worst["star"], rel(star_of_wedge_power(zeta, met, r).to_vector(), direct))
                coef = math.factorial(n - r - 1) / (math.factorial(n - 2) * math.factorial(r - 1))
                lhs = coef * primitive_projector(met, 1, 1) @ (lambda_power_matrix(met, r, r, r - 1) @ v)
                worst["omega_prim"] = max(worst["omega_prim"], rel(lhs, ref[r - 1].to_vector()))
    w = max(worst.values())
    record(3, w <= TOL_PRIM, "max rel " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f" <= {TOL_PRIM:g} (random non-Euclidean metrics)")


def test_c04_holder_gap():
    rng = np.random.default_rng(104)
    cases = [(n, m) for n in (2, 3, 4) for m in range(1, n)]
    gmin, eq = np.inf, 0.0
    for i in range(10_000):
        n, m = cases[i % len(cases)]
        rho, beta, Om, met = holder_triple(rng, n, m)
        gmin = min(gmin, holder_gap(rho, beta, Om, met, check=False))
    for n, m in cases:
        for _ in range(20):
            eq = max(eq, abs(holder_equality_case(rng, n, m)))
    ok = gmin >= TOL_HOLDER and eq <= TOL_HOLDER_EQ
    record(4, ok, f"min gap {gmin:.2e} >= {TOL_HOLDER:g} over 1e4 triples; equality case |gap| {eq:.1e} <= {TOL_HOLDER_EQ:g}")


def test_c05_adjoint_defect():
    rng = np.random.default_rng(105)
    g = TorusGrid(2, 16)
    worst, dmin = 0.0, np.inf
    for _ in range(5):
        met = HermitianMetric.random(2, rng)
        val, dOm = adjoint_defect(g, met, 1, rng)
        worst, dmin = max(worst, val), min(dmin, dOm)
    ok = worst <= TOL_ADJ and dmin > 1e-4
    record(5, ok, f"defect mismatch {worst:.2e} <= {TOL_ADJ:g} with |d Om| >= {dmin:.1e} (n=2, N=16)")


def test_c06_kernel():
    rng = np.random.default_rng(106)
    g = TorusGrid(2, 16)
    ratios = {}
    for m in (1, 2):
        met = HermitianMetric.random(2, rng)
        ratios[m] = kernel_ratio(g, met, m, rng)[0]
    ok = min(ratios.values()) >= KERNEL_RATIO
    record(6, ok, "sigma2/sigma1 " + ", ".join(f"m={m}: {v:.2e}" for m, v in ratios.items()) + f" >= {KERNEL_RATIO:g}")


@pytest.fixture(scope="module")
def solved32():
    alpha, dV, met, phis = manufactured_instance(32, seed=7)
    t = time.perf_counter()
    rep = solve_ma(alpha, dV, met, 1)
    return alpha, dV, met, phis, rep, time.perf_counter() - t


def test_c07_manufactured(solved32):
    alpha, dV, met, phis, rep, el = solved32
    err = rep.phi.values[0].real - phis
    err = float(np.max(np.abs(err - err.mean())))
    cref = normalization_constant(alpha_omega(alpha, met, 1), dV)
    crel = abs(rep.c - cref) / abs(cref)
    ok = (rep.status == "converged" and err <= TOL_PHI and rep.form_residual_sup <= TOL_FORM_RES
          and crel <= TOL_C and el <= SOLVE_SECONDS)
    record(7, ok, f"status {rep.status}, phi error {err:.1e} <= {TOL_PHI:g}, form residual {rep.form_residual_sup:.1e}"
           f" <= {TOL_FORM_RES:g}, c rel {crel:.1e} <= {TOL_C:g}, {el:.1f}s <= {SOLVE_SECONDS:g}s (n=2, N=32)")


def test_c08_uniqueness():
    alpha, dV, met, phis = manufactured_instance(16, seed=8)
    g = alpha.grid
    r1 = solve_ma(alpha, dV, met, 1)
    r2 = solve_ma(alpha, dV, met, 1, phi0=0.01 * np.cos(2 * np.pi * (g.x(0) - g.y(1))) * np.ones(g.shape))
    gap = uniqueness_gap(r1.u, r2.u, met, 1, reports=[r1, r2])
    r3 = solve_ma(alpha, dV * (1 + 0.05 * np.cos(2 * np.pi * (g.x(1) - g.y(0)))), met, 1)
    ctl = uniqueness_gap(r1.u, r3.u, met, 1)
    ok = r1.converged and r2.converged and r3.converged and gap <= TOL_UNIQ and ctl >= CONTROL_GAP
    record(8, ok, f"same-instance gap {gap:.1e} <= {TOL_UNIQ:g}; perturbed-dV control gap {ctl:.1e} >= {CONTROL_GAP:g}")


def test_c09_constructive():
    rng = np.random.default_rng(109)
    g = TorusGrid(2, 16)
    ratio, compat = np.inf, 0.0
    for _ in range(3):
        met = HermitianMetric.random(2, rng)
        a0, Om0 = constructive_instance(g, met, rng)
        f, margin, info = constructive_representative(a0, Om0, met, 1)
        ratio = min(ratio, margin / (info["I0"] / info["volume"]))
        compat = max(compat, abs(info["compatibility_integral"]))
    ok = ratio >= MARGIN_FRACTION and compat <= TOL_COMPAT
    record(9, ok, f"margin / (I0/Vol) {ratio:.4f} >= {MARGIN_FRACTION}; compatibility {compat:.1e} <= {TOL_COMPAT:g}")


def test_c10_separation():
    rng = np.random.default_rng(110)
    cases = [(TorusGrid(2, 16), 1), (TorusGrid(3, 8), 1), (TorusGrid(3, 8), 2)]
    notes, ok = [], True
    for g, m in cases:
        n = g.n
        met = HermitianMetric.random(n, rng)
        om = FormField.constant(g, met.power(m))
        a, b = lamari_separate(om, met, m), lamari_separate(om * -1.0, met, m)
        ok &= a.kind == S_CERT and a.verify() and b.kind == OMEGA_CERT and b.verify() and b.pairing < 0
        c = lamari_separate(planted_theta(g, met, m, rng), met, m)
        ok &= c.kind == S_CERT and c.verify()
        # never both: every outcome carries exactly one payload
        inputs = [om, om * -1.0, planted_theta(g, met, m, rng)]
        for th in inputs:
            shift = i_ddbar(low_mode_field(g, m - 1, m - 1, rng, K=1, scale=0.01).real_part()).real_part()
            try:
                cert = lamari_separate(th + shift, met, m)
            except SeparationUndecided:
                continue
            ok &= (cert.S is None) != (cert.Omega is None) and cert.verify()
        notes.append(f"n={n} m={m}")
    record(10, ok, "signs, planted recovery and single-payload checks on " + "; ".join(notes))


def test_c11_chain_and_stokes():
    rng = np.random.default_rng(111)
    g = TorusGrid(2, 16)
    smin, stokes = np.inf, 0.0
    for _ in range(2):
        met = HermitianMetric.random(2, rng)
        Om = closed_weight(g, met, 1, rng, scale=0.03)
        beta = FormField.constant(g, met.form())
        Om = Om * (1.0 / integrate_top(beta.wedge(Om)).real)
        alpha = FormField.constant(g, met.form())
        rep = solve_ma(alpha, beta.wedge(Om), met, 1)
        assert rep.converged
        hc = holder_chain(rep, alpha, beta, Om, met, 1)
        smin = min(smin, hc["slack_1"] / abs(hc["first"]), hc["slack_2"] / abs(hc["first"]))
    for g_, m in ((g, 1), (TorusGrid(3, 8), 2)):
        met = HermitianMetric.random(g_.n, rng)
        al = FormField.constant(g_, met.power(m))
        be = al * 0.1
        sig = low_mode_field(g_, m - 1, m - 1, rng, K=1, scale=0.01).real_part()
        r1 = intersection_pairing(al, be, met, m)
        r2 = intersection_pairing(al, be + i_ddbar(sig).real_part(), met, m, check=False)
        stokes = max(stokes, abs(r2.lhs - r1.lhs) / abs(r1.lhs))
    ok = smin >= TOL_CHAIN and stokes <= TOL_STOKES
    record(11, ok, f"min relative chain slack {smin:.2e} >= {TOL_CHAIN:g}; Stokes change {stokes:.1e} <= {TOL_STOKES:g}")
