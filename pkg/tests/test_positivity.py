import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from formlab.exterior import Form, FormError, conjugate, HermitianMetric, random_form, simple_positive_form, wedge
from formlab.hodge import euclidean_star_matrix
from formlab.positivity import (
    IN,
    OUT,
    form_from_hermitian,
    frame_simple_forms,
    hermitian_matrix,
    holder_gap,
    m_positivity,
    pairing,
    positivity_11,
    random_frames,
    strong_verdict,
    weak_verdict,
)
from formlab.suites import holder_equality_case, holder_triple, random_strong

seeds = st.integers(0, 2 ** 32 - 1)


def _simple_from_frame(F, J):
    F = np.asarray(F)
    n = F.shape[1]
    out = Form.scalar(n)
    for a in J:
        e = F[a - 1]
        out = wedge(out, form_from_hermitian(np.outer(e, e.conj())))
    return out


def _to_c(rows):
    return np.array([[complex(*z) for z in r] for r in rows])


def rebuild(cert, n, m):
    """Independent reconstruction of a certified-in weight certificate."""
    out = Form.zero(n, m, m)
    if "terms" in cert:
        for t in cert["terms"]:
            out = out + _simple_from_frame(_to_c(t["frame"]), t["subset"]) * t["weight"]
    else:
        F = _to_c(cert["frames"][0])
        for J, w in zip(cert["subsets"], cert["weights"]):
            assert w >= 0
            out = out + _simple_from_frame(F, J) * w
    return out


def check_out(v, beta):
    t = Form.from_dict(v.certificate["test_form"])
    assert pairing(beta, t).real < -v.tolerance
    c = v.certificate
    if "frame" in c:
        # the test form must be the simple positive form named by the certificate
        assert t.allclose(_simple_from_frame(_to_c(c["frame"]), c["subset"]), atol=1e-10)
    else:
        d = np.array([complex(*z) for z in c["direction"]])
        A = hermitian_matrix(beta)
        assert (d.conj() @ A @ d).real == pytest.approx(c["eigenvalue"], abs=1e-10)
        e = _simple_from_frame(d[None, :], (1,))
        n = beta.n
        st_e = Form.from_vector(n, n - 1, n - 1, euclidean_star_matrix(n, 1, 1) @ e.to_vector())
        assert t.allclose(st_e, atol=1e-10)


def test_positivity_11_examples(rng):
    met = HermitianMetric.random(3, rng)
    v = positivity_11(met.form(), definite=True)
    assert v.status == IN
    assert rebuild(v.certificate, 3, 1).allclose(met.form(), atol=1e-12)
    a = Form(2, 1, 1, {((1,), (1,)): 1j, ((2,), (2,)): -1j})
    v = positivity_11(a)
    assert v.status == OUT
    d = np.array([complex(*z) for z in v.certificate["direction"]])
    assert abs(abs(d[1]) - 1) < 1e-12 and abs(d[0]) < 1e-12
    check_out(v, a)


@given(st.integers(1, 4), seeds)
def test_positivity_11_matches_eigenvalues(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    A = A + A.conj().T
    v = positivity_11(form_from_hermitian(A))
    lam = np.linalg.eigvalsh(A)
    assert (v.status == IN) == (lam[0] >= -1e-12)
    assert (v.status == OUT) == (lam[0] < -1e-12)


def test_positivity_11_rejects_non_real():
    with pytest.raises(FormError):
        positivity_11(Form(2, 1, 1, {((1,), (1,)): 1.0}))


@pytest.mark.parametrize("n,m", [(2, 1), (3, 1), (3, 2), (4, 1), (4, 2), (4, 3)])
def test_omega_power_certified_in(n, m, rng):
    met = HermitianMetric.random(n, rng)
    v = strong_verdict(met.power(m))
    assert v.status == IN
    assert rebuild(v.certificate, n, m).allclose(met.power(m), atol=1e-10)


@pytest.mark.parametrize("n,m", [(2, 1), (3, 1), (3, 2), (4, 2), (4, 3)])
def test_negative_simple_certified_out(n, m):
    J = tuple(range(1, m + 1))
    beta = simple_positive_form(J, n) * -1.0
    v = strong_verdict(beta)
    assert v.status == OUT
    t = Form.from_dict(v.certificate["test_form"])
    comp = simple_positive_form(tuple(range(m + 1, n + 1)), n)
    assert t.allclose(comp, atol=1e-12) or abs(pairing(beta, t).real + 1) < 1e-12
    check_out(v, beta)


@given(st.sampled_from([(3, 2), (4, 2), (4, 1), (4, 3)]), seeds)
def test_dictionary_samples_certified_in(nm, seed):
    n, m = nm
    rng = np.random.default_rng(seed)
    frames = list(random_frames(n, 2, seed % 1000))
    beta = Form.zero(n, m, m)
    for F in frames:
        rows = frame_simple_forms(F, m)
        beta = beta + Form.from_vector(n, m, m, rng.uniform(0, 1, rows.shape[0]) @ rows)
    beta = (beta + conjugate(beta)) * 0.5
    v = strong_verdict(beta, frames=frames)
    assert v.status == IN
    assert rebuild(v.certificate, n, m).allclose(beta, atol=1e-8 * max(1.0, beta.norm()))


@given(st.integers(2, 4), seeds)
def test_extreme_bidegrees_agree_with_eigenvalues(n, seed):
    rng = np.random.default_rng(seed)
    b = random_form(n, 1, 1, rng, real=True) + HermitianMetric.euclidean(n).form() * float(rng.uniform(-1, 3))
    ref = positivity_11(b).status
    assert strong_verdict(b).status == ref
    assert weak_verdict(b).status == ref
    # (n-1,n-1): compare with the (1,1) form it corresponds to under the Euclidean star
    bb = Form.from_vector(n, n - 1, n - 1, euclidean_star_matrix(n, 1, 1) @ b.to_vector())
    assert strong_verdict(bb).status == positivity_11(
        Form.from_vector(n, 1, 1, euclidean_star_matrix(n, n - 1, n - 1) @ bb.to_vector())).status


@given(st.integers(3, 4), seeds)
def test_duality_consistency_and_no_double_verdicts(n, seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, n))
    beta = random_strong(n, m, rng) + random_form(n, m, m, rng, real=True) * 0.5
    Om = random_strong(n, n - m, rng) + random_form(n, n - m, n - m, rng, real=True) * 0.5
    s1, s2 = strong_verdict(beta, seed=seed % 97), strong_verdict(beta, seed=seed % 97)
    assert s1.status == s2.status
    w = weak_verdict(Om, seed=seed % 97)
    if s1.is_in and w.is_in:
        assert pairing(beta, Om).real >= -1e-12
    if s1.is_out:
        check_out(s1, beta)


def test_m_positivity_examples(rng):
    n = 3
    met = HermitianMetric.random(n, rng)
    for m in range(1, n + 1):
        assert m_positivity(met.form(), met, m).status == IN
        assert m_positivity(met.form() * -1.0, met, m).status == OUT
    e = HermitianMetric.euclidean(2)
    T = Form(2, 1, 1, {((1,), (1,)): 1j, ((2,), (2,)): -0.5j})
    assert m_positivity(T, e, 2).status == IN
    assert m_positivity(T, e, 1).status == OUT
    assert m_positivity(T, e, 1).status == positivity_11(T).status


@given(st.integers(2, 4), seeds)
def test_m_positivity_monotone(n, seed):
    rng = np.random.default_rng(seed)
    met = HermitianMetric.random(n, rng)
    T = form_from_hermitian(np.diag(rng.uniform(-1, 2, n)).astype(complex))
    prev_in = False
    for m in range(1, n + 1):
        v = m_positivity(T, met, m)
        if prev_in:
            assert v.status != OUT
        prev_in = v.status == IN


def test_holder_gap_binomial_example(rng):
    for n in (2, 3, 4):
        met = HermitianMetric.random(n, rng)
        for m in range(1, n):
            g = holder_gap(met.form(), met.power(m), met.power(n - m), met)
            c = math.comb(n, m)
            assert g == pytest.approx(c * c - c, abs=1e-10)


def test_holder_gap_equality_case(rng):
    for n in (2, 3, 4):
        for m in range(1, n):
            assert abs(holder_equality_case(rng, n, m)) <= 1e-12


@given(st.integers(2, 4), seeds)
def test_holder_gap_nonnegative(n, seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, n))
    rho, beta, Om, met = holder_triple(rng, n, m)
    assert holder_gap(rho, beta, Om, met, check=False) >= -1e-12


def test_random_strong_not_degenerate(rng):
    # each term pairs with Euclidean omega_(n-m) to sum_J |det A_J|^2, far from roundoff
    for n in (2, 3, 4):
        for m in range(1, n + 1):
            beta = random_strong(n, m, rng)
            pr = pairing(beta, HermitianMetric(np.eye(n, dtype=complex)).power(n - m))
            assert abs(pr.imag) <= 1e-12 and pr.real > 1e-3


def test_holder_gap_rejects_invalid(rng):
    met = HermitianMetric.random(3, rng)
    with pytest.raises(FormError):
        holder_gap(met.form() * -1.0, met.power(1), met.power(2), met)
    with pytest.raises(FormError):
        holder_gap(met.form(), simple_positive_form((1,), 3) * -1.0, met.power(2), met)


def test_verdict_dict_shape():
    v = positivity_11(HermitianMetric.euclidean(2).form())
    assert set(v.to_dict()) == {"status", "certificate", "tolerance", "seed"}
