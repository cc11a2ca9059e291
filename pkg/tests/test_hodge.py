import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from formlab.exterior import Form, FormError, HermitianMetric, metric_inner_product, random_form, volume_form, wedge
from formlab.hodge import (
    decomposition_matrices,
    hodge_star,
    lambda_contraction,
    lefschetz_L,
    primitive_decompose,
    primitive_projector,
    star_matrix,
    star_of_wedge_power,
)
from formlab.oracles import lefschetz_lstsq, shuffle_wedge, star_oracle_matrix
from formlab.suites import commutation_residual

seeds = st.integers(0, 2 ** 32 - 1)


def test_star_of_omega_power(rng):
    for n in (2, 3, 4):
        met = HermitianMetric.random(n, rng)
        assert hodge_star(met.power(n - 1), met).allclose(met.form(), rtol=1e-12, atol=1e-12)


def test_star_of_one_is_volume(rng):
    for n in (1, 2, 3):
        met = HermitianMetric.random(n, rng)
        assert hodge_star(Form.scalar(n), met).allclose(volume_form(met), atol=1e-12)


def test_star_matches_oracle_non_euclidean_n3(rng):
    met = HermitianMetric.random(3, rng)
    u = random_form(3, 1, 1, rng)
    ref = star_oracle_matrix(met.matrix, 1, 1) @ u.to_vector()
    np.testing.assert_allclose(hodge_star(u, met).to_vector(), ref, atol=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_star_defining_identity_all_monomials(n, rng):
    # u ^ star(conj v) = <u, v> dV on every monomial pair
    met = HermitianMetric.random(n, rng)
    top = (tuple(range(1, n + 1)),) * 2
    dv = volume_form(met).coeffs[top]
    worst = 0.0
    for p in range(n + 1):
        for q in range(n + 1):
            from formlab.exterior import basis, conjugate
            for kb in basis(n, q, p):
                v = Form(n, q, p, {kb: 1.0})
                sv = hodge_star(conjugate(v), met)
                for ka in basis(n, q, p):
                    u = Form(n, q, p, {ka: 1.0})
                    lhs = shuffle_wedge(u, sv).coeffs.get(top, 0.0)
                    worst = max(worst, abs(lhs - metric_inner_product(u, v, met) * dv))
    assert worst <= 1e-12


def test_star_star_identity_even_forms(rng):
    for n in (2, 3, 4):
        met = HermitianMetric.random(n, rng)
        for r in range(n + 1):
            S = star_matrix(met, n - r, n - r) @ star_matrix(met, r, r)
            np.testing.assert_allclose(S, np.eye(S.shape[0]), atol=1e-12)


def test_lambda_of_omega_and_of_pure_types(rng):
    for n in (2, 3, 4):
        met = HermitianMetric.random(n, rng)
        assert lambda_contraction(met.form(), met).coeffs[((), ())] == pytest.approx(n)
        assert lambda_contraction(random_form(n, 2, 0, rng), met).norm() == 0
        assert lambda_contraction(random_form(n, 0, 1, rng), met).norm() == 0


def test_lambda_of_offdiagonal_euclidean():
    met = HermitianMetric.euclidean(2)
    out = lambda_contraction(Form(2, 1, 1, {((1,), (2,)): 1.0}), met)
    assert abs(out.to_vector()[0]) < 1e-15


@given(st.integers(2, 4), seeds)
def test_lefschetz_lambda_adjoint(n, seed):
    rng = np.random.default_rng(seed)
    met = HermitianMetric.random(n, rng)
    p, q = (int(x) for x in rng.integers(0, n, 2))
    u, v = random_form(n, p, q, rng), random_form(n, p + 1, q + 1, rng)
    a = metric_inner_product(lefschetz_L(u, met), v, met)
    b = metric_inner_product(u, lambda_contraction(v, met), met)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


@given(st.integers(2, 4), seeds)
def test_commutation_identity(n, seed):
    rng = np.random.default_rng(seed)
    met = HermitianMetric.random(n, rng)
    r = int(rng.integers(1, n + 1))
    p, q = (int(x) for x in rng.integers(0, n + 1, 2))
    v = random_form(n, p, q, rng).to_vector()
    assert commutation_residual(met, p, q, r, v) <= 1e-10


def test_primitive_decompose_of_primitive_and_omega(rng):
    met = HermitianMetric.random(4, rng)
    v = Form.from_vector(4, 2, 2, primitive_projector(met, 2, 2) @ random_form(4, 2, 2, rng).to_vector())
    dec = primitive_decompose(v, met)
    assert dec[0].allclose(v, atol=1e-12)
    assert dec[1].norm() < 1e-12 and dec[2].norm() < 1e-12
    dec = primitive_decompose(met.form(), met)
    assert dec[0].norm() < 1e-13
    assert dec[1].to_vector()[0] == pytest.approx(1.0)


@given(st.integers(2, 4), seeds)
def test_decomposition_reconstructs_and_is_primitive(n, seed):
    rng = np.random.default_rng(seed)
    met = HermitianMetric.random(n, rng)
    r = int(rng.integers(0, n // 2 + 1))
    z = random_form(n, r, r, rng)
    dec = primitive_decompose(z, met)
    assert dec.reconstruct().allclose(z, rtol=1e-12, atol=1e-12 * max(1.0, z.norm()))
    for c in dec.components:
        if c.p > 0:
            assert lambda_contraction(c, met).norm() <= 1e-11 * max(1.0, z.norm())


def test_random_22_n4_against_lstsq(rng):
    met = HermitianMetric.random(4, rng)
    z = random_form(4, 2, 2, rng)
    dec = primitive_decompose(z, met)
    ref = lefschetz_lstsq(z, met.matrix)
    for a, b in zip(dec.components, ref):
        np.testing.assert_allclose(a.to_vector(), b.to_vector(), atol=1e-11)


def test_top_component_lambda_formula(rng):
    n, r = 4, 2
    met = HermitianMetric.random(n, rng)
    z = random_form(n, r, r, rng)
    top = lambda_contraction(z, met, r) * (math.factorial(n - r) / (math.factorial(n) * math.factorial(r)))
    assert primitive_decompose(z, met)[r].allclose(top, atol=1e-12)


def test_decomposition_rejects_large_r(rng):
    met = HermitianMetric.random(3, rng)
    with pytest.raises(FormError):
        decomposition_matrices(met, 2)
    with pytest.raises(FormError):
        primitive_decompose(random_form(3, 2, 2, rng), met)


@pytest.mark.parametrize("n,r", [(2, 1), (3, 1), (4, 1), (4, 2)])
def test_star_of_wedge_power_both_pipelines(n, r, rng):
    met = HermitianMetric.random(n, rng)
    for z in (random_form(n, r, r, rng), met.power(r)):
        direct = hodge_star(wedge(z, met.power(n - r - 1)), met)
        np.testing.assert_allclose(star_of_wedge_power(z, met, r).to_vector(), direct.to_vector(), atol=1e-10)
    w = star_of_wedge_power(met.power(r), met, r)
    ratio = w.to_vector() / met.form().to_vector()
    finite = np.isfinite(ratio)
    assert np.allclose(ratio[finite], ratio[finite][0]) and ratio[finite][0].real > 0


def test_star_of_wedge_power_primitive(rng):
    for n in (2, 3, 4):
        met = HermitianMetric.random(n, rng)
        z = Form.from_vector(n, 1, 1, primitive_projector(met, 1, 1) @ random_form(n, 1, 1, rng).to_vector())
        # Lambda z = 0, so only -z survives
        assert star_of_wedge_power(z, met, 1).allclose(z * -1.0, atol=1e-12)
        assert hodge_star(wedge(z, met.power(n - 2)), met).allclose(z * -1.0, atol=1e-12)


def test_star_of_wedge_power_errors(rng):
    met = HermitianMetric.random(3, rng)
    with pytest.raises(FormError):
        star_of_wedge_power(Form.scalar(3), met, 0)
    with pytest.raises(FormError):
        star_of_wedge_power(random_form(3, 2, 2, rng), met, 2)
