import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sympy.physics.wigner import gaunt

from sphkam.operators import structure_check
from sphkam.spectral import (PotentialSpec, SphereSpec, assemble_angular_power, assemble_multiplication,
                             block_dimension, gaunt_coefficient, gram_defect, laplace_eigenvalue,
                             parity_defect, random_potential, separation_holds, unbounded_perturbation)


def test_eigenvalues_and_multiplicities_on_s2():
    assert [laplace_eigenvalue(k, 2) for k in range(5)] == [0, 2, 6, 12, 20]
    assert [block_dimension(k, 2) for k in range(5)] == [1, 3, 5, 7, 9]


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_block_dimension_counts_harmonic_polynomials(n):
    # dim of degree-k polynomials in n+1 variables minus degree k-2
    poly = lambda k: math.comb(k + n, n) if k >= 0 else 0
    for k in range(8):
        assert block_dimension(k, n) == poly(k) - poly(k - 2)


def test_sphere_layout():
    sp = SphereSpec(2, 3)
    assert sp.size == 16
    assert sp.block_slice(2) == slice(4, 9)
    assert sp.flat_index(2, -2) == 4
    assert np.array_equal(sp.flat_eigenvalues[:4], [0, 2, 2, 2])
    with pytest.raises(IndexError):
        sp.flat_index(4, 0)
    with pytest.raises(ValueError):
        SphereSpec(0, 3)


def _oracle(a, b, c):
    # conj(Y_k^m) = (-1)^m Y_k^{-m}
    return (-1) ** c[1] * float(gaunt(a[0], b[0], c[0], a[1], b[1], -c[1]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.data())
def test_gaunt_matches_wigner_symbols(ka, kb, data):
    ma = data.draw(st.integers(-ka, ka))
    mb = data.draw(st.integers(-kb, kb))
    kc = data.draw(st.integers(0, 5))
    mc = data.draw(st.integers(-kc, kc))
    got = gaunt_coefficient((ka, ma), (kb, mb), (kc, mc))
    assert abs(got - _oracle((ka, ma), (kb, mb), (kc, mc))) < 1e-12


def test_gaunt_selection_rules():
    assert abs(gaunt_coefficient((1, 0), (1, 0), (1, 0))) < 1e-14  # odd total degree
    assert abs(gaunt_coefficient((1, 1), (1, 0), (2, 0))) < 1e-14  # m not conserved
    assert abs(gaunt_coefficient((0, 0), (3, 1), (3, 1)) - 1 / math.sqrt(4 * math.pi)) < 1e-14


def test_harmonic_quadrature_invariants():
    assert parity_defect(6) <= 1e-10
    assert gram_defect(6) <= 1e-12
    assert separation_holds(64)


def test_separation_is_tight_for_neighbours():
    # lambda_{k+1} - lambda_k = 2k + 2 on S^2, exactly one above k + (k + 1)
    for k in range(20):
        assert laplace_eigenvalue(k + 1, 2) - laplace_eigenvalue(k, 2) == 2 * k + 2


def test_random_potential_is_real_and_odd():
    V = random_potential(2, 3, 1, np.random.default_rng(0), odd=True)
    assert V.is_real()
    assert all(k % 2 == 1 for _, k, _ in V.coefficients)
    with pytest.raises(ValueError):
        PotentialSpec(1, {((0,), 2, 0): 1.0}, odd=True)


def test_potential_file_round_trip(tmp_path):
    V = random_potential(2, 2, 1, np.random.default_rng(4))
    V.to_file(tmp_path / "V.txt", header="test potential")
    back = PotentialSpec.from_file(tmp_path / "V.txt", d=2)
    assert back.coefficients.keys() == V.coefficients.keys()
    assert max(abs(back.coefficients[k] - c) for k, c in V.coefficients.items()) == 0


def test_potential_file_reports_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 0 1 0 1.0 0.0\n0 1 0 1.0\n")
    with pytest.raises(ValueError, match=":2:"):
        PotentialSpec.from_file(path, d=2)


def test_multiplication_matrix_is_hermitian_and_matches_pointwise_product():
    rng = np.random.default_rng(5)
    V = random_potential(1, 2, 1, rng)
    sp = SphereSpec(2, 4)
    op = assemble_multiplication(V, sp, 2)
    assert structure_check(op, "hermitian", 1e-12)
    # <Y_a, V Y_b> against Gaunt coefficients built from the Wigner oracle
    a, b = (2, 1), (1, 0)
    want = sum(c * _oracle((kp, mp), b, a) for (l, kp, mp), c in V.coefficients.items() if l == (1,))
    got = op.block((1,), 2, 1)[a[1] + 2, b[1] + 1]
    assert abs(got - want) < 1e-12


def test_complex_potential_is_rejected():
    V = PotentialSpec(1, {((1,), 1, 0): 1.0})
    with pytest.raises(ValueError, match="not real"):
        assemble_multiplication(V, SphereSpec(2, 2), 1)


def test_odd_potential_only_couples_opposite_parity():
    V = random_potential(2, 3, 1, np.random.default_rng(6), odd=True)
    op = assemble_multiplication(V, SphereSpec(2, 5), 1)
    even = (op.sphere.block_of[:, None] + op.sphere.block_of[None, :]) % 2 == 0
    assert np.max(np.abs(op.coef[:, even])) <= 1e-12


def test_angular_power_and_unbounded_perturbation():
    sp = SphereSpec(2, 3)
    P = assemble_angular_power(0.3, sp)
    diag = np.diag(P.coef[P.modes.zero]).real
    assert np.allclose(diag, np.sign(sp.m_values) * np.abs(sp.m_values) ** 0.3)
    with pytest.raises(ValueError):
        assemble_angular_power(0.5, sp)
    W = random_potential(2, 3, 1, np.random.default_rng(7), odd=True)
    op = unbounded_perturbation(W, 0.3, sp, 1)
    assert structure_check(op, "hermitian", 1e-12)
