import math

import numpy as np
import pytest

from afqmc_dilation.errors import ContractViolation, InvalidModelError
from afqmc_dilation.model import (
    QuadraticOperator,
    SpinOrbitalBasis,
    annihilation_operators,
    basis_state,
    build_hubbard,
    exact_eigensystem,
    fock_index,
    hamiltonian,
    hubbard_direct,
    imaginary_time_reference,
    jw_lift,
    number_operator,
    occupied_orbitals,
    sector_indices,
)


def test_bitstring_convention():
    assert fock_index("1001") == 9
    assert occupied_orbitals("1001") == (0, 3)
    assert basis_state("01")[1] == 1
    with pytest.raises(ContractViolation):
        fock_index("10a1")


def test_orderings():
    b = SpinOrbitalBasis(2)
    assert [b.index(0, 0), b.index(0, 1), b.index(1, 0), b.index(1, 1)] == [0, 1, 2, 3]
    assert list(b.to_spin_blocked()) == [0, 2, 1, 3]
    assert SpinOrbitalBasis(2, "spin_blocked").index(1, 0) == 1


def test_canonical_anticommutation():
    c = annihilation_operators(4)
    eye = np.eye(16)
    for p in range(4):
        for q in range(4):
            assert np.allclose(c[p] @ c[q].T + c[q].T @ c[p], eye * (p == q))
            assert np.allclose(c[p] @ c[q] + c[q] @ c[p], 0)


def test_jw_lift_matches_operator_products():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    c = annihilation_operators(4)
    direct = sum(A[i, j] * c[i].T @ c[j] for i in range(4) for j in range(4))
    assert np.allclose(jw_lift(A).matrix, direct, atol=1e-13)


def test_lift_is_a_lie_homomorphism():
    rng = np.random.default_rng(4)
    b = SpinOrbitalBasis(2)
    A = QuadraticOperator(b, rng.normal(size=(4, 4)))
    B = QuadraticOperator(b, rng.normal(size=(4, 4)))
    la, lb = jw_lift(A).matrix, jw_lift(B).matrix
    assert np.allclose(jw_lift(A.commutator(B)).matrix, la @ lb - lb @ la, atol=1e-12)


def test_reassembly_matches_direct_construction(dimer):
    for L, pbc in ((2, False), (3, False), (3, True)):
        for dec in ("spin", "charge"):
            m = build_hubbard(L, 1.0, 4.0, pbc, decomposition=dec)
            assert np.abs(hamiltonian(m).matrix - hubbard_direct(L, 1.0, 4.0, pbc).matrix).max() < 1e-12


def test_channel_conventions(dimer):
    ch = dimer.channels[0]
    assert ch.sigma ** 2 == pytest.approx(ch.lam)
    assert ch.sigma ** 2 + ch.lambda_smd == pytest.approx(0)
    L = ch.L.coeff
    assert np.allclose(-L @ L, -0.5 * ch.lam * ch.v.coeff @ ch.v.coeff)
    charge = build_hubbard(2, decomposition="charge")
    assert charge.channels[0].sigma.imag > 0
    assert dimer.scalar_offset == pytest.approx(2.0)


def test_quadratic_operator_is_read_only(dimer):
    with pytest.raises(ValueError):
        dimer.H1.coeff[0, 0] = 1.0
    assert dimer.H1.hermitian


def test_invalid_models():
    with pytest.raises(InvalidModelError):
        build_hubbard(1)
    with pytest.raises(InvalidModelError):
        build_hubbard(2, t=0.0)


def test_dimer_spectrum(dimer):
    es = exact_eigensystem(hamiltonian(dimer), 2)
    U, t = 4.0, 1.0
    assert es.E0 == pytest.approx((U - math.sqrt(U * U + 16 * t * t)) / 2 - U / 2, abs=1e-12)
    assert es.E0 == pytest.approx(-2 * math.sqrt(2), abs=1e-12)
    # the S_z = +-1 and 0 triplet sits at -U/2
    assert es.gap == pytest.approx(2 * math.sqrt(2) - 2, abs=1e-12)


def test_number_conservation(dimer):
    H = hamiltonian(dimer).matrix
    N = number_operator(4).matrix
    assert np.abs(H @ N - N @ H).max() < 1e-13
    assert len(sector_indices(4, 2)) == 6


def test_reference_independent_of_shift(dimer):
    psi = basis_state("1001")
    taus = [0.0, 0.1, 0.5]
    a = imaginary_time_reference(dimer, psi, taus)
    b = imaginary_time_reference(dimer.with_shift(-3.0), psi, taus)
    assert np.allclose(a.E_mixed, b.E_mixed)
    assert a.E_mixed[0] == pytest.approx(-2.0)
    assert a.E_rayleigh[0] == pytest.approx(-2.0)


def test_long_projection_reaches_ground_state(dimer):
    ref = imaginary_time_reference(dimer, basis_state("1001"), [40.0])
    assert ref.E_rayleigh[0] == pytest.approx(-2 * math.sqrt(2), abs=1e-10)
    assert ref.E_mixed[0] == pytest.approx(-2 * math.sqrt(2), abs=1e-10)
