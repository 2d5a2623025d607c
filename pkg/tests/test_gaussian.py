import numpy as np
import pytest
import scipy.linalg

from afqmc_dilation.gaussian import (
    apply_gaussian,
    determinant_amplitudes,
    expm_batched,
    expm_hermitian,
    fock_matrix,
    sector_block,
    sector_subsets,
)
from afqmc_dilation.model import basis_state, jw_lift, sector_indices


@pytest.mark.parametrize("n,N", [(4, 0), (4, 1), (4, 2), (6, 3)])
def test_sector_subsets_match_fock_indices(n, N):
    subsets, idx = sector_subsets(n, N)
    assert np.array_equal(idx, sector_indices(n, N))
    assert subsets.shape[1] == N


def test_functor_identity():
    # exp of the lifted generator equals the Gaussian map of the orbital exponential
    rng = np.random.default_rng(11)
    for n in (3, 4):
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        lhs = scipy.linalg.expm(jw_lift(A).matrix)
        rhs = fock_matrix(scipy.linalg.expm(A))
        assert np.abs(lhs - rhs).max() < 1e-12


def test_gamma_is_multiplicative():
    rng = np.random.default_rng(12)
    A, B = rng.normal(size=(2, 4, 4))
    assert np.allclose(fock_matrix(A @ B), fock_matrix(A) @ fock_matrix(B))


def test_sector_block_and_apply():
    rng = np.random.default_rng(13)
    B = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    full = fock_matrix(B)
    _, idx = sector_subsets(4, 2)
    assert np.allclose(sector_block(B, 2), full[np.ix_(idx, idx)])
    psi = basis_state("1001")
    assert np.allclose(apply_gaussian(B, psi), full @ psi)


def test_determinant_amplitudes_columns():
    rng = np.random.default_rng(14)
    B = rng.normal(size=(4, 4))
    amps = determinant_amplitudes(B, (0, 3))
    _, idx = sector_subsets(4, 2)
    assert np.allclose(amps, fock_matrix(B)[idx, 9])


def test_expm_batched_against_scipy():
    rng = np.random.default_rng(15)
    A = rng.normal(size=(5, 4, 4)) + 1j * rng.normal(size=(5, 4, 4))
    ref = np.stack([scipy.linalg.expm(a) for a in A])
    assert np.abs(expm_batched(A) - ref).max() < 1e-12
    # block-diagonal pattern takes the closed-form route
    D = np.zeros((3, 4, 4), dtype=complex)
    D[:, :2, :2] = rng.normal(size=(3, 2, 2))
    D[:, 2:, 2:] = rng.normal(size=(3, 2, 2))
    assert np.abs(expm_batched(D) - np.stack([scipy.linalg.expm(d) for d in D])).max() < 1e-12


def test_expm_hermitian_is_unitary():
    rng = np.random.default_rng(16)
    X = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    H = X + X.conj().T
    U = expm_hermitian(H)
    assert np.allclose(U.conj().T @ U, np.eye(6))
    assert np.allclose(U, scipy.linalg.expm(-1j * H))
