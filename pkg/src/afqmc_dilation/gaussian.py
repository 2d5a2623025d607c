"""Fock-space action of one-body propagators.

For an orbital matrix ``B`` the second-quantized operator ``Gamma(B)`` maps
``c_p^dagger`` to ``sum_q B[q, p] c_q^dagger``, so ``exp(lift(A)) =
Gamma(expm(A))``.  Within an ``N``-particle sector its matrix elements are
the ``N x N`` minors ``det B[Q, P]`` over ascending orbital subsets, which in
the bit ordering of :mod:`afqmc_dilation.model` carry no extra sign.
"""

from __future__ import annotations

import functools
import itertools

import numpy as np
import scipy.linalg

from .model import sector_indices


@functools.lru_cache(maxsize=None)
def sector_subsets(n_orb: int, n_particles: int) -> tuple[np.ndarray, np.ndarray]:
    """Ascending orbital tuples of a sector and their Fock indices."""
    combos = list(itertools.combinations(range(n_orb), n_particles))
    subsets = np.array(combos, dtype=int).reshape(len(combos), n_particles)
    idx = np.array([sum(1 << (n_orb - 1 - p) for p in s) for s in subsets], dtype=int)
    order = np.argsort(idx)
    subsets, idx = subsets[order], idx[order]
    assert np.array_equal(idx, sector_indices(n_orb, n_particles))
    subsets.setflags(write=False)
    idx.setflags(write=False)
    return subsets, idx


def _small_det(m: np.ndarray) -> np.ndarray:
    k = m.shape[-1]
    if k == 0:
        return np.ones(m.shape[:-2], dtype=m.dtype)
    if k == 1:
        return m[..., 0, 0]
    if k == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return np.linalg.det(m)


def sector_block(B: np.ndarray, n_particles: int) -> np.ndarray:
    """Matrix of ``Gamma(B)`` on one particle sector, shape ``(..., d, d)``."""
    B = np.asarray(B)
    n = B.shape[-1]
    S, _ = sector_subsets(n, n_particles)
    minors = B[..., S[:, None, :, None], S[None, :, None, :]]
    return _small_det(minors)


def determinant_amplitudes(B: np.ndarray, occupied) -> np.ndarray:
    """Sector amplitudes of ``Gamma(B)|occupied>``, shape ``(..., d)``."""
    B = np.asarray(B)
    occ = np.asarray(occupied, dtype=int)
    S, _ = sector_subsets(B.shape[-1], occ.size)
    cols = B[..., :, occ]
    return _small_det(cols[..., S, :])


def fock_matrix(B: np.ndarray) -> np.ndarray:
    """Dense ``Gamma(B)`` on the full Fock space (block diagonal in N)."""
    B = np.asarray(B)
    n = B.shape[-1]
    out = np.zeros(B.shape[:-2] + (2**n, 2**n), dtype=np.result_type(B, complex))
    for N in range(n + 1):
        _, idx = sector_subsets(n, N)
        out[..., idx[:, None], idx[None, :]] = sector_block(B, N)
    return out


def apply_gaussian(B: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``Gamma(B) psi`` for a full Fock vector, computing only occupied sectors."""
    B = np.asarray(B)
    psi = np.asarray(psi)
    n = B.shape[-1]
    batch = np.broadcast_shapes(B.shape[:-2], psi.shape[:-1])
    out = np.zeros(batch + (2**n,), dtype=complex)
    for N in range(n + 1):
        _, idx = sector_subsets(n, N)
        part = psi[..., idx]
        if not np.any(part):
            continue
        out[..., idx] = np.einsum("...ij,...j->...i", sector_block(B, N), part)
    return out


# --- batched matrix exponentials ---------------------------------------------


def _block_components(pattern: np.ndarray) -> list[np.ndarray]:
    n = pattern.shape[0]
    seen = np.zeros(n, dtype=bool)
    comps = []
    adj = pattern | pattern.T
    for s in range(n):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in np.flatnonzero(adj[v] & ~seen):
                seen[w] = True
                stack.append(w)
        comps.append(np.array(sorted(comp)))
    return comps


def _expm2(A: np.ndarray) -> np.ndarray:
    a, b, c, d = A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]
    mu = 0.5 * (a + d)
    half = 0.5 * (a - d)
    z = np.sqrt(half * half + b * c + 0j)
    small = np.abs(z) < 1e-4
    z2 = z * z
    zs = np.where(small, 1.0, z)
    sinhc = np.where(small, 1 + z2 / 6 + z2 * z2 / 120, np.sinh(zs) / zs)
    cosh = np.where(small, 1 + z2 / 2 + z2 * z2 / 24, np.cosh(z))
    e = np.exp(mu)
    out = np.empty(A.shape, dtype=complex)
    out[..., 0, 0] = e * (cosh + sinhc * half)
    out[..., 1, 1] = e * (cosh - sinhc * half)
    out[..., 0, 1] = e * sinhc * b
    out[..., 1, 0] = e * sinhc * c
    return out


def expm_batched(A: np.ndarray) -> np.ndarray:
    """``expm`` over leading axes, exploiting a block pattern shared by the batch."""
    A = np.asarray(A, dtype=complex)
    if A.ndim == 2:
        return expm_batched(A[None])[0]
    pattern = np.any(A != 0, axis=tuple(range(A.ndim - 2)))
    comps = _block_components(pattern)
    if len(comps) == 1:
        return scipy.linalg.expm(A)
    out = np.zeros_like(A)
    for comp in comps:
        sub = A[..., comp[:, None], comp[None, :]]
        if comp.size == 1:
            val = np.exp(sub)
        elif comp.size == 2:
            val = _expm2(sub)
        else:
            val = scipy.linalg.expm(sub)
        out[..., comp[:, None], comp[None, :]] = val
    return out


def expm_hermitian(H: np.ndarray, scale: complex = -1j) -> np.ndarray:
    """``exp(scale * H)`` for Hermitian ``H`` by eigendecomposition (batched)."""
    w, V = np.linalg.eigh(H)
    return (V * np.exp(scale * w)[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
