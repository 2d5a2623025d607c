"""System-only linear combination of unitaries from the chain eigenbasis.

With ``i theta F = sum_j omega_j |chi_j><chi_j|`` the projected dilated
segment becomes

    sum_j c_j prod_k exp(-i (H_k + omega_j K_k)),   c_j = <l|chi_j><chi_j|r>,

so each branch is a product of one-body unitaries.  Branch products are
exact Gaussian maps, which is what the circuit compiler consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .dilation import AncillaChain
from .errors import ContractViolation, InvariantViolation
from .gaussian import apply_gaussian, expm_hermitian
from .magnus import SliceGenerator, hermitian_split
from .model import jw_lift

CLUSTER_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ChainSpectrum:
    omegas: np.ndarray
    coeffs: np.ndarray
    vectors: np.ndarray
    P_win: float
    chain: AncillaChain

    @property
    def l1(self) -> float:
        return float(np.sum(np.abs(self.coeffs)))

    def clusters(self) -> tuple[np.ndarray, np.ndarray]:
        """Degenerate-cluster frequencies and summed coefficients."""
        reps, sums = [], []
        for w, c in zip(self.omegas, self.coeffs):
            if reps and abs(w - reps[-1]) <= CLUSTER_TOL * max(1.0, abs(w)):
                sums[-1] += c
            else:
                reps.append(w)
                sums.append(c)
        return np.array(reps), np.array(sums)


def chain_spectrum(chain: AncillaChain) -> ChainSpectrum:
    w, V = np.linalg.eigh(chain.hermitian_generator)
    # ascending eigenvalues; ties broken lexicographically on rounded entries
    keys = [np.round(V[:, j], 12) for j in range(V.shape[1])]
    order = sorted(range(len(w)), key=lambda j: (round(w[j], 12), tuple(np.r_[keys[j].real, keys[j].imag])))
    w, V = w[order], V[:, order]
    coeffs = (chain.l @ V) * (V.conj().T @ chain.r)
    return ChainSpectrum(w, coeffs, V, chain.P_win, chain)


Policy = Literal["all", "top_k", "threshold"]


@dataclass(frozen=True, eq=False)
class LCUTermSet:
    omegas: np.ndarray  # retained cluster frequencies
    coeffs: np.ndarray
    discarded_weight: float
    policy: Policy
    threshold: float

    @property
    def count(self) -> int:
        return len(self.omegas)


def select_terms(spectrum: ChainSpectrum, policy: Policy = "threshold", eps: float = 1e-8, top_k: int | None = None) -> LCUTermSet:
    """Retain clustered terms.

    ``threshold`` drops the smallest ``|c_j|`` while the dropped weight stays
    at most ``eps``.  ``top_k`` keeps the ``k`` largest.
    """
    omegas, coeffs = spectrum.clusters()
    mags = np.abs(coeffs)
    order = np.argsort(mags, kind="stable")
    keep = np.ones(len(coeffs), dtype=bool)
    if policy == "all":
        threshold = 0.0
    elif policy == "threshold":
        threshold = float(eps)
        dropped = 0.0
        for j in order[:-1]:
            if dropped + mags[j] > eps:
                break
            dropped += mags[j]
            keep[j] = False
    elif policy == "top_k":
        if not top_k or top_k < 1:
            raise ContractViolation("top_k policy needs top_k >= 1")
        keep[:] = False
        keep[order[::-1][:top_k]] = True
        threshold = float(mags[~keep].sum())
    else:
        raise ContractViolation(f"unknown retention policy {policy!r}")
    return LCUTermSet(omegas[keep], coeffs[keep], float(mags[~keep].sum()), policy, threshold)


def all_terms(spectrum: ChainSpectrum) -> LCUTermSet:
    return select_terms(spectrum, "all")


def _splits(slices: Sequence) -> tuple[np.ndarray, np.ndarray]:
    omegas = np.stack([s.omega if isinstance(s, SliceGenerator) else np.asarray(s) for s in slices])
    return hermitian_split(omegas)


class LCUSegment:
    """Branch unitaries of one segment, cached per ``(step, j)``."""

    def __init__(self, termset: LCUTermSet, slices: Sequence):
        if termset.count == 0:
            raise ContractViolation("retained term set is empty")
        self.termset = termset
        self.K, self.H = _splits(slices)
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    @property
    def n_steps(self) -> int:
        return self.K.shape[0]

    def step_unitary(self, k: int, j: int) -> np.ndarray:
        key = (k, j)
        if key not in self._cache:
            w = self.termset.omegas[j]
            self._cache[key] = expm_hermitian(self.H[k] + w * self.K[k])
        return self._cache[key]

    def branch_unitary(self, j: int, n_steps: int | None = None) -> np.ndarray:
        """Orbital-level ``U_{n,j} ... U_{1,j}``."""
        n = self.n_steps if n_steps is None else n_steps
        out = np.eye(self.K.shape[-1], dtype=complex)
        for k in range(n):
            out = self.step_unitary(k, j) @ out
        return out

    def branch_unitaries(self) -> np.ndarray:
        return np.stack([self.branch_unitary(j) for j in range(self.termset.count)])


def lcu_segment_apply(
    termset: LCUTermSet,
    slices: Sequence,
    psi: np.ndarray,
    level: Literal["orbital", "fock", "fock_lift"] = "fock",
) -> np.ndarray:
    """``sum_j c_j prod_k exp(-i(H_k + omega_j K_k)) psi`` (unnormalized).

    ``orbital`` acts on single-particle vectors or orbital matrices,
    ``fock`` applies each branch as a Gaussian map to a Fock vector, and
    ``fock_lift`` exponentiates lifted generators directly (oracle route).
    """
    psi = np.asarray(psi, dtype=complex)
    if level == "fock_lift":
        K, H = _splits(slices)
        Kf = np.stack([jw_lift(k).matrix for k in K])
        Hf = np.stack([jw_lift(h).matrix for h in H])
        out = np.zeros_like(psi)
        for w, c in zip(termset.omegas, termset.coeffs):
            phi = psi
            for k in range(len(Kf)):
                phi = expm_hermitian(Hf[k] + w * Kf[k]) @ phi
            out = out + c * phi
        return out
    seg = LCUSegment(termset, slices)
    branches = seg.branch_unitaries()
    if level == "orbital":
        return np.einsum("j,jab,b...->a...", termset.coeffs, branches, psi)
    if level == "fock":
        return np.einsum("j,ja->a", termset.coeffs, apply_gaussian(branches, psi[None]))
    raise ContractViolation(f"unknown level {level!r}")


def l1_report(spectrum: ChainSpectrum) -> dict:
    bound = 1.0 / np.sqrt(spectrum.P_win)
    rep = {"l1": spectrum.l1, "bound": float(bound), "P_win": spectrum.P_win, "margin": float(bound - spectrum.l1)}
    if rep["margin"] < -1e-12:
        raise InvariantViolation(f"l1 = {rep['l1']:.6f} exceeds 1/sqrt(P_win) = {bound:.6f}")
    return rep
