"""Ancilla-chain dilation of non-unitary slice propagators.

The chain lives on ``M + 1 = 2**n_A`` sites with spacing ``h = 1/M``.  Its
real skew generator ``F`` discretizes ``p d/dp + 1/2``; for ``theta = 2`` the
vector with entries ``(sqrt(h/2), sqrt(h), ..., sqrt(h))`` is an eigenvector
of ``theta F`` with eigenvalue 1 except for a defect at the last site.  A
readout window of the first ``j_star + 1`` sites cannot see that defect for
the first ``m_order = M - j_star`` powers, which gives

    <l| (theta F)^k |r> = 1,   0 <= k <= m_order,

and therefore ``(<l| x I) exp(-i(I x H + i theta F x K)) (|r> x I)`` matches
``exp(K - iH)`` through order ``m_order``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Literal, Sequence

import numpy as np

from .errors import ChainTooSmallError, ResourceLimitError
from .gaussian import expm_hermitian, fock_matrix, expm_batched
from .magnus import SliceGenerator, hermitian_split
from .model import jw_lift

Boundary = Literal["eigen", "trapezoid"]
Window = Literal["projected", "uniform"]
Level = Literal["orbital", "fock"]

DEFAULT_MAX_DIM = 8192


def stencil(M: int) -> np.ndarray:
    """Skew tridiagonal matrix ``F`` on ``M + 1`` sites (grid ``p_j = j / M``)."""
    h = 1.0 / M
    p = np.arange(M + 1) * h
    F = np.zeros((M + 1, M + 1))
    F[0, 1] = 1 / (2 * math.sqrt(2))
    F[1, 0] = -F[0, 1]
    for i in range(1, M):
        if i >= 2:
            F[i, i - 1] = -(p[i] + p[i - 1]) / (4 * h)
        F[i, i + 1] = (p[i + 1] + p[i]) / (4 * h)
    F[M, M - 1] = -(p[M - 1] + p[M]) / (4 * h)
    return F


@dataclass(frozen=True, eq=False)
class AncillaChain:
    n_A: int
    theta: float
    F: np.ndarray
    r: np.ndarray  # unit norm
    l: np.ndarray  # <l|r> = 1
    r_raw: np.ndarray
    j_star: int
    boundary: Boundary = "eigen"
    window: Window = "projected"

    @property
    def M(self) -> int:
        return 2**self.n_A - 1

    @property
    def dim(self) -> int:
        return self.M + 1

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def m_order(self) -> int:
        return self.M - self.j_star

    @property
    def generator(self) -> np.ndarray:
        """``theta F`` (real skew)."""
        return self.theta * self.F

    @property
    def hermitian_generator(self) -> np.ndarray:
        """``i theta F`` (Hermitian)."""
        return 1j * self.theta * self.F

    @property
    def window_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim, dtype=bool)
        mask[: self.j_star + 1] = True
        return mask

    @property
    def P_win(self) -> float:
        return float(np.sum(self.r[self.window_mask] ** 2))

    @property
    def boundary_defect(self) -> np.ndarray:
        """``(theta F) r_raw - r_raw``."""
        return self.generator @ self.r_raw - self.r_raw

    @property
    def alpha(self) -> float:
        """Measured defect coefficient at the last site."""
        return float(self.boundary_defect[-1])


def build_chain(
    n_A: int,
    theta: float = 2.0,
    boundary: Boundary = "eigen",
    window: Window = "projected",
) -> AncillaChain:
    """Chain with boundary vector and readout functional.

    ``boundary="eigen"`` uses square-root trapezoid weights, which make the
    defect of ``theta F r - r`` a single entry at site ``M`` (for
    ``theta = 2``); ``"trapezoid"`` uses plain trapezoid weights
    ``(h/2, h, ..., h, h/2)``.  ``window="projected"`` takes
    ``l = Pi_win r / P_win``; ``"uniform"`` takes the flat window sum.  Both
    functionals satisfy ``<l|r> = 1``.
    """
    if n_A < 2:
        raise ChainTooSmallError("the chain needs n_A >= 2")
    M = 2**n_A - 1
    h = 1.0 / M
    if boundary == "eigen":
        r_raw = np.r_[math.sqrt(h / 2), np.full(M, math.sqrt(h))]
    elif boundary == "trapezoid":
        r_raw = np.r_[h / 2, np.full(M - 1, h), h / 2]
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    r = r_raw / np.linalg.norm(r_raw)
    j_star = M // 2
    l = np.zeros(M + 1)
    if window == "projected":
        l[: j_star + 1] = r[: j_star + 1]
    elif window == "uniform":
        l[: j_star + 1] = 1.0
    else:
        raise ValueError(f"unknown window {window!r}")
    l /= l @ r
    return AncillaChain(n_A, float(theta), stencil(M), r, l, r_raw, j_star, boundary, window)


# --- moment identities --------------------------------------------------------


def _exact_iterates(chain: AncillaChain, k_max: int) -> list[list[Fraction]]:
    """``G^k 1`` for ``G = D^-1 theta F D`` with ``D = diag(1/sqrt2, 1, ...)``."""
    M = chain.M
    th = Fraction(chain.theta).limit_denominator(10**12)
    up = [th * Fraction(2 * i + 1, 4) for i in range(M)]  # G[i, i+1]
    down = [None] + [-th * Fraction(2 * i - 1, 4) for i in range(1, M + 1)]  # G[i, i-1]
    up[0] = th / 2
    down[1] = -th / 4
    y = [Fraction(1)] * (M + 1)
    out = [y]
    for _ in range(k_max):
        z = [Fraction(0)] * (M + 1)
        for i in range(M + 1):
            acc = Fraction(0)
            if i < M:
                acc += up[i] * y[i + 1]
            if i > 0:
                acc += down[i] * y[i - 1]
            z[i] = acc
        y = z
        out.append(y)
    return out


def _exact_supported(chain: AncillaChain) -> bool:
    return chain.boundary == "eigen" and float(Fraction(chain.theta).limit_denominator(10**12)) == chain.theta


def moments(chain: AncillaChain, k_max: int, method: str = "auto") -> np.ndarray:
    """``mu_k = <l|(theta F)^k|r>`` for ``k = 0..k_max`` as floats."""
    if method == "auto":
        method = "exact" if _exact_supported(chain) else "float"
    if method == "float":
        out = np.empty(k_max + 1)
        v = chain.r.copy()
        for k in range(k_max + 1):
            out[k] = chain.l @ v
            v = chain.generator @ v
        return out
    return np.array([float(m) + 1.0 for m in _exact_residual_parts(chain, k_max)])


def _exact_residual_parts(chain: AncillaChain, k_max: int) -> list[float]:
    """``mu_k - 1`` evaluated from exact rational iterates."""
    if not _exact_supported(chain):
        raise ValueError("exact moments need the eigen boundary and a rational theta")
    win = range(chain.j_star + 1)
    res = []
    for y in _exact_iterates(chain, k_max):
        if chain.window == "projected":
            # weights d_i^2 = 1/2, 1, 1, ...
            num = Fraction(1, 2) * (y[0] - 1) + sum(y[i] - 1 for i in win if i > 0)
            den = Fraction(1, 2) + chain.j_star
            res.append(float(num / den))
        else:
            a = y[0] - 1
            b = sum(y[i] - 1 for i in win if i > 0)
            res.append((float(a) / math.sqrt(2) + float(b)) / (1 / math.sqrt(2) + chain.j_star))
    return res


def moment_check(chain: AncillaChain, k_max: int | None = None, method: str = "auto") -> np.ndarray:
    """Residuals ``|<l|(theta F)^k|r> - 1|`` for ``k = 0..k_max`` (default ``M``)."""
    if k_max is None:
        k_max = chain.M
    if method == "auto":
        method = "exact" if _exact_supported(chain) else "float"
    if method == "exact":
        return np.abs(np.array(_exact_residual_parts(chain, k_max)))
    return np.abs(moments(chain, k_max, "float") - 1.0)


# --- dilated slices -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DilatedStep:
    H_tilde: np.ndarray
    U: np.ndarray


def _system_split(slc, level: Level) -> tuple[np.ndarray, np.ndarray]:
    omega = slc.omega if isinstance(slc, SliceGenerator) else np.asarray(slc)
    K, H = hermitian_split(omega)
    if level == "fock":
        K, H = jw_lift(K).matrix, jw_lift(H).matrix
    elif level != "orbital":
        raise ValueError(f"unknown level {level!r}")
    return K, H


def dilated_hamiltonian(chain: AncillaChain, K: np.ndarray, H: np.ndarray, max_dim: int = DEFAULT_MAX_DIM) -> np.ndarray:
    dim = chain.dim * H.shape[-1]
    if dim > max_dim:
        raise ResourceLimitError(f"dilated dimension {dim} exceeds {max_dim}")
    return np.kron(np.eye(chain.dim), H) + np.kron(chain.hermitian_generator, K)


def dilate_slice(chain: AncillaChain, slc, level: Level = "fock", max_dim: int = DEFAULT_MAX_DIM) -> DilatedStep:
    K, H = _system_split(slc, level)
    Ht = dilated_hamiltonian(chain, K, H, max_dim)
    return DilatedStep(Ht, expm_hermitian(Ht))


def project(chain: AncillaChain, U: np.ndarray) -> np.ndarray:
    """``(<l| x I) U (|r> x I)`` on the system space."""
    n = U.shape[-1] // chain.dim
    blocks = U.reshape(chain.dim, n, chain.dim, n)
    return np.einsum("a,aibj,b->ij", chain.l, blocks, chain.r)


@dataclass(frozen=True, eq=False)
class DilatedSegmentResult:
    state_out: np.ndarray
    success_amplitude: float
    flagged: bool


def segment_propagate_dilated(
    chain: AncillaChain,
    slices: Sequence,
    psi: np.ndarray,
    level: Level = "fock",
    success_floor: float = 1e-6,
    max_dim: int = DEFAULT_MAX_DIM,
) -> DilatedSegmentResult:
    """Apply all dilated slices, then project once with ``<l|``."""
    psi = np.asarray(psi, dtype=complex)
    state = np.einsum("a,i...->ai...", chain.r.astype(complex), psi)
    for slc in slices:
        step = dilate_slice(chain, slc, level, max_dim)
        flat = state.reshape(step.U.shape[0], -1)
        state = (step.U @ flat).reshape(state.shape)
    total = np.linalg.norm(state)
    windowed = np.linalg.norm(state[chain.window_mask])
    amp = float(windowed / total) if total > 0 else 0.0
    out = np.einsum("a,ai...->i...", chain.l, state)
    return DilatedSegmentResult(out, amp, amp < success_floor)


def segment_projection(chain: AncillaChain, slices: Sequence, level: Level = "fock", max_dim: int = DEFAULT_MAX_DIM) -> np.ndarray:
    """Projected segment operator ``(<l| x I) U_n ... U_1 (|r> x I)``."""
    U = None
    for slc in slices:
        step = dilate_slice(chain, slc, level, max_dim).U
        U = step if U is None else step @ U
    return project(chain, U)


# --- error sweep and remainder bounds ----------------------------------------


def factorial_bound(norm_omega, m: int):
    """``||Omega||^(m+1) / (m+1)! * exp(||Omega||)``."""
    x = np.asarray(norm_omega, dtype=float)
    return x ** (m + 1) / math.factorial(m + 1) * np.exp(x)


def moment_weighted_bound(chain: AncillaChain, norm_H, norm_K, b_max: int | None = None):
    """``exp(||H||) sum_{b > m} |mu_b - 1| ||K||^b / b!`` with a tail estimate.

    Expanding both exponentials in words of ``H`` and ``K`` shows every word
    with ``b`` factors of ``K`` picks up ``mu_b - 1``; ``|mu_b| <= ||l|| rho^b``
    with ``rho = ||theta F||`` bounds the omitted tail.
    """
    nH = np.asarray(norm_H, dtype=float)
    nK = np.asarray(norm_K, dtype=float)
    rho = float(np.linalg.norm(chain.generator, 2))
    lnorm = float(np.linalg.norm(chain.l))
    x = max(1.0, rho) * float(np.max(nK, initial=0.0))
    if b_max is None:
        b_max = max(chain.M, int(2 * math.e * x) + 40)
    excess = moments(chain, b_max) - 1.0
    total = np.zeros(np.broadcast(nH, nK).shape)
    for b in range(chain.m_order + 1, b_max + 1):
        total = total + abs(excess[b]) * nK**b / math.factorial(b)
    tail = (lnorm + 1) * x ** (b_max + 1) / math.factorial(b_max + 1) * math.exp(x)
    return np.exp(nH) * (total + tail)


@dataclass(frozen=True, eq=False)
class SweepRow:
    n_A: int
    m_order: int
    errors: np.ndarray
    factorial_bounds: np.ndarray
    rigorous_bounds: np.ndarray
    floor: float = 0.0  # rounding allowance of the measured errors

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def p90(self) -> float:
        return float(np.percentile(self.errors, 90))

    @property
    def bound_max(self) -> float:
        return float(np.max(self.factorial_bounds))

    @property
    def factorial_violations(self) -> int:
        return int(np.sum(self.errors > self.factorial_bounds + self.floor))

    @property
    def rigorous_violations(self) -> int:
        return int(np.sum(self.errors > self.rigorous_bounds + self.floor))


def dilation_error_sweep(
    omegas: np.ndarray,
    n_A_list: Sequence[int],
    level: Level = "fock",
    theta: float = 2.0,
    boundary: Boundary = "eigen",
    window: Window = "projected",
) -> list[SweepRow]:
    """One-step errors ``||exp(Omega) - projected||_2`` over an ensemble of slices."""
    omegas = np.asarray(omegas)
    if level == "fock":
        exact = fock_matrix(expm_batched(omegas))
    else:
        exact = expm_batched(omegas)
    splits = [_system_split(om, level) for om in omegas]
    norm_omega = np.array([np.linalg.norm(K - 1j * H, 2) for K, H in splits])
    norm_K = np.array([np.linalg.norm(K, 2) for K, _ in splits])
    norm_H = np.array([np.linalg.norm(H, 2) for _, H in splits])
    rows = []
    for n_A in n_A_list:
        chain = build_chain(n_A, theta, boundary, window)
        errs = np.empty(len(omegas))
        for s, (K, H) in enumerate(splits):
            approx = project(chain, expm_hermitian(dilated_hamiltonian(chain, K, H)))
            errs[s] = np.linalg.norm(exact[s] - approx, 2)
        rows.append(SweepRow(
            n_A,
            chain.m_order,
            errs,
            factorial_bound(norm_omega, chain.m_order),
            moment_weighted_bound(chain, norm_H, norm_K),
            16 * np.finfo(float).eps * max(1.0, float(np.linalg.norm(chain.l))),
        ))
    return rows
