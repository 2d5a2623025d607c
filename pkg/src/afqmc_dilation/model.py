"""Hubbard-chain Hamiltonians, Jordan-Wigner lifts and exact references.

Orbitals are labelled by ``(site, spin)``.  The Fock basis index of an
occupation bitstring ``b_0 b_1 ... b_{n-1}`` is ``int(bitstring, 2)``, so
orbital 0 is the most significant bit, and ``c_p^dagger`` carries the sign
``(-1)**(number of occupied orbitals q < p)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import (
    ContractViolation,
    DegenerateOverlapError,
    InvalidModelError,
    ResourceLimitError,
)

Ordering = Literal["interleaved", "spin_blocked"]

DEFAULT_ORBITAL_CAP = 14
HERMITIAN_TOL = 1e-14


@dataclass(frozen=True)
class SpinOrbitalBasis:
    n_sites: int
    ordering: Ordering = "interleaved"

    def __post_init__(self):
        if self.n_sites < 1:
            raise InvalidModelError("n_sites must be positive")
        if self.ordering not in ("interleaved", "spin_blocked"):
            raise InvalidModelError(f"unknown ordering {self.ordering!r}")

    @property
    def n_orb(self) -> int:
        return 2 * self.n_sites

    def index(self, site: int, spin: int) -> int:
        """Orbital index of ``(site, spin)`` with spin 0 = up, 1 = down."""
        if self.ordering == "interleaved":
            return 2 * site + spin
        return spin * self.n_sites + site

    def to_spin_blocked(self) -> np.ndarray:
        """``perm[a]`` is the spin-blocked index of orbital ``a`` of this basis."""
        other = SpinOrbitalBasis(self.n_sites, "spin_blocked")
        perm = np.empty(self.n_orb, dtype=int)
        for site in range(self.n_sites):
            for spin in (0, 1):
                perm[self.index(site, spin)] = other.index(site, spin)
        return perm


@dataclass(frozen=True, eq=False)
class QuadraticOperator:
    """One-body operator ``sum_ij coeff[i, j] c_i^dagger c_j``."""

    basis: SpinOrbitalBasis
    coeff: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeff, dtype=complex)
        if c.shape != (self.basis.n_orb, self.basis.n_orb):
            raise ContractViolation(f"coefficient shape {c.shape} does not match basis")
        c.setflags(write=False)
        object.__setattr__(self, "coeff", c)

    @property
    def n_orb(self) -> int:
        return self.basis.n_orb

    @property
    def hermitian(self) -> bool:
        return bool(np.max(np.abs(self.coeff - self.coeff.conj().T), initial=0.0) <= HERMITIAN_TOL)

    def _like(self, coeff) -> "QuadraticOperator":
        return QuadraticOperator(self.basis, coeff)

    def __add__(self, other: "QuadraticOperator") -> "QuadraticOperator":
        return self._like(self.coeff + other.coeff)

    def __sub__(self, other: "QuadraticOperator") -> "QuadraticOperator":
        return self._like(self.coeff - other.coeff)

    def __mul__(self, scalar) -> "QuadraticOperator":
        return self._like(scalar * self.coeff)

    __rmul__ = __mul__

    def __neg__(self) -> "QuadraticOperator":
        return self._like(-self.coeff)

    def dagger(self) -> "QuadraticOperator":
        return self._like(self.coeff.conj().T)

    def commutator(self, other: "QuadraticOperator") -> "QuadraticOperator":
        # the lift of a one-body matrix commutator is the commutator of lifts
        return self._like(self.coeff @ other.coeff - other.coeff @ self.coeff)

    def norm(self) -> float:
        """Spectral norm of the coefficient matrix."""
        return float(np.linalg.norm(self.coeff, 2))


@dataclass(frozen=True, eq=False)
class TwoBodyChannel:
    """Square term ``-(lam / 2) v^2`` with ``v`` Hermitian.

    ``sigma`` satisfies ``sigma**2 == lam``, ``L = sigma v / sqrt(2)`` so the
    term equals ``-L^2``.  ``lambda_smd = -lam`` is the opposite-sign
    convention in which ``sigma**2 + lambda_smd = 0``.
    """

    lam: float
    v: QuadraticOperator

    def __post_init__(self):
        if not self.v.hermitian:
            raise ContractViolation("channel operator v must be Hermitian")

    @property
    def sigma(self) -> complex:
        if self.lam >= 0:
            return complex(np.sqrt(self.lam), 0.0)
        return complex(0.0, np.sqrt(-self.lam))

    @property
    def lambda_smd(self) -> float:
        return -self.lam

    @property
    def L(self) -> QuadraticOperator:
        s = self.sigma
        return self.v * (s.real if s.imag == 0 else s) * (1 / np.sqrt(2))


@dataclass(frozen=True, eq=False)
class FockOperator:
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_orb(self) -> int:
        return int(self.dim).bit_length() - 1


@dataclass(frozen=True, eq=False)
class ModelInstance:
    H1: QuadraticOperator
    channels: tuple[TwoBodyChannel, ...]
    E_T: float = 0.0
    scalar_offset: float = 0.0
    params: dict = field(default_factory=dict)

    @property
    def basis(self) -> SpinOrbitalBasis:
        return self.H1.basis

    @property
    def n_orb(self) -> int:
        return self.H1.n_orb

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def L_matrices(self) -> np.ndarray:
        """Stacked ``L_gamma`` coefficient matrices, shape ``(n_channels, n, n)``."""
        if not self.channels:
            return np.zeros((0, self.n_orb, self.n_orb), dtype=complex)
        return np.stack([ch.L.coeff for ch in self.channels])

    def with_shift(self, E_T: float) -> "ModelInstance":
        return ModelInstance(self.H1, self.channels, float(E_T), self.scalar_offset, dict(self.params))

    def channels_commute(self, tol: float = 1e-13) -> bool:
        vs = [ch.v.coeff for ch in self.channels]
        for a in range(len(vs)):
            for b in range(a + 1, len(vs)):
                if np.linalg.norm(vs[a] @ vs[b] - vs[b] @ vs[a]) > tol:
                    return False
        return True


def _bonds(L: int, pbc: bool) -> list[tuple[int, int]]:
    bonds = {(i, i + 1) for i in range(L - 1)}
    if pbc:
        bonds.add(tuple(sorted((L - 1, 0))))
    return sorted(bonds)


def hopping_matrix(basis: SpinOrbitalBasis, t: float, pbc: bool) -> np.ndarray:
    h = np.zeros((basis.n_orb, basis.n_orb))
    for i, j in _bonds(basis.n_sites, pbc):
        for s in (0, 1):
            a, b = basis.index(i, s), basis.index(j, s)
            h[a, b] -= t
            h[b, a] -= t
    return h


def build_hubbard(
    L: int,
    t: float = 1.0,
    U: float = 4.0,
    pbc: bool = False,
    ordering: Ordering = "interleaved",
    decomposition: Literal["spin", "charge"] = "spin",
    E_T: float = 0.0,
) -> ModelInstance:
    """Hubbard chain with interaction ``U sum_i (n_iu - 1/2)(n_id - 1/2)``.

    ``decomposition="spin"`` uses ``-(U/2)(n_u - n_d)^2 + U/4`` per site (real
    fields for ``U > 0``).  ``"charge"`` uses ``(U/2)(n_u + n_d)^2 - U(n_u + n_d)
    + U/4``, which gives imaginary couplings for ``U > 0``.  A two-site ring
    has a single bond, so ``pbc`` has no effect at ``L = 2``.
    """
    if L < 2:
        raise InvalidModelError("need at least two sites")
    if not t > 0:
        raise InvalidModelError("hopping t must be positive")
    basis = SpinOrbitalBasis(L, ordering)
    h1 = hopping_matrix(basis, t, pbc).astype(complex)
    channels = []
    if U != 0:
        for i in range(L):
            up, dn = basis.index(i, 0), basis.index(i, 1)
            v = np.zeros((basis.n_orb, basis.n_orb))
            if decomposition == "spin":
                v[up, up], v[dn, dn] = 1.0, -1.0
                lam = float(U)
            elif decomposition == "charge":
                v[up, up], v[dn, dn] = 1.0, 1.0
                lam = -float(U)
                h1[up, up] -= U
                h1[dn, dn] -= U
            else:
                raise InvalidModelError(f"unknown decomposition {decomposition!r}")
            channels.append(TwoBodyChannel(lam, QuadraticOperator(basis, v)))
    params = dict(L=L, t=t, U=U, pbc=pbc, ordering=ordering, decomposition=decomposition)
    return ModelInstance(QuadraticOperator(basis, h1), tuple(channels), float(E_T), L * U / 4.0, params)


# --- Jordan-Wigner -----------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _occupations(n: int) -> tuple[np.ndarray, np.ndarray]:
    states = np.arange(2**n)
    occ = (states[:, None] >> (n - 1 - np.arange(n))) & 1
    before = np.cumsum(occ, axis=1) - occ
    occ.setflags(write=False)
    before.setflags(write=False)
    return occ, before


def _check_cap(n_orb: int, cap: int) -> None:
    if n_orb > cap:
        raise ResourceLimitError(f"{n_orb} spin orbitals exceeds the dense cap of {cap}")


def jw_lift(op: QuadraticOperator | np.ndarray, cap: int = DEFAULT_ORBITAL_CAP) -> FockOperator:
    """Dense Fock matrix of a one-body operator."""
    h = op.coeff if isinstance(op, QuadraticOperator) else np.asarray(op)
    n = h.shape[0]
    _check_cap(n, cap)
    occ, before = _occupations(n)
    dim = 2**n
    states = np.arange(dim)
    out = np.zeros((dim, dim), dtype=complex)
    out[states, states] = occ @ np.diag(h)
    for i, j in zip(*np.nonzero(h)):
        if i == j:
            continue
        src = np.flatnonzero((occ[:, j] == 1) & (occ[:, i] == 0))
        dst = src - (1 << (n - 1 - j)) + (1 << (n - 1 - i))
        parity = before[src, j] + before[src, i] - (1 if j < i else 0)
        out[dst, src] += h[i, j] * (1 - 2 * (parity & 1))
    return FockOperator(out)


def annihilation_operators(n_orb: int, cap: int = DEFAULT_ORBITAL_CAP) -> list[np.ndarray]:
    """``c_p`` as explicit Kronecker products ``Z x ... x Z x a x I x ... x I``."""
    _check_cap(n_orb, cap)
    z = np.diag([1.0, -1.0])
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    eye = np.eye(2)
    ops = []
    for p in range(n_orb):
        m = np.ones((1, 1))
        for q in range(n_orb):
            m = np.kron(m, z if q < p else a if q == p else eye)
        ops.append(m)
    return ops


def hubbard_direct(L: int, t: float, U: float, pbc: bool = False, ordering: Ordering = "interleaved") -> FockOperator:
    """Lattice Hamiltonian built directly from creation/annihilation matrices."""
    basis = SpinOrbitalBasis(L, ordering)
    c = annihilation_operators(basis.n_orb)
    dim = 2**basis.n_orb
    eye = np.eye(dim)
    H = np.zeros((dim, dim))
    for i, j in _bonds(L, pbc):
        for s in (0, 1):
            a, b = basis.index(i, s), basis.index(j, s)
            hop = c[a].T @ c[b]
            H -= t * (hop + hop.T)
    for i in range(L):
        nu = c[basis.index(i, 0)].T @ c[basis.index(i, 0)]
        nd = c[basis.index(i, 1)].T @ c[basis.index(i, 1)]
        H += U * (nu - 0.5 * eye) @ (nd - 0.5 * eye)
    return FockOperator(H.astype(complex))


def hamiltonian(model: ModelInstance, cap: int = DEFAULT_ORBITAL_CAP) -> FockOperator:
    """Reassembled ``lift(H1) - sum lift(L)^2 + scalar_offset`` (``E_T`` not included)."""
    H = jw_lift(model.H1, cap).matrix.copy()
    for ch in model.channels:
        lv = jw_lift(ch.v, cap).matrix
        H -= 0.5 * ch.lam * (lv @ lv)
    H += model.scalar_offset * np.eye(H.shape[0])
    return FockOperator(H)


def number_operator(n_orb: int) -> FockOperator:
    occ, _ = _occupations(n_orb)
    return FockOperator(np.diag(occ.sum(axis=1)).astype(complex))


def fock_index(bitstring: str) -> int:
    if not bitstring or set(bitstring) - {"0", "1"}:
        raise ContractViolation(f"invalid occupation bitstring {bitstring!r}")
    return int(bitstring, 2)


def basis_state(bitstring: str) -> np.ndarray:
    psi = np.zeros(2 ** len(bitstring), dtype=complex)
    psi[fock_index(bitstring)] = 1.0
    return psi


def occupied_orbitals(bitstring: str) -> tuple[int, ...]:
    fock_index(bitstring)
    return tuple(p for p, b in enumerate(bitstring) if b == "1")


def sector_indices(n_orb: int, n_particles: int) -> np.ndarray:
    occ, _ = _occupations(n_orb)
    return np.flatnonzero(occ.sum(axis=1) == n_particles)


# --- exact references ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Eigensystem:
    values: np.ndarray
    vectors: np.ndarray  # columns embedded in the full Fock space
    sector: int | None = None

    @property
    def E0(self) -> float:
        return float(self.values[0])

    @property
    def gap(self) -> float:
        return float(self.values[1] - self.values[0])

    @property
    def ground_state(self) -> np.ndarray:
        return self.vectors[:, 0]


def exact_eigensystem(H: FockOperator | np.ndarray, particle_sector: int | None = None) -> Eigensystem:
    m = H.matrix if isinstance(H, FockOperator) else np.asarray(H)
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.conj().T)) > 1e-10 * scale:
        raise ContractViolation("exact_eigensystem requires a Hermitian matrix")
    if particle_sector is None:
        w, v = np.linalg.eigh(m)
        return Eigensystem(w, v, None)
    n = int(m.shape[0]).bit_length() - 1
    idx = sector_indices(n, particle_sector)
    if idx.size == 0:
        raise ContractViolation(f"empty particle sector {particle_sector}")
    w, vs = np.linalg.eigh(m[np.ix_(idx, idx)])
    v = np.zeros((m.shape[0], idx.size), dtype=complex)
    v[idx] = vs
    return Eigensystem(w, v, particle_sector)


@dataclass(frozen=True, eq=False)
class ImaginaryTimeReference:
    tau: np.ndarray
    states: np.ndarray  # (n_tau, dim), normalized
    E_mixed: np.ndarray
    E_rayleigh: np.ndarray


def imaginary_time_reference(
    model: ModelInstance | FockOperator,
    psi_T: np.ndarray,
    tau_grid: Sequence[float],
) -> ImaginaryTimeReference:
    """Deterministic ``exp(-tau H) psi_T`` references; independent of ``E_T``."""
    H = hamiltonian(model).matrix if isinstance(model, ModelInstance) else model.matrix
    psi_T = np.asarray(psi_T, dtype=complex)
    if abs(np.vdot(psi_T, psi_T) - 1) > 1e-10:
        raise ContractViolation("psi_T must be normalized")
    w, V = np.linalg.eigh(H)
    coef = V.conj().T @ psi_T
    weight = np.abs(coef) ** 2
    support = weight > 0
    e_min = w[support].min() if support.any() else 0.0
    taus = np.asarray(tau_grid, dtype=float)
    states, mixed, rayleigh = [], [], []
    for tau in taus:
        damp = np.exp(-tau * (w - e_min))
        den = np.sum(weight * damp)
        if den <= 0 or not np.isfinite(den):
            raise DegenerateOverlapError(f"<psi_T|exp(-tau H)|psi_T> vanished at tau={tau}")
        mixed.append(np.sum(weight * damp * w) / den)
        c = damp * coef
        phi = V @ c
        nrm = np.linalg.norm(phi)
        states.append(phi / nrm)
        rayleigh.append(np.sum(np.abs(c) ** 2 * w) / nrm**2)
    return ImaginaryTimeReference(taus, np.array(states), np.array(mixed), np.array(rayleigh))
