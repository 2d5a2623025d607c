"""Givens-rotation circuits for one-body propagators.

Qubit ``q`` holds orbital ``q`` of the compile basis and is the most
significant bit of the statevector index, matching
:func:`afqmc_dilation.model.jw_lift`.  On adjacent qubits the Jordan-Wigner
strings cancel, so a Givens rotation ``g`` on orbitals ``(p, p+1)`` is the
two-qubit gate that acts as ``g`` on ``span(|10>, |01>)`` and fixes ``|00>``
and ``|11>`` (``det g = 1``).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation, ResourceLimitError, UnsupportedFeatureError
from .model import QuadraticOperator, SpinOrbitalBasis, fock_index

DEFAULT_QUBIT_CAP = 20


# --- basis ordering -----------------------------------------------------------


def reorder_spin_blocks(op: QuadraticOperator) -> QuadraticOperator:
    """Permute an operator to spin-blocked orbital order."""
    perm = op.basis.to_spin_blocked()
    coeff = np.zeros_like(op.coeff)
    coeff[np.ix_(perm, perm)] = op.coeff
    return QuadraticOperator(SpinOrbitalBasis(op.basis.n_sites, "spin_blocked"), coeff)


def permute_matrix(u: np.ndarray, perm: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    out[np.ix_(perm, perm)] = u
    return out


def permute_fock_state(psi: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Relabel orbital ``a`` as ``perm[a]`` in a Fock vector, with fermionic signs.

    A basis state is an ascending product of creation operators; after
    relabelling, re-sorting the product costs the sign of that permutation.
    """
    n = len(perm)
    out = np.zeros_like(psi)
    for x in np.flatnonzero(psi):
        occ = [p for p in range(n) if (x >> (n - 1 - p)) & 1]
        image = [int(perm[p]) for p in occ]
        inversions = sum(1 for a in range(len(image)) for b in range(a + 1, len(image)) if image[a] > image[b])
        y = sum(1 << (n - 1 - p) for p in image)
        out[y] += (-1) ** inversions * psi[x]
    return out


def permute_bitstring(bits: str, perm: np.ndarray) -> str:
    out = ["0"] * len(bits)
    for a, b in enumerate(bits):
        out[perm[a]] = b
    return "".join(out)


# --- Givens decomposition -----------------------------------------------------


def givens_matrix(theta: float, phi: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s * np.exp(-1j * phi)], [s * np.exp(1j * phi), c]])


@dataclass(frozen=True, eq=False)
class GivensLayer:
    """``u = R_1 R_2 ... R_m diag(phases)`` with ``R`` adjacent rotations."""

    n_orb: int
    rotations: tuple[tuple[int, float, float], ...]  # (p, theta, phi) acting on (p, p+1)
    phases: np.ndarray

    def unitary(self) -> np.ndarray:
        u = np.diag(self.phases).astype(complex)
        for p, theta, phi in reversed(self.rotations):
            g = np.eye(self.n_orb, dtype=complex)
            g[p:p + 2, p:p + 2] = givens_matrix(theta, phi)
            u = g @ u
        return u


def givens_decompose(u: np.ndarray, tol: float = 1e-10) -> GivensLayer:
    """Column-by-column elimination of the lower triangle with adjacent rows.

    Row rotations ``A_m ... A_1 u = D`` give ``u = A_1^dag ... A_m^dag D`` and
    each ``A^dag`` is recorded as a ``givens_matrix(theta, phi)``.
    """
    u = np.array(u, dtype=complex)
    n = u.shape[0]
    if u.shape != (n, n) or np.linalg.norm(u.conj().T @ u - np.eye(n)) > tol:
        raise ContractViolation("givens_decompose needs a unitary matrix")
    rots = []
    for col in range(n - 1):
        for row in range(n - 2, col - 1, -1):
            a, b = u[row, col], u[row + 1, col]
            if abs(b) <= 1e-15:
                continue
            rho = math.hypot(abs(a), abs(b))
            theta = math.atan2(abs(b), abs(a))
            phi = float(np.angle(b) - (np.angle(a) if abs(a) > 0 else 0.0))
            g = givens_matrix(theta, phi)
            u[row:row + 2] = g.conj().T @ u[row:row + 2]
            u[row + 1, col] = 0.0
            rots.append((row, theta, phi))
    return GivensLayer(n, tuple(rots), np.diag(u).copy())


# --- circuit IR ---------------------------------------------------------------


@dataclass(frozen=True)
class Gate:
    name: str  # "x", "p", "givens" (primitive export gates: "cx", "cry")
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()


@dataclass(eq=False)
class CircuitIR:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        level = [0] * self.n_qubits
        for g in self.gates:
            d = max(level[q] for q in g.qubits) + 1
            for q in g.qubits:
                level[q] = d
        return max(level, default=0)

    @property
    def rotation_count(self) -> int:
        return sum(1 for g in self.gates if g.name == "givens")

    @property
    def two_qubit_count(self) -> int:
        # each Givens block expands to two cx and one cry
        return sum(3 if g.name == "givens" else 1 for g in self.gates if len(g.qubits) == 2)

    def sidecar(self) -> str:
        return json.dumps(
            {"n_qubits": self.n_qubits, "depth": self.depth, "two_qubit_count": self.two_qubit_count,
             "rotations": self.rotation_count, "provenance": self.metadata},
            indent=2, sort_keys=True,
        ) + "\n"


def compile_propagator(
    u: np.ndarray,
    initial_occupation: str,
    ordering: str = "interleaved",
    n_sites: int | None = None,
    metadata: dict | None = None,
    tol: float = 1e-10,
) -> CircuitIR:
    """Occupation prep followed by a Givens network for ``Gamma(u)``.

    ``u`` and the bitstring are given in ``ordering``; the circuit acts on the
    spin-blocked basis, where each spin block is decomposed separately.
    """
    u = np.asarray(u, dtype=complex)
    n = u.shape[0]
    if len(initial_occupation) != n:
        raise ContractViolation("occupation length does not match the propagator")
    L = n_sites or n // 2
    basis = SpinOrbitalBasis(L, ordering)
    perm = basis.to_spin_blocked()
    ub = permute_matrix(u, perm)
    bits = permute_bitstring(initial_occupation, perm)
    if max(np.abs(ub[:L, L:]).max(), np.abs(ub[L:, :L]).max()) > tol:
        raise UnsupportedFeatureError("propagator mixes spin blocks")
    circ = CircuitIR(n, [], {"basis_ordering": "spin_blocked", "source_ordering": ordering, **(metadata or {})})
    for q, b in enumerate(bits):
        if b == "1":
            circ.gates.append(Gate("x", (q,)))
    for off in (0, L):
        layer = givens_decompose(ub[off:off + L, off:off + L], tol)
        # Gamma(D) acts first, then the rotations from last to first
        for j, ph in enumerate(layer.phases):
            ang = float(np.angle(ph))
            if abs(ang) > 1e-15:
                circ.gates.append(Gate("p", (off + j,), (ang,)))
        for p, theta, phi in reversed(layer.rotations):
            circ.gates.append(Gate("givens", (off + p, off + p + 1), (theta, phi)))
    return circ


# --- statevector engine -------------------------------------------------------


def _apply_1q(psi: np.ndarray, n: int, q: int, m: np.ndarray) -> np.ndarray:
    t = psi.reshape(2**q, 2, 2 ** (n - q - 1))
    return np.einsum("ab,ibj->iaj", m, t).reshape(-1)


def _apply_2q(psi: np.ndarray, n: int, q1: int, q2: int, m: np.ndarray) -> np.ndarray:
    t = psi.reshape([2] * n)
    t = np.moveaxis(t, (q1, q2), (0, 1))
    shp = t.shape
    t = (m @ t.reshape(4, -1)).reshape(shp)
    return np.moveaxis(t, (0, 1), (q1, q2)).reshape(-1)


def _ry(a: float) -> np.ndarray:
    c, s = math.cos(a / 2), math.sin(a / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _gate_matrix(g: Gate) -> np.ndarray:
    if g.name == "x":
        return np.array([[0, 1], [1, 0]], dtype=complex)
    if g.name == "p":
        return np.diag([1, np.exp(1j * g.params[0])])
    if g.name == "ry":
        return _ry(g.params[0])
    if g.name == "cx":
        return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    if g.name == "cry":
        m = np.eye(4, dtype=complex)
        m[2:, 2:] = _ry(g.params[0])
        return m
    if g.name == "givens":
        gm = givens_matrix(*g.params)
        m = np.eye(4, dtype=complex)
        # basis |00>, |01>, |10>, |11>; |10> is orbital p occupied
        m[2, 2], m[1, 2] = gm[0, 0], gm[1, 0]
        m[2, 1], m[1, 1] = gm[0, 1], gm[1, 1]
        return m
    raise ContractViolation(f"unknown gate {g.name!r}")


def emulate(circuit: CircuitIR, initial: np.ndarray | None = None, cap: int = DEFAULT_QUBIT_CAP) -> np.ndarray:
    """Exact statevector, starting from ``|0...0>`` unless ``initial`` is given."""
    n = circuit.n_qubits
    if n > cap:
        raise ResourceLimitError(f"{n} qubits exceeds the emulator cap of {cap}")
    if initial is None:
        psi = np.zeros(2**n, dtype=complex)
        psi[0] = 1.0
    else:
        psi = np.array(initial, dtype=complex)
    for g in circuit.gates:
        m = _gate_matrix(g)
        psi = _apply_1q(psi, n, g.qubits[0], m) if len(g.qubits) == 1 else _apply_2q(psi, n, *g.qubits, m)
    return psi


def sample_shots(psi: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial counts over computational basis states."""
    p = np.abs(psi) ** 2
    return rng.multinomial(shots, p / p.sum())


def shot_amplitudes(psi: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """``sqrt(counts / shots)`` magnitudes carrying the statevector phases."""
    if shots <= 0:
        return np.array(psi, dtype=complex)
    counts = sample_shots(psi, shots, rng)
    return np.sqrt(counts / shots) * np.exp(1j * np.angle(psi))


# --- QASM 3 -------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _expand(g: Gate) -> list[str]:
    if g.name == "x":
        return [f"x q[{g.qubits[0]}];"]
    if g.name == "p":
        return [f"p({_fmt(g.params[0])}) q[{g.qubits[0]}];"]
    if g.name == "givens":
        a, b = g.qubits
        theta, phi = g.params
        return [
            f"p({_fmt(-phi)}) q[{b}];",
            f"cx q[{a}], q[{b}];",
            f"cry({_fmt(-2 * theta)}) q[{b}], q[{a}];",
            f"cx q[{a}], q[{b}];",
            f"p({_fmt(phi)}) q[{b}];",
        ]
    raise ContractViolation(f"cannot export gate {g.name!r}")


def export_qasm(circuit: CircuitIR) -> str:
    lines = ["OPENQASM 3.0;", 'include "stdgates.inc";', f"qubit[{circuit.n_qubits}] q;"]
    for key in sorted(circuit.metadata):
        lines.insert(1, f"// {key}: {circuit.metadata[key]}")
    for g in circuit.gates:
        lines.extend(_expand(g))
    return "\n".join(lines) + "\n"


_GATE_RE = re.compile(r"^(\w+)(?:\(([^)]*)\))?\s+(.+);$")


def parse_qasm(text: str) -> CircuitIR:
    """Parse the subset written by :func:`export_qasm`."""
    n = None
    gates = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("//") or line.startswith("OPENQASM") or line.startswith("include"):
            continue
        m = re.match(r"^qubit\[(\d+)\]\s+q;$", line)
        if m:
            n = int(m.group(1))
            continue
        m = _GATE_RE.match(line)
        if not m:
            raise ContractViolation(f"unsupported QASM line: {line!r}")
        name, params, args = m.groups()
        qubits = tuple(int(x) for x in re.findall(r"q\[(\d+)\]", args))
        vals = tuple(float(v) for v in params.split(",")) if params else ()
        gates.append(Gate(name, qubits, vals))
    if n is None:
        raise ContractViolation("missing qubit register declaration")
    return CircuitIR(n, gates, {})
