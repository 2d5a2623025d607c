"""Trajectory ensembles, estimators, segment chaining and the contraction audit.

A trajectory starts from a Fock vector ``psi`` and applies ``n_T`` slice maps,

    phi_k = exp(dt (E_T - offset)) * G_k phi_{k-1},

where ``G_k`` is the Gaussian map of ``exp(Omega_k)`` (``exact_expm``), the
all-term branch sum (``lcu``) or the projected dilated step (``dilation``).
Only the particle sectors occupied by ``psi`` are stored, so states are
vectors over ``support`` indices of the full Fock space.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .dilation import build_chain, dilated_hamiltonian
from .errors import ContractViolation, DegenerateOverlapError, SignProblemWarning
from .gaussian import determinant_amplitudes, expm_batched, expm_hermitian, fock_matrix, sector_block, sector_subsets
from .lcu import chain_spectrum, select_terms
from .magnus import (
    NoiseMode,
    NoiseSample,
    aggregate_increments,
    hermitian_split,
    mean_slice_propagator,
    sample_path_noise,
    slice_generators,
    slice_norm_bound,
)
from .model import ModelInstance, basis_state, exact_eigensystem, hamiltonian, imaginary_time_reference, jw_lift
from .rng import CounterRNG

Backend = Literal["exact_expm", "dilation", "lcu"]

STREAM_NOISE = 1
STREAM_BOOTSTRAP = 2


@dataclass(frozen=True)
class SegmentConfig:
    tau: float = 0.3
    dt: float = 0.05
    order: int = 2
    backend: Backend = "exact_expm"
    n_A: int = 4
    theta: float = 2.0
    noise: NoiseMode = "gaussian"
    retention: str = "threshold"
    eps: float = 1e-8
    top_k: int | None = None
    success_floor: float = 1e-6
    commutator_form: str = "derived"

    def __post_init__(self):
        if not (self.tau > 0 and self.dt > 0):
            raise ContractViolation("tau and dt must be positive")
        if self.backend not in ("exact_expm", "dilation", "lcu"):
            raise ContractViolation(f"unknown backend {self.backend!r}")

    @property
    def n_T(self) -> int:
        return max(1, int(round(self.tau / self.dt)))

    @property
    def dt_eff(self) -> float:
        return self.tau / self.n_T

    def regime(self, model: ModelInstance) -> dict:
        """Segment norm budget against ``e theta K_seg <= 1``."""
        k_seg = self.n_T * slice_norm_bound(model, self.dt_eff)
        ratio = math.e * self.theta * k_seg
        return {"K_segment": k_seg, "regime_ratio": ratio, "in_regime": ratio <= 1.0}


def trial_state(psi_T, n_orb: int) -> np.ndarray:
    if isinstance(psi_T, str):
        if len(psi_T) != n_orb:
            raise ContractViolation(f"bitstring {psi_T!r} does not have {n_orb} orbitals")
        return basis_state(psi_T)
    psi = np.asarray(psi_T, dtype=complex)
    if psi.shape != (2**n_orb,):
        raise ContractViolation("trial state has the wrong dimension")
    return psi


def _support(psi: np.ndarray, n_orb: int) -> list[tuple[int, np.ndarray]]:
    sectors = []
    for N in range(n_orb + 1):
        _, idx = sector_subsets(n_orb, N)
        if np.any(psi[idx] != 0):
            sectors.append((N, idx))
    return sectors


# --- trajectory engine --------------------------------------------------------


def _chunk_noise(model: ModelInstance, cfg: SegmentConfig, rng: CounterRNG, ids: np.ndarray) -> NoiseSample:
    return sample_path_noise(cfg.dt_eff, cfg.n_T, model.n_channels, cfg.noise, rng, ids)


def _propagate_chunk(model, cfg, psi0, ids, rng, omegas=None):
    """States over the support for each step: ``(c, n_T + 1, d)`` and success amplitudes."""
    n = model.n_orb
    sectors = _support(psi0, n)
    if omegas is None:
        omegas = slice_generators(model, _chunk_noise(model, cfg, rng, ids), cfg.order, cfg.commutator_form)
    c, n_T = omegas.shape[:2]
    scale = math.exp(cfg.dt_eff * (model.E_T - model.scalar_offset))
    dims = [idx.size for _, idx in sectors]
    states = np.zeros((c, n_T + 1, sum(dims)), dtype=complex)
    success = np.full((c, n_T + 1), np.nan)
    offsets = np.cumsum([0] + dims)
    for s, (N, idx) in enumerate(sectors):
        states[:, 0, offsets[s]:offsets[s + 1]] = psi0[idx]
    if cfg.backend == "exact_expm":
        steps = expm_batched(omegas)
        for k in range(n_T):
            for s, (N, idx) in enumerate(sectors):
                sl = slice(offsets[s], offsets[s + 1])
                blk = sector_block(steps[:, k], N)
                states[:, k + 1, sl] = scale * np.einsum("cij,cj->ci", blk, states[:, k, sl])
    elif cfg.backend == "lcu":
        terms = select_terms(chain_spectrum(build_chain(cfg.n_A, cfg.theta)), cfg.retention, cfg.eps, cfg.top_k)
        K, H = hermitian_split(omegas)
        branch = {}
        for s, (N, idx) in enumerate(sectors):
            branch[s] = np.repeat(states[:, None, 0, offsets[s]:offsets[s + 1]], terms.count, axis=1)
        for k in range(n_T):
            u = expm_hermitian(H[:, None, k] + terms.omegas[None, :, None, None] * K[:, None, k])
            for s, (N, idx) in enumerate(sectors):
                branch[s] = scale * np.einsum("crij,crj->cri", sector_block(u, N), branch[s])
                states[:, k + 1, offsets[s]:offsets[s + 1]] = np.einsum("r,cri->ci", terms.coeffs, branch[s])
    else:
        chain = build_chain(cfg.n_A, cfg.theta)
        support = np.concatenate([idx for _, idx in sectors])
        K, H = hermitian_split(omegas)
        for t in range(c):
            full = np.zeros((chain.dim, 2**n), dtype=complex)
            full[:, :] = np.outer(chain.r, psi0)
            success[t, 0] = math.sqrt(chain.P_win)
            for k in range(n_T):
                Ht = dilated_hamiltonian(chain, jw_lift(K[t, k]).matrix, jw_lift(H[t, k]).matrix)
                full = scale * (expm_hermitian(Ht) @ full.reshape(-1)).reshape(full.shape)
                total = np.linalg.norm(full)
                success[t, k + 1] = np.linalg.norm(full[chain.window_mask]) / total if total > 0 else 0.0
                states[t, k + 1] = (chain.l @ full)[support]
    return states, success


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Per-trajectory records; column ``k`` is ``tau = k * dt_eff``."""

    tau: np.ndarray
    num: np.ndarray
    den: np.ndarray
    states: np.ndarray | None
    success: np.ndarray
    valid: np.ndarray
    support: np.ndarray
    H_support: np.ndarray
    trajectory_ids: np.ndarray
    E_trial_energy: float = 0.0

    @property
    def n_traj(self) -> int:
        return int(self.valid.sum())

    def subset(self, mask) -> "Ensemble":
        return replace(
            self,
            num=self.num[mask],
            den=self.den[mask],
            states=None if self.states is None else self.states[mask],
            success=self.success[mask],
            valid=self.valid[mask],
            trajectory_ids=self.trajectory_ids[mask],
        )


@dataclass(frozen=True, eq=False)
class TrajectoryResult:
    overlap_num: np.ndarray
    overlap_den: np.ndarray
    final_state: np.ndarray
    per_step_weights: np.ndarray
    valid: bool


def _work(args):
    model, cfg, psi0, psi_T, ids, seed, stream, keep = args
    return _run_chunk(model, cfg, psi0, psi_T, ids, CounterRNG(seed, stream), keep)


def _run_chunk(model, cfg, psi0, psi_T, ids, rng, keep, omegas=None):
    H = hamiltonian(model).matrix
    n = model.n_orb
    support = np.concatenate([idx for _, idx in _support(psi0, n)])
    states, success = _propagate_chunk(model, cfg, psi0, ids, rng, omegas)
    bra = psi_T[support].conj()
    hbra = (H @ psi_T)[support].conj()
    num = states @ hbra
    den = states @ bra
    valid = np.all(np.isfinite(states), axis=(1, 2))
    return num, den, (states if keep else None), success, valid


def run_ensemble(
    model: ModelInstance,
    cfg: SegmentConfig,
    n_traj: int,
    seed: int,
    psi_T="1001",
    psi_start=None,
    stream: int = STREAM_NOISE,
    jobs: int = 1,
    chunk: int = 4096,
    keep_states: bool = True,
    first_id: int = 0,
) -> Ensemble:
    """Propagate ``n_traj`` trajectories from ``psi_start`` (default ``psi_T``)."""
    n = model.n_orb
    psi_T = trial_state(psi_T, n)
    psi0 = psi_T if psi_start is None else trial_state(psi_start, n)
    ids = np.arange(first_id, first_id + n_traj)
    chunks = [ids[i:i + chunk] for i in range(0, n_traj, chunk)]
    args = [(model, cfg, psi0, psi_T, c, seed, stream, keep_states) for c in chunks]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_work, args))
    else:
        parts = [_work(a) for a in args]
    num, den, states, success, valid = (
        np.concatenate([p[i] for p in parts]) if parts[0][i] is not None else None for i in range(5)
    )
    H = hamiltonian(model).matrix
    support = np.concatenate([idx for _, idx in _support(psi0, n)])
    bad = ~valid
    if bad.any():
        warnings.warn(f"{int(bad.sum())} trajectories produced non-finite states and were flagged invalid")
    tau = np.arange(cfg.n_T + 1) * cfg.dt_eff
    return Ensemble(tau, num, den, states, success, valid, support, H[np.ix_(support, support)], ids,
                    float(np.real(np.vdot(psi_T, H @ psi_T))))


def run_trajectory(model: ModelInstance, cfg: SegmentConfig, trajectory_id: int, psi_T="1001", seed: int = 0) -> TrajectoryResult:
    n = model.n_orb
    psi = trial_state(psi_T, n)
    if abs(np.vdot(psi, psi) - 1) > 1e-10:
        raise ContractViolation("psi_T must be normalized")
    ids = np.array([trajectory_id])
    num, den, states, _, valid = _run_chunk(model, cfg, psi, psi, ids, CounterRNG(seed, STREAM_NOISE), True)
    support = np.concatenate([idx for _, idx in _support(psi, n)])
    final = np.zeros(2**n, dtype=complex)
    final[support] = states[0, -1]
    weights = np.full(cfg.n_T, math.exp(cfg.dt_eff * (model.E_T - model.scalar_offset)))
    return TrajectoryResult(num[0], den[0], final, weights, bool(valid[0]))


# --- estimators ---------------------------------------------------------------


def jackknife_ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ratio of means and delete-one jackknife error over axis 0."""
    N = num.shape[0]
    sn, sd = num.sum(axis=0), den.sum(axis=0)
    est = sn / sd
    jk = (sn - num) / (sd - den)
    mean = jk.mean(axis=0)
    err = np.sqrt((N - 1) / N * np.sum(np.abs(jk - mean) ** 2, axis=0))
    return est, err


def _rayleigh(S: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Rayleigh quotient over the last axis."""
    hs = S @ H.T
    return np.real(np.sum(S.conj() * hs, axis=-1)) / np.real(np.sum(S.conj() * S, axis=-1))


def jackknife_rayleigh(states: np.ndarray, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rayleigh quotient of the ensemble mean with delete-one jackknife error."""
    N = states.shape[0]
    S = states.sum(axis=0)  # (T, d)
    est = _rayleigh(S, H)
    HS = S @ H.T
    a = np.real(np.sum(S.conj() * HS, axis=-1))
    s2 = np.real(np.sum(S.conj() * S, axis=-1))
    b = np.real(np.einsum("td,ntd->nt", HS.conj(), states))
    c = np.real(np.einsum("ntd,ntd->nt", states.conj(), states @ H.T))
    bn = np.real(np.einsum("td,ntd->nt", S.conj(), states))
    cn = np.real(np.einsum("ntd,ntd->nt", states.conj(), states))
    jk = (a - 2 * b + c) / (s2 - 2 * bn + cn)
    err = np.sqrt((N - 1) / N * np.sum((jk - jk.mean(axis=0)) ** 2, axis=0))
    return est, err


def bootstrap_weights(n: int, n_boot: int, seed: int) -> np.ndarray:
    gen = CounterRNG(seed, STREAM_BOOTSTRAP).generator()
    return gen.multinomial(n, np.full(n, 1.0 / n), size=n_boot).astype(float)


@dataclass(frozen=True, eq=False)
class EnsembleEstimate:
    tau: np.ndarray
    E_mixed: np.ndarray
    E_mixed_imag: np.ndarray
    err_jackknife: np.ndarray
    err_bootstrap: np.ndarray
    E_rayleigh: np.ndarray
    err_rayleigh_jackknife: np.ndarray
    err_rayleigh_bootstrap: np.ndarray
    average_phase: np.ndarray
    success_mean: np.ndarray
    N_traj: int


def mixed_estimator(ens: Ensemble, n_boot: int = 200, seed: int = 0, phase_floor: float = 1e-3) -> EnsembleEstimate:
    """Ratio-of-means mixed estimator and ensemble-mean Rayleigh estimator."""
    e = ens.subset(ens.valid)
    N = e.num.shape[0]
    if N < 2:
        raise ContractViolation("need at least two valid trajectories")
    mixed, jk_err = jackknife_ratio(e.num, e.den)
    phase = np.abs(e.den.sum(axis=0)) / np.maximum(np.abs(e.den).sum(axis=0), 1e-300)
    if np.any(phase < phase_floor):
        warnings.warn(
            f"average phase {phase.min():.3e} below {phase_floor:g}; mixed estimator is unreliable",
            SignProblemWarning,
        )
    W = bootstrap_weights(N, n_boot, seed) if n_boot else None
    if W is not None:
        bs = (W @ e.num) / (W @ e.den)
        bs_err = np.std(np.real(bs), axis=0, ddof=1)
    else:
        bs_err = np.full(mixed.shape, np.nan)
    if e.states is not None:
        ray, ray_jk = jackknife_rayleigh(e.states, e.H_support)
        if W is not None:
            T, d = e.states.shape[1:]
            Sb = (W @ e.states.reshape(N, -1)).reshape(n_boot, T, d)
            ray_bs = np.std(_rayleigh(Sb, e.H_support), axis=0, ddof=1)
        else:
            ray_bs = np.full(ray.shape, np.nan)
    else:
        ray = ray_jk = ray_bs = np.full(mixed.shape, np.nan)
    succ = np.nanmean(e.success, axis=0) if np.any(np.isfinite(e.success)) else np.full(mixed.shape, np.nan)
    return EnsembleEstimate(
        ens.tau, np.real(mixed), np.imag(mixed), jk_err, bs_err, ray, ray_jk, ray_bs, phase, succ, N
    )


# --- references and audits ----------------------------------------------------


def ground_manifold(model: ModelInstance, psi: np.ndarray, tol: float = 1e-10):
    """Eigensystem restricted to the sector of ``psi`` (full space if mixed)."""
    n = model.n_orb
    sectors = _support(psi, n)
    H = hamiltonian(model)
    es = exact_eigensystem(H, sectors[0][0] if len(sectors) == 1 else None)
    ground = es.vectors[:, np.abs(es.values - es.E0) <= tol]
    return es, ground


def ground_weight_ratio(state: np.ndarray, ground: np.ndarray) -> float:
    """``r = (1 - g) / g`` with ``g`` the ground-manifold weight of the normalized state."""
    s = state / np.linalg.norm(state)
    g = float(np.sum(np.abs(ground.conj().T @ s) ** 2))
    if g <= 1e-14:
        raise DegenerateOverlapError("state has no ground-state weight")
    return max(0.0, (1 - g) / g)


@dataclass(frozen=True, eq=False)
class SegmentRow:
    segment: int
    tau_cumulative: float
    E_mixed: float
    err_mixed: float
    err_mixed_bootstrap: float
    E_rayleigh: float
    err_rayleigh: float
    r_ratio: float
    success_amp: float
    ref_mixed: float
    ref_rayleigh: float
    boundary: bool = False


def segment_chain(
    model: ModelInstance,
    cfg: SegmentConfig,
    S: int,
    psi_T="1001",
    n_traj: int = 10_000,
    seed: int = 0,
    mode: Literal["ensemble", "deterministic"] = "ensemble",
    jobs: int = 1,
    n_boot: int = 200,
) -> list[SegmentRow]:
    """Chained segments; each restarts from the renormalized ensemble-mean state.

    Within segment ``s`` the mixed estimator uses ``psi_T`` as the bra and the
    segment start state as the ket.  Error bars are conditional on that start
    state.  ``deterministic`` mode replaces the ensemble by ``exp(-tau H)``.
    """
    if S < 1:
        raise ContractViolation("need at least one segment")
    n = model.n_orb
    psi_T = trial_state(psi_T, n)
    es, ground = ground_manifold(model, psi_T)
    ground_weight_ratio(psi_T, ground)
    H = hamiltonian(model).matrix
    taus_all = np.arange(S * cfg.n_T + 1) * cfg.dt_eff
    ref = imaginary_time_reference(model, psi_T / np.linalg.norm(psi_T), taus_all)
    rows = [SegmentRow(0, 0.0, ref.E_mixed[0], 0.0, 0.0, ref.E_rayleigh[0], 0.0,
                       ground_weight_ratio(psi_T, ground), float("nan"), ref.E_mixed[0], ref.E_rayleigh[0])]
    start = psi_T / np.linalg.norm(psi_T)
    w, V = np.linalg.eigh(H)
    for s in range(S):
        if mode == "deterministic":
            for k in range(1, cfg.n_T + 1):
                prop = V @ (np.exp(-k * cfg.dt_eff * (w - w[0]))[:, None] * V.conj().T)
                phi = prop @ start
                mixed = np.vdot(psi_T, H @ phi) / np.vdot(psi_T, phi)
                ray = np.real(np.vdot(phi, H @ phi) / np.vdot(phi, phi))
                g = s * cfg.n_T + k
                rows.append(SegmentRow(s, taus_all[g], float(np.real(mixed)), 0.0, 0.0, float(ray), 0.0,
                                       ground_weight_ratio(phi, ground), float("nan"), ref.E_mixed[g], ref.E_rayleigh[g],
                                       k == cfg.n_T and s < S - 1))
            start = phi / np.linalg.norm(phi)
            continue
        ens = run_ensemble(model, cfg, n_traj, seed, psi_T, start, stream=STREAM_NOISE + 16 * s, jobs=jobs)
        est = mixed_estimator(ens, n_boot=n_boot, seed=seed + s)
        mean_states = ens.subset(ens.valid).states.mean(axis=0)
        for k in range(1, cfg.n_T + 1):
            full = np.zeros(2**n, dtype=complex)
            full[ens.support] = mean_states[k]
            g = s * cfg.n_T + k
            rows.append(SegmentRow(s, taus_all[g], est.E_mixed[k], est.err_jackknife[k], est.err_bootstrap[k],
                                   est.E_rayleigh[k], est.err_rayleigh_jackknife[k],
                                   ground_weight_ratio(full, ground), float(est.success_mean[k]),
                                   ref.E_mixed[g], ref.E_rayleigh[g], k == cfg.n_T and s < S - 1))
        start = full / np.linalg.norm(full)
    return rows


@dataclass(frozen=True, eq=False)
class AuditResult:
    q: float
    r_ideal: np.ndarray
    r_perturbed: np.ndarray
    epsilon: float
    C_fit: float
    C_H: float
    energy_excess: np.ndarray
    gap: float

    @property
    def ideal_ratios(self) -> np.ndarray:
        r = self.r_ideal
        return np.where(r[:-1] > 0, r[1:] / np.where(r[:-1] > 0, r[:-1], 1.0), 0.0)

    @property
    def ideal_ok(self) -> bool:
        return bool(np.all(self.r_ideal[1:] <= self.q * self.r_ideal[:-1] + 1e-12))

    @property
    def affine_ok(self) -> bool:
        r = self.r_perturbed
        return bool(np.all(r[1:] <= self.q * r[:-1] + self.C_fit * self.epsilon + 1e-12))

    @property
    def iterated_ok(self) -> bool:
        S = len(self.r_perturbed) - 1
        bound = self.q**S * self.r_perturbed[0] + self.C_fit * self.epsilon / (1 - self.q)
        return bool(self.r_perturbed[-1] <= bound + 1e-12)

    @property
    def energy_ok(self) -> bool:
        return bool(np.all(self.energy_excess <= self.C_H * self.r_perturbed + 1e-12))


def contraction_audit(
    model: ModelInstance,
    tau: float,
    S: int,
    epsilon: float,
    psi_T="1001",
    perturbation: Literal["excited", "maximally_mixed"] = "excited",
) -> AuditResult:
    """Exact channel ``rho -> K rho K / Tr`` with ``K = exp(-tau H)`` and injected errors.

    The perturbed run applies ``(1 - eps/2) Phi(rho) + (eps/2) sigma`` per
    segment, a trace-norm change of at most ``eps``.  ``C_fit`` is the
    smallest constant with ``r_{s+1} <= q r_s + C eps`` along the run.
    """
    n = model.n_orb
    psi = trial_state(psi_T, n)
    psi = psi / np.linalg.norm(psi)
    sectors = _support(psi, n)
    idx = np.concatenate([i for _, i in sectors])
    H = hamiltonian(model).matrix[np.ix_(idx, idx)]
    w, V = np.linalg.eigh(H)
    E0 = w[0]
    ground = np.abs(w - E0) <= 1e-10
    gap = float(w[~ground][0] - E0)
    q = math.exp(-2 * tau * gap)
    K = np.exp(-tau * (w - E0))
    c = V.conj().T @ psi[idx]
    rho0 = np.outer(c, c.conj())
    if perturbation == "excited":
        sigma = np.zeros_like(rho0)
        sigma[np.argmax(~ground), np.argmax(~ground)] = 1.0
    else:
        sigma = np.eye(len(w)) / len(w)

    def r_of(rho):
        g = np.real(np.trace(rho[np.ix_(ground, ground)]))
        if g <= 1e-300:
            raise DegenerateOverlapError("no ground-state weight")
        return max(0.0, (np.real(np.trace(rho)) - g) / g)

    def phi(rho):
        out = K[:, None] * rho * K[None, :]
        return out / np.real(np.trace(out))

    rho_i, rho_p = rho0, rho0
    r_i, r_p, excess = [r_of(rho0)], [r_of(rho0)], [np.real(np.sum(w * np.diag(rho0))) - E0]
    for _ in range(S):
        rho_i = phi(rho_i)
        rho_p = (1 - epsilon / 2) * phi(rho_p) + (epsilon / 2) * sigma
        r_i.append(r_of(rho_i))
        r_p.append(r_of(rho_p))
        excess.append(np.real(np.sum(w * np.diag(rho_p))) - E0)
    r_i, r_p = np.array(r_i), np.array(r_p)
    C = float(np.max((r_p[1:] - q * r_p[:-1]) / epsilon)) if epsilon > 0 else 0.0
    C_H = float(np.max(np.abs(w - E0)))
    return AuditResult(q, r_i, r_p, float(epsilon), C, C_H, np.array(excess), gap)


# --- Feynman-Kac and weak-order studies --------------------------------------


@dataclass(frozen=True, eq=False)
class FKCheck:
    mean: np.ndarray
    stderr: np.ndarray
    exact: np.ndarray

    atol: float = 1e-12

    @property
    def z(self) -> np.ndarray:
        """Deviation beyond the rounding floor ``atol`` in units of the standard error."""
        excess = np.maximum(np.abs(self.mean - self.exact) - self.atol, 0.0)
        safe = np.where(self.stderr > 0, self.stderr, 1.0)
        return np.where(self.stderr > 0, excess / safe, np.where(excess > 0, np.inf, 0.0))


def fk_consistency(model: ModelInstance, cfg: SegmentConfig, n_traj: int, seed: int, chunk: int = 8192) -> FKCheck:
    """Monte Carlo mean of ``exp(-tau offset) prod Gamma(exp(Omega_k))`` vs ``exp(-tau H)``.

    Deviations below ``1e-12`` count as rounding, which matters for the
    noise-free vacuum and filled-shell entries.
    """
    rng = CounterRNG(seed, STREAM_NOISE)
    dim = 2**model.n_orb
    mean = np.zeros((dim, dim))
    m2 = np.zeros((dim, dim))
    count = 0
    scale = math.exp(-cfg.tau * model.scalar_offset)
    for start in range(0, n_traj, chunk):
        ids = np.arange(start, min(n_traj, start + chunk))
        om = slice_generators(model, _chunk_noise(model, cfg, rng, ids), cfg.order, cfg.commutator_form)
        steps = expm_batched(om)
        B = steps[:, 0]
        for k in range(1, cfg.n_T):
            B = steps[:, k] @ B
        G = np.real(fock_matrix(B)) * scale
        # pairwise (Chan) update keeps deterministic entries at exactly zero variance
        c_mean = G.mean(axis=0)
        c_m2 = ((G - c_mean) ** 2).sum(axis=0)
        delta = c_mean - mean
        total = count + ids.size
        mean = mean + delta * (ids.size / total)
        m2 = m2 + c_m2 + delta**2 * (count * ids.size / total)
        count = total
    var = m2 / (n_traj - 1)
    H = hamiltonian(model).matrix
    w, V = np.linalg.eigh(H)
    exact = np.real(V @ np.diag(np.exp(-cfg.tau * w)) @ V.conj().T)
    return FKCheck(mean, np.sqrt(var / n_traj), exact)


def jackknife_ratio_difference(n1, d1, n2, d2) -> tuple[float, float]:
    """``mean(n1)/mean(d1) - mean(n2)/mean(d2)`` on paired samples, delete-one error."""
    N = n1.shape[0]
    s = [a.sum() for a in (n1, d1, n2, d2)]
    est = s[0] / s[1] - s[2] / s[3]
    jk = (s[0] - n1) / (s[1] - d1) - (s[2] - n2) / (s[3] - d2)
    err = math.sqrt((N - 1) / N * np.sum(np.abs(jk - jk.mean()) ** 2))
    return float(np.real(est)), err


@dataclass(frozen=True, eq=False)
class WeakOrderStudy:
    dts: np.ndarray
    orders: tuple[int, ...]
    bias_mc: dict
    err_mc: dict
    bias_quadrature: dict
    reference: float
    bias_paired: dict = field(default_factory=dict)
    err_paired: dict = field(default_factory=dict)
    reference_dt: float = float("nan")

    def slope(self, order: int, source: str = "mc") -> float:
        """``mc``: against the exact energy; ``paired``: against the fine grid on the same paths."""
        b = {"mc": self.bias_mc, "quadrature": self.bias_quadrature, "paired": self.bias_paired}[source][order]
        return float(np.polyfit(np.log(self.dts), np.log(np.abs(b)), 1)[0])


def weak_order_study(
    model: ModelInstance,
    tau: float = 0.4,
    dts: Sequence[float] = (0.2, 0.1, 0.05, 0.025),
    orders: Sequence[int] = (1, 2),
    n_traj: int = 100_000,
    seed: int = 0,
    psi_T="1001",
    chunk: int = 8192,
    quadrature_nodes: int = 8,
    refine: int = 8,
) -> WeakOrderStudy:
    """Mixed-energy bias ``E_dt(tau) - E_exact(tau)`` with common random numbers.

    One Gaussian path per trajectory is drawn on a grid ``refine`` times
    finer than the smallest ``dt``; every coarser step aggregates its
    increments and ``J0`` integrals exactly, so all levels see the same
    Brownian path.  ``bias_mc`` compares with the exact energy and so keeps
    the full sampling error.  ``bias_paired`` compares with the order-2
    estimate on the fine grid from the same paths, which cancels the common
    fluctuation; its residual offset is the fine-grid bias.  The quadrature
    column evaluates the bias without sampling.
    """
    dts = np.asarray(sorted(dts, reverse=True), dtype=float)
    fine = dts[-1] / refine
    n_fine = int(round(tau / fine))
    ratios = [int(round(d / fine)) for d in dts]
    if any(abs(r * fine - d) > 1e-12 for r, d in zip(ratios, dts)) or abs(n_fine * fine - tau) > 1e-12:
        raise ContractViolation("dt grid must nest and divide tau")
    n = model.n_orb
    psi = trial_state(psi_T, n)
    H = hamiltonian(model).matrix
    ref = float(imaginary_time_reference(model, psi, [tau]).E_mixed[0])
    (N, idx), = _support(psi, n)
    bra, hbra = psi[idx].conj(), (H @ psi)[idx].conj()
    rng = CounterRNG(seed, STREAM_NOISE)
    levels = [(o, d, r) for d, r in zip(dts, ratios) for o in orders]
    if refine > 1:
        levels.append((2, fine, 1))
    num = {(o, d): [] for o, d, _ in levels}
    den = {(o, d): [] for o, d, _ in levels}
    for start in range(0, n_traj, chunk):
        ids = np.arange(start, min(n_traj, start + chunk))
        base = sample_path_noise(fine, n_fine, model.n_channels, "gaussian", rng, ids)
        for o, d, ratio in levels:
            shp = (ids.size, n_fine // ratio, ratio, model.n_channels)
            dW, J0 = aggregate_increments(base.dW.reshape(shp), base.J0.reshape(shp), fine)
            eta = (J0 - 0.5 * d * dW) / math.sqrt(d**3 / 12)
            steps = expm_batched(slice_generators(model, NoiseSample(d, dW, eta), o))
            B = steps[:, 0]
            for k in range(1, steps.shape[1]):
                B = steps[:, k] @ B
            phi = np.einsum("cij,j->ci", sector_block(B, N), psi[idx])
            num[(o, d)].append(phi @ hbra)
            den[(o, d)].append(phi @ bra)
    num = {k: np.concatenate(v) for k, v in num.items()}
    den = {k: np.concatenate(v) for k, v in den.items()}
    bias, err, quad, paired, perr = {}, {}, {}, {}, {}
    for o in orders:
        b, e, qd, pb, pe = [], [], [], [], []
        for d in dts:
            est, jk = jackknife_ratio(num[(o, d)], den[(o, d)])
            b.append(np.real(est) - ref)
            e.append(jk)
            if refine > 1:
                x, xe = jackknife_ratio_difference(num[(o, d)], den[(o, d)], num[(2, fine)], den[(2, fine)])
                pb.append(x)
                pe.append(xe)
            P = np.linalg.matrix_power(mean_slice_propagator(model, d, o, "gaussian", quadrature_nodes), int(round(tau / d)))
            qd.append(np.real(np.vdot(psi, H @ P @ psi) / np.vdot(psi, P @ psi)) - ref)
        bias[o], err[o], quad[o] = np.array(b), np.array(e), np.array(qd)
        if refine > 1:
            paired[o], perr[o] = np.array(pb), np.array(pe)
    return WeakOrderStudy(dts, tuple(orders), bias, err, quad, ref, paired, perr, fine if refine > 1 else float("nan"))
