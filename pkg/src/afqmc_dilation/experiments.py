"""Experiment runners shared by the CLI and the acceptance tests.

Each runner returns an :class:`Outcome` with CSV columns, rows and the list
of declared checks.  Runners never print; the CLI decides what to emit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuits import compile_propagator, emulate, export_qasm, permute_fock_state, shot_amplitudes
from .config import ExperimentConfig
from .dilation import build_chain, dilation_error_sweep, moment_check
from .gaussian import apply_gaussian
from .lcu import LCUSegment, chain_spectrum, l1_report, lcu_segment_apply, select_terms
from .magnus import constant_success_step, sample_path_noise, slice_generators
from .model import ModelInstance, basis_state, build_hubbard, hamiltonian, imaginary_time_reference
from .projector import (
    STREAM_NOISE,
    SegmentConfig,
    bootstrap_weights,
    contraction_audit,
    mixed_estimator,
    run_ensemble,
    segment_chain,
    trial_state,
)
from .rng import CounterRNG

STREAM_SHOTS = 3


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Outcome:
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def model_from_config(cfg: ExperimentConfig) -> ModelInstance:
    m = cfg.model
    return build_hubbard(m.sites, m.t, m.U, m.pbc, m.ordering, m.decomposition, m.E_T)


def segment_from_config(cfg: ExperimentConfig, default_noise: str = "gaussian", **changes) -> SegmentConfig:
    s = cfg.segment
    kw = dict(
        tau=s.tau, dt=s.dt, order=s.order, backend=s.backend, n_A=s.n_A, theta=s.theta,
        noise=s.noise or default_noise, retention=s.retention.policy, eps=s.retention.eps,
        top_k=s.retention.top_k, success_floor=s.success_floor,
    )
    kw.update(changes)
    return SegmentConfig(**kw)


# --- moment identities --------------------------------------------------------


def run_moment_check(cfg: ExperimentConfig) -> Outcome:
    out = Outcome(["n_A", "k", "m_order", "in_window", "residual"])
    worst = 0.0
    for n_A in cfg.sweep.n_A:
        chain = build_chain(n_A, cfg.segment.theta)
        k_max = chain.M if cfg.sweep.k_max is None else cfg.sweep.k_max
        res = moment_check(chain, k_max)
        for k, r in enumerate(res):
            inside = k <= chain.m_order
            if inside:
                worst = max(worst, float(r))
            out.rows.append([n_A, k, chain.m_order, inside, float(r)])
    out.checks.append(Check("moments_in_window", worst <= 1e-12, f"max in-window residual {worst:.3e}"))
    return out


# --- truncation error sweep ---------------------------------------------------


def sweep_slices(model: ModelInstance, cfg: ExperimentConfig) -> tuple[np.ndarray, float, str]:
    """Order-2 slice ensemble; ``dt`` defaults to the constant-success step."""
    dt = cfg.sweep.slice_dt or constant_success_step(model, cfg.segment.theta)
    noise_mode = cfg.segment.noise or "bounded3point"
    rng = CounterRNG(cfg.ensemble.seed, STREAM_NOISE)
    ids = np.arange(cfg.sweep.n_slices)
    noise = sample_path_noise(dt, 1, model.n_channels, noise_mode, rng, ids)
    return slice_generators(model, noise, cfg.segment.order)[:, 0], dt, noise_mode


def run_lcu_error_sweep(cfg: ExperimentConfig) -> Outcome:
    model = model_from_config(cfg)
    omegas, dt, mode = sweep_slices(model, cfg)
    rows = dilation_error_sweep(omegas, cfg.sweep.n_A, "fock", cfg.segment.theta)
    out = Outcome([
        "n_A", "m_order", "j_count", "l1", "P_win", "median_err", "p90_err", "bound_max",
        "factorial_violations", "rigorous_bound_max", "rigorous_violations", "lcu_dilation_gap", "slice_dt", "noise",
    ])
    psi = basis_state(cfg.model.psi_T)
    for row in rows:
        spec = chain_spectrum(build_chain(row.n_A, cfg.segment.theta))
        terms = select_terms(spec, cfg.segment.retention.policy, cfg.segment.retention.eps, cfg.segment.retention.top_k)
        rep = l1_report(spec)
        # LCU on a single slice vs direct exponential, same metric on psi_T
        gap = 0.0
        for om in omegas[:10]:
            a = lcu_segment_apply(terms, [om], psi, "fock")
            b = lcu_segment_apply(select_terms(spec, "all"), [om], psi, "fock_lift")
            gap = max(gap, float(np.linalg.norm(a - b)))
        out.rows.append([
            row.n_A, row.m_order, terms.count, rep["l1"], rep["P_win"], row.median, row.p90, row.bound_max,
            row.factorial_violations, float(np.max(row.rigorous_bounds)), row.rigorous_violations, gap, dt, mode,
        ])
    medians = [r.median for r in rows]
    out.checks.append(Check(
        "median_strictly_decreasing", bool(np.all(np.diff(medians) < 0)),
        "medians " + ", ".join(f"{m:.3e}" for m in medians),
    ))
    viol = sum(r.factorial_violations for r in rows)
    out.checks.append(Check(
        "factorial_bound_every_sample", viol == 0,
        f"{viol} of {len(rows) * len(omegas)} samples exceed the factorial remainder bound",
    ))
    rviol = sum(r.rigorous_violations for r in rows)
    out.checks.append(Check("moment_weighted_bound_every_sample", rviol == 0, f"{rviol} violations"))
    return out


# --- sampled energy vs tau ----------------------------------------------------


def run_magnus_compare(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    model = model_from_config(cfg)
    n_traj = cfg.ensemble.n_traj or 100_000
    out = Outcome([
        "order", "tau", "E_mixed", "err_mixed", "err_mixed_bootstrap", "E_rayleigh", "err_rayleigh",
        "ref_mixed", "ref_rayleigh",
    ])
    psi = trial_state(cfg.model.psi_T, model.n_orb)
    bias_end = {}
    worst = {}
    for order in (1, 2):
        seg = segment_from_config(cfg, order=order)
        ens = run_ensemble(model, seg, n_traj, cfg.ensemble.seed, psi, jobs=jobs)
        est = mixed_estimator(ens, n_boot=cfg.ensemble.bootstrap, seed=cfg.ensemble.seed)
        ref = imaginary_time_reference(model, psi, ens.tau)
        for k, tau in enumerate(ens.tau):
            out.rows.append([order, tau, est.E_mixed[k], est.err_jackknife[k], est.err_bootstrap[k],
                             est.E_rayleigh[k], est.err_rayleigh_jackknife[k], ref.E_mixed[k], ref.E_rayleigh[k]])
        z = np.abs(est.E_mixed[1:] - ref.E_mixed[1:]) / est.err_jackknife[1:]
        worst[order] = float(np.max(z))
        bias_end[order] = abs(est.E_mixed[-1] - ref.E_mixed[-1])
        tau0 = abs(est.E_mixed[0] - ref.E_mixed[0]) <= 1e-12
        out.checks.append(Check(f"tau0_order{order}", tau0, "tau=0 row equals <psi_T|H|psi_T>"))
    out.checks.append(Check(
        "order2_bias_smaller", bias_end[2] < bias_end[1],
        f"|bias| at tau={cfg.segment.tau}: order1 {bias_end[1]:.3e}, order2 {bias_end[2]:.3e}",
    ))
    for order in (1, 2):
        out.checks.append(Check(f"order{order}_within_3sigma", worst[order] <= 3.0, f"max |z| = {worst[order]:.2f}"))
    return out


# --- chained segments ---------------------------------------------------------


def run_segment_run(cfg: ExperimentConfig, jobs: int = 1, S: int | None = None) -> Outcome:
    model = model_from_config(cfg)
    S = S or max(2, cfg.segment.segments)
    n_traj = cfg.ensemble.n_traj or 100_000
    seg = segment_from_config(cfg, tau=cfg.segment.tau / S)
    rows = segment_chain(model, seg, S, cfg.model.psi_T, n_traj, cfg.ensemble.seed, jobs=jobs,
                         n_boot=cfg.ensemble.bootstrap)
    out = Outcome([
        "tau_cumulative", "segment", "boundary", "E_mixed", "err_mixed", "err_mixed_bootstrap", "E_rayleigh",
        "err_rayleigh", "r_ratio", "success_amp", "ref_mixed", "ref_rayleigh",
    ])
    worst = 0.0
    for r in rows:
        out.rows.append([r.tau_cumulative, r.segment, r.boundary, r.E_mixed, r.err_mixed, r.err_mixed_bootstrap,
                         r.E_rayleigh, r.err_rayleigh, r.r_ratio, r.success_amp, r.ref_mixed, r.ref_rayleigh])
        if r.err_mixed > 0:
            worst = max(worst, abs(r.E_mixed - r.ref_mixed) / r.err_mixed)
    out.checks.append(Check("mixed_within_2_bars", worst <= 2.0, f"max |E - ref| / bar = {worst:.2f}"))
    return out


# --- shot emulation -----------------------------------------------------------


def run_circuit_emulate(cfg: ExperimentConfig, dump_dir: Path | None = None) -> Outcome:
    model = model_from_config(cfg)
    n_traj = cfg.ensemble.n_traj or 40
    shots = cfg.ensemble.shots
    seg = segment_from_config(cfg, default_noise="bounded3point")
    n = model.n_orb
    bits = cfg.model.psi_T
    psi = trial_state(bits, n)
    H = hamiltonian(model).matrix
    hpsi = H @ psi
    spec = chain_spectrum(build_chain(seg.n_A, seg.theta))
    terms = select_terms(spec, seg.retention, seg.eps, seg.top_k)
    perm = model.basis.to_spin_blocked()
    inv = np.argsort(perm)
    rng = CounterRNG(cfg.ensemble.seed, STREAM_NOISE)
    ids = np.arange(n_traj)
    n_max = max(cfg.sweep.n_T)
    omegas = slice_generators(model, sample_path_noise(seg.dt, n_max, model.n_channels, seg.noise, rng, ids), seg.order)
    shot_rng = CounterRNG(cfg.ensemble.seed, STREAM_SHOTS)
    scale_step = math.exp(seg.dt * (model.E_T - model.scalar_offset))
    out = Outcome([
        "n_T", "tau", "E_exact_emulation", "err_exact_bootstrap", "E_shots", "err_shots_bootstrap",
        "E_matrix_lcu", "ref_mixed", "n_terms", "rotations_max", "depth_max", "two_qubit_max",
    ])
    worst_fid = 0.0
    worst_rot = 0
    within = []
    for n_T in cfg.sweep.n_T:
        scale = scale_step**n_T
        num_e, den_e, num_s, den_s, num_m, den_m = (np.zeros(n_traj, dtype=complex) for _ in range(6))
        rot_max = depth_max = tq_max = 0
        for i in range(n_traj):
            segment = LCUSegment(terms, omegas[i, :n_T])
            gen = shot_rng.generator(step=n_T * 1_000_003 + i)
            phi_e = np.zeros(2**n, dtype=complex)
            phi_s = np.zeros(2**n, dtype=complex)
            phi_m = np.zeros(2**n, dtype=complex)
            for j, c in enumerate(terms.coeffs):
                u = segment.branch_unitary(j)
                circ = compile_propagator(u, bits, model.basis.ordering, model.basis.n_sites,
                                          {"n_T": n_T, "trajectory": i, "j": j})
                rot_max = max(rot_max, circ.rotation_count)
                depth_max = max(depth_max, circ.depth)
                tq_max = max(tq_max, circ.two_qubit_count)
                amp_blocked = emulate(circ)
                amp = permute_fock_state(amp_blocked, inv)
                matrix = apply_gaussian(u, psi)
                worst_fid = max(worst_fid, 1 - abs(np.vdot(matrix, amp)) ** 2)
                phi_e += c * amp
                phi_m += c * matrix
                phi_s += c * permute_fock_state(shot_amplitudes(amp_blocked, shots, gen), inv)
                if dump_dir is not None:
                    stem = dump_dir / f"nT{n_T}_traj{i:03d}_j{j:02d}"
                    stem.with_suffix(".qasm").write_text(export_qasm(circ), encoding="utf-8", newline="\n")
                    stem.with_suffix(".json").write_text(circ.sidecar(), encoding="utf-8", newline="\n")
            for phi, nu, de in ((phi_e, num_e, den_e), (phi_s, num_s, den_s), (phi_m, num_m, den_m)):
                nu[i] = scale * np.vdot(hpsi, phi)
                de[i] = scale * np.vdot(psi, phi)
        worst_rot = max(worst_rot, rot_max)
        W = bootstrap_weights(n_traj, max(cfg.ensemble.bootstrap, 2), cfg.ensemble.seed + n_T)
        e_exact = float(np.real(num_e.sum() / den_e.sum()))
        e_shot = float(np.real(num_s.sum() / den_s.sum()))
        e_mat = float(np.real(num_m.sum() / den_m.sum()))
        err_e = float(np.std(np.real((W @ num_e) / (W @ den_e)), ddof=1))
        err_s = float(np.std(np.real((W @ num_s) / (W @ den_s)), ddof=1))
        ref = float(imaginary_time_reference(model, psi, [n_T * seg.dt]).E_mixed[0])
        out.rows.append([n_T, n_T * seg.dt, e_exact, err_e, e_shot, err_s, e_mat, ref, terms.count, rot_max,
                         depth_max, tq_max])
        within.append((n_T, abs(e_shot - e_exact), err_s))
    L = model.basis.n_sites
    out.checks.append(Check("circuit_fidelity", worst_fid <= 1e-8, f"max infidelity {worst_fid:.2e}"))
    out.checks.append(Check("rotation_budget", worst_rot <= 2 * (L * (L - 1) // 2), f"max rotations {worst_rot}"))
    ok = all(d <= e for _, d, e in within)
    out.checks.append(Check(
        "shots_within_bootstrap_bars", ok,
        "; ".join(f"n_T={k}: |diff| {d:.2e} vs bar {e:.2e}" for k, d, e in within),
    ))
    return out


# --- contraction audit --------------------------------------------------------


def run_contraction_audit(cfg: ExperimentConfig) -> Outcome:
    model = model_from_config(cfg)
    S = max(cfg.segment.segments, 10)
    tau = cfg.segment.tau
    res = contraction_audit(model, tau, S, cfg.sweep.epsilon, cfg.model.psi_T)
    out = Outcome(["s", "r_ideal", "ratio_ideal", "q", "r_perturbed", "affine_slack", "energy_excess", "C_H_r"])
    ratios = np.r_[np.nan, res.ideal_ratios]
    for s in range(S + 1):
        slack = np.nan if s == 0 else res.q * res.r_perturbed[s - 1] + res.C_fit * res.epsilon - res.r_perturbed[s]
        out.rows.append([s, res.r_ideal[s], ratios[s], res.q, res.r_perturbed[s], slack, res.energy_excess[s],
                         res.C_H * res.r_perturbed[s]])
    es_ground = _ground_vector(model, cfg.model.psi_T)
    g = contraction_audit(model, tau, S, 0.0, es_ground)
    out.checks.append(Check("ideal_contraction", res.ideal_ok,
                            f"max ratio {np.max(res.ideal_ratios):.6f} vs q = {res.q:.6f}"))
    out.checks.append(Check("fitted_constants_nonnegative", res.C_fit >= 0 and res.q >= 0,
                            f"C = {res.C_fit:.4f}, q = {res.q:.4f}"))
    out.checks.append(Check("affine_recursion", res.affine_ok and res.iterated_ok, "perturbed run obeys r' <= q r + C eps"))
    out.checks.append(Check("energy_bound", res.energy_ok, "Tr(H rho) - E0 <= C_H r"))
    out.checks.append(Check("ground_start_zero", bool(np.all(g.r_ideal <= 1e-14)), "ground-state start keeps r = 0"))
    return out


def _ground_vector(model: ModelInstance, bits: str) -> np.ndarray:
    from .projector import ground_manifold

    _, ground = ground_manifold(model, trial_state(bits, model.n_orb))
    v = ground[:, 0]
    return v / np.linalg.norm(v)


RUNNERS = {
    "moment-check": run_moment_check,
    "lcu-error-sweep": run_lcu_error_sweep,
    "magnus-compare": run_magnus_compare,
    "segment-run": run_segment_run,
    "circuit-emulate": run_circuit_emulate,
    "contraction-audit": run_contraction_audit,
}
