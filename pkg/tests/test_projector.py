import math

import numpy as np
import pytest

from afqmc_dilation.errors import ContractViolation, SignProblemWarning
from afqmc_dilation.projector import (
    Ensemble,
    FKCheck,
    SegmentConfig,
    contraction_audit,
    fk_consistency,
    jackknife_ratio,
    jackknife_ratio_difference,
    jackknife_rayleigh,
    mixed_estimator,
    run_ensemble,
    run_trajectory,
    segment_chain,
    trial_state,
    weak_order_study,
)

E0 = -2 * math.sqrt(2)


def test_jackknife_of_identical_samples_is_zero():
    num = np.full((10, 3), 2.0 + 0j)
    den = np.ones((10, 3), dtype=complex)
    est, err = jackknife_ratio(num, den)
    assert np.allclose(est, 2.0)
    assert np.allclose(err, 0.0)
    x = np.ones(10)
    assert jackknife_ratio_difference(x, x, x, x) == (0.0, 0.0)


def test_jackknife_matches_standard_error_for_plain_means():
    rng = np.random.default_rng(0)
    x = rng.normal(size=2000)
    _, err = jackknife_ratio(x, np.ones_like(x))
    assert err == pytest.approx(np.std(x, ddof=1) / math.sqrt(x.size), rel=1e-10)


def test_rayleigh_jackknife_on_eigenvector():
    H = np.diag([1.0, 2.0])
    states = np.zeros((5, 1, 2), dtype=complex)
    states[:, 0, 0] = np.arange(1, 6)
    est, err = jackknife_rayleigh(states, H)
    assert est[0] == pytest.approx(1.0)
    assert err[0] == pytest.approx(0.0, abs=1e-14)


def test_ensemble_is_chunk_and_shift_invariant(dimer):
    cfg = SegmentConfig(tau=0.15, dt=0.05)
    a = run_ensemble(dimer, cfg, 300, seed=5)
    b = run_ensemble(dimer, cfg, 300, seed=5, chunk=64)
    assert np.array_equal(a.num, b.num) and np.array_equal(a.den, b.den)
    ea = mixed_estimator(a, n_boot=50, seed=1)
    ec = mixed_estimator(run_ensemble(dimer.with_shift(-2.5), cfg, 300, seed=5), n_boot=50, seed=1)
    assert np.allclose(ea.E_mixed, ec.E_mixed, atol=1e-12)
    assert ea.E_mixed[0] == pytest.approx(-2.0)
    assert ea.err_jackknife[0] == pytest.approx(0.0, abs=1e-14)


def test_single_trajectory_matches_ensemble_row(dimer):
    cfg = SegmentConfig(tau=0.1, dt=0.05)
    ens = run_ensemble(dimer, cfg, 8, seed=3)
    tr = run_trajectory(dimer, cfg, 5, seed=3)
    assert np.allclose(tr.overlap_num, ens.num[5]) and np.allclose(tr.overlap_den, ens.den[5])


def test_backends_agree(dimer):
    # inside the accuracy regime of the chain: dt near the constant-success step
    base = dict(tau=1.4e-3, dt=7e-4, n_A=4, noise="bounded3point")
    ex = run_ensemble(dimer, SegmentConfig(backend="exact_expm", **base), 4, seed=2)
    lcu = run_ensemble(dimer, SegmentConfig(backend="lcu", **base), 4, seed=2)
    dil = run_ensemble(dimer, SegmentConfig(backend="dilation", **base), 4, seed=2)
    assert np.abs(lcu.den - dil.den).max() < 1e-10
    assert np.abs(lcu.num - dil.num).max() < 1e-10
    assert np.abs(lcu.den - ex.den).max() < 2e-6
    assert np.all((dil.success[:, 1:] > 0) & (dil.success[:, 1:] <= 1))


def test_sign_problem_warning():
    tau = np.array([0.0, 0.1])
    den = np.array([[1.0, 1.0], [1.0, -0.9999]], dtype=complex)
    num = den.copy()
    states = np.ones((2, 2, 1), dtype=complex)
    ens = Ensemble(tau, num, den, states, np.ones((2, 2)), np.ones(2, bool), np.array([0]), np.eye(1),
                   np.arange(2), 0.0)
    with pytest.warns(SignProblemWarning):
        mixed_estimator(ens, n_boot=0)


def test_trial_state_contract():
    with pytest.raises(ContractViolation):
        trial_state("100", 4)
    assert trial_state("1001", 4)[9] == 1


def test_deterministic_chaining_converges(dimer):
    cfg = SegmentConfig(tau=2.0, dt=0.5)
    rows = segment_chain(dimer, cfg, 6, mode="deterministic")
    assert rows[-1].E_rayleigh == pytest.approx(E0, abs=1e-6)
    assert [r.boundary for r in rows].count(True) == 5
    ratios = [r.r_ratio for r in rows]
    assert all(b <= a for a, b in zip(ratios, ratios[1:]))


def test_ensemble_chaining_rows(dimer):
    rows = segment_chain(dimer, SegmentConfig(tau=0.1, dt=0.05), 2, n_traj=400, seed=1, n_boot=20)
    assert len(rows) == 5
    assert rows[2].boundary and not rows[4].boundary
    assert rows[-1].tau_cumulative == pytest.approx(0.2)


def test_contraction_audit(dimer):
    res = contraction_audit(dimer, 0.3, 8, 0.01)
    assert res.q == pytest.approx(math.exp(-2 * 0.3 * (2 * math.sqrt(2) - 2)))
    assert res.ideal_ok and res.affine_ok and res.iterated_ok and res.energy_ok
    assert res.C_fit >= 0
    # psi_T = |1001> has ground weight (2 + sqrt2)/8
    g = (2 + math.sqrt(2)) / 8
    assert res.r_ideal[0] == pytest.approx((1 - g) / g, rel=1e-12)


def test_contraction_audit_ground_start(dimer):
    from afqmc_dilation.model import exact_eigensystem, hamiltonian

    g = exact_eigensystem(hamiltonian(dimer), 2).ground_state
    res = contraction_audit(dimer, 0.3, 4, 0.0, g)
    assert np.all(res.r_ideal <= 1e-14)


def test_fk_zero_variance_entries():
    fk = FKCheck(np.array([1.0, 0.0, 2.0, 1.0]), np.array([0.1, 0.0, 0.0, 1e-17]),
                 np.array([1.05, 0.0, 1.0, 1.0 + 1e-15]))
    assert np.allclose(fk.z[[0, 1, 3]], [0.5, 0.0, 0.0], atol=1e-9)
    assert np.isinf(fk.z[2])


def test_fk_small_run_shapes(dimer):
    fk = fk_consistency(dimer, SegmentConfig(tau=0.1, dt=0.05), 200, seed=1)
    assert fk.mean.shape == (16, 16)
    # vacuum and fully occupied states carry no noise
    assert fk.stderr[0, 0] < 1e-15 and fk.z[0, 0] == 0 and fk.z[15, 15] == 0


def test_weak_order_grid_contract(dimer):
    with pytest.raises(ContractViolation):
        weak_order_study(dimer, tau=0.4, dts=(0.2, 0.15), n_traj=10)
    w = weak_order_study(dimer, tau=0.2, dts=(0.2, 0.1), n_traj=200, refine=2)
    assert set(w.bias_paired) == {1, 2}
    assert w.reference_dt == pytest.approx(0.05)
