import json

import numpy as np
import pytest

from afqmc_dilation.cli import main
from afqmc_dilation.projector import SegmentConfig, run_ensemble


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    import os

    for key in list(os.environ):
        if key.startswith("AFQMCDIL__"):
            monkeypatch.delenv(key)


def _payload(path):
    lines = path.read_text().splitlines()
    return [line for line in lines if not line.startswith("# timestamp:")]


def test_moment_check_passes_and_is_reproducible(tmp_path, capsys):
    assert main(["moment-check", "--out", str(tmp_path / "a"), "--timestamp", "t1"]) == 0
    assert main(["moment-check", "--out", str(tmp_path / "b"), "--timestamp", "t2"]) == 0
    a, b = tmp_path / "a" / "moment_check.csv", tmp_path / "b" / "moment_check.csv"
    lines = a.read_text().splitlines()
    assert lines[0] == "# command: moment-check"
    cfg = json.loads(lines[1].removeprefix("# config: "))
    assert cfg["sweep"]["n_A"] == [2, 3, 4, 5]
    assert lines[2] == "# timestamp: t1"
    assert lines[3] == "n_A,k,m_order,in_window,residual"
    assert lines[4] == "2,0,2,true,0.000000000000e+00"
    assert _payload(a)[2:] == _payload(b)[2:]
    assert "PASS moments_in_window" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"sites": 2, "hopping": 1}}))
    assert main(["moment-check", "--config", str(bad), "--out", str(tmp_path)]) == 2
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"model": {"psi_T": "10"}}))
    assert main(["contraction-audit", "--config", str(wrong), "--out", str(tmp_path)]) == 2
    assert main(["moment-check", "--jobs", "0", "--out", str(tmp_path)]) == 2


def test_failed_assertion_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"sweep": {"n_A": [2, 3], "n_slices": 4}}))
    assert main(["lcu-error-sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    out = capsys.readouterr().out
    assert "FAIL factorial_bound_every_sample" in out
    assert "PASS median_strictly_decreasing" in out


def test_seed_flag_overrides_config(tmp_path):
    assert main(["contraction-audit", "--seed", "77", "--out", str(tmp_path)]) == 0
    header = (tmp_path / "contraction_audit.csv").read_text().splitlines()[1]
    assert json.loads(header.removeprefix("# config: "))["ensemble"]["seed"] == 77


def test_circuit_emulate_dumps_qasm(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[ensemble]\nn_traj = 2\nshots = 50\nbootstrap = 20\n[sweep]\nn_T = [1, 2]\n[segment]\nn_A = 2\n")
    code = main(["circuit-emulate", "--config", str(cfg), "--out", str(tmp_path), "--dump-qasm"])
    assert code in (0, 1)
    files = sorted((tmp_path / "qasm").glob("*.qasm"))
    assert len(files) == 2 * (1 + 1) * 4
    assert (tmp_path / "qasm" / (files[0].stem + ".json")).exists()
    rows = (tmp_path / "circuit_emulate.csv").read_text().splitlines()[4:]
    assert len(rows) == 2


def test_jobs_do_not_change_results(dimer):
    cfg = SegmentConfig(tau=0.1, dt=0.05)
    a = run_ensemble(dimer, cfg, 300, seed=4, chunk=100, jobs=1)
    b = run_ensemble(dimer, cfg, 300, seed=4, chunk=100, jobs=2)
    assert np.array_equal(a.num, b.num) and np.array_equal(a.states, b.states)
