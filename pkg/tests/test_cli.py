import json
import shutil
import subprocess

import numpy as np
import pytest

from ura_sim.cli import main
from ura_sim.codebook import generate_codebook, save_codebook


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# tiny run\nK_tot = 50\nK_a = 2\nM = 8\nL = 4\nn0 = 24\nb = 8\nJ = 5\n"
                 "epsilon = 0.04\ndelta = 1\np_th = 0.5\n")
    return p


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_simulate_writes_artifacts(cfg_file, tmp_path, capsys):
    out = tmp_path / "res"
    assert main(["simulate", "--config", str(cfg_file), "--sweep", "M=4,8", "--trials", "3",
                 "--out", str(out)]) == 0
    assert {"results.csv", "fig7_pe.csv", "fig4_trace.csv", "manifest.json"} <= {
        p.name for p in out.iterdir()}
    man = json.loads((out / "manifest.json").read_text())
    assert man["sweep"] == {"axis": "M", "values": [4, 8]} and man["config"]["trials"] == 3
    assert "M=4" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["--sweep", "bogus=1"],
    ["--set", "K_a=999"],
    ["--set", "noequals"],
    ["--set", "unknown_field=1"],
])
def test_simulate_config_errors(cfg_file, tmp_path, argv):
    assert main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path / "x")] + argv) == 2


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_optimize_lengths(capsys):
    assert main(["optimize-lengths", "--K", "5", "--L", "4", "--J", "4", "--b", "9",
                 "--p-th", "2"]) == 0
    d = _json(capsys)
    assert d["feasible"] is True and sum(d["a"]) == 7


def test_optimize_lengths_infeasible(capsys):
    assert main(["optimize-lengths", "--K", "5", "--L", "4", "--J", "4", "--b", "9",
                 "--p-th", "1"]) == 2
    d = _json(capsys)
    assert d["feasible"] is False and d["min_survivors"] == pytest.approx(1.1875)


def test_fisher_from_generated_codebook(capsys):
    assert main(["fisher", "--n0", "6", "--J", "2", "--gamma", "1,0.5,0,2", "--M", "8"]) == 0
    d = _json(capsys)
    assert len(d["F"]) == 4 and all(v > 0 for v in d["predicted_variance"])
    # gamma = 0 is lifted to the floor
    assert d["gamma_tilde"][2] > 0


def test_fisher_numerical_failure():
    assert main(["fisher", "--n0", "4", "--J", "1", "--gamma", "1", "--M", "2",
                 "--sigma2", "-5"]) == 3


def test_fisher_needs_width():
    assert main(["fisher", "--n0", "4", "--J", "1", "--gamma", "1"]) == 2


def test_detect_round_trip(tmp_path, capsys):
    rng = np.random.default_rng(0)
    cb = generate_codebook(24, 4, 1.0, seed=1)
    save_codebook(cb, tmp_path / "cb.npz")
    saved = next(tmp_path.glob("cb*"))
    active = [3, 9]
    H = (rng.standard_normal((2, 32)) + 1j * rng.standard_normal((2, 32))) / np.sqrt(2)
    Z = (rng.standard_normal((24, 32)) + 1j * rng.standard_normal((24, 32))) * 0.1
    np.save(tmp_path / "y.npy", cb.C[:, active] @ (3 * H) + Z)
    assert main(["detect", "--y", str(tmp_path / "y.npy"), "--codebook", str(saved),
                 "--sigma2", "0.02", "--top", "2", "--max-iters", "30"]) == 0
    d = _json(capsys)
    assert d["mode"] == "zero_mean_baseline" and sorted(d["support"]) == active
    tr = d["objective_trace"]
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(tr, tr[1:]))


def test_detect_shape_mismatch(tmp_path):
    cb = generate_codebook(8, 2, 1.0, seed=1)
    save_codebook(cb, tmp_path / "cb.npz")
    np.save(tmp_path / "y.npy", np.zeros((5, 3), complex))
    assert main(["detect", "--y", str(tmp_path / "y.npy"), "--codebook",
                 str(next(tmp_path.glob("cb*")))]) == 2


@pytest.mark.skipif(shutil.which("ura-sim") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["ura-sim", "optimize-lengths", "--K", "3", "--L", "3", "--J", "3",
                        "--b", "5", "--p-th", "1"], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["feasible"]
