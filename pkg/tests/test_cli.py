import json
import subprocess
import sys

import numpy as np
import pytest

from wnt.cli import COMMANDS, run
from wnt.fields import Field, Potential
from wnt.limit_shape import LensProfile


def test_unknown_and_missing_subcommand(capsys):
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    assert run([]) == 2


def test_help_lists_defaults_and_ranges(capsys):
    for cmd, (_, spec) in COMMANDS.items():
        assert run([cmd, "--help"]) == 0
        out = capsys.readouterr().out
        for name in spec:
            assert "--" + name.replace("_", "-") in out
        assert out.count("(default:") >= len(spec) and "range:" in out


def test_profile_writes_csv(tmp_path, capsys):
    assert run(["profile", "--nodes", "512", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "profile.csv").read_text().splitlines()[0] == "t,r,ell,elldot"
    prof = LensProfile.from_csv(tmp_path / "profile.csv")
    assert float(prof.r(1.0)) == pytest.approx(np.pi / 2, abs=1e-8)
    echo = json.loads((tmp_path / "effective_config.json").read_text())
    assert echo["command"] == "profile" and echo["nodes"] == 512


def test_hlim_prints_minus_one(capsys):
    assert run(["hlim", "--t", "2", "--x", "0"]) == 0
    assert "= -1.000" in capsys.readouterr().out


def test_validation_exit_code(capsys):
    assert run(["hlim", "--t", "0"]) == 2
    assert run(["minimize", "--lam", "1", "--nt", "32", "--nx", "32"]) == 2
    assert run(["profile", "--nodes", "abc"]) == 2


def test_solver_exit_code(tmp_path):
    code = run(["minimize", "--lam", "4", "--nt", "32", "--nx", "64", "--max-iter", "1", "--tol", "1e-12"])
    assert code == 3


def test_io_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(["profile", "--out", str(blocker / "sub")]) == 4


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "run.ini"
    cfg.write_text("seed = 5\npaths = 64\nsteps = 16\n[fk]\nlam = 2\n")
    out = tmp_path / "o"
    base = ["fk", "--config", str(cfg), "--potential", "zero", "--nt", "16", "--nx", "17", "--out", str(out)]
    monkeypatch.delenv("WNT_SEED", raising=False)
    assert run(base + ["--paths", "32"]) == 0
    echo = json.loads((out / "effective_config.json").read_text())
    assert (echo["seed"], echo["paths"], echo["steps"], echo["lam"]) == (5, 32, 16, 2.0)
    monkeypatch.setenv("WNT_SEED", "9")
    assert run(base + ["--seed", "1"]) == 0
    assert json.loads((out / "effective_config.json").read_text())["seed"] == 9
    assert json.loads((out / "fk.json").read_text())["seed"] == 9
    cfg.write_text("bogus = 1\n")
    assert run(base) == 2


def test_solve_roundtrips(tmp_path):
    assert run(["solve", "--potential", "bump", "--nt", "32", "--nx", "65", "--lam", "2", "--out", str(tmp_path)]) == 0
    a = Field.from_csv(tmp_path / "h.csv", lam=2.0)
    b = Field.from_binary(tmp_path / "field.bin")
    assert np.array_equal(a.values, b.values)


def test_devlim_and_csv_potential(tmp_path, capsys):
    assert run(["devlim", "--t", "1", "--x", "0", "--nt", "32", "--nx", "32", "--out", str(tmp_path)]) == 0
    assert "devlim(1, 0) = -0.25" in capsys.readouterr().out
    P = Potential.from_csv(tmp_path / "devlim.csv")
    assert P.values.shape == (32, 32)
    out = tmp_path / "fk"
    assert run(["fk", "--potential", str(tmp_path / "devlim.csv"), "--paths", "64", "--steps", "32",
                "--out", str(out)]) == 0
    assert set(json.loads((out / "fk.json").read_text())) >= {"mean", "std_error", "log_mean", "n_paths",
                                                              "n_steps", "seed", "endpoints"}
    assert run(["fk", "--potential", str(tmp_path / "missing.csv")]) == 2


def test_geodesic_duhamel_holder(tmp_path, capsys):
    assert run(["geodesic", "--t", "1", "--x", "2", "--out", str(tmp_path)]) == 0
    assert "exterior" in capsys.readouterr().out
    info = json.loads((tmp_path / "geodesic.json").read_text())
    assert info["kind"] == "exterior" and 0 < info["t_exit"] < 1
    assert run(["duhamel", "--nt", "64", "--nx", "65", "--samples", "2000", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "duhamel.json").read_text())["diverged"] is False
    assert run(["holder", "--lam", "4", "--out", str(tmp_path)]) == 0
    assert np.isfinite(json.loads((tmp_path / "holder.json").read_text())["holder_max"])


def test_converge_is_byte_deterministic(tmp_path):
    """Acceptance criterion 9 (small grid)."""
    args = ["converge", "--lambdas", "2,4", "--delta", "0.5", "--seed", "7", "--nt", "32", "--nx", "32",
            "--region-n", "16"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    ra = (tmp_path / "a" / "report.json").read_bytes()
    assert ra == (tmp_path / "b" / "report.json").read_bytes()
    rep = json.loads(ra)
    assert rep["lambdas"] == [2.0, 4.0] and rep["config_echo"]["seed"] == 7


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "wnt.cli", "hlim", "--t", "1", "--x", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("hlim(1, 0)")
