import json
import subprocess
import sys

import numpy as np
import pytest

from decaylab.cli import main
from decaylab.systems import build_named_system, save_system


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


@pytest.mark.parametrize("argv,files", [
    (["measure", "--fixture", "diffusion", "--N", "5", "--q", "1"],
     {"measure.json", "measure_line_sums.csv"}),
    (["stability", "--fixture", "diffusion", "--N", "5"], {"stability.json", "stability.csv"}),
    (["lyapunov", "--fixture", "random-subexp-A", "--N", "5", "--bound"],
     {"lyapunov.json", "lyapunov_decay.csv"}),
    (["lqr", "--fixture", "scalar-embed"], {"lqr.json", "lqr_decay.csv"}),
    (["truncate", "--fixture", "random-subexp-A", "--N", "6"], {"truncate.json", "truncate.csv"}),
    (["indicator", "--sigma", "1", "--delta", "1", "--beta", "1", "--N", "100",
      "--deterministic", "--T-max", "20"], {"indicator.json", "indicator.csv"}),
    (["report", "--fixture", "random-subexp-A", "--N", "10", "--seeds", "2"],
     {"care.json", "sweep.csv", "sweep.json", "indicator.csv", "indicator.json", "manifest.json"}),
])
def test_subcommands_write_outputs(tmp_path, capsys, argv, files):
    assert run(tmp_path, *argv) == 0
    assert {p.name for p in tmp_path.iterdir()} == files
    for p in tmp_path.glob("*.json"):
        json.loads(p.read_text())


def test_q_zero_exit_code(tmp_path, capsys):
    assert run(tmp_path, "measure", "--fixture", "diffusion", "--q", "0") == 2
    assert "q must be positive; use s01 for the ideal measure" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_missing_input_exit_code(tmp_path, capsys):
    assert run(tmp_path, "measure", "--input", str(tmp_path / "nope.json")) == 4


def test_truncated_file_exit_code(tmp_path, capsys):
    path = tmp_path / "sys.json"
    save_system(build_named_system("diffusion", N=2), path)
    doc = json.loads(path.read_text())
    del doc["domain"]["N"]
    path.write_text(json.dumps(doc))
    out = tmp_path / "out"
    assert main(["measure", "--input", str(path), "--out", str(out)]) == 2
    assert "domain.N" in capsys.readouterr().err


def test_input_file_matches_fixture(tmp_path, capsys):
    path = tmp_path / "sys.json"
    save_system(build_named_system("random-subexp-A", N=4, seed=1), path)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["lqr", "--input", str(path), "--out", str(a)])
    main(["lqr", "--fixture", "random-subexp-A", "--N", "4", "--seed", "1", "--out", str(b)])
    assert (a / "lqr_decay.csv").read_bytes() == (b / "lqr_decay.csv").read_bytes()


def test_csv_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    argv = ["truncate", "--fixture", "random-subexp-A", "--N", "6"]
    main([*argv, "--out", str(a)])
    main([*argv, "--out", str(b)])
    assert (a / "truncate.csv").read_bytes() == (b / "truncate.csv").read_bytes()


def test_csv_full_precision(tmp_path, capsys):
    run(tmp_path, "truncate", "--fixture", "scalar-embed")
    rows = (tmp_path / "truncate.csv").read_text().splitlines()
    assert len(rows) >= 2
    vals = np.genfromtxt(tmp_path / "truncate.csv", delimiter=",", names=True)
    assert np.all(np.isfinite(vals["bound"]))


def test_report_needs_envelope(tmp_path, capsys):
    assert run(tmp_path, "report", "--fixture", "scalar-embed") == 2


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "decaylab.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
