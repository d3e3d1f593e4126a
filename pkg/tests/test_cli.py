import csv
import json
from pathlib import Path
import subprocess
import sys

import numpy as np
import pytest

from fbhomog.cli import main
from fbhomog.field import GridFunction

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CONSTANT = str(CONFIGS / "constant.ini")


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fbhomog", "--help"], capture_output=True,
                          text=True, check=True)
    assert "verify" in proc.stdout


def test_corrector(tmp_path):
    out = tmp_path / "c"
    assert main(["corrector", "--config", CONSTANT, "--out", str(out)]) == 0
    rep = _report(out)
    assert rep["passed"]
    np.testing.assert_allclose(rep["metrics"]["abar"], np.eye(2), atol=1e-10)
    assert (out / "correctors.csv").exists()


def test_homog_matrix(tmp_path):
    cfg = str(CONFIGS / "checkerboard.ini")
    assert main(["homog-matrix", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert "abar" in _report(tmp_path)["metrics"]


def test_minimize_flatness_profile_chain(tmp_path):
    out = tmp_path / "m"
    assert main(["minimize", "--config", CONSTANT, "--out", str(out), "--alpha", "2.0"]) == 0
    u = GridFunction.load(out / "u.fbh")
    assert u.grid.radius == 4.0
    with open(out / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) > 1
    assert main(["flatness", "--input", str(out / "u.fbh"), "--out", str(tmp_path / "f")]) == 0
    fit = _report(tmp_path / "f")["metrics"]
    assert fit["alpha"] == pytest.approx(2.0, rel=0.1)
    assert main(["profile", "--input", str(out / "u.fbh"), "--what", "liouville",
                 "--radii", "1,2,3", "--r0", "1", "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "profile_liouville.csv").exists()


def test_transmission(tmp_path):
    assert main(["transmission", "--config", CONSTANT, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "transmission.csv").exists()


def test_verify_with_config(tmp_path):
    assert main(["verify", "--config", CONSTANT, "--out", str(tmp_path)]) == 0
    rep = _report(tmp_path)
    assert rep["verdicts"] and all(v["passed"] for v in rep["verdicts"])


def test_config_errors_exit_with_two(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nid = x\n[medium]\npreset = constant\n")
    assert main(["minimize", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "missing key grid.radius" in capsys.readouterr().err
    bad.write_text("[medium]\nbogus = 1\n")
    assert main(["corrector", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["corrector", "--out", str(tmp_path)]) == 2
    assert main(["flatness", "--input", str(tmp_path / "none.fbh"), "--out", str(tmp_path)]) == 2


def test_no_partial_outputs_on_error(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[medium]\npreset = constant\n")
    out = tmp_path / "o"
    main(["minimize", "--config", str(bad), "--out", str(out)])
    assert not any(out.glob("*"))
