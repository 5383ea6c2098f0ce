import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fucik_link.cli import (EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_OK, EXIT_PRECONDITION,
                            EXIT_USAGE, RunConfig, main, parse_grid, read_config_file,
                            resolve_config, run_command)
from fucik_link.errors import ConfigError


def test_parse_grid():
    assert np.allclose(parse_grid("1:3:5"), [1, 1.5, 2, 2.5, 3])
    for bad in ("1:3", "a:b:c", "3:1:4", "1:2:0"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


@pytest.mark.parametrize("flag,file,expected", [(None, None, 2), (None, 4, 4), (3, 4, 3),
                                                (3, None, 3)])
def test_precedence_matrix(flag, file, expected):
    cfg = resolve_config({"level": flag}, {"level": file} if file is not None else None)
    assert cfg.level == expected


def test_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# sample\ndomain = square:pi\nn = 31  # mesh\ntol-b = 1e-5\n\n")
    vals = read_config_file(p)
    assert vals == {"domain": "square:pi", "n": 31, "tol_b": 1e-5}
    cfg = resolve_config({"n": 15}, vals)
    assert (cfg.domain, cfg.n, cfg.tol_b) == ("square:pi", 15, 1e-5)
    p.write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        read_config_file(p)
    p.write_text("n 31\n")
    with pytest.raises(ConfigError):
        read_config_file(p)


def test_validation():
    with pytest.raises(ConfigError):
        RunConfig(tol_b=-1.0).validate()
    with pytest.raises(ConfigError):
        RunConfig(level=0).validate()


def test_exit_codes(tmp_path, capsys):
    assert run_command(["frobnicate"])[0] == EXIT_USAGE
    assert run_command([])[0] == EXIT_USAGE
    assert run_command(["eig", "--n", "x"])[0] == EXIT_CONFIG
    assert run_command(["eig", "--config", str(tmp_path / "missing.cfg")])[0] == EXIT_CONFIG
    out = str(tmp_path / "o")
    assert run_command(["oracle1d", "--domain", "square:pi", "--out", out])[0] == \
        EXIT_PRECONDITION
    assert run_command(["theta", "--n", "63", "--a", "1", "--out", out])[0] == EXIT_PRECONDITION
    capsys.readouterr()


def test_eig_outputs_and_manifest(tmp_path):
    out = tmp_path / "eig"
    status, man = run_command(["eig", "--n", "127", "--count", "4", "--out", str(out)])
    assert status == EXIT_OK
    lines = (out / "eigenvalues.csv").read_text().splitlines()
    assert lines[0] == "index,eigenvalue,residual" and len(lines) == 5
    assert float(lines[1].split(",")[1]) == pytest.approx(1.0, rel=1e-3)
    data = np.loadtxt(out / "eigenvalues.dat")
    assert data.shape == (4, 2)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["command"] == "eig"
    assert manifest["spectrum_digest"] == man.spectrum_digest
    for f in manifest["files"]:
        assert Path(f).stat().st_size > 0


def test_reruns_bit_identical(tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert run_command(["curves", "--n", "127", "--a-grid", "3:7:3", "--kind", "both",
                            "--out", str(out)])[0] == EXIT_OK
        runs.append(out)
    for name in ("nu_l2.csv", "mu_l2.csv", "nu_l2.dat"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
    header = (runs[0] / "nu_l2.csv").read_text().splitlines()[0]
    assert header == "a,b,kind,level,bracket_width"


def test_oracle_and_reductions(tmp_path):
    out = tmp_path / "x"
    assert run_command(["oracle1d", "--level", "3", "--a-grid", "10:14:3", "--out",
                        str(out)])[0] == EXIT_OK
    assert (out / "oracle_all_l3.csv").exists()
    for cmd in ("theta", "tau"):
        status, _ = run_command([cmd, "--n", "127", "--a", "3.5", "--b", "4.5", "--out", str(out)])
        assert status == EXIT_OK
        rep = json.loads((out / f"{cmd}.json").read_text())
        assert rep["residual"] <= 1e-8


def test_solve_convergence_exit(tmp_path):
    out = tmp_path / "s"
    args = ["solve", "--domain", "square:pi", "--n", "15", "--a", "5.0", "--b", "4.1",
            "--out", str(out)]
    status, _ = run_command(args)
    assert status == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["classification"] == "nontrivial_ok"
    assert (out / "solution.bin").exists()
    status, _ = run_command(args + ["--tol-crit", "1e-300"])
    assert status == EXIT_CONVERGENCE


def test_console_entry_point(tmp_path):
    assert main(["--help"]) == EXIT_OK
    proc = subprocess.run([sys.executable, "-m", "fucik_link.cli", "nothing"],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE and "unknown subcommand" in proc.stderr
