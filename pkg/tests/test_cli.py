from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from sparse_dominator.cli import ConfigError, load_config, main


def write_cfg(tmp: Path, text: str, name: str = "exp.ini") -> str:
    p = tmp / name
    p.write_text(text)
    return str(p)


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


HILBERT10 = """
[experiment]
kernel = hilbert
level = 10
window = 0 1
rings = 1
[function]
name = indicator
"""


@pytest.fixture(scope="module")
def dominated(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("dom")
    cfg = write_cfg(tmp, HILBERT10)
    code = main(["dominate", "--config", cfg, "--out", str(tmp / "out")])
    return code, tmp


# -- dominate ------------------------------------------------------------------------

def test_dominate_hilbert(dominated):
    code, tmp = dominated
    assert code == 0
    out = tmp / "out"
    for name in ("function.txt", "family.txt", "certificate.json", "summary.csv"):
        assert (out / name).is_file()
    rows = read_csv(out / "summary.csv")
    assert list(rows[0]) == ["cells", "C_emp", "C_T", "ratio", "depth", "family_size"]
    assert int(rows[0]["cells"]) == 3 * 1024
    assert b"\r\n" not in (out / "summary.csv").read_bytes()


def test_dominate_zero_kernel(tmp_path):
    cfg = write_cfg(tmp_path, "[experiment]\nkernel = zero\nlevel = 6\n[function]\nname = random_step\n")
    assert main(["dominate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    row = read_csv(tmp_path / "o" / "summary.csv")[0]
    assert float(row["C_emp"]) == 0.0 and row["ratio"] == "n/a"


def test_dominate_bad_r(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[experiment]\nr = 0\n")
    assert main(["dominate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "experiment.r" in capsys.readouterr().err


@pytest.mark.parametrize("text,field", [
    ("[experiment]\nkernel = nope\n", "experiment.kernel"),
    ("[experiment]\nlevel = x\n", "experiment.level"),
    ("[experiment]\nwindow = 0.1 1\nlevel = 4\n", "experiment.window"),
    ("[function]\nname = cosine\n", "function.name"),
    ("not an ini", "malformed"),
])
def test_config_errors(tmp_path, capsys, text, field):
    cfg = write_cfg(tmp_path, text)
    assert main(["dominate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_missing_config_and_bad_command(tmp_path):
    assert main(["dominate"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["dominate", "--config", str(tmp_path / "missing.ini")]) == 2


def test_dominate_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, "[experiment]\nlevel = 8\nseed = 4\n[function]\nname = random_step\n")
    main(["dominate", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["dominate", "--config", cfg, "--out", str(tmp_path / "b")])
    for name in ("function.txt", "family.txt", "certificate.json", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# -- verify-certificate ------------------------------------------------------------------

def test_verify_closure(dominated):
    _, tmp = dominated
    out = tmp / "out"
    assert main(["verify-certificate", str(out / "certificate.json"), str(out / "function.txt")]) == 0
    assert main(["verify-certificate", "--out", str(out)]) == 0


def test_verify_tampered(dominated, tmp_path, capsys):
    _, tmp = dominated
    doc = json.loads((tmp / "out" / "certificate.json").read_text())
    doc["roots"][0]["c_star"] *= 0.5
    bad = tmp_path / "certificate.json"
    bad.write_text(json.dumps(doc))
    code = main(["verify-certificate", str(bad), str(tmp / "out" / "function.txt")])
    assert code == 1
    assert "first violating node: node 0 " in capsys.readouterr().out


def test_verify_truncated(dominated, tmp_path):
    _, tmp = dominated
    text = (tmp / "out" / "certificate.json").read_text()
    cut = tmp_path / "certificate.json"
    cut.write_text(text[: len(text) // 3])
    assert main(["verify-certificate", str(cut), str(tmp / "out" / "function.txt")]) == 2
    assert main(["verify-certificate", str(tmp_path / "nope.json"), str(tmp / "out" / "function.txt")]) == 2


def test_verify_via_config(dominated, tmp_path):
    _, tmp = dominated
    cfg = write_cfg(tmp_path, f"[verify]\ncertificate = {tmp}/out/certificate.json\n"
                              f"function = {tmp}/out/function.txt\n")
    assert main(["verify-certificate", "--config", cfg]) == 0


# -- maximal-compare ------------------------------------------------------------------------

def test_maximal_zero_kernel(tmp_path):
    cfg = write_cfg(tmp_path, "[experiment]\nkernel = zero\nlevel = 6\n[maximal]\nlevels = 5 6\n")
    assert main(["maximal-compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "maximal_summary.csv")
    assert all(float(r["kappa"]) == 0.0 for r in rows)
    cells = read_csv(tmp_path / "o" / "maximal_cells.csv")
    assert all(float(r["M_T"]) == 0 and float(r["T_star"]) == 0 and float(r["residual"]) == 0 for r in cells)


def test_maximal_spike(tmp_path):
    cfg = write_cfg(tmp_path, "[experiment]\nlevel = 7\n[function]\nname = spike\n[maximal]\nlevels = 7\n")
    assert main(["maximal-compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    cells = read_csv(tmp_path / "o" / "maximal_cells.csv")
    for r in cells:
        assert float(r["residual"]) < float("inf")
        if float(r["M_T"]) > 0:
            assert float(r["M"]) > 0


def test_maximal_stability_small(tmp_path):
    cfg = write_cfg(tmp_path, "[experiment]\nlevel = 8\nseed = 1\n[function]\nname = random_step\n"
                              "[maximal]\nlevels = 6 7 8\ncount = 3\ncells_csv = none\n")
    assert main(["maximal-compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert not (tmp_path / "o" / "maximal_cells.csv").exists()


def test_maximal_bad_option(tmp_path):
    cfg = write_cfg(tmp_path, "[maximal]\ncells_csv = some\n")
    assert main(["maximal-compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


# -- weights-sweep --------------------------------------------------------------------------

SWEEP = """
[experiment]
level = 8
rings = 1
[function]
name = random_step
[weights]
p = {p}
r = {r}
alphas = {alphas}
centre = 0.5
trials = 8
"""


def test_sweep_single_point(tmp_path):
    cfg = write_cfg(tmp_path, SWEEP.format(p=2, r=1, alphas="0"))
    assert main(["weights-sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    assert rows[-1]["alpha"] == "fit" and rows[-1]["slope_window"] == "n/a"
    assert float(rows[0]["diagnostic_ratio"]) <= 1


def test_sweep_p3_r2(tmp_path):
    cfg = write_cfg(tmp_path, SWEEP.format(p=3, r=2, alphas="-0.9 -0.5 0 0.4"))
    assert main(["weights-sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    assert float(rows[-1]["slope_window"]) <= 1.15


def test_sweep_inadmissible(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SWEEP.format(p=2, r=1, alphas="0 1.2"))
    assert main(["weights-sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "weights.alphas" in capsys.readouterr().err


def test_sweep_family_file(dominated, tmp_path):
    _, tmp = dominated
    cfg = write_cfg(tmp_path, SWEEP.format(p=2, r=1, alphas="-0.3 0.3") +
                    f"family = {tmp}/out/family.txt\n")
    assert main(["weights-sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


# -- grid-decompose and selftest ----------------------------------------------------------------

def test_grid_decompose(tmp_path):
    cfg = write_cfg(tmp_path, "[experiment]\nlevel = 7\n[decompose]\nfamilies = 4\ncubes = 30\n")
    assert main(["grid-decompose", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "decompose.csv")
    assert len(rows) == 4 and all(r["ok"] == "True" for r in rows)


def test_grid_decompose_family_file(dominated, tmp_path):
    _, tmp = dominated
    cfg = write_cfg(tmp_path, f"[experiment]\nlevel = 10\n[decompose]\nfamily = {tmp}/out/family.txt\n"
                              "functions = 1\n")
    assert main(["grid-decompose", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert sorted(p.name for p in (tmp_path / "o").glob("grid_*.txt")) == ["grid_0.txt", "grid_1.txt", "grid_2.txt"]


def test_selftest():
    assert main(["selftest"]) == 0


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sparse_dominator.cli", "selftest"], capture_output=True, text=True)
    assert proc.returncode == 0 and "FAIL" not in proc.stdout


def test_load_config_defaults(tmp_path):
    cfg = load_config(write_cfg(tmp_path, "[experiment]\ndimension = 2\nlevel = 4\nkernel = riesz\n"))
    assert cfg.window().n == 2 and cfg.window().side == 16
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, "[experiment]\ndimension = 3\n", "b.ini"))
