import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hfbcollapse import cli, legendre
from hfbcollapse.cli import PRESETS, ConfigError, RunConfig, main

SMALL = """\
[run]
preset = bound-hf
model = {model}

[grid]
N = 32
R = 12.0

[sectors]
lmax = 1

[potential]
kappa = 0.5
mass = 1.0

[initial]
orbitals = 2,1
{initial}

[integrator]
t_final = 0.2
sample_interval = 0.05
{integrator}
"""


def write_config(tmp_path, name="run.ini", model="hf", initial="chirp = 0.1", integrator="", text=None):
    path = tmp_path / name
    path.write_text(text if text is not None else SMALL.format(model=model, initial=initial, integrator=integrator))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- configuration errors -------------------------------------------------------------


@pytest.mark.parametrize("text", [
    "[run]\npreset = no-such-preset\n",
    "[nonsense]\nx = 1\n",
    "[grid]\nflavour = 3\n",
    "[grid]\nscheme = chebyshev\n",
    "[grid]\nN = four\n",
    "[potential]\nkappa = -1\n",
    "[potential]\nmass = -0.5\n",
    "[sectors]\nlmax = 1\ncutoff = 2\n",
    "[initial]\norbitals = 2,0,1\n[sectors]\nlmax = 2\ncutoff = 1\n",
    "[initial]\ntarget = negative\n",
    "[run]\nmodel = tdhf\n",
    "not an ini file",
])
def test_config_errors_exit_1(tmp_path, text, capsys):
    path = write_config(tmp_path, text=text)
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "out")]) == 1
    assert "configuration error" in capsys.readouterr().err


def test_missing_config_file_exits_1(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "absent.ini"), "--out", str(tmp_path)]) == 1


def test_hfb_without_pairing_needs_explicit_flag(tmp_path):
    path = write_config(tmp_path, model="hfb", initial="chirp = 0.1")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "out")]) == 1


def test_threads_must_be_positive(tmp_path):
    assert main(["validate", "--threads", "0", "--out", str(tmp_path)]) == 1


def test_presets_resolve_and_record_version():
    for name in PRESETS:
        cfg = RunConfig.from_mapping({"run": {"preset": name}})
        assert cfg.sections["run"]["preset"] == name
        assert cfg.sections["run"]["preset_version"] == cli.PRESETS_VERSION
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"integrator": {"t_final": "auto"}}).integrator(None)


def test_config_round_trips_through_ini(tmp_path):
    cfg = RunConfig.from_file(write_config(tmp_path))
    again = tmp_path / "again.ini"
    again.write_text(cfg.to_ini())
    assert RunConfig.from_file(again).digest() == cfg.digest()


# -- simulate -------------------------------------------------------------------------


def test_simulate_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(write_config(tmp_path)), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    for name in manifest["artifacts"]:
        assert (out / name).exists(), name
    rows = read_csv(out / "trajectory.csv")
    assert rows[0] == manifest["csv_columns"] and len(rows) == 6
    assert manifest["constants"]["c0"] == 1.0
    assert {"numpy", "scipy", "hfbcollapse"} <= set(manifest["versions"])
    report = json.loads((out / "report.json").read_text())
    assert report["breakdown"] is False and not report["invariant_failure"]
    assert (out / "virial_M.svg").read_text().startswith("<svg")


def test_simulate_is_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    for sub in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / sub)]) == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert (tmp_path / "a" / "checkpoints" / "final.ckpt").read_bytes() == \
        (tmp_path / "b" / "checkpoints" / "final.ckpt").read_bytes()


def test_hfb_with_zero_pairing_reproduces_hf(tmp_path):
    assert main(["simulate", "--config", str(write_config(tmp_path, "hf.ini")), "--out", str(tmp_path / "hf")]) == 0
    hfb = write_config(tmp_path, "hfb.ini", model="hfb", initial="chirp = 0.1\nzero_pairing = true")
    assert main(["simulate", "--config", str(hfb), "--out", str(tmp_path / "hfb")]) == 0
    a = np.array(read_csv(tmp_path / "hf" / "trajectory.csv")[1:], float)
    b = np.array(read_csv(tmp_path / "hfb" / "trajectory.csv")[1:], float)
    assert a.shape == b.shape
    assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_breakdown_is_a_completed_run(tmp_path):
    cfg = write_config(tmp_path, initial="chirp = -0.5", integrator="kinetic_ceiling = 1.01\nboundary_threshold = 1.0")
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["breakdown"] is True and report["reason"] == "kinetic-ceiling"


def test_constraint_violation_exits_2(tmp_path):
    cfg = write_config(tmp_path, integrator="constraint_tol = 1e-30\nprojection_interval = 1")
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
    report = json.loads((out / "report.json").read_text())
    assert report["reason"] == "constraint-violation" and report["invariant_failure"]


def test_report_recomputes_checks(tmp_path):
    out = tmp_path / "out"
    main(["simulate", "--config", str(write_config(tmp_path)), "--out", str(out)])
    first = json.loads((out / "report.json").read_text())
    (out / "report.json").unlink()
    assert main(["report", "--out", str(out)]) == 0
    again = json.loads((out / "report.json").read_text())
    assert again["checks"] == first["checks"]
    assert main(["report", "--out", str(tmp_path / "nowhere")]) == 1


# -- validate and sweep ---------------------------------------------------------------


def test_validate_fast_passes(tmp_path, capsys):
    assert main(["validate", "--level", "fast", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("[PASS]") for line in lines)
    assert len(json.loads((tmp_path / "validation.json").read_text())) == len(lines)


def test_validate_detects_corrupt_gaunt_table(tmp_path, monkeypatch, capsys):
    build = legendre.GauntTable.build.__func__

    def corrupted(cls, max_degree):
        table = build(cls, max_degree)
        values = table.values.copy()
        values[1, 1, 2] *= 1.001
        return cls(table.max_degree, values)

    monkeypatch.setattr(legendre.GauntTable, "build", classmethod(corrupted))
    assert main(["validate", "--level", "fast", "--out", str(tmp_path)]) == 2
    assert "[FAIL] Gaunt" in capsys.readouterr().out


def test_empty_sweep(tmp_path):
    cfg = write_config(tmp_path, text=SMALL.format(model="hf", initial="chirp = 0.1", integrator="")
                       + "\n[sweep]\naxis = kappa\nvalues =\n")
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "summary.csv")
    assert rows == [cli.SWEEP_COLUMNS]


def test_sweep_over_cutoff(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--axis", "lambda_cutoff",
                 "--values", "0,1"]) == 0
    rows = read_csv(out / "summary.csv")[1:]
    assert [r[2] for r in rows] == ["ok", "ok"]
    assert (out / "lambda_cutoff_000" / "trajectory.csv").exists()


def test_sweep_rejects_unknown_axis(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path), "--values", "1"]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hfbcollapse.cli", "simulate", "--config",
                           str(tmp_path / "absent.ini")], capture_output=True, text=True)
    assert proc.returncode == 1
