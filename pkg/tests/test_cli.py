import json
import math
from pathlib import Path

import pytest

from kslab.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


SMALL_SIM = """
[grid]
n = 64
l = 20.0
[params]
tau = 1.0
[init]
atoms = [{ mass = 1.0, width = 1.0 }]
[time]
t_end = 0.5
dt_init = 0.01
dt_max = 0.05
[output]
snapshot_times = [0.25, 0.5]
"""


def test_simulate_writes_outputs_and_manifest(tmp_path):
    cfg = _write(tmp_path, SMALL_SIM)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["verdicts"]["status"] == "completed"
    assert man["config"]["grid"]["n"] == 64
    for rel in man["outputs"]:
        assert (out / rel).is_file()
    assert {"timeseries.csv", "snapshot_000.ksf", "snapshot_001.ksf", "norms.txt"} <= set(man["outputs"])


def test_output_directory_from_environment(tmp_path, monkeypatch):
    cfg = _write(tmp_path, SMALL_SIM)
    monkeypatch.setenv("KSLAB_OUT", str(tmp_path / "envout"))
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert (tmp_path / "envout" / "manifest.json").is_file()


def test_collapse_config_reports_blowup(tmp_path):
    assert main(["simulate", "--config", str(CONFIGS / "collapse_10pi_tau005.toml"), "--out", str(tmp_path)]) == 2
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["verdicts"]["status"] == "blowup_suspected"


def test_atom_outside_box_is_a_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, "[grid]\nl = 10.0\n[init]\natoms = [{ mass = 1.0, x = 8.0 }]\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "atom 0" in capsys.readouterr().err


def test_missing_config_flag(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == 1


def test_picard_small_data_converges(tmp_path):
    assert main(["picard", "--config", str(CONFIGS / "picard_small.toml"), "--out", str(tmp_path)]) == 0
    text = (tmp_path / "picard_report.txt").read_text()
    assert "converged = true" in text
    assert (tmp_path / "slab" / "index.txt").is_file()


@pytest.mark.slow
def test_picard_large_mass_exits_with_suggestion(tmp_path, capsys):
    assert main(["picard", "--config", str(CONFIGS / "picard_large_mass.toml"), "--out", str(tmp_path)]) == 4
    err = capsys.readouterr().err
    assert "suggested tau" in err
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["verdicts"]["suggested_tau"] > 0.05


@pytest.mark.parametrize("args", [["--tau-list", "1"], ["--q", "7"], ["--q", "3"], ["--p", "2.5"]])
def test_eta_input_errors(tmp_path, args):
    assert main(["eta", "--out", str(tmp_path)] + args) == 1


def test_eta_small_run(tmp_path):
    code = main(["eta", "--out", str(tmp_path), "--tau-list", "1,4,16", "--n", "64", "--l", "24", "--horizon", "2", "--n-t", "16"])
    assert code == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["verdicts"]["bound_exponent"] == pytest.approx(-1 / 12)
    assert len((tmp_path / "eta.csv").read_text().splitlines()) == 4


def test_selfsim_outputs_are_reproducible_across_worker_counts(tmp_path):
    base = ["selfsim", "--tau", "10", "--points", "24", "--a-min", "1", "--a-max", "300"]
    assert main(base + ["--strict-sequential", "--out", str(tmp_path / "a")]) == 0
    assert main(base + ["--threads", "2", "--out", str(tmp_path / "b")]) == 0
    for name in ("mass_curve.csv", "pairs_tau10.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["verdicts"]["m_tau[10]"] > 8 * math.pi


def test_selfsim_profile_export(tmp_path):
    assert main(["selfsim", "--tau", "1", "--points", "2", "--profile", "2.0", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "profile_a2_tau1_U.csv").is_file()


def test_selfsim_rejects_bad_range(tmp_path):
    assert main(["selfsim", "--a-min", "5", "--a-max", "1", "--out", str(tmp_path)]) == 1


def test_validate_flags_corrupt_snapshot(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL_SIM)
    out = tmp_path / "out"
    main(["simulate", "--config", str(cfg), "--out", str(out)])
    victim = out / "snapshot_001.ksf"
    victim.write_bytes(victim.read_bytes()[:100])
    assert main(["validate", "--check-snapshots", str(out), "--only", "1"]) == 1
    assert "snapshot_001.ksf" in capsys.readouterr().err


def test_validate_single_criterion(capsys):
    assert main(["validate", "--only", "3"]) == 0
    assert "[PASS]  3." in capsys.readouterr().out


def test_threads_must_be_positive(tmp_path):
    assert main(["eta", "--threads", "0", "--out", str(tmp_path)]) == 1
