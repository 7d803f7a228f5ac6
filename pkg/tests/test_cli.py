import json
import subprocess
import sys

import numpy as np
import pytest

from ionlab import cli
from ionlab.analysis import FitResult
from ionlab.config import preset_dir

RUN = """schema_version = 1
experiment = "spin_echo"
seed = {seed}
sequence_text = "prepare\\npulse pi2 mw\\ndelay 0.01\\npulse pi2 mw phase=$scan\\nmeasure\\n"
[pulses.pi2]
duration = 35e-6
area_pi = 0.5
[scan]
variable = "phase"
start = 0.0
stop = 12.566370614359172
points = 9
shots_per_point = 200
"""


@pytest.fixture
def run_cfg(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(RUN.format(seed=5))
    return p


def test_run_then_analyze(tmp_path, run_cfg, capsys):
    out = tmp_path / "d.csv"
    assert cli.main(["run", "--config", str(run_cfg), "--out", str(out)]) == 0
    assert out.exists() and (tmp_path / "d.csv.json").exists()
    rep = tmp_path / "fit.json"
    assert cli.main(["analyze", "--model", "sinusoid", "--in", str(out), "--out", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert report["model"] == "sinusoid"
    assert report["params"]["period"]["value"] == pytest.approx(2 * np.pi, rel=0.05)
    assert "amplitude=" in capsys.readouterr().out


def test_run_is_deterministic_across_threads(tmp_path, run_cfg):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.main(["run", "--config", str(run_cfg), "--out", str(a), "--threads", "1"])
    cli.main(["run", "--config", str(run_cfg), "--out", str(b), "--threads", "3"])
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.json").read_bytes() == (tmp_path / "b.csv.json").read_bytes()


def test_seed_override_changes_output(tmp_path, run_cfg):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.main(["run", "--config", str(run_cfg), "--out", str(a)])
    cli.main(["run", "--config", str(run_cfg), "--out", str(b), "--seed", "6"])
    assert a.read_bytes() != b.read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text(RUN.format(seed='"x"'))
    assert cli.main(["run", "--config", str(p)]) == 2
    assert "seed" in capsys.readouterr().err


def test_truncation_exit_code(tmp_path, capsys):
    p = tmp_path / "trunc.toml"
    p.write_text((preset_dir() / "fig4_810.toml").read_text()
                 .replace('"motional.seq"', f'"{preset_dir() / "motional.seq"}"')
                 .replace("n_max = 30", "n_max = 2")
                 .replace("shots_per_point = 1000", "shots_per_point = 50"))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "t.csv")]) == 3
    assert "n_max" in capsys.readouterr().err


def test_digest_mismatch_refused_unless_forced(tmp_path, run_cfg):
    out = tmp_path / "d.csv"
    cli.main(["run", "--config", str(run_cfg), "--out", str(out)])
    lines = out.read_text().splitlines()
    f = lines[1].split(",")
    f[3] = str(int(f[3]) // 2)
    lines[1] = ",".join(f)
    out.write_text("\n".join(lines) + "\n")
    assert cli.main(["analyze", "--model", "sinusoid", "--in", str(out)]) == 2
    assert cli.main(["analyze", "--model", "sinusoid", "--in", str(out), "--force"]) == 0


def test_malformed_csv_row_number(tmp_path, capsys):
    p = tmp_path / "t.csv"
    p.write_text("delay,amplitude,stderr\n0.1,0.9,0.01\n0.2,oops,0.01\n")
    assert cli.main(["analyze", "--model", "expdecay", "--in", str(p)]) == 2
    assert "row 3" in capsys.readouterr().err


def test_expdecay_table(tmp_path):
    t = np.array([0.0002, 0.05, 0.1, 0.2, 0.3])
    p = tmp_path / "t.csv"
    p.write_text("delay,amplitude,stderr\n" + "".join(
        f"{float(a)!r},{float(b)!r},0.02\n" for a, b in zip(t, 0.98 * np.exp(-t / 1.2))))
    assert cli.main(["analyze", "--model", "expdecay", "--in", str(p)]) == 0
    rep = json.loads((tmp_path / "t.fit.json").read_text())
    assert rep["params"]["decay_constant"]["value"] == pytest.approx(1.2, rel=1e-6)


def test_nonconvergence_exit_code_writes_report(tmp_path, monkeypatch):
    def stuck(t, a, s):
        return FitResult("expdecay", ("intercept", "decay_constant"), np.array([1.0, 1.0]),
                         np.eye(2), 1.0, len(t), converged=False)
    monkeypatch.setattr(cli, "fit_exponential_decay", stuck)
    p = tmp_path / "t.csv"
    p.write_text("delay,amplitude,stderr\n0.1,0.9,0.01\n0.2,0.8,0.01\n0.3,0.7,0.01\n")
    assert cli.main(["analyze", "--model", "expdecay", "--in", str(p)]) == 4
    rep = json.loads((tmp_path / "t.fit.json").read_text())
    assert rep["diagnostics"]["converged"] is False


def test_reproduce_splitting_bundle_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["reproduce", "splitting", "--outdir", str(a), "--threads", "1"]) == 0
    assert cli.main(["reproduce", "splitting", "--outdir", str(b), "--threads", "4"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n
    summary = (a / "splitting_summary.csv").read_text()
    assert "zero-field splitting" in summary


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("IONLAB_THREADS", "3")
    assert cli._threads(None) == 3
    assert cli._threads(2) == 2


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "ionlab.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "reproduce" in r.stdout
