import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from measboltz.cli import EXIT_CONFIG, EXIT_PASS, EXIT_VIOLATION, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def two_atom_source():
    return {"kind": "atomic", "measure": {"dimension": 3, "atoms": [[1.0, 0, 0, 0.5], [-1.0, 0, 0, 0.5]]}}


def small_simulation(**extra):
    doc = {
        "kernel": {"preset": "hard_spheres"},
        "source": two_atom_source(),
        "particle_count": 2000,
        "t_end": 0.5,
        "seed": 4,
        "record_moments": [2, 3, 4, 6],
        "record_interval": 0.05,
        "envelope": True,
        "exponential_s0": 8,
    }
    doc.update(extra)
    return {k: v for k, v in doc.items() if v is not None}


class TestSimulate:
    def test_two_atom(self, tmp_path):
        cfg = write(tmp_path, "sim.json", small_simulation())
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_PASS
        report = json.loads((tmp_path / "a" / "run_report.json").read_text())
        assert report["violations"] == [] and report["envelope_violations"] == 0
        assert report["conservation"]["energy"] <= 1e-9
        assert report["exponential"]["pass"]
        assert report["build"] and report["config"]["particle_count"] == 2000
        state = json.loads((tmp_path / "a" / "state_final.json").read_text())
        assert len(state["atoms"]) == 2000

    def test_byte_identical(self, tmp_path):
        cfg = write(tmp_path, "sim.json", small_simulation(envelope=False, exponential_s0=None))
        for d in ("a", "b"):
            assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d)]) == EXIT_PASS
        assert (tmp_path / "a" / "moments.csv").read_bytes() == (tmp_path / "b" / "moments.csv").read_bytes()
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "99"]) == EXIT_PASS
        assert (tmp_path / "a" / "moments.csv").read_bytes() != (tmp_path / "c" / "moments.csv").read_bytes()

    def test_threads_flag(self, tmp_path):
        cfg = write(tmp_path, "sim.json", small_simulation(envelope=False))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "2"]) == EXIT_PASS
        report = json.loads((tmp_path / "a" / "run_report.json").read_text())
        assert report["config"]["threads"] == 2

    def test_dirac(self, tmp_path):
        assert main(["simulate", "--config", str(CONFIGS / "simulate_dirac.json"), "--out", str(tmp_path)]) == EXIT_PASS
        report = json.loads((tmp_path / "run_report.json").read_text())
        assert report["stationary"] == "analytic stationary Dirac"
        assert "acceptance" not in report
        with open(tmp_path / "moments.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {float(r["moment"]) for r in rows if r["s"] == "2.0"} == {1.25}

    def test_maxwellian(self, tmp_path):
        doc = json.loads((CONFIGS / "simulate_maxwellian.json").read_text())
        doc.update(particle_count=20000, t_end=0.5, record_interval=0.25)
        cfg = write(tmp_path, "max.json", doc)
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_PASS
        report = json.loads((tmp_path / "o" / "run_report.json").read_text())
        assert report["stationary"] == "pass"


class TestConfigErrors:
    def test_unknown_key(self, tmp_path):
        cfg = write(tmp_path, "bad.json", small_simulation(colour="red"))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_required(self, tmp_path):
        doc = small_simulation()
        del doc["t_end"]
        assert main(["simulate", "--config", str(write(tmp_path, "bad.json", doc)), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_not_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["bounds", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert main(["mehler", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_noncutoff_kernel(self, tmp_path):
        doc = small_simulation(kernel={"preset": "inverse_power", "s": 7})
        assert main(["simulate", "--config", str(write(tmp_path, "bad.json", doc)), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_truncated_kernel_runs(self, tmp_path):
        doc = small_simulation(kernel={"preset": "inverse_power", "s": 7, "truncation": 4}, t_end=0.1, envelope=False, exponential_s0=None)
        assert main(["simulate", "--config", str(write(tmp_path, "ok.json", doc)), "--out", str(tmp_path / "o")]) == EXIT_PASS

    def test_bad_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--out", str(tmp_path)])
        assert exc.value.code == EXIT_CONFIG


class TestOtherCommands:
    def test_bounds(self, tmp_path):
        assert main(["bounds", "--config", str(CONFIGS / "bounds.json"), "--out", str(tmp_path)]) == EXIT_PASS
        with open(tmp_path / "envelopes.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["t", "envelope_kind", "s_or_q", "value"]
        s2 = {float(r["value"]) for r in rows if r["envelope_kind"] == "moment_production" and float(r["s_or_q"]) == 2.0}
        assert s2 == {2.0}
        s3 = [float(r["value"]) for r in rows if r["envelope_kind"] == "moment_production" and float(r["s_or_q"]) == 3.0]
        assert all(a > b for a, b in zip(s3, s3[1:]))
        assert all(float(r["t"]) >= 1.0 for r in rows if r["envelope_kind"] == "stability_tau")

    def test_mehler(self, tmp_path):
        assert main(["mehler", "--config", str(CONFIGS / "mehler.json"), "--out", str(tmp_path)]) == EXIT_PASS
        reports = json.loads((tmp_path / "mehler_report.json").read_text())
        summary = reports[-1]["summary"]
        assert summary["decreasing"] and summary["max_weak_defect"][-1] < 1e-3
        assert all(r["moments_exact"] for r in reports[:-1])
        assert reports[0]["T"] == pytest.approx(1 / 3)

    def test_mehler_truncation(self, tmp_path):
        cfg = write(tmp_path, "m.json", {"measure": {"path": str(CONFIGS / "two_atom.json")}, "n_values": [1], "truncate": True})
        assert main(["mehler", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_PASS
        rep = json.loads((tmp_path / "o" / "mehler_report.json").read_text())[0]
        assert rep["truncation"]["defect"] <= rep["truncation"]["target"]

    def test_toolbox_defaults(self, tmp_path):
        assert main(["toolbox", "--config", str(CONFIGS / "toolbox.json"), "--out", str(tmp_path)]) == EXIT_PASS
        results = json.loads((tmp_path / "toolbox.json").read_text())
        assert results and all(r["pass"] for r in results)

    def test_toolbox_failure_exits_nonzero(self, tmp_path, capsys):
        cfg = write(tmp_path, "t.json", {"eps3_expected": 0.5})
        assert main(["toolbox", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_VIOLATION
        assert "FAIL eps_3_value" in capsys.readouterr().err

    def test_stability_zero_perturbation(self, tmp_path):
        doc = {"kernel": {"preset": "hard_spheres"}, "source": two_atom_source(), "particle_count": 2000, "t_end": 1.5, "seed": 3, "tau": 1.0, "perturbation": 0.0}
        assert main(["stability", "--config", str(write(tmp_path, "s.json", doc)), "--out", str(tmp_path / "o")]) == EXIT_PASS
        rep = json.loads((tmp_path / "o" / "stability_report.json").read_text())
        assert rep["d_tau"] == 0.0 and all(r["distance"] == 0.0 for r in rep["rows"])

    def test_stability_perturbed(self, tmp_path):
        doc = {"kernel": {"preset": "hard_spheres"}, "source": two_atom_source(), "particle_count": 2000, "t_end": 1.5, "seed": 3, "tau": 1.0}
        assert main(["stability", "--config", str(write(tmp_path, "s.json", doc)), "--out", str(tmp_path / "o")]) == EXIT_PASS
        rep = json.loads((tmp_path / "o" / "stability_report.json").read_text())
        assert rep["d_tau"] > 0 and rep["rows"][0]["distance"] <= rep["d_tau"]
        assert rep["c_tau"] == pytest.approx(4 * (4288 + 2) * 2, rel=1e-9)
        header = (tmp_path / "o" / "stability.csv").read_text().splitlines()[0]
        assert header == "t,distance,envelope"


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "measboltz", "bounds", "--config", str(CONFIGS / "bounds.json"), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "envelopes.csv").exists()
