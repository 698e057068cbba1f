import json
import math
import os
from pathlib import Path

import pytest

from gammabsde.cli import run
from conftest import FIXTURES


def dom(name):
    return str(FIXTURES / f"{name}.json")


def scen(name):
    return str(FIXTURES / f"{name}.json")


class TestGeodesicCommand:
    def test_square_diagonal(self, capsys):
        code = run(["geodesic", "--domain", dom("square"), "--from", "0,0", "--to", "1,1"])
        out = capsys.readouterr().out
        assert code == 0
        payload = json.loads(out)
        assert payload["length"] == pytest.approx(math.sqrt(2.0))
        assert payload["theta"] == 0.0

    def test_missing_domain_file(self, capsys):
        code = run(["geodesic", "--domain", "/nope/missing.json", "--from", "0,0", "--to", "1,1"])
        err = capsys.readouterr().err
        assert code == 1
        assert "/nope/missing.json" in err

    def test_bad_point(self, capsys):
        code = run(["geodesic", "--domain", dom("square"), "--from", "zzz", "--to", "1,1"])
        assert code == 1

    def test_svg_output(self, tmp_path, capsys):
        svg = tmp_path / "path.svg"
        code = run([
            "geodesic", "--domain", dom("lshape"), "--from", "1.9,0.5",
            "--to", "0.5,1.9", "--svg", str(svg),
        ])
        capsys.readouterr()
        assert code == 0
        text = svg.read_text()
        assert text.startswith("<svg")
        assert "polyline" in text


class TestFrechetCommand:
    def test_two_arm_measure(self, capsys):
        code = run([
            "frechet", "--domain", dom("lshape"),
            "--measure", str(FIXTURES / "two_arm_measure.json"),
        ])
        out = capsys.readouterr().out
        assert code == 0
        payload = json.loads(out)
        assert payload["mean"] == [1.0, 1.0]
        assert payload["gradient_norm"] <= 1e-8


class TestSolveCommand:
    def test_outputs(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code = run([
            "solve", "--domain", dom("lshape"), "--scenario", scen("two_arm"),
            "--k", "3", "--out", str(out_dir),
        ])
        stdout = capsys.readouterr().out
        assert code == 0
        diag = json.loads(stdout)
        assert diag["k"] == 3
        for name in ("Y.csv", "Z.csv", "K.csv", "diagnostics.json",
                     "solution.png", "picard.png"):
            assert (out_dir / name).exists()
        header = (out_dir / "Y.csv").read_text().splitlines()[0]
        assert header == "slice,o1,y1,y2"

    def test_byte_identical_reruns(self, tmp_path, capsys):
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            code = run([
                "solve", "--domain", dom("lshape"), "--scenario", scen("two_arm_zdep"),
                "--k", "3", "--out", str(d),
            ])
            assert code == 0
        capsys.readouterr()
        for name in ("Y.csv", "Z.csv", "K.csv", "diagnostics.json",
                     "solution.png", "picard.png"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


class TestVerifyCommand:
    def test_geometry_suite(self, tmp_path, capsys):
        out_dir = tmp_path / "v"
        code = run([
            "verify", "--domain", dom("lshape"), "--suite", "geometry",
            "--k", "4", "--out", str(out_dir),
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "oracle_equivalence" in out
        assert (out_dir / "verify_report.json").exists()
        assert (out_dir / "verify_report.png").exists()

    def test_scheme_suite_requires_scenario(self, capsys):
        code = run(["verify", "--domain", dom("lshape"), "--suite", "scheme", "--k", "3"])
        capsys.readouterr()
        assert code == 1

    def test_unknown_suite_usage_error(self, capsys):
        code = run(["verify", "--domain", dom("lshape"), "--suite", "bogus"])
        capsys.readouterr()
        assert code == 1

    def test_failing_check_exits_2(self, capsys, monkeypatch):
        from gammabsde import cli
        from gammabsde.verifier import CheckReport

        failing = CheckReport(name="stub", passed=False, margin=-1.0,
                              location=None, tolerances={})
        monkeypatch.setattr(cli, "run_suites", lambda *a, **kw: [failing])
        code = run(["verify", "--domain", dom("lshape"), "--suite", "geometry"])
        out = capsys.readouterr().out
        assert code == 2
        assert "FAIL" in out


class TestAuditCommand:
    def test_pass(self, capsys):
        code = run(["audit-cat0", "--domain", dom("ushape"), "--samples", "60"])
        out = capsys.readouterr().out
        assert code == 0
        payload = json.loads(out)
        assert payload["passed"] is True
        assert payload["max_ratio"] >= 1.0

    def test_threads_env(self, capsys, monkeypatch):
        monkeypatch.setenv("GB_THREADS", "2")
        code = run(["audit-cat0", "--domain", dom("square"), "--samples", "10"])
        capsys.readouterr()
        assert code == 0
        monkeypatch.setenv("GB_THREADS", "zzz")
        code = run(["audit-cat0", "--domain", dom("square"), "--samples", "10"])
        capsys.readouterr()
        assert code == 1
