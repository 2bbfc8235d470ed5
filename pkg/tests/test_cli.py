import json
import subprocess
import sys

import pytest

from polegrowth import cli, ingest

SIM = ["bar", "simulate", "--a0", "0.0304", "--b0", "0.0664", "--a1", "0.0281", "--b1", "0.0994"]


def simulate(path, *extra, generations=40, trees=6, seed=7):
    argv = SIM + ["--generations", str(generations), "--trees", str(trees), "--seed", str(seed), "--out", str(path), *extra]
    assert cli.run(argv) == 0
    return path


def test_help_exits_zero():
    out = subprocess.run([sys.executable, "-m", "polegrowth", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "usage: polegrowth" in out.stdout
    assert "selftest" not in out.stdout


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["bar"],
        ["bar", "estimate"],
        ["analyze", "stationarity", "--input", "x", "--test", "anova"],
        ["bar", "estimate", "--input", "x", "--bogus"],
        ["analyze", "generations", "--input", "x", "--list", "2,a"],
    ],
)
def test_usage_errors_exit_two(argv, capsys):
    assert cli.run(argv) == 2
    assert "usage:" in capsys.readouterr().err


def test_missing_input_exits_one(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    for argv in (
        ["bar", "estimate", "--input", str(missing)],
        ["analyze", "mg", "--input", str(missing), "--out", str(tmp_path)],
        ["preprocess", "--input", str(missing), "--report", str(tmp_path / "r.json")],
        ["rates", "--input", str(missing), "--out", str(tmp_path / "r.csv")],
    ):
        assert cli.run(argv) == 1
        assert str(missing) in capsys.readouterr().err


def test_malformed_input_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("1. 2. 3.\n")
    assert cli.run(["bar", "estimate", "--input", str(bad), "--no-preprocess"]) == 1
    assert "bad.txt:1" in capsys.readouterr().err


def test_rank_deficient_estimate_exits_one(tmp_path, capsys):
    data = tmp_path / "flat.txt"
    assert cli.run(SIM[:3] + ["0.03", "--b0", "0", "--a1", "0.03", "--b1", "0", "--noise-sd", "0",
                              "--generations", "25", "--trees", "2", "--out", str(data)]) == 0
    assert cli.run(["bar", "estimate", "--input", str(data), "--no-preprocess", "--out", str(tmp_path / "e.json")]) == 1
    assert "new-pole (S0) block" in capsys.readouterr().err


def test_simulate_is_byte_identical(tmp_path):
    a = simulate(tmp_path / "a.txt", "--missing-prob", "0.1")
    b = simulate(tmp_path / "b.txt", "--missing-prob", "0.1")
    assert a.read_bytes() == b.read_bytes()
    c = simulate(tmp_path / "c.txt", "--missing-prob", "0.1", seed=8)
    assert a.read_bytes() != c.read_bytes()


def test_full_shape_simulation_is_stewart(tmp_path):
    path = simulate(tmp_path / "s.txt", "--shape", "full", generations=5, trees=2)
    ds = ingest.parse(path, "stewart")
    assert len(ds) == 2 * (2**6 - 1)


def test_estimate_writes_provenance(tmp_path, capsys):
    data = simulate(tmp_path / "sim.txt", generations=60, trees=30)
    out = tmp_path / "est.json"
    assert cli.run(["bar", "estimate", "--input", str(data), "--no-preprocess", "--level", "0.9", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["provenance"]["input_sha256"] == cli.sha256_of(data)
    assert doc["provenance"]["options"]["level"] == 0.9
    assert doc["estimate"]["level"] == 0.9
    assert set(doc["estimate"]["ci"]) == {"a0", "b0", "a1", "b1"}
    assert len(doc["estimate"]["S_n"]) == 4
    assert capsys.readouterr().out.count("[") == 4


def test_estimate_default_path_uses_env(tmp_path, monkeypatch):
    data = simulate(tmp_path / "sim.txt", generations=30, trees=5)
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.run(["bar", "estimate", "--input", str(data), "--no-preprocess"]) == 0
    assert (tmp_path / "env" / "estimate.json").is_file()


def test_analyses_embed_config_and_hash(tmp_path):
    wang = simulate(tmp_path / "w.txt", generations=60, trees=8)
    stewart = simulate(tmp_path / "s.txt", "--shape", "full", generations=6, trees=3)
    cases = {
        "mg": (wang, "wang", []),
        "poles": (wang, "wang", []),
        "stationarity": (wang, "wang", ["--test", "t"]),
        "trends": (stewart, "stewart", []),
        "generations": (stewart, "stewart", ["--list", "2,3,4"]),
    }
    for name, (path, fmt, extra) in cases.items():
        out = tmp_path / "rep"
        argv = ["analyze", name, "--input", str(path), "--format", fmt, "--out", str(out), *extra]
        assert cli.run(argv) == 0, name
        doc = json.loads((out / f"{name}.json").read_text())
        prov = doc["provenance"]
        assert prov["command"] == f"analyze {name}"
        assert prov["input_sha256"] == cli.sha256_of(path)
        assert prov["options"]["format"] == fmt
        assert ("preprocess" in prov) == (fmt == "wang")
    assert (tmp_path / "rep" / "generations_boxplot.csv").read_text().count("\n") == 4


def test_analysis_reports_are_byte_identical(tmp_path):
    wang = simulate(tmp_path / "w.txt", generations=60, trees=8)
    argv = ["analyze", "stationarity", "--input", str(wang), "--out", str(tmp_path / "rep"), "--threads", "2"]
    assert cli.run(argv) == 0
    first = {f.name: f.read_bytes() for f in (tmp_path / "rep").iterdir()}
    assert cli.run(argv) == 0
    assert first == {f.name: f.read_bytes() for f in (tmp_path / "rep").iterdir()}


def test_preprocess_command(tmp_path):
    data = simulate(tmp_path / "w.txt", generations=30, trees=10)
    short = simulate(tmp_path / "short.txt", generations=15, trees=1)
    merged = tmp_path / "m.txt"
    lines = data.read_text() + "".join("11." + line[line.index(" "):] + "\n" for line in short.read_text().splitlines())
    merged.write_text(lines)
    report = tmp_path / "pre.json"
    clean_txt, clean_json = tmp_path / "clean.txt", tmp_path / "clean.json"
    argv = ["preprocess", "--input", str(merged), "--report", str(report), "--out", str(clean_txt), "--json", str(clean_json)]
    assert cli.run(argv) == 0
    doc = json.loads(report.read_text())
    assert doc["report"]["trees_removed_short"] == [11]
    assert ingest.parse(clean_txt, "wang").n_trees == ingest.load_json(clean_json).n_trees


def test_rates_command(tmp_path):
    src = tmp_path / "len.csv"
    src.write_text("cell_id,time_minutes,length\na,0,1.0\na,10,1.2214027581601699\na,20,1.4918246976412703\n")
    out = tmp_path / "rates.csv"
    assert cli.run(["rates", "--input", str(src), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[1].startswith("a,0.02")


def test_selftest_passes(capsys):
    assert cli.run(["selftest"]) == 0
    assert capsys.readouterr().out.count("PASS") == 2
