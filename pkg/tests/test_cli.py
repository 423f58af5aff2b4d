import ast
import json
import subprocess
import sys
from pathlib import Path

import pytest

import artifact
from artifact.cli import EXIT_NO_SURVIVORS, EXIT_OK, EXIT_USAGE, main
from artifact.fixtures.builders import malconv, toynet

CLI_SOURCE = Path(artifact.__file__).with_name("cli.py")


def config_line(out: str) -> dict:
    first = out.splitlines()[0]
    assert first.startswith("# config ")
    return json.loads(first[len("# config "):])


def test_reconstruct_fixture_summary(capsys):
    assert main(["reconstruct", "--fixture", "toynet", "--jobs", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "10 candidates, 1 compatible" in out
    assert "ged 0, l1 0" in out


def test_reconstruct_with_wrong_space_has_no_survivors(capsys):
    assert main(["reconstruct", "--fixture", "toynet", "--space", "malconv", "--jobs", "1"]) == EXIT_NO_SURVIVORS


def test_usage_errors(capsys, tmp_path):
    assert main(["fly"]) == EXIT_USAGE
    assert main(["reconstruct", str(tmp_path / "missing.processed")]) == EXIT_USAGE
    assert main(["reconstruct", "--fixture", "resnet"]) == EXIT_USAGE
    assert main(["reconstruct", "--fixture", "toynet", "--jobs", "-3"]) == EXIT_USAGE
    assert main(["simulate"]) == EXIT_USAGE


def test_help_is_success(capsys):
    assert main(["--help"]) == EXIT_OK


def test_seed_and_jobs_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("ARTIFACT_SEED", "13")
    monkeypatch.setenv("ARTIFACT_JOBS", "1")
    main(["reconstruct", "--fixture", "toynet"])
    cfg = config_line(capsys.readouterr().out)
    assert (cfg["seed"], cfg["jobs"]) == (13, 1)
    main(["reconstruct", "--fixture", "toynet", "--seed", "4"])
    assert config_line(capsys.readouterr().out)["seed"] == 4


def test_bad_environment_value_is_usage_error(capsys, monkeypatch):
    monkeypatch.setenv("ARTIFACT_SEED", "many")
    assert main(["reconstruct", "--fixture", "toynet"]) == EXIT_USAGE


def test_simulate_denoise_reconstruct_chain(tmp_path, capsys):
    raw, proc = tmp_path / "t.raw", tmp_path / "t.processed"
    assert main(["simulate", "--fixture", "malconv", "--seed", "3", "-o", str(raw)]) == EXIT_OK
    assert main(["denoise", str(raw), "-o", str(proc)]) == EXIT_OK
    report = tmp_path / "r.json"
    code = main(["reconstruct", str(proc), "--fixture", "malconv", "--jobs", "1", "--report", str(report)])
    assert code == EXIT_OK
    data = json.loads(report.read_text())
    assert data["survivors"] >= 1 and data["error"]["ged"] == 0


def test_evaluate_two_graphs(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    toynet().save(a)
    malconv().save(b)
    assert main(["evaluate", str(a), str(a)]) == EXIT_OK
    assert "ged 0" in capsys.readouterr().out
    assert main(["evaluate", str(a), str(b)]) == EXIT_NO_SURVIVORS
    assert "ged 0" not in capsys.readouterr().out


def test_mine_blocks_writes_json(tmp_path, capsys):
    out = tmp_path / "blocks.json"
    assert main(["mine-blocks", "--fixture", "proxylessnas-cpu", "-o", str(out)]) == EXIT_OK
    assert len(json.loads(out.read_text())) == 8  # no block of width seven


def test_profile_writes_lut(tmp_path, capsys):
    out = tmp_path / "lut.jsonl"
    assert main(["profile", "-o", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 5891


def test_defend_reports_table(capsys):
    assert main(["defend", "--fixture", "toynet", "--kind", "null", "--strength", "2", "--seed", "1"]) == EXIT_OK
    assert "defense null" in capsys.readouterr().out
    assert main(["defend", "--fixture", "toynet", "--kind", "pad", "--strength", "3"]) == EXIT_USAGE


def test_plot_data_series(tmp_path, capsys):
    assert main(["reconstruct", "--fixture", "toynet", "--jobs", "1", "--plot-data", str(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "candidate_counts.csv").read_text().splitlines()
    assert rows[0] == "entries,raw_candidates" and len(rows) == 7
    assert main(["profile", "-o", str(tmp_path / "lut.jsonl"), "--plot-data", str(tmp_path)]) == EXIT_OK
    hist = (tmp_path / "timing_histogram.csv").read_text().splitlines()[1:]
    assert sum(int(r.split(",")[2]) for r in hist) == 5890


def test_malconv_summary_line(capsys):
    assert main(["reconstruct", "--fixture", "malconv", "--jobs", "1"]) == EXIT_OK
    assert "20 candidates, 1 compatible" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "artifact", "bogus"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE


def test_cli_imports_only_public_names():
    tree = ast.parse(CLI_SOURCE.read_text())
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom) and node.level:
            for alias in node.names:
                assert not alias.name.startswith("_"), alias.name
