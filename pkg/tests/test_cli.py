from __future__ import annotations

import json

import pytest

from kerap.cli import run

SECRET = "sk-live-should-never-leak-42"


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "evaluate" in capsys.readouterr().out


def test_unknown_subcommand_exits_two(capsys):
    assert run(["frobnicate"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_missing_required_flag_exits_two():
    assert run(["link", "--config", "x.yaml"]) == 2


def test_runtime_failure_exits_one(tmp_path, capsys):
    assert run(["link", "--config", str(tmp_path / "missing.yaml"), "--mention", "x"]) == 1
    line = capsys.readouterr().err.strip().splitlines()[-1]
    record = json.loads(line)
    assert record["level"] == "error" and "FileNotFoundError" in record["error"]


def test_evaluate_matches_golden(fixtures_dir, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("KERAP_API_KEY", SECRET)
    args = [
        "evaluate", "--config", str(fixtures_dir / "config.yaml"),
        "--cohort", str(fixtures_dir / "cohorts" / "psci_200.jsonl"),
        "--strategy", "all", "--runs", "5", "--mode", "replay", "--out-dir", str(tmp_path / "out"),
    ]
    assert run(args) == 0
    out, err = capsys.readouterr()
    golden = fixtures_dir / "golden"
    for name in ("report.json", "report.txt", "config.echo.json"):
        assert (tmp_path / "out" / name).read_bytes() == (golden / name).read_bytes(), name
    assert out == (golden / "report.txt").read_text(encoding="utf-8")
    for line in err.splitlines():
        json.loads(line)
    for name in ("report.json", "config.echo.json"):
        assert SECRET not in (tmp_path / "out" / name).read_text(encoding="utf-8")
    assert SECRET not in err


def test_predict_writes_jsonl(fixtures_dir, tmp_path):
    out = tmp_path / "pred" / "outcomes.jsonl"
    args = [
        "predict", "--config", str(fixtures_dir / "config.cases.yaml"),
        "--cohort", str(fixtures_dir / "cohorts" / "case_a.jsonl"), "--strategy", "kerap", "--out", str(out),
    ]
    assert run(args) == 0
    first = out.read_bytes()
    [row] = [json.loads(line) for line in first.decode().splitlines()]
    assert (row["stage1"]["verdict"], row["stage2"]["verdict"], row["final"]) == ("YES", "NO", "NO")
    assert (out.parent / "config.echo.json").exists()
    assert run(args) == 0
    assert out.read_bytes() == first


def test_link_and_retrieve(fixtures_dir, tmp_path):
    cfg = str(fixtures_dir / "config.yaml")
    assert run(["link", "--config", cfg, "--mention", "Post-stroke cognitive impairment", "--out", str(tmp_path / "l.json")]) == 0
    link = json.loads((tmp_path / "l.json").read_text())
    assert link["chosen_name"] == "Cognitive dysfunction"
    assert link["transcript"][0]["role"] == "system"
    assert run(["retrieve", "--config", cfg, "--disease", "Post-stroke cognitive impairment", "--out", str(tmp_path / "r.json")]) == 0
    bundle = json.loads((tmp_path / "r.json").read_text())["bundle"]
    assert bundle["entity_name"] == "Cognitive dysfunction"
    assert "Pravastatin" in bundle["negative_summary"]


def test_replay_miss_exits_one(fixtures_dir, tmp_path):
    args = ["link", "--config", str(fixtures_dir / "config.yaml"), "--mention", "Never recorded disease"]
    assert run(args) == 1


def test_ingest_kg(fixtures_dir, tmp_path):
    out = tmp_path / "stats.json"
    assert run(["ingest-kg", "--config", str(fixtures_dir / "config.yaml"), "--out", str(out), "--export-dir", str(tmp_path / "kg")]) == 0
    stats = json.loads(out.read_text())
    rows = lambda name: len((fixtures_dir / "kg" / name).read_text().strip().splitlines()) - 1  # noqa: E731
    assert stats["entities"] == rows("entities.tsv") - 1  # minus the comment line
    assert stats["triples"] == rows("triples.tsv")
    assert stats["dangling"] == 0
    assert (tmp_path / "kg" / "triples.tsv").exists()


def test_synth_cohort_reproduces_fixture(fixtures_dir, tmp_path):
    vocab = fixtures_dir / "vocab"
    out = tmp_path / "c.jsonl"
    args = [
        "synth-cohort", "--n", "200", "--prevalence", "0.2230", "--seed", "0",
        "--vocab", str(vocab / "psci_attributes.txt"), "--risk-vocab", str(vocab / "psci_risk.txt"), "--out", str(out),
    ]
    assert run(args) == 0
    assert out.read_bytes() == (fixtures_dir / "cohorts" / "psci_200.jsonl").read_bytes()


def test_report_rerenders(fixtures_dir, tmp_path):
    out = tmp_path / "t.txt"
    assert run(["report", "--input", str(fixtures_dir / "golden" / "report.json"), "--out", str(out)]) == 0
    assert out.read_text() == (fixtures_dir / "golden" / "report.txt").read_text()


def test_config_rejects_inline_secret(fixtures_dir, tmp_path):
    from kerap.config import ConfigError, PipelineConfig

    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        (fixtures_dir / "config.yaml").read_text().replace("llm:\n", f"llm:\n  api_key: {SECRET}\n"), encoding="utf-8"
    )
    with pytest.raises(ConfigError) as err:
        PipelineConfig.load(cfg)
    assert SECRET not in str(err.value)
