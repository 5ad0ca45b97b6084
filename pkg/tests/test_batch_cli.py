import csv
import json
import os

import pytest

from corpus import RQ2_TRADE, write_script
from stub_server import StubServer, always
from tradertalk.analysis import analyse
from tradertalk.batch import PersistenceError, emit_report, make_backend, run_batch
from tradertalk.cli import main
from tradertalk.llm import ConfigError, ScriptedBackend
from tradertalk.metrics import aggregate, wilson_interval
from tradertalk.orchestrator import compile_batch_script, run_rq2
from tradertalk.scenario import builtin_rq2


def _one_result():
    config = builtin_rq2()
    transcript = run_rq2(ScriptedBackend(default="Good morning."), config)
    return [analyse(transcript, config.agents)]


def _script(tmp_path, dialogues, name="script.json"):
    path = tmp_path / name
    path.write_text(json.dumps(compile_batch_script(builtin_rq2(), dialogues)))
    return path


def test_single_rq2_agreement(tmp_path):
    script = _script(tmp_path, [RQ2_TRADE])
    manifest, metrics = run_batch(builtin_rq2(), 1, make_backend(f"scripted:{script}"), tmp_path / "out")
    assert metrics.trade_rate == 1.0
    assert manifest.exit_status == 0 and manifest.n_completed == 1
    lines = (tmp_path / "out" / "transcripts.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["run_index"] == 0
    names = {p.name for p in (tmp_path / "out").iterdir()}
    assert {"manifest.json", "transcripts.jsonl", "results.jsonl", "metrics.json", "metrics.csv", "exchanges.jsonl"} <= names


def test_cli_run_and_report(tmp_path, capsys):
    script = write_script(tmp_path / "rq1.json", "rq1")
    out = tmp_path / "batch"
    code = main(["run", "--scenario", "rq1", "--n", "300", "--backend", f"scripted:{script}", "--seed", "1", "--out", str(out)])
    assert code == 0
    rows = {r["metric"]: r for r in csv.DictReader(open(out / "metrics.csv"))}
    low, high = wilson_interval(180, 300)
    assert rows["no_trade_rate"]["value"] == "0.6"
    assert float(rows["no_trade_rate"]["low"]) == low and float(rows["no_trade_rate"]["high"]) == high
    capsys.readouterr()
    assert main(["report", "--in", str(out)]) == 0
    assert "no_trade_rate" in capsys.readouterr().out


def test_live_without_key_sends_nothing(tmp_path, monkeypatch):
    with StubServer(always("hello")) as stub:
        monkeypatch.delenv("TRADERTALK_API_KEY", raising=False)
        monkeypatch.setenv("TRADERTALK_API_BASE", stub.base_url)
        with pytest.raises(ConfigError):
            make_backend("live")
        assert main(["run", "--scenario", "rq2", "--n", "2", "--backend", "live", "--out", str(tmp_path / "o")]) == 1
    assert stub.requests == []


def test_errored_runs_give_exit_status_two(tmp_path):
    script = tmp_path / "empty.json"
    script.write_text(json.dumps({"default": None, "responses": {}}))
    code = main(["run", "--scenario", "rq2", "--n", "3", "--backend", f"scripted:{script}", "--out", str(tmp_path / "o")])
    assert code == 2
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["n_errored"] == 3 and manifest["n_completed"] == 0


def test_bad_backend_and_scenario_specs(tmp_path):
    for backend in ("scripted", "scripted:/no/such/file", "replay:/no/such/log", "carrier-pigeon"):
        with pytest.raises(ConfigError):
            make_backend(backend)
    assert main(["run", "--scenario", str(tmp_path / "nope.json"), "--n", "1", "--backend", "scripted:x", "--out", str(tmp_path)]) == 1


def test_empty_format_writes_both(tmp_path):
    metrics = aggregate(_one_result())
    written = emit_report(None, metrics, tmp_path, "")
    assert {p.name for p in written} == {"metrics.json", "metrics.csv"}
    assert [p.name for p in emit_report(None, metrics, tmp_path, "csv")] == ["metrics.csv"]


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_directory_names_the_path(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        with pytest.raises(PersistenceError, match="locked"):
            emit_report(None, aggregate(_one_result()), locked)
    finally:
        locked.chmod(0o700)


def test_unwritable_path_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(PersistenceError, match="file"):
        emit_report(None, aggregate(_one_result()), blocker / "sub")
    with pytest.raises(PersistenceError, match="file"):
        run_batch(builtin_rq2(), 1, ScriptedBackend(default="hi"), blocker / "sub")


def test_analyze_rewrites_results_with_new_rules(tmp_path, capsys):
    script = _script(tmp_path, [RQ2_TRADE])
    batch = tmp_path / "batch"
    run_batch(builtin_rq2(), 1, make_backend(f"scripted:{script}"), batch)
    from importlib import resources

    rules = json.loads(resources.files("tradertalk").joinpath("data/rules.json").read_text())
    rules["version"] = "strict"
    rules["agreement_patterns"] = [r"\bwe have a deal\b"]
    rules_path = tmp_path / "rules.json"
    rules_path.write_text(json.dumps(rules))
    out = tmp_path / "reanalysed"
    assert main(["analyze", "--transcripts", str(batch / "transcripts.jsonl"), "--rules", str(rules_path), "--out", str(out)]) == 0
    report = json.loads((out / "metrics.json").read_text())
    assert report["rules_version"] == "strict"
    assert report["metrics"]["trade_rate"] == 0.0


def test_analyze_with_judge(tmp_path):
    script = _script(tmp_path, [RQ2_TRADE])
    batch = tmp_path / "batch"
    run_batch(builtin_rq2(), 1, make_backend(f"scripted:{script}"), batch)
    verdict = {
        "decisions": {"Josephine": "Sell", "David": "Buy"},
        "intentions": {"Josephine": "IntendsToTrade", "David": "IntendsToTrade"},
        "recall": {"Josephine": "Omitted", "David": "Omitted"},
        "trade": {"buyer": "David", "seller": "Josephine", "quantity": 10000000},
    }
    judge = tmp_path / "judge.json"
    judge.write_text(json.dumps({"default": json.dumps(verdict)}))
    out = tmp_path / "judged"
    assert main(["analyze", "--transcripts", str(batch / "transcripts.jsonl"), "--out", str(out), "--judge", f"scripted:{judge}"]) == 0
    assert json.loads((out / "metrics.json").read_text())["metrics"]["trade_rate"] == 1.0


def test_compile_script_command(tmp_path):
    dialogues = tmp_path / "d.json"
    dialogues.write_text(json.dumps([RQ2_TRADE, RQ2_TRADE]))
    out = tmp_path / "s.json"
    assert main(["compile-script", "--scenario", "rq2", "--dialogues", str(dialogues), "--out", str(out)]) == 0
    assert set(json.loads(out.read_text())["runs"]) == {"0", "1"}
