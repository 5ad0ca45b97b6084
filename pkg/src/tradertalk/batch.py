"""Batch execution, persistence and report files.

Output layout for one batch directory::

    manifest.json  scenario.json  transcripts.jsonl  results.jsonl
    exchanges.jsonl  metrics.json  metrics.csv

JSONL files are ordered by run index, whatever order the workers finish in,
and are flushed as soon as the next run in sequence is available.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__
from .analysis import ClassifierRules, analyse, default_rules
from .core import SimulationResult, Transcript
from .llm import Backend, ConfigError, LiveBackend, Recorder, ReplayBackend, ScriptedBackend
from .metrics import BatchMetrics, aggregate, compare_to_benchmarks
from .orchestrator import run_simulation
from .scenario import Mode, ScenarioConfig, load_scenario, save_scenario

logger = logging.getLogger(__name__)


class PersistenceError(OSError):
    """An output file could not be written; the batch is aborted."""


@dataclass(frozen=True)
class RunManifest:
    scenario_id: str
    mode: str
    n_requested: int
    n_completed: int
    n_errored: int
    backend_kind: str
    model_id: str
    temperature: float
    seed: int | None
    concurrency: int
    rules_version: str
    started_at: str
    finished_at: str
    tool_version: str = __version__

    def __post_init__(self) -> None:
        if self.n_completed + self.n_errored != self.n_requested:
            raise ValueError("manifest counts do not add up")

    @property
    def exit_status(self) -> int:
        return 0 if self.n_errored == 0 else 2

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def make_backend(spec: str, *, seed: int | None = None) -> Backend:
    """Build a backend from ``live``, ``scripted:<file>`` or ``replay:<file>``."""
    kind, _, arg = spec.partition(":")
    if kind == "live":
        return LiveBackend.from_env()
    if kind == "scripted":
        if not arg:
            raise ConfigError("scripted backend needs a script file: scripted:<file>")
        try:
            return ScriptedBackend.from_file(arg, seed=seed)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load script {arg}: {exc}") from exc
    if kind == "replay":
        if not arg:
            raise ConfigError("replay backend needs a log file: replay:<file>")
        try:
            return ReplayBackend.from_file(arg)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load exchange log {arg}: {exc}") from exc
    raise ConfigError(f"unknown backend {spec!r}")


def default_concurrency(backend: Backend) -> int:
    return 4 if backend.kind == "live" else 16


def decision_agent(config: ScenarioConfig) -> str | None:
    # the contacted trader carries the baseline scenario's outcome
    return config.responder.name if config.mode is Mode.RQ1 else None


def _jsonl(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False) + "\n"


def _open(path: Path):
    try:
        return open(path, "w", encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def run_batch(
    config: ScenarioConfig,
    n: int,
    backend: Backend,
    out_dir: str | Path,
    *,
    concurrency: int | None = None,
    seed: int | None = None,
    rules: ClassifierRules | None = None,
) -> tuple[RunManifest, BatchMetrics]:
    """Run ``n`` simulations, persist everything, and return manifest and metrics.

    The backend's recorder is replaced so the exchange log covers this batch
    only.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rules = rules or default_rules()
    workers = concurrency or default_concurrency(backend)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"cannot create {out}: {exc}") from exc
    started = _now()
    backend.recorder = Recorder()
    focal = decision_agent(config)
    try:
        save_scenario(config, out / "scenario.json")
    except OSError as exc:
        raise PersistenceError(f"cannot write {out / 'scenario.json'}: {exc}") from exc

    def simulate(index: int) -> tuple[Transcript, SimulationResult, list]:
        transcript = run_simulation(backend, config, index)
        result = analyse(transcript, config.agents, rules, run_index=index, decision_agent=focal)
        return transcript, result, backend.recorder.for_run(index)

    results: list[SimulationResult] = []
    files = [_open(out / name) for name in ("transcripts.jsonl", "results.jsonl", "exchanges.jsonl")]
    transcripts_fh, results_fh, exchanges_fh = files
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(simulate, i): i for i in range(n)}
            finished: dict[int, tuple] = {}
            next_index = 0
            for future in as_completed(futures):
                finished[futures[future]] = future.result()
                while next_index in finished:
                    transcript, result, exchanges = finished.pop(next_index)
                    transcripts_fh.write(_jsonl({"run_index": next_index, **transcript.to_dict()}))
                    results_fh.write(_jsonl(result.to_dict()))
                    for exchange in exchanges:
                        exchanges_fh.write(_jsonl(exchange.to_dict()))
                    for fh in files:
                        fh.flush()
                    results.append(result)
                    next_index += 1
    except OSError as exc:
        raise PersistenceError(f"writing batch output in {out} failed: {exc}") from exc
    finally:
        for fh in files:
            fh.close()

    metrics = aggregate(results)
    manifest = RunManifest(
        scenario_id=config.scenario_id,
        mode=config.mode.value,
        n_requested=n,
        n_completed=n - metrics.n_errored,
        n_errored=metrics.n_errored,
        backend_kind=backend.kind,
        model_id=config.model_id,
        temperature=config.temperature,
        seed=seed,
        concurrency=workers,
        rules_version=rules.version,
        started_at=started,
        finished_at=_now(),
    )
    emit_report(manifest, metrics, out, mode=config.mode)
    return manifest, metrics


def metrics_report(metrics: BatchMetrics, mode: Mode | str | None = None, rules_version: str | None = None) -> dict[str, Any]:
    report: dict[str, Any] = {"rules_version": rules_version, "metrics": metrics.to_dict()}
    if mode is None or Mode(mode) is Mode.RQ2:
        report["benchmarks"] = compare_to_benchmarks(metrics)
    return report


def metrics_csv(metrics: BatchMetrics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value", "low", "high"])
    for name, value in metrics.rates().items():
        low, high = metrics.intervals.get(name, ("", ""))
        writer.writerow([name, value, low, high])
    return buf.getvalue()


def emit_report(
    manifest: RunManifest | None,
    metrics: BatchMetrics,
    out_dir: str | Path,
    format: str = "",
    *,
    mode: Mode | str | None = None,
    rules_version: str | None = None,
) -> list[Path]:
    """Write ``metrics.json`` and/or ``metrics.csv`` (and ``manifest.json`` if given).

    ``format`` is ``json``, ``csv``, or empty for both.
    """
    out = Path(out_dir)
    formats = {"": ("json", "csv"), "both": ("json", "csv"), "json": ("json",), "csv": ("csv",)}
    if format not in formats:
        raise ValueError(f"unknown report format {format!r}")
    if mode is None and manifest is not None:
        mode = manifest.mode
    written = []
    payloads = []
    if "json" in formats[format]:
        version = manifest.rules_version if manifest else rules_version
        payloads.append(("metrics.json", json.dumps(metrics_report(metrics, mode, version), indent=2) + "\n"))
    if "csv" in formats[format]:
        payloads.append(("metrics.csv", metrics_csv(metrics)))
    if manifest is not None:
        payloads.append(("manifest.json", json.dumps(manifest.to_dict(), indent=2) + "\n"))
    for name, text in payloads:
        path = out / name
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise PersistenceError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def read_transcripts(path: str | Path) -> list[tuple[int, Transcript]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for position, line in enumerate(fh):
            if line.strip():
                data = json.loads(line)
                rows.append((data.get("run_index", position), Transcript.from_dict(data)))
    return rows


def analyze_transcripts(
    transcripts: str | Path,
    out_dir: str | Path,
    *,
    scenario: ScenarioConfig | None = None,
    rules: ClassifierRules | None = None,
    judge: Backend | None = None,
) -> BatchMetrics:
    """Re-classify stored transcripts (optionally with an LLM judge) and rewrite results and metrics."""
    source = Path(transcripts)
    if scenario is None:
        stored = source.parent / "scenario.json"
        if not stored.exists():
            raise ConfigError(f"no scenario given and {stored} does not exist")
        scenario = load_scenario(stored)
    rules = rules or default_rules()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    focal = decision_agent(scenario)
    results = []
    for index, transcript in read_transcripts(source):
        if judge is not None:
            from .judge import judge_analyse

            result = judge_analyse(judge, transcript, scenario, run_index=index, decision_agent=focal)
        else:
            result = analyse(transcript, scenario.agents, rules, run_index=index, decision_agent=focal)
        results.append(result)
    results.sort(key=lambda r: r.run_index)
    path = out / "results.jsonl"
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(_jsonl(r.to_dict()) for r in results)
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    metrics = aggregate(results)
    version = "llm-judge" if judge is not None else rules.version
    emit_report(None, metrics, out, mode=scenario.mode, rules_version=version)
    return metrics


def summarise(out_dir: str | Path) -> str:
    """Human-readable summary of a batch directory."""
    out = Path(out_dir)
    report = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    metrics = report["metrics"]
    lines = []
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        lines.append(
            f"{manifest['scenario_id']} ({manifest['mode']}), backend={manifest['backend_kind']}, "
            f"model={manifest['model_id']}, runs={manifest['n_requested']}, errored={manifest['n_errored']}"
        )
    lines.append(f"classified runs: {metrics['n_classified']} (errored runs excluded from denominators)")
    intervals = metrics["intervals"]

    def show(label: str, key: str, value: float) -> None:
        low, high = intervals.get(key, (None, None))
        ci = f"  [{low:.4f}, {high:.4f}]" if low is not None else ""
        lines.append(f"  {label:<34}{value:.4f}{ci}")

    if metrics["decision_agent"]:
        lines.append(f"decisions of {metrics['decision_agent']}:")
    else:
        lines.append("decisions (all agents pooled):")
    for decision, share in metrics["decision_distribution"].items():
        show(decision, f"decision.{decision}", share)
    show("no_trade_rate", "no_trade_rate", metrics["no_trade_rate"])
    for agent, rate in metrics["per_agent_intention_rate"].items():
        show(f"intention_rate {agent}", f"intention_rate.{agent}", rate)
        show(f"decline_rate {agent}", f"decline_rate.{agent}", metrics["per_agent_decline_rate"][agent])
        show(f"unclear_rate {agent}", f"unclear_rate.{agent}", metrics["per_agent_unclear_rate"][agent])
    for key in ("both_intend_rate", "any_intend_rate", "trade_rate", "recall_both_correct_rate", "recall_omitted_rate"):
        show(key, key, metrics[key])
    lines.append(f"  {'intention_to_execution_gap':<34}{metrics['intention_to_execution_gap']:.4f}")
    bench = report.get("benchmarks")
    if bench:
        lines.append("trade rate against reference rates (informational):")
        for name, ref in bench["references"].items():
            lines.append(f"  {name:<34}{ref['value']:.4f}  |diff| {ref['abs_diff']:.4f}")
    return "\n".join(lines)


def load_results(path: str | Path) -> list[SimulationResult]:
    with open(path, encoding="utf-8") as fh:
        return [SimulationResult.from_dict(json.loads(line)) for line in fh if line.strip()]


__all__ = [
    "PersistenceError",
    "RunManifest",
    "analyze_transcripts",
    "emit_report",
    "load_results",
    "make_backend",
    "run_batch",
    "summarise",
]
