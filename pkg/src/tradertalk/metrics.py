"""Batch statistics over classified simulation runs."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Sequence

from .core import IntentionLabel, RecallVerdict, SimulationResult, TradeDecision

Z_95 = 1.96

# Reference trade rates the simulated one is reported against (never asserted).
GABM_REPORTED_TRADE_RATE = 0.057
US_EQUITY_OTR_2024 = 0.0461


class EmptyBatch(ValueError):
    pass


class InvalidCounts(ValueError):
    pass


def wilson_interval(successes: int, n: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion, clamped to [0, 1]."""
    if n < 1 or successes < 0 or successes > n:
        raise InvalidCounts(f"need 0 <= successes <= n and n >= 1, got {successes}/{n}")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    low = 0.0 if successes == 0 else max(0.0, centre - half)
    high = 1.0 if successes == n else min(1.0, centre + half)
    return min(low, p), max(high, p)


@dataclass(frozen=True)
class BatchMetrics:
    scenario_id: str
    n_runs: int
    n_errored: int
    agents: tuple[str, ...]
    decision_agent: str | None
    per_agent_intention_rate: dict[str, float]
    per_agent_decline_rate: dict[str, float]
    per_agent_unclear_rate: dict[str, float]
    both_intend_rate: float
    any_intend_rate: float
    n_decided: int
    decision_distribution: dict[str, float]
    no_trade_rate: float
    trade_rate: float
    intention_to_execution_gap: float
    recall_both_correct_rate: float
    recall_omitted_rate: float
    counts: dict[str, Any] = field(default_factory=dict)
    intervals: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def n_classified(self) -> int:
        return self.n_runs - self.n_errored

    def rates(self) -> dict[str, float]:
        """Flat ``name -> value`` view of every rate, keyed like ``intervals``."""
        flat = {}
        for agent in self.agents:
            flat[f"intention_rate.{agent}"] = self.per_agent_intention_rate[agent]
            flat[f"decline_rate.{agent}"] = self.per_agent_decline_rate[agent]
            flat[f"unclear_rate.{agent}"] = self.per_agent_unclear_rate[agent]
        flat["both_intend_rate"] = self.both_intend_rate
        flat["any_intend_rate"] = self.any_intend_rate
        for decision in TradeDecision:
            flat[f"decision.{decision.value}"] = self.decision_distribution[decision.value]
        flat["no_trade_rate"] = self.no_trade_rate
        flat["trade_rate"] = self.trade_rate
        flat["intention_to_execution_gap"] = self.intention_to_execution_gap
        flat["recall_both_correct_rate"] = self.recall_both_correct_rate
        flat["recall_omitted_rate"] = self.recall_omitted_rate
        return flat

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "n_runs": self.n_runs,
            "n_errored": self.n_errored,
            "n_classified": self.n_classified,
            "denominator_note": "errored runs are excluded from every rate denominator",
            "agents": list(self.agents),
            "decision_agent": self.decision_agent,
            "per_agent_intention_rate": self.per_agent_intention_rate,
            "per_agent_decline_rate": self.per_agent_decline_rate,
            "per_agent_unclear_rate": self.per_agent_unclear_rate,
            "both_intend_rate": self.both_intend_rate,
            "any_intend_rate": self.any_intend_rate,
            "n_decided": self.n_decided,
            "decision_distribution": self.decision_distribution,
            "no_trade_rate": self.no_trade_rate,
            "trade_rate": self.trade_rate,
            "intention_to_execution_gap": self.intention_to_execution_gap,
            "recall_both_correct_rate": self.recall_both_correct_rate,
            "recall_omitted_rate": self.recall_omitted_rate,
            "counts": self.counts,
            "intervals": {k: list(v) for k, v in self.intervals.items()},
        }


def _rate(k: int, n: int) -> float:
    return k / n if n else 0.0


def _interval(k: int, n: int) -> tuple[float, float]:
    return wilson_interval(k, n) if n else (0.0, 1.0)


def aggregate(results: Sequence[SimulationResult]) -> BatchMetrics:
    """Count outcomes over a batch and attach 95% Wilson intervals.

    The decision distribution covers the run's ``decision_agent`` when one is
    set (the contacted trader in the baseline scenario), otherwise every
    agent's decision is pooled.
    """
    if not results:
        raise EmptyBatch("cannot aggregate an empty batch")
    scenario_ids = {r.scenario_id for r in results}
    if len(scenario_ids) != 1:
        raise ValueError(f"results span several scenarios: {sorted(scenario_ids)}")
    focal = {r.decision_agent for r in results}
    if len(focal) != 1:
        raise ValueError("results disagree on the decision agent")
    decision_agent = focal.pop()

    agents = tuple(sorted({a for r in results for a in r.per_agent_intention}))
    ok = [r for r in results if not r.errored]
    n = len(ok)
    n_errored = len(results) - n

    intention_counts = {a: Counter(r.per_agent_intention.get(a, IntentionLabel.UNCLEAR) for r in ok) for a in agents}
    both = sum(all(r.per_agent_intention.get(a) is IntentionLabel.INTENDS_TO_TRADE for a in agents) for r in ok)
    anyone = sum(any(r.per_agent_intention.get(a) is IntentionLabel.INTENDS_TO_TRADE for a in agents) for r in ok)
    trades = sum(r.trade is not None for r in ok)

    if decision_agent is not None:
        decisions = [r.per_agent_decision.get(decision_agent) for r in ok]
    else:
        decisions = [r.per_agent_decision.get(a) for r in ok for a in agents]
    population = len(decisions)
    decision_counts = Counter(d for d in decisions if d is not None)
    n_decided = sum(decision_counts.values())

    recall_both = sum(all(r.recall.get(a) is RecallVerdict.CORRECT for a in agents) for r in ok)
    omitted = sum(r.recall.get(a, RecallVerdict.OMITTED) is RecallVerdict.OMITTED for r in ok for a in agents)
    responses = n * len(agents)

    intervals: dict[str, tuple[float, float]] = {}
    intention_rate, decline_rate, unclear_rate = {}, {}, {}
    for a in agents:
        for label, store, key in (
            (IntentionLabel.INTENDS_TO_TRADE, intention_rate, "intention_rate"),
            (IntentionLabel.DECLINES, decline_rate, "decline_rate"),
            (IntentionLabel.UNCLEAR, unclear_rate, "unclear_rate"),
        ):
            k = intention_counts[a][label]
            store[a] = _rate(k, n)
            intervals[f"{key}.{a}"] = _interval(k, n)

    distribution = {}
    for decision in TradeDecision:
        k = decision_counts[decision]
        distribution[decision.value] = _rate(k, n_decided)
        intervals[f"decision.{decision.value}"] = _interval(k, n_decided)

    no_trade = decision_counts[TradeDecision.NO_TRADE]
    for key, k, denom in (
        ("both_intend_rate", both, n),
        ("any_intend_rate", anyone, n),
        ("no_trade_rate", no_trade, population),
        ("trade_rate", trades, n),
        ("recall_both_correct_rate", recall_both, n),
        ("recall_omitted_rate", omitted, responses),
    ):
        intervals[key] = _interval(k, denom)

    both_rate = _rate(both, n)
    trade_rate = _rate(trades, n)
    counts = {
        "both_intend": both,
        "any_intend": anyone,
        "trades": trades,
        "decision_population": population,
        "decisions": {d.value: decision_counts[d] for d in TradeDecision},
        "intention": {a: {lab.value: intention_counts[a][lab] for lab in IntentionLabel} for a in agents},
        "recall_both_correct": recall_both,
        "recall_omitted": omitted,
        "recall_responses": responses,
    }
    return BatchMetrics(
        scenario_id=scenario_ids.pop(),
        n_runs=len(results),
        n_errored=n_errored,
        agents=agents,
        decision_agent=decision_agent,
        per_agent_intention_rate=intention_rate,
        per_agent_decline_rate=decline_rate,
        per_agent_unclear_rate=unclear_rate,
        both_intend_rate=both_rate,
        any_intend_rate=_rate(anyone, n),
        n_decided=n_decided,
        decision_distribution=distribution,
        no_trade_rate=_rate(no_trade, population),
        trade_rate=trade_rate,
        intention_to_execution_gap=both_rate - trade_rate,
        recall_both_correct_rate=_rate(recall_both, n),
        recall_omitted_rate=_rate(omitted, responses),
        counts=counts,
        intervals=intervals,
    )


def compare_to_benchmarks(metrics: BatchMetrics) -> dict[str, Any]:
    """Set the simulated trade rate beside two reference rates. No verdict is given."""
    rate = metrics.trade_rate
    references = {
        "gabm_reported_trade_rate": GABM_REPORTED_TRADE_RATE,
        "us_equity_otr_2024": US_EQUITY_OTR_2024,
    }
    return {
        "trade_rate": rate,
        "trade_rate_interval": list(metrics.intervals.get("trade_rate", (0.0, 1.0))),
        "references": {
            name: {"value": value, "abs_diff": round(abs(rate - value), 12)} for name, value in references.items()
        },
    }
