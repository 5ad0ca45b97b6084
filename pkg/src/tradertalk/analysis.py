"""Rule-based classification of simulated trading conversations.

Every pattern lives in a versioned rules file (``data/rules.json`` by
default) so a stored transcript can be re-classified later without touching
code. All functions here are pure.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import (
    AgentProfile,
    ExecutedTrade,
    IntentionLabel,
    RecallVerdict,
    SimulationResult,
    TradeDecision,
    Transcript,
    Turn,
    transcript_ref,
)

_FLAGS = re.IGNORECASE
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+|\n+")
_UNITS = {"million": 1_000_000, "mln": 1_000_000, "mn": 1_000_000, "mm": 1_000_000, "m": 1_000_000}


def _compile(patterns: Iterable[str]) -> tuple[re.Pattern, ...]:
    return tuple(re.compile(p, _FLAGS) for p in patterns)


@dataclass(frozen=True)
class ClassifierRules:
    version: str
    decision_patterns: Mapping[TradeDecision, tuple[re.Pattern, ...]]
    intention_patterns: Mapping[IntentionLabel, tuple[re.Pattern, ...]]
    agreement_patterns: tuple[re.Pattern, ...]
    quantity_patterns: tuple[re.Pattern, ...]
    negation_patterns: tuple[re.Pattern, ...] = ()
    counterparty_patterns: tuple[re.Pattern, ...] = ()
    holdings_patterns: tuple[re.Pattern, ...] = ()
    zero_holdings_patterns: tuple[re.Pattern, ...] = ()
    short_patterns: tuple[re.Pattern, ...] = ()
    target_patterns: tuple[re.Pattern, ...] = ()
    decision_line: re.Pattern | None = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ClassifierRules:
        decisions = {TradeDecision(k): _compile(v) for k, v in data["decision_patterns"].items()}
        intentions = {IntentionLabel(k): _compile(v) for k, v in data["intention_patterns"].items()}
        missing = set(TradeDecision) - set(decisions)
        if missing:
            raise ValueError(f"rules lack decision patterns for {sorted(m.value for m in missing)}")
        for label in (IntentionLabel.INTENDS_TO_TRADE, IntentionLabel.DECLINES):
            if label not in intentions:
                raise ValueError(f"rules lack intention patterns for {label.value}")
        for key, group in [*decisions.items(), *intentions.items()]:
            if not group:
                raise ValueError(f"empty pattern list for {key.value}")
        for key in ("agreement_patterns", "quantity_patterns"):
            if not data.get(key):
                raise ValueError(f"rules need a non-empty {key}")
        line = data.get("decision_line_pattern")
        return cls(
            version=str(data.get("version", "0")),
            decision_patterns=decisions,
            intention_patterns=intentions,
            agreement_patterns=_compile(data["agreement_patterns"]),
            quantity_patterns=_compile(data["quantity_patterns"]),
            negation_patterns=_compile(data.get("negation_patterns", ())),
            counterparty_patterns=_compile(data.get("counterparty_patterns", ())),
            holdings_patterns=_compile(data.get("holdings_patterns", ())),
            zero_holdings_patterns=_compile(data.get("zero_holdings_patterns", ())),
            short_patterns=_compile(data.get("short_patterns", ())),
            target_patterns=_compile(data.get("target_patterns", ())),
            decision_line=re.compile(line, _FLAGS) if line else None,
        )

    @classmethod
    def load(cls, path: str | Path) -> ClassifierRules:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=1)
def default_rules() -> ClassifierRules:
    text = resources.files("tradertalk").joinpath("data/rules.json").read_text(encoding="utf-8")
    return ClassifierRules.from_dict(json.loads(text))


def _normalise(text: str) -> str:
    return text.replace("’", "'").replace("‘", "'").replace(" ", " ")


def _mask(text: str, patterns: Sequence[re.Pattern]) -> str:
    # blank out matches but keep offsets stable
    for pattern in patterns:
        text = pattern.sub(lambda m: " " * len(m.group(0)), text)
    return text


def _any(patterns: Sequence[re.Pattern], text: str) -> bool:
    return any(p.search(text) for p in patterns)


def _sentences(text: str) -> list[str]:
    return [s for s in _SENTENCE_SPLIT.split(text) if s.strip()]


def _decision_scope(text: str, rules: ClassifierRules) -> str:
    if rules.decision_line is not None:
        found = rules.decision_line.findall(text)
        if found:
            return found[-1]
    return text


def extract_decision(text: str, rules: ClassifierRules | None = None) -> TradeDecision | None:
    """Return the one decision ``text`` expresses, or None if it names zero or several.

    An explicit ``Decision: ...`` line, when present, is the only part read.
    Clauses addressed to the counterparty ("would you like to buy") and
    negated verbs ("I will not sell") never count as a buy/sell/flatten.
    """
    rules = rules or default_rules()
    scope = _mask(_decision_scope(_normalise(text), rules), rules.counterparty_patterns)
    affirmative = _mask(scope, rules.negation_patterns)
    matched = set()
    for decision, patterns in rules.decision_patterns.items():
        haystack = scope if decision is TradeDecision.NO_TRADE else affirmative
        if _any(patterns, haystack):
            matched.add(decision)
    if len(matched) == 1:
        return matched.pop()
    return None


def _agreement_bearing(text: str, rules: ClassifierRules) -> bool:
    if extract_decision(text, rules) is TradeDecision.NO_TRADE:
        return False
    return _any(rules.agreement_patterns, _mask(_normalise(text), rules.negation_patterns))


def classify_intention(agent_turns: Sequence[str], rules: ClassifierRules | None = None) -> IntentionLabel:
    rules = rules or default_rules()
    declined = False
    for text in agent_turns:
        decision = extract_decision(text, rules)
        if decision in (TradeDecision.BUY, TradeDecision.SELL, TradeDecision.FLATTEN):
            return IntentionLabel.INTENDS_TO_TRADE
        clean = _mask(_normalise(text), rules.counterparty_patterns)
        affirmative = _mask(clean, rules.negation_patterns)
        if _any(rules.intention_patterns[IntentionLabel.INTENDS_TO_TRADE], affirmative):
            return IntentionLabel.INTENDS_TO_TRADE
        if _agreement_bearing(text, rules):
            return IntentionLabel.INTENDS_TO_TRADE
        if decision is TradeDecision.NO_TRADE or _any(rules.intention_patterns[IntentionLabel.DECLINES], clean):
            declined = True
    return IntentionLabel.DECLINES if declined else IntentionLabel.UNCLEAR


def parse_quantity(text: str, rules: ClassifierRules | None = None) -> int | None:
    """Parse a bond notional such as ``10 million``, ``£5m``, ``10mm`` or ``10,000,000``.

    Returns whole currency units, or None when the text holds no quantity or
    several distinct ones.
    """
    if not isinstance(text, str):
        return None
    rules = rules or default_rules()
    remaining = _normalise(text)
    found: set[int] = set()
    for pattern in rules.quantity_patterns:
        for match in pattern.finditer(remaining):
            raw = match.group("n").replace(",", "")
            unit = match.groupdict().get("unit")
            scale = _UNITS.get(unit.lower(), 1) if unit else 1
            value = Decimal(raw) * scale
            if value > 0 and value == value.to_integral_value():
                found.add(int(value))
        remaining = _mask(remaining, (pattern,))
    return found.pop() if len(found) == 1 else None


def _final_decision(turns: Sequence[Turn], rules: ClassifierRules) -> TradeDecision | None:
    for turn in reversed(turns):
        decision = extract_decision(turn.text, rules)
        if decision is not None:
            return decision
    return None


def _direction(turns: Sequence[Turn], agreement: Sequence[Turn], profile: AgentProfile, rules: ClassifierRules) -> TradeDecision | None:
    for turn in reversed(agreement):
        decision = extract_decision(turn.text, rules)
        if decision in (TradeDecision.BUY, TradeDecision.SELL):
            return decision
    decision = _final_decision(turns, rules)
    if decision is TradeDecision.FLATTEN and profile.initial_holdings:
        return TradeDecision.SELL if profile.initial_holdings > 0 else TradeDecision.BUY
    if decision in (TradeDecision.BUY, TradeDecision.SELL):
        return decision
    return None


def _agreed_quantity(turns: Sequence[Turn], rules: ClassifierRules) -> int | None:
    for turn in sorted(turns, key=lambda t: t.index, reverse=True):
        text = _normalise(turn.text)
        negated = _mask(text, rules.negation_patterns)
        for sentence in _sentences(negated):
            if _any(rules.agreement_patterns, sentence):
                start = negated.find(sentence)
                quantity = parse_quantity(text[start : start + len(sentence)], rules)
                if quantity is not None:
                    return quantity
        quantity = parse_quantity(text, rules)
        if quantity is not None:
            return quantity
    return None


def detect_trade(
    transcript: Transcript, profiles: Sequence[AgentProfile], rules: ClassifierRules | None = None
) -> ExecutedTrade | None:
    """Find a mutually confirmed trade, if the conversation produced one.

    Both agents need an agreement-bearing turn, neither may finish on a
    no-trade decision, their directions must be opposite (a side that never
    states one takes the other's opposite), and some agreement turn must
    carry a quantity.
    """
    rules = rules or default_rules()
    if len(profiles) != 2:
        raise ValueError("trade detection needs exactly two agents")
    sides: dict[str, TradeDecision | None] = {}
    agreement_turns: list[Turn] = []
    for profile in profiles:
        turns = transcript.agent_turns(profile.name)
        agreed = [t for t in turns if _agreement_bearing(t.text, rules)]
        if not agreed or _final_decision(turns, rules) is TradeDecision.NO_TRADE:
            return None
        agreement_turns.extend(agreed)
        sides[profile.name] = _direction(turns, agreed, profile, rules)

    (first, a), (second, b) = sides.items()
    if a is None and b is None:
        return None
    if a is None:
        a = TradeDecision.SELL if b is TradeDecision.BUY else TradeDecision.BUY
    if b is None:
        b = TradeDecision.SELL if a is TradeDecision.BUY else TradeDecision.BUY
    if a == b:
        return None
    quantity = _agreed_quantity(agreement_turns, rules)
    if quantity is None:
        return None
    buyer, seller = (first, second) if a is TradeDecision.BUY else (second, first)
    return ExecutedTrade(buyer=buyer, seller=seller, quantity=quantity)


def _stated_holdings(sentence: str, rules: ClassifierRules) -> int | None:
    text = _mask(sentence, rules.target_patterns)
    if _any(rules.holdings_patterns, text):
        quantity = parse_quantity(text, rules)
        if quantity is not None:
            return -quantity if _any(rules.short_patterns, text) else quantity
    if _any(rules.zero_holdings_patterns, text):
        return 0
    return None


def check_holdings_recall(
    transcript: Transcript, profiles: Sequence[AgentProfile], rules: ClassifierRules | None = None
) -> dict[str, RecallVerdict]:
    """Compare each agent's first stated holdings figure with its true start position."""
    rules = rules or default_rules()
    verdicts = {}
    for profile in profiles:
        stated = None
        for turn in transcript.agent_turns(profile.name):
            for sentence in _sentences(_normalise(turn.text)):
                stated = _stated_holdings(sentence, rules)
                if stated is not None:
                    break
            if stated is not None:
                break
        if stated is None:
            verdicts[profile.name] = RecallVerdict.OMITTED
        elif stated == profile.initial_holdings:
            verdicts[profile.name] = RecallVerdict.CORRECT
        else:
            verdicts[profile.name] = RecallVerdict.INCORRECT
    return verdicts


def analyse(
    transcript: Transcript,
    profiles: Sequence[AgentProfile],
    rules: ClassifierRules | None = None,
    *,
    run_index: int = 0,
    decision_agent: str | None = None,
) -> SimulationResult:
    rules = rules or default_rules()
    intentions = {}
    decisions = {}
    for profile in profiles:
        turns = transcript.agent_turns(profile.name)
        intentions[profile.name] = classify_intention([t.text for t in turns], rules)
        decisions[profile.name] = _final_decision(turns, rules)
    return SimulationResult(
        scenario_id=transcript.scenario_id,
        run_index=run_index,
        per_agent_intention=intentions,
        per_agent_decision=decisions,
        trade=detect_trade(transcript, profiles, rules),
        recall=check_holdings_recall(transcript, profiles, rules),
        transcript_ref=transcript_ref(transcript.scenario_id, run_index),
        termination=transcript.termination,
        decision_agent=decision_agent,
    )
