"""Optional LLM-judge classifier, for comparing against the rule-based one."""

from __future__ import annotations

import json
import re

from .core import ExecutedTrade, IntentionLabel, RecallVerdict, SimulationResult, TradeDecision, Transcript, transcript_ref
from .llm import Backend, ChatMessage, LlmRequest, MalformedResponse, Role
from .scenario import ScenarioConfig, speaker_label

INSTRUCTIONS = """Classify the trading conversation below. Reply with one JSON object only:
{{"decisions": {{<agent>: "Buy"|"Sell"|"Flatten"|"NoTrade"|null}},
 "intentions": {{<agent>: "IntendsToTrade"|"Declines"|"Unclear"}},
 "recall": {{<agent>: "Correct"|"Incorrect"|"Omitted"}},
 "trade": null | {{"buyer": <agent>, "seller": <agent>, "quantity": <integer GBP>}}}}
Agents: {agents}. True starting holdings: {holdings}.
"recall" is whether the agent's first statement of its own holdings matches its true starting holdings.
A trade counts only if both agents explicitly confirmed it.

Conversation:
{conversation}"""


def judge_analyse(
    backend: Backend,
    transcript: Transcript,
    config: ScenarioConfig,
    *,
    run_index: int = 0,
    decision_agent: str | None = None,
) -> SimulationResult:
    names = [a.name for a in config.agents]
    prompt = INSTRUCTIONS.format(
        agents=", ".join(names),
        holdings=", ".join(f"{a.name} {a.initial_holdings:+,}" for a in config.agents),
        conversation="\n".join(f"{speaker_label(t.speaker)}: {t.text}" for t in transcript.turns),
    )
    request = LlmRequest(
        messages=(
            ChatMessage(Role.SYSTEM, "You label bond-trading conversations for a research study."),
            ChatMessage(Role.USER, prompt),
        ),
        model_id=config.model_id,
        temperature=0.0,
        max_tokens=400,
    )
    reply = backend.complete(request, run_index=run_index)
    match = re.search(r"\{.*\}", reply, re.DOTALL)
    try:
        verdict = json.loads(match.group(0) if match else reply)
        decisions = {n: (TradeDecision(verdict["decisions"][n]) if verdict["decisions"].get(n) else None) for n in names}
        intentions = {n: IntentionLabel(verdict["intentions"][n]) for n in names}
        recall = {n: RecallVerdict(verdict["recall"][n]) for n in names}
        raw_trade = verdict.get("trade")
        trade = ExecutedTrade(raw_trade["buyer"], raw_trade["seller"], int(raw_trade["quantity"])) if raw_trade else None
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise MalformedResponse(f"judge verdict unusable: {exc}") from exc
    return SimulationResult(
        scenario_id=transcript.scenario_id,
        run_index=run_index,
        per_agent_intention=intentions,
        per_agent_decision=decisions,
        trade=trade,
        recall=recall,
        transcript_ref=transcript_ref(transcript.scenario_id, run_index),
        termination=transcript.termination,
        decision_agent=decision_agent,
    )
