"""Runs one simulated conversation between the two market makers.

The baseline mode asks each agent for one independent decision. The
conversation mode puts a Game Master in charge: it picks who speaks next,
feeds that agent the whole history, and stops the exchange when a
termination rule fires or the turn cap is hit.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .analysis import ClassifierRules, default_rules, extract_decision
from .core import GAME_MASTER, TradeDecision, Termination, Transcript, Turn
from .llm import Backend, BackendError, ChatMessage, LlmRequest, MalformedResponse, Recorder, Role, fingerprint
from .scenario import Mode, ScenarioConfig, build_request, speaker_label

logger = logging.getLogger(__name__)

AGREEMENT_PHRASES = (r"\bagreed\b", r"\bconfirmed\b", r"\bI confirm\b", r"\bwe have a deal\b")
REFUSAL_PHRASES = (r"\bdecline(?:d)? to trade\b", r"\bno trade today\b", r"\bno deal\b")

Detector = Callable[[Transcript, ScenarioConfig], "str | None"]


@dataclass(frozen=True)
class GameMasterState:
    next_speaker: str
    turn_count: int = 0
    concluded: bool = False
    conclusion_reason: str | None = None

    def __post_init__(self) -> None:
        if self.concluded and not self.conclusion_reason:
            raise ValueError("a concluded state needs a reason")
        if self.turn_count < 0:
            raise ValueError("turn_count must be >= 0")


@dataclass(frozen=True)
class TerminationDetector:
    """Rule-based end-of-conversation check run by the Game Master.

    Fires only once both agents have spoken: on an agreement or refusal
    phrase in the latest turn, or (optionally) when each agent's latest
    decision is compatible with the other's (buy against sell, or both no
    trade).
    """

    agreement_phrases: tuple[str, ...] = AGREEMENT_PHRASES
    refusal_phrases: tuple[str, ...] = REFUSAL_PHRASES
    consistent_decisions: bool = True
    rules: ClassifierRules | None = None

    def __call__(self, transcript: Transcript, config: ScenarioConfig) -> str | None:
        speakers = {t.speaker for t in transcript.agent_turns()}
        if len(speakers) < 2:
            return None
        latest = transcript.agent_turns()[-1].text
        if any(re.search(p, latest, re.IGNORECASE) for p in self.refusal_phrases):
            return "refusal detected"
        if any(re.search(p, latest, re.IGNORECASE) for p in self.agreement_phrases):
            return "agreement detected"
        if self.consistent_decisions:
            rules = self.rules or default_rules()
            latest_decisions = []
            for agent in config.agents:
                decision = None
                for turn in reversed(transcript.agent_turns(agent.name)):
                    decision = extract_decision(turn.text, rules)
                    if decision is not None:
                        break
                latest_decisions.append(decision)
            if set(latest_decisions) in ({TradeDecision.BUY, TradeDecision.SELL}, {TradeDecision.NO_TRADE}):
                return "decisions consistent"
        return None


class LlmJudgeDetector:
    """Asks the backend whether the negotiation is over; any answer starting with "yes" ends it."""

    question = "Has this negotiation between the two market makers concluded? Answer only yes or no."

    def __init__(self, backend: Backend, run_index: int | None = None) -> None:
        self.backend = backend
        self.run_index = run_index

    def __call__(self, transcript: Transcript, config: ScenarioConfig) -> str | None:
        if len({t.speaker for t in transcript.agent_turns()}) < 2:
            return None
        lines = "\n".join(f"{speaker_label(t.speaker)}: {t.text}" for t in transcript.turns)
        request = LlmRequest(
            messages=(
                ChatMessage(Role.SYSTEM, "You are the Game Master supervising a conversation between two traders."),
                ChatMessage(Role.USER, f"{lines}\n\n{self.question}"),
            ),
            model_id=config.model_id,
            temperature=0.0,
            max_tokens=5,
        )
        answer = self.backend.complete(request, run_index=self.run_index)
        return "judge: concluded" if answer.strip().lower().startswith("yes") else None


_default_detector = TerminationDetector()


def game_master_step(
    state: GameMasterState,
    transcript: Transcript,
    config: ScenarioConfig,
    detector: Detector | None = None,
) -> GameMasterState:
    """Advance the Game Master by one decision: stop, or name the next speaker."""
    if state.concluded:
        raise ValueError("conversation already concluded")
    detector = detector or _default_detector
    if transcript.agent_turns():
        reason = detector(transcript, config)
        if reason:
            return replace(state, concluded=True, conclusion_reason=reason)
    if state.turn_count >= config.max_turns:
        return replace(state, concluded=True, conclusion_reason="turn cap")
    speaker = config.initiator if state.turn_count % 2 == 0 else config.responder
    return GameMasterState(next_speaker=speaker.name, turn_count=state.turn_count + 1)


def opening_note(config: ScenarioConfig) -> str:
    caller, callee = config.initiator.name, config.responder.name
    if config.mode is Mode.RQ1:
        return f"{caller} calls {callee} to ask about trading UK gilts."
    return f"{caller} calls {callee}, another market maker in UK gilts."


def _opening(config: ScenarioConfig) -> Transcript:
    return Transcript(config.scenario_id, (Turn(0, GAME_MASTER, opening_note(config)),))


def _converse(backend: Backend, config: ScenarioConfig, run_index: int, detector: Detector | None) -> Transcript:
    transcript = _opening(config)
    if detector is None and config.judge_termination:
        detector = LlmJudgeDetector(backend, run_index)
    state = GameMasterState(next_speaker=config.initiator.name)
    try:
        while True:
            state = game_master_step(state, transcript, config, detector)
            if state.concluded:
                break
            profile = config.agent(state.next_speaker)
            text = backend.complete(build_request(profile, config, transcript), run_index=run_index)
            transcript = transcript.append(profile.name, text)
    except BackendError as exc:
        logger.warning("run %s stopped by backend error: %s", run_index, exc)
        return transcript.with_termination(Termination.BACKEND_ERROR)
    if state.conclusion_reason == "turn cap":
        return transcript.with_termination(Termination.TURN_CAP_REACHED)
    return transcript.with_termination(Termination.CONCLUDED)


def run_rq2(backend: Backend, config: ScenarioConfig, run_index: int = 0, *, detector: Detector | None = None) -> Transcript:
    if config.mode is not Mode.RQ2:
        raise ValueError(f"run_rq2 needs an RQ2 scenario, got {config.mode.value}")
    return _converse(backend, config, run_index, detector)


def run_rq1(
    backend: Backend, config: ScenarioConfig, run_index: int = 0, *, detector: Detector | None = None
) -> tuple[Transcript, dict[str, str]]:
    """One chain-of-thought completion per agent, each blind to the other's answer.

    With ``config.rq1_multi_turn`` the agents converse instead, as in RQ2.
    Returns the transcript plus each agent's last raw reply.
    """
    if config.mode is not Mode.RQ1:
        raise ValueError(f"run_rq1 needs an RQ1 scenario, got {config.mode.value}")
    if config.rq1_multi_turn:
        transcript = _converse(backend, config, run_index, detector)
    else:
        scene = _opening(config)
        transcript = scene
        try:
            for profile in (config.initiator, config.responder):
                text = backend.complete(build_request(profile, config, scene), run_index=run_index)
                transcript = transcript.append(profile.name, text)
        except BackendError as exc:
            logger.warning("run %s stopped by backend error: %s", run_index, exc)
            transcript = transcript.with_termination(Termination.BACKEND_ERROR)
    finals = {}
    for turn in transcript.agent_turns():
        finals[turn.speaker] = turn.text
    return transcript, finals


def run_simulation(backend: Backend, config: ScenarioConfig, run_index: int = 0) -> Transcript:
    if config.mode is Mode.RQ1:
        return run_rq1(backend, config, run_index)[0]
    return run_rq2(backend, config, run_index)


class _Feed(Backend):
    kind = "feed"

    def __init__(self, utterances: Sequence[str]) -> None:
        super().__init__(Recorder())
        self.pending = list(utterances)

    def _send(self, request: LlmRequest, run_index: int | None) -> tuple[str, int]:
        if not self.pending:
            raise MalformedResponse("scripted dialogue ran out of utterances")
        return self.pending.pop(0), 1


def compile_script(config: ScenarioConfig, utterances: Sequence[str]) -> dict[str, str]:
    """Turn a planned dialogue into a fingerprint-keyed script for ``ScriptedBackend``.

    The dialogue is played through the real orchestrator so that every key
    matches the prompt the agent will actually receive. Raises ValueError if
    the conversation would stop before, or run past, the last utterance.
    """
    feed = _Feed(utterances)
    transcript = run_simulation(feed, config)
    if transcript.termination is Termination.BACKEND_ERROR:
        raise ValueError(f"dialogue too short: conversation wanted turn {len(utterances) + 1}")
    if feed.pending:
        raise ValueError(f"conversation ended with {len(feed.pending)} utterance(s) unused")
    script: dict[str, str] = {}
    for exchange in feed.recorder.exchanges:
        key = fingerprint(exchange.request)
        if script.get(key, exchange.response_text) != exchange.response_text:
            raise ValueError("two different replies are scripted for the same prompt")
        script[key] = exchange.response_text
    return script


def compile_batch_script(
    config: ScenarioConfig, dialogues: Sequence[Sequence[str]], default: str | None = None
) -> dict[str, object]:
    """Script file content giving run ``i`` the ``i``-th dialogue."""
    compiled: dict[tuple[str, ...], Mapping[str, str]] = {}
    runs = {}
    for index, dialogue in enumerate(dialogues):
        key = tuple(dialogue)
        if key not in compiled:
            compiled[key] = compile_script(config, dialogue)
        runs[str(index)] = dict(compiled[key])
    return {"default": default, "responses": {}, "runs": runs}
