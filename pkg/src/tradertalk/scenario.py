"""Scenario definitions, prompt constants and chain-of-thought prompt rendering."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .core import GAME_MASTER, AgentProfile, TradeDecision, Transcript, validate_agents
from .llm import DEFAULT_MODEL, ChatMessage, ConfigError, LlmRequest, Role

# Verbatim prompt texts. Snapshot-tested; do not edit.
TRADING_PREMISE = (
    "You are a market maker for UK gilts responsible for providing liquidity in the UK government bonds.  "
    "You are supposed to at all times hold 0 bonds. Today, you actually have 0 bonds, which means your "
    "holding is actually flat"
)
PROJECT_CONTEXT = (
    "You are a market maker for UK gilts responsible for providing liquidity in the UK government bond. "
    "Your job is to answer incoming queries from other market makers to buy and sell UK government bonds "
    "by considering if you wish to do so. UK government bonds trade at mid price. You aim to make a trading "
    "decision in every conversation, either buy , sell or decline to trade. You must act professionally in "
    "your conversations, and any decision you take is clearly communicated to the other party and you "
    "repeat what is agreed."
)
DAVID_ROLE = (
    "You are a market maker for UK gilts responsible for providing liquidity in the UK government bond, "
    "you are supposed to at all times hold 0 bonds.  Today, you actually have negative 10 million worth "
    "of bonds, your role is to buy the bonds if you have a negative holding"
)
JOSEPHINE_ROLE = (
    "You are a market maker for UK gilts responsible for providing liquidity in the UK government bond, "
    "you are supposed to at all times hold 0 bonds. Today you have 10 million worth of bonds, your role "
    "is to sell bonds if you are a holder, you need to call another market maker to trade away your bonds"
)

# Not verbatim: expansions of the four one-line step summaries.
COT_STEPS = (
    "Summarise the new information you have just received.",
    "Clarify your role and your objectives as a market maker.",
    "Assess your current bond holdings against the holdings you are supposed to have.",
    "Decide whether to trade or not.",
)
FINAL_OPTIONS = (
    "(A) Buy bonds",
    "(B) Sell bonds",
    "(C) Flatten trading book",
    "(D) No trade",
)
OPTION_DECISIONS = (TradeDecision.BUY, TradeDecision.SELL, TradeDecision.FLATTEN, TradeDecision.NO_TRADE)

CALLER_ROLE = (
    "You are a market maker for UK gilts responsible for providing liquidity in the UK government bonds. "
    "You are calling another market maker to ask whether they wish to trade."
)


class Mode(str, enum.Enum):
    RQ1 = "RQ1"
    RQ2 = "RQ2"


class UnknownAgent(KeyError):
    pass


@dataclass(frozen=True)
class CotTemplate:
    steps: tuple[str, ...] = COT_STEPS
    final_options: tuple[str, ...] = FINAL_OPTIONS

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "final_options", tuple(self.final_options))
        if not self.steps:
            raise ValueError("chain of thought needs at least one step")
        if len(self.final_options) != len(OPTION_DECISIONS):
            raise ValueError("exactly four final options are required (buy, sell, flatten, no trade)")
        if len(set(self.final_options)) != len(self.final_options):
            raise ValueError("final options must be distinct")

    def decision_for(self, option: str) -> TradeDecision:
        return OPTION_DECISIONS[self.final_options.index(option)]


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    mode: Mode
    agents: tuple[AgentProfile, ...]
    shared_context: str = ""
    cot: CotTemplate = field(default_factory=CotTemplate)
    max_turns: int = 10
    model_id: str = DEFAULT_MODEL
    temperature: float = 1.0
    max_tokens: int = 512
    rq1_multi_turn: bool = False
    judge_termination: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.scenario_id:
            raise ValueError("scenario_id must be non-empty")
        if len(self.agents) != 2:
            raise ValueError(f"a scenario has exactly 2 agents, got {len(self.agents)}")
        validate_agents(self.agents)
        if self.mode is Mode.RQ2 and not self.shared_context:
            raise ValueError("RQ2 scenarios need a shared context")
        if self.max_turns < 1:
            raise ValueError("max_turns must be positive")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")

    @property
    def initiator(self) -> AgentProfile:
        return next(a for a in self.agents if a.is_initiator)

    @property
    def responder(self) -> AgentProfile:
        return next(a for a in self.agents if not a.is_initiator)

    def agent(self, name: str) -> AgentProfile:
        for agent in self.agents:
            if agent.name == name:
                return agent
        raise UnknownAgent(name)

    def other(self, name: str) -> AgentProfile:
        self.agent(name)
        return next(a for a in self.agents if a.name != name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "mode": self.mode.value,
            "max_turns": self.max_turns,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "rq1_multi_turn": self.rq1_multi_turn,
            "judge_termination": self.judge_termination,
            "shared_context": self.shared_context,
            "cot": {"steps": list(self.cot.steps), "final_options": list(self.cot.final_options)},
            "agents": [a.to_dict() for a in self.agents],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScenarioConfig:
        try:
            cot = data.get("cot") or {}
            return cls(
                scenario_id=data["scenario_id"],
                mode=Mode(data["mode"]),
                agents=tuple(AgentProfile.from_dict(a) for a in data["agents"]),
                shared_context=data.get("shared_context", ""),
                cot=CotTemplate(cot.get("steps", COT_STEPS), cot.get("final_options", FINAL_OPTIONS)),
                max_turns=data.get("max_turns", 10),
                model_id=data.get("model_id", DEFAULT_MODEL),
                temperature=data.get("temperature", 1.0),
                max_tokens=data.get("max_tokens", 512),
                rq1_multi_turn=data.get("rq1_multi_turn", False),
                judge_termination=data.get("judge_termination", False),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc


def builtin_rq1(*, both_flat: bool = True) -> ScenarioConfig:
    """Single-decision baseline: Josephine calls David, whose book is flat.

    With ``both_flat=False`` only David receives the flat-book premise and
    Josephine gets a plain caller role.
    """
    return ScenarioConfig(
        scenario_id="rq1-baseline",
        mode=Mode.RQ1,
        agents=(
            AgentProfile("Josephine", TRADING_PREMISE if both_flat else CALLER_ROLE, 0, 0, is_initiator=True),
            AgentProfile("David", TRADING_PREMISE, 0, 0),
        ),
    )


def builtin_rq2() -> ScenarioConfig:
    return ScenarioConfig(
        scenario_id="rq2-tradertalk",
        mode=Mode.RQ2,
        agents=(
            AgentProfile("Josephine", JOSEPHINE_ROLE, 10_000_000, 0, is_initiator=True),
            AgentProfile("David", DAVID_ROLE, -10_000_000, 0),
        ),
        shared_context=PROJECT_CONTEXT,
    )


BUILTINS = {"rq1": builtin_rq1, "rq2": builtin_rq2}


def load_scenario(source: str | Path) -> ScenarioConfig:
    """Resolve ``rq1``/``rq2`` to a builtin, otherwise read a JSON scenario file."""
    if str(source) in BUILTINS:
        return BUILTINS[str(source)]()
    path = Path(source)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def save_scenario(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def speaker_label(speaker: str) -> str:
    return "Game Master" if speaker == GAME_MASTER else speaker


def render_cot_prompt(profile: AgentProfile, config: ScenarioConfig, history: Transcript | None) -> list[ChatMessage]:
    """Build the message list for ``profile``'s next completion.

    Prior turns are inlined as ``Name: text`` lines in a single user message,
    since the wire protocol has only one assistant voice.
    """
    if profile not in config.agents:
        raise UnknownAgent(profile.name)
    other = config.other(profile.name)

    system = f"Your name is {profile.name}.\n\n"
    if config.shared_context:
        system += config.shared_context + "\n\n"
    system += profile.role_prompt
    messages = [ChatMessage(Role.SYSTEM, system)]

    turns = history.turns if history is not None else ()
    if turns:
        lines = "\n".join(f"{speaker_label(t.speaker)}: {t.text}" for t in turns)
        messages.append(ChatMessage(Role.USER, f"Conversation so far:\n{lines}"))

    steps = "\n".join(f"{i}. {step}" for i, step in enumerate(config.cot.steps, start=1))
    if any(t.is_agent for t in turns):
        ask = f"Then write your next message to {other.name}."
    elif profile.is_initiator:
        ask = f"Then write your opening message to {other.name}."
    else:
        ask = f"Then write your reply to {other.name}."
    messages.append(ChatMessage(Role.USER, f"Before you reply, work through these steps in order:\n{steps}\n{ask}"))

    options = "\n".join(config.cot.final_options)
    messages.append(
        ChatMessage(
            Role.USER,
            "End your message by choosing exactly one of the following options, "
            f"written on its own line as 'Decision: <option>':\n{options}",
        )
    )
    return messages


def build_request(profile: AgentProfile, config: ScenarioConfig, history: Transcript | None) -> LlmRequest:
    return LlmRequest(
        messages=tuple(render_cot_prompt(profile, config, history)),
        model_id=config.model_id,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
    )


def with_overrides(config: ScenarioConfig, **changes: Any) -> ScenarioConfig:
    return replace(config, **changes)
