"""Domain types shared by every module.

Nothing here performs I/O or talks to a backend. All types are frozen
dataclasses so they can be handed to concurrent workers without copying.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Mapping

GAME_MASTER = "game_master"


class TradeDecision(str, enum.Enum):
    BUY = "Buy"
    SELL = "Sell"
    FLATTEN = "Flatten"
    NO_TRADE = "NoTrade"


class IntentionLabel(str, enum.Enum):
    INTENDS_TO_TRADE = "IntendsToTrade"
    DECLINES = "Declines"
    UNCLEAR = "Unclear"


class RecallVerdict(str, enum.Enum):
    CORRECT = "Correct"
    INCORRECT = "Incorrect"
    OMITTED = "Omitted"


class Termination(str, enum.Enum):
    CONCLUDED = "Concluded"
    TURN_CAP_REACHED = "TurnCapReached"
    BACKEND_ERROR = "BackendError"


def _frozen(mapping: Mapping) -> Mapping:
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True)
class AgentProfile:
    name: str
    role_prompt: str
    initial_holdings: int
    target_holdings: int = 0
    is_initiator: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("agent name must be non-empty")
        if self.name == GAME_MASTER:
            raise ValueError(f"{GAME_MASTER!r} is reserved")
        if not self.role_prompt:
            raise ValueError(f"agent {self.name!r} has an empty role prompt")
        for attr in ("initial_holdings", "target_holdings"):
            value = getattr(self, attr)
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError(f"{attr} must be an int, got {value!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "role_prompt": self.role_prompt,
            "initial_holdings": self.initial_holdings,
            "target_holdings": self.target_holdings,
            "is_initiator": self.is_initiator,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AgentProfile:
        return cls(
            name=data["name"],
            role_prompt=data["role_prompt"],
            initial_holdings=data["initial_holdings"],
            target_holdings=data.get("target_holdings", 0),
            is_initiator=bool(data.get("is_initiator", False)),
        )


def validate_agents(agents: tuple[AgentProfile, ...] | list[AgentProfile]) -> None:
    """Check the per-scenario agent invariants (unique names, one initiator)."""
    names = [a.name for a in agents]
    if len(set(names)) != len(names):
        raise ValueError(f"agent names must be unique, got {names}")
    initiators = [a.name for a in agents if a.is_initiator]
    if len(initiators) != 1:
        raise ValueError(f"exactly one initiator required, got {initiators}")


@dataclass(frozen=True)
class Turn:
    index: int
    speaker: str
    text: str

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("turn index must be >= 0")
        if not self.text:
            raise ValueError("turn text must be non-empty")

    @property
    def is_agent(self) -> bool:
        return self.speaker != GAME_MASTER

    def to_dict(self) -> dict[str, Any]:
        return {"index": self.index, "speaker": self.speaker, "text": self.text}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Turn:
        return cls(index=data["index"], speaker=data["speaker"], text=data["text"])


@dataclass(frozen=True)
class Transcript:
    scenario_id: str
    turns: tuple[Turn, ...] = ()
    termination: Termination = Termination.CONCLUDED

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "termination", Termination(self.termination))
        for expected, turn in enumerate(self.turns):
            if turn.index != expected:
                raise ValueError(f"turn indices must be contiguous from 0; got {turn.index} at {expected}")
        last_agent = None
        for turn in self.turns:
            if not turn.is_agent:
                continue
            if turn.speaker == last_agent:
                raise ValueError(f"{turn.speaker!r} speaks twice in a row at turn {turn.index}")
            last_agent = turn.speaker
        if self.termination is Termination.CONCLUDED and not self.turns:
            raise ValueError("a concluded transcript needs at least one turn")

    def append(self, speaker: str, text: str) -> Transcript:
        turn = Turn(index=len(self.turns), speaker=speaker, text=text)
        return Transcript(self.scenario_id, self.turns + (turn,), self.termination)

    def with_termination(self, termination: Termination) -> Transcript:
        return Transcript(self.scenario_id, self.turns, termination)

    def agent_turns(self, name: str | None = None) -> list[Turn]:
        if name is None:
            return [t for t in self.turns if t.is_agent]
        return [t for t in self.turns if t.speaker == name]

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "termination": self.termination.value,
            "turns": [t.to_dict() for t in self.turns],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Transcript:
        return cls(
            scenario_id=data["scenario_id"],
            turns=tuple(Turn.from_dict(t) for t in data["turns"]),
            termination=Termination(data["termination"]),
        )


@dataclass(frozen=True)
class ExecutedTrade:
    buyer: str
    seller: str
    quantity: int
    price_convention: str = "mid"

    def __post_init__(self) -> None:
        if self.buyer == self.seller:
            raise ValueError("buyer and seller must differ")
        if self.quantity <= 0:
            raise ValueError("trade quantity must be positive")
        if self.price_convention != "mid":
            raise ValueError("only mid-price trades are modelled")

    def to_dict(self) -> dict[str, Any]:
        return {
            "buyer": self.buyer,
            "seller": self.seller,
            "quantity": self.quantity,
            "price_convention": self.price_convention,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExecutedTrade:
        return cls(data["buyer"], data["seller"], data["quantity"], data.get("price_convention", "mid"))


@dataclass(frozen=True)
class SimulationResult:
    """Classified outcome of a single simulation run."""

    scenario_id: str
    run_index: int
    per_agent_intention: Mapping[str, IntentionLabel]
    per_agent_decision: Mapping[str, TradeDecision | None]
    trade: ExecutedTrade | None
    recall: Mapping[str, RecallVerdict]
    transcript_ref: str
    termination: Termination = Termination.CONCLUDED
    decision_agent: str | None = None  # agent whose decision is the run's headline outcome

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_agent_intention", _frozen(self.per_agent_intention))
        object.__setattr__(self, "per_agent_decision", _frozen(self.per_agent_decision))
        object.__setattr__(self, "recall", _frozen(self.recall))
        object.__setattr__(self, "termination", Termination(self.termination))

    @property
    def errored(self) -> bool:
        return self.termination is Termination.BACKEND_ERROR

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SimulationResult):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash((self.scenario_id, self.run_index, self.transcript_ref))

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "run_index": self.run_index,
            "termination": self.termination.value,
            "decision_agent": self.decision_agent,
            "per_agent_intention": {k: v.value for k, v in sorted(self.per_agent_intention.items())},
            "per_agent_decision": {
                k: (v.value if v is not None else None) for k, v in sorted(self.per_agent_decision.items())
            },
            "trade": self.trade.to_dict() if self.trade else None,
            "recall": {k: v.value for k, v in sorted(self.recall.items())},
            "transcript_ref": self.transcript_ref,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SimulationResult:
        return cls(
            scenario_id=data["scenario_id"],
            run_index=data["run_index"],
            per_agent_intention={k: IntentionLabel(v) for k, v in data["per_agent_intention"].items()},
            per_agent_decision={
                k: (TradeDecision(v) if v is not None else None) for k, v in data["per_agent_decision"].items()
            },
            trade=ExecutedTrade.from_dict(data["trade"]) if data.get("trade") else None,
            recall={k: RecallVerdict(v) for k, v in data["recall"].items()},
            transcript_ref=data["transcript_ref"],
            termination=Termination(data.get("termination", Termination.CONCLUDED.value)),
            decision_agent=data.get("decision_agent"),
        )


def transcript_ref(scenario_id: str, run_index: int) -> str:
    return f"{scenario_id}/{run_index}"


__all__ = [
    "GAME_MASTER",
    "AgentProfile",
    "ExecutedTrade",
    "IntentionLabel",
    "RecallVerdict",
    "SimulationResult",
    "Termination",
    "TradeDecision",
    "Transcript",
    "Turn",
    "transcript_ref",
    "validate_agents",
]
