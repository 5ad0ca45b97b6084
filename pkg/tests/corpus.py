"""Planned dialogues for the pipeline-math batches, compiled into scripted-backend files."""

from __future__ import annotations

import json
import random
from pathlib import Path

from tradertalk.orchestrator import compile_batch_script
from tradertalk.scenario import builtin_rq1, builtin_rq2

# RQ1: counts are 60% / 23.67% / 10% / 6.33% of 300.
RQ1_COUNTS = {"NoTrade": 180, "Flatten": 71, "Buy": 30, "Sell": 19}

_RQ1_CALLER = "Hi David, I'm flat today and just checking in on gilts.\nDecision: (D) No trade"
_RQ1_REPLIES = {
    "NoTrade": "My book is flat at 0 bonds, as it should be.\nDecision: (D) No trade",
    "Flatten": "I want to keep my book square.\nDecision: (C) Flatten trading book",
    "Buy": "I could add some gilts here.\nDecision: (A) Buy bonds",
    "Sell": "I could offer some gilts.\nDecision: (B) Sell bonds",
}

# RQ2: both-intend 174, any-intend 294, trades 17 out of 300.
RQ2_TRADE = [
    "Hi David, I sell you 10 million at mid.",
    "Agreed, I buy 10 million at mid.",
]
RQ2_BOTH_NO_DEAL = [
    "Hi David, I need to sell 10 million gilts today.",
    "I want to buy gilts too, but I must check with my desk first.",
]
RQ2_ONE_SIDED = [
    "Hi David, I need to sell 10 million gilts today.",
    "I must decline to trade today.",
]
RQ2_NEITHER = [
    "Hi David, how is the market looking this morning?",
    "Quiet here. I decline to trade today.",
]
RQ2_COUNTS = (("trade", 17), ("both", 157), ("one", 120), ("neither", 6))
_RQ2_DIALOGUES = {"trade": RQ2_TRADE, "both": RQ2_BOTH_NO_DEAL, "one": RQ2_ONE_SIDED, "neither": RQ2_NEITHER}


def rq1_dialogues(seed: int = 7) -> list[list[str]]:
    outcomes = [d for d, k in RQ1_COUNTS.items() for _ in range(k)]
    random.Random(seed).shuffle(outcomes)
    return [[_RQ1_CALLER, _RQ1_REPLIES[o]] for o in outcomes]


def rq2_dialogues(seed: int = 7) -> list[list[str]]:
    kinds = [kind for kind, k in RQ2_COUNTS for _ in range(k)]
    random.Random(seed).shuffle(kinds)
    return [list(_RQ2_DIALOGUES[kind]) for kind in kinds]


def write_script(path: Path, mode: str) -> Path:
    if mode == "rq1":
        script = compile_batch_script(builtin_rq1(), rq1_dialogues())
    else:
        script = compile_batch_script(builtin_rq2(), rq2_dialogues())
    path.write_text(json.dumps(script), encoding="utf-8")
    return path
