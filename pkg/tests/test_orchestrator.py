from dataclasses import replace

import pytest

from tradertalk.core import GAME_MASTER, Termination, Transcript, Turn
from tradertalk.llm import Backend, ScriptedBackend, TransportError
from tradertalk.orchestrator import (
    GameMasterState,
    LlmJudgeDetector,
    TerminationDetector,
    compile_script,
    game_master_step,
    run_rq1,
    run_rq2,
    run_simulation,
)
from tradertalk.scenario import builtin_rq1, builtin_rq2

NOTE = Turn(0, GAME_MASTER, "Josephine calls David.")


def _t(*texts):
    transcript = Transcript("s", (NOTE,))
    for i, text in enumerate(texts):
        transcript = transcript.append("Josephine" if i % 2 == 0 else "David", text)
    return transcript


class FailsAfter(Backend):
    kind = "flaky"

    def __init__(self, good):
        super().__init__()
        self.good = good

    def _send(self, request, run_index):
        if self.good == 0:
            raise TransportError("connection reset")
        self.good -= 1
        return "Still thinking about it.", 1


def test_first_step_picks_the_initiator():
    state = game_master_step(GameMasterState("Josephine"), _t(), builtin_rq2())
    assert state == GameMasterState("Josephine", 1)


def test_steps_alternate():
    config = builtin_rq2()
    state = game_master_step(GameMasterState("Josephine", 1), _t("Hello."), config)
    assert state.next_speaker == "David" and state.turn_count == 2


def test_turn_cap_concludes():
    config = replace(builtin_rq2(), max_turns=2)
    state = game_master_step(GameMasterState("Josephine", 2), _t("Hi.", "Hello."), config)
    assert state.concluded and state.conclusion_reason == "turn cap"


def test_agreement_concludes():
    state = game_master_step(GameMasterState("Josephine", 2), _t("I sell 10 million at mid.", "Agreed."), builtin_rq2())
    assert state.concluded and state.conclusion_reason == "agreement detected"


def test_refusal_concludes():
    state = game_master_step(GameMasterState("Josephine", 2), _t("Any interest?", "No trade today, thanks."), builtin_rq2())
    assert state.conclusion_reason == "refusal detected"


def test_detector_waits_for_both_agents():
    assert TerminationDetector()(_t("Agreed, I confirm."), builtin_rq2()) is None


def test_consistent_decisions_conclude():
    transcript = _t("I need to sell gilts.\nDecision: (B) Sell bonds", "Happy to take them.\nDecision: (A) Buy bonds")
    assert TerminationDetector()(transcript, builtin_rq2()) == "decisions consistent"
    assert TerminationDetector(consistent_decisions=False)(transcript, builtin_rq2()) is None


def test_stepping_a_concluded_state_is_an_error():
    with pytest.raises(ValueError):
        game_master_step(GameMasterState("Josephine", 1, True, "x"), _t("a"), builtin_rq2())


def test_rq2_runs_to_the_cap_without_agreement():
    config = replace(builtin_rq2(), max_turns=5)
    transcript = run_rq2(ScriptedBackend(default="Let me look at the screens."), config)
    assert transcript.termination is Termination.TURN_CAP_REACHED
    assert [t.speaker for t in transcript.turns] == [GAME_MASTER, "Josephine", "David", "Josephine", "David", "Josephine"]


def test_rq2_scripted_agreement():
    config = builtin_rq2()
    script = compile_script(config, ["Hi David, I sell you 10 million at mid.", "Agreed, I buy 10 million at mid."])
    transcript = run_rq2(ScriptedBackend(script), config)
    assert transcript.termination is Termination.CONCLUDED
    assert len(transcript.agent_turns()) == 2
    assert transcript.agent_turns()[0].speaker == "Josephine"


def test_backend_error_keeps_partial_transcript():
    transcript = run_rq2(FailsAfter(2), builtin_rq2())
    assert transcript.termination is Termination.BACKEND_ERROR
    assert len(transcript.agent_turns()) == 2


def test_rq1_agents_are_blind_to_each_other():
    backend = ScriptedBackend(default="My book is flat.\nDecision: (D) No trade")
    transcript, finals = run_rq1(backend, builtin_rq1())
    assert set(finals) == {"Josephine", "David"}
    first, second = backend.recorder.exchanges
    assert "Conversation so far:\nGame Master: " in second.request.messages[1].content
    assert not any("My book is flat" in m.content for m in second.request.messages)
    assert transcript.termination is Termination.CONCLUDED


def test_rq1_multi_turn_option():
    config = replace(builtin_rq1(), rq1_multi_turn=True, max_turns=3)
    transcript = run_simulation(ScriptedBackend(default="Let me think."), config)
    assert transcript.termination is Termination.TURN_CAP_REACHED
    assert len(transcript.agent_turns()) == 3


def test_mode_mismatch():
    with pytest.raises(ValueError):
        run_rq1(ScriptedBackend(default="x"), builtin_rq2())
    with pytest.raises(ValueError):
        run_rq2(ScriptedBackend(default="x"), builtin_rq1())


def test_llm_judge_detector():
    config = replace(builtin_rq2(), judge_termination=True)
    judge = LlmJudgeDetector(ScriptedBackend(default="Yes."))
    assert judge(_t("Hello.", "Hi."), config) == "judge: concluded"
    assert LlmJudgeDetector(ScriptedBackend(default="no"))(_t("Hello.", "Hi."), config) is None


def test_compile_script_rejects_mismatched_dialogues():
    config = builtin_rq2()
    with pytest.raises(ValueError, match="unused"):
        compile_script(config, ["I sell you 10 million at mid.", "Agreed.", "extra"])
    with pytest.raises(ValueError, match="too short"):
        compile_script(config, ["Hello."])
