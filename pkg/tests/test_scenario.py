import hashlib
import json

import pytest

from tradertalk.core import GAME_MASTER, Transcript, Turn
from tradertalk.llm import ConfigError, Role
from tradertalk.scenario import (
    DAVID_ROLE,
    FINAL_OPTIONS,
    JOSEPHINE_ROLE,
    PROJECT_CONTEXT,
    TRADING_PREMISE,
    CotTemplate,
    Mode,
    ScenarioConfig,
    UnknownAgent,
    build_request,
    builtin_rq1,
    builtin_rq2,
    load_scenario,
    render_cot_prompt,
    save_scenario,
)
from tradertalk.core import AgentProfile

# Frozen digests of the verbatim prompt texts; any edit must be deliberate.
SNAPSHOTS = {
    "TRADING_PREMISE": (TRADING_PREMISE, "35103c45301fe4debb430409de054557e25b3e2cb39e0b257b57ad423c6ec646"),
    "PROJECT_CONTEXT": (PROJECT_CONTEXT, "cd0508c160b14a655ae4170783388101103efb221bf8a86f31d1627314931571"),
    "DAVID_ROLE": (DAVID_ROLE, "6147e3bef7e2bef1ac247ab4da7a8da9bda751e27c19e81e3d4e0502e061480b"),
    "JOSEPHINE_ROLE": (JOSEPHINE_ROLE, "eabe790c3a3ae94bd48dfa903f67939053dd9adb8512feec77fb81019e1bbdad"),
}


@pytest.mark.parametrize("name", sorted(SNAPSHOTS))
def test_prompt_constant_snapshots(name):
    text, digest = SNAPSHOTS[name]
    assert hashlib.sha256(text.encode("utf-8")).hexdigest() == digest


def test_builtin_rq2_values():
    config = builtin_rq2()
    assert config.mode is Mode.RQ2
    assert config.agent("Josephine").initial_holdings == 10_000_000
    assert config.agent("David").initial_holdings == -10_000_000
    assert config.initiator.name == "Josephine"
    assert config.shared_context == PROJECT_CONTEXT
    assert config.temperature == 1.0 and config.max_turns == 10


def test_builtin_rq1_values():
    config = builtin_rq1()
    assert config.mode is Mode.RQ1
    assert all(a.initial_holdings == 0 and a.role_prompt == TRADING_PREMISE for a in config.agents)
    assert config.initiator.name == "Josephine" and config.responder.name == "David"
    assert builtin_rq1(both_flat=False).agent("Josephine").role_prompt != TRADING_PREMISE


def test_opening_prompt_layout():
    config = builtin_rq2()
    messages = render_cot_prompt(config.initiator, config, None)
    assert messages[0].role is Role.SYSTEM
    assert messages[0].content.startswith("Your name is Josephine.")
    assert PROJECT_CONTEXT in messages[0].content and JOSEPHINE_ROLE in messages[0].content
    assert "opening message to David" in messages[1].content
    assert [m.role for m in messages[1:]] == [Role.USER, Role.USER]


def test_reply_prompt_includes_history():
    config = builtin_rq2()
    history = Transcript("x", (Turn(0, GAME_MASTER, "note"), Turn(1, "Josephine", "I have bonds to sell.")))
    messages = render_cot_prompt(config.responder, config, history)
    assert "Josephine: I have bonds to sell." in messages[1].content
    assert "Game Master: note" in messages[1].content
    assert "next message to Josephine" in messages[2].content


def test_each_final_option_appears_exactly_once():
    config = builtin_rq1()
    text = "\n".join(m.content for m in render_cot_prompt(config.responder, config, None))
    for option in FINAL_OPTIONS:
        assert text.count(option) == 1


def test_unknown_agent_rejected():
    config = builtin_rq2()
    with pytest.raises(UnknownAgent):
        render_cot_prompt(AgentProfile("Eve", "r", 0), config, None)


def test_cot_template_needs_four_options():
    with pytest.raises(ValueError):
        CotTemplate(final_options=("(A) Buy",))
    with pytest.raises(ValueError):
        CotTemplate(steps=())


def test_request_carries_config_parameters():
    config = builtin_rq2()
    request = build_request(config.initiator, config, None)
    assert (request.model_id, request.temperature, request.max_tokens) == (config.model_id, 1.0, config.max_tokens)


def test_scenario_file_round_trip(tmp_path):
    path = tmp_path / "s.json"
    save_scenario(builtin_rq2(), path)
    assert load_scenario(path) == builtin_rq2()
    assert load_scenario("rq1") == builtin_rq1()


def test_bad_scenario_files(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_scenario(broken)
    data = builtin_rq2().to_dict()
    data["mode"] = "RQ9"
    broken.write_text(json.dumps(data))
    with pytest.raises(ConfigError):
        load_scenario(broken)


def test_config_rejects_two_initiators():
    a = AgentProfile("A", "r", 0, is_initiator=True)
    with pytest.raises(ValueError):
        ScenarioConfig("s", Mode.RQ2, (a, AgentProfile("B", "r", 0, is_initiator=True)))
