from __future__ import annotations

import pytest
from conftest import FIXTURES, run_fixture
from hypothesis import given, settings
from hypothesis import strategies as st

from wmalign.agents import AgentView, update_belief_on_receive, update_observation
from wmalign.dialogue import make_message
from wmalign.evaluation import load_eval_spec, random_task
from wmalign.policies import PolicyDecision, SilentExplorer, act, make_policy
from wmalign.scene import Action, Tool, apply_action, load_scene_file, random_scene
from wmalign.simulator import SimConfig, charge_step, replan_due, run_episode
from wmalign.trace import EpisodeTrace, EventKind, TerminalStatus


@pytest.fixture
def scene():
    return load_scene_file(FIXTURES / "scenes" / "two_room.json").with_agents(["kitchen_1", "living_room_0"])


def test_config_validation():
    with pytest.raises(ValueError, match="distinct"):
        SimConfig("silent", ("kitchen_1", "kitchen_1"))
    with pytest.raises(ValueError, match="budget"):
        SimConfig("silent", ("a_0", "b_0"), budget=0)
    cfg = SimConfig("SC", ("a_0", "b_0"))
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.budget == 10_000 and cfg.motor_step_cost == 1


@pytest.mark.parametrize(
    "arch, tool, cost",
    [("SC", Tool.SEND_MESSAGE, 1), ("ACF", Tool.SEND_MESSAGE, 0), ("SC", Tool.FIND_OBJECT, 0),
     ("ACF", Tool.FIND_AGENT, 0), ("SC", Tool.READ_MESSAGES, 0), ("silent", Tool.NAVIGATE, 1),
     ("ACF", Tool.DONE, 1), ("SC", Tool.CLEAN, 1)],
)
def test_charge_step(arch, tool, cost):
    assert charge_step(SimConfig(arch, ("a_0", "b_0")), Action(tool)) == cost


def test_motor_step_cost_is_configurable():
    cfg = SimConfig("silent", ("a_0", "b_0"), motor_step_cost=3)
    assert charge_step(cfg, Action(Tool.PICK, ("cup_0",))) == 3


def test_update_observation(scene):
    view = update_observation(AgentView(0, "kitchen_1"), scene, 0)
    assert len(view.observed) == 5 and view.believed == view.observed
    assert update_observation(view, scene, 1).observed == view.observed
    opened = apply_action(scene, 0, Action(Tool.OPEN, ("cabinet_3",)))
    assert update_observation(view, opened, 2).observed - view.observed == {"cup_0"}


def test_observation_growth_counts_only_new(scene):
    view = AgentView(1, "kitchen_1", observed=frozenset({"kitchen_1", "counter_68"}),
                     believed=frozenset({"kitchen_1", "counter_68"}))
    assert len(update_observation(view, scene, 0).observed - view.observed) == 3


def test_belief_on_receive_tracks_phantoms():
    view = AgentView(1, "living_room_0", observed=frozenset({"shelves_1"}), believed=frozenset({"shelves_1"}))
    msg = make_message(0, 0, 5, "[STATUS] counter_68 and lamp_7 are ready")
    after = update_belief_on_receive(view, msg)
    assert after.believed == {"shelves_1", "counter_68", "lamp_7"}
    assert after.observed == view.observed
    assert update_belief_on_receive(after, make_message(1, 0, 6, "counter_68")).believed == after.believed
    with pytest.raises(ValueError):
        update_belief_on_receive(view, make_message(2, 1, 7, "mine"))


def test_replan_due():
    tr = EpisodeTrace("r", {"config": {"architecture": "ACF"}})
    assert replan_due(tr, 0)
    tr.emit(0, EventKind.REPLAN, 0, 1, {})
    assert not replan_due(tr, 0)
    tr.emit(0, EventKind.MESSAGE_SENT, 1, 1, {"index": 0, "sender": 1, "t": 0, "text": "hi"})
    assert replan_due(tr, 0)
    tr.emit(1, EventKind.REPLAN, 0, 2, {})
    tr.emit(1, EventKind.ACTION, 0, 2, {"tool": "Wait"})
    assert replan_due(tr, 0)


def test_silent_pair_terminates_done_without_messages():
    tr = run_fixture("two_room", "two_room", ["silent_explorer", "silent_explorer"], "silent")
    assert tr.status is TerminalStatus.DONE
    assert not list(tr.of_kind(EventKind.MESSAGE_SENT, EventKind.MESSAGE_RECEIVED))


def test_sc_message_consumes_one_step():
    tr = run_fixture("two_room", "two_room", ["hallucinating_messenger", "silent_explorer"], "SC")
    sent = list(tr.of_kind(EventKind.MESSAGE_SENT))
    assert len(sent) == 1 and sent[0].payload["cost"] == 1
    sends = [e for e in tr.of_kind(EventKind.ACTION) if e.payload["tool"] == "SendMessage"]
    assert [(e.agent, e.payload["cost"]) for e in sends] == [(0, 1)]


def test_snapshot_precedes_every_message_and_replan():
    tr = run_fixture("three_room", "three_room", ["acf_repeater", "silent_explorer"], "ACF")
    kinds = [e.kind for e in tr.events]
    for i, k in enumerate(kinds):
        if k is EventKind.MESSAGE_SENT:
            assert EventKind.SNAPSHOT in kinds[:i]
            j = max(x for x in range(i) if kinds[x] is EventKind.SNAPSHOT)
            assert j == i - 1
        if k is EventKind.REPLAN:
            assert kinds[i + 1] is EventKind.SNAPSHOT


def test_budget_exhaustion():
    tr = run_fixture("two_room", "two_room", ["silent_explorer", "silent_explorer"], "silent", budget=3)
    assert tr.status is TerminalStatus.BUDGET_EXHAUSTED
    assert tr.events[-1].t <= 3


class _Stubborn(SilentExplorer):
    name = "stubborn"

    def step(self, inp):
        return act(Tool.CLEAN, "toy_food_1") if self.turns == 1 else act(Tool.WAIT)


def test_unavailable_tool_is_recorded_and_episode_continues():
    scene = load_scene_file(FIXTURES / "scenes" / "two_room.json")
    spec = load_eval_spec(FIXTURES / "tasks" / "two_room.json")
    tr = run_episode(scene, SimConfig("silent", ("kitchen_1", "living_room_0"), budget=20),
                     [_Stubborn(), _Stubborn()], spec)
    fails = [e for e in tr.of_kind(EventKind.ACTION_FAILURE) if e.payload["reason"] == "tool unavailable to agent"]
    assert [e.agent for e in fails] == [0]
    assert fails[0].payload["cost"] == 0
    assert tr.is_terminal


def test_waiting_pair_stalls():
    tr = run_fixture("two_room", "two_room", ["mirror", "mirror"], "silent")
    assert tr.status is TerminalStatus.STALLED


def test_silent_sc_message_is_rejected():
    class Chatty(SilentExplorer):
        def step(self, inp):
            return PolicyDecision(Action(Tool.WAIT), "[PLAN] hello counter_68")

    scene = load_scene_file(FIXTURES / "scenes" / "two_room.json")
    spec = load_eval_spec(FIXTURES / "tasks" / "two_room.json")
    tr = run_episode(scene, SimConfig("silent", ("kitchen_1", "living_room_0"), budget=10),
                     [Chatty(), Chatty()], spec)
    assert not tr.messages()
    assert any(e.payload["tool"] == "SendMessage" for e in tr.of_kind(EventKind.ACTION_FAILURE))


def test_determinism():
    a = run_fixture("two_room", "two_room", ["random_agent", "random_agent"], "ACF", seed=3)
    b = run_fixture("two_room", "two_room", ["random_agent", "random_agent"], "ACF", seed=3)
    assert a.dumps() == b.dumps()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["silent", "SC", "ACF"]))
def test_monotone_sets_and_budget(seed, arch):
    scene = random_scene(seed)
    policies = [make_policy("random_agent"), make_policy("random_agent")]
    tr = run_episode(scene, SimConfig(arch, scene.rooms[:2], budget=25, seed=seed), policies,
                     random_task(scene, seed))
    snaps = tr.snapshots()
    for earlier, later in zip(snaps, snaps[1:]):
        for k in (0, 1):
            assert earlier.observed[k] <= later.observed[k]
            assert earlier.believed[k] <= later.believed[k]
    for s in snaps:
        for k in (0, 1):
            assert s.observed[k] <= scene.handles
            assert s.observed[k] <= s.believed[k]
            if arch == "silent":
                assert s.observed[k] == s.believed[k]
    assert tr.events[-1].t <= 25
    assert tr.is_terminal
