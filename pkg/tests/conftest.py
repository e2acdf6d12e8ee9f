from __future__ import annotations

from pathlib import Path

import pytest

from wmalign.dialogue import make_message
from wmalign.evaluation import load_eval_spec
from wmalign.policies import make_policy
from wmalign.scene import load_scene_file
from wmalign.simulator import SimConfig, run_episode
from wmalign.trace import EpisodeTrace, EventKind

FIXTURES = Path(__file__).parent / "fixtures"
TWO_ROOM_SPAWN = ("kitchen_1", "living_room_0")

ACCEPTANCE_LINES: list[str] = []


def run_fixture(scene, task, policies, architecture, spawn=TWO_ROOM_SPAWN, budget=200, seed=0, episode_id="e0"):
    return run_episode(
        load_scene_file(FIXTURES / "scenes" / f"{scene}.json"),
        SimConfig(architecture, spawn, budget=budget, seed=seed),
        [make_policy(p) for p in policies],
        load_eval_spec(FIXTURES / "tasks" / f"{task}.json"),
        episode_id,
    )


class TraceBuilder:
    """Hand-authors traces for metric fixtures.

    ``view`` sets both agents' observed sets; belief sets follow from the
    observed sets plus every received mention, as in the simulator.
    """

    def __init__(self, architecture="SC", episode_id="authored", condition="authored"):
        self.trace = EpisodeTrace(
            episode_id, {"config": {"architecture": architecture, "condition": condition}}
        )
        self.observed = [set(), set()]
        self.received = [set(), set()]
        self.t = 0
        self.round = 0
        self.n_messages = 0

    def emit(self, kind, agent=None, **payload):
        self.trace.emit(self.t, kind, agent, self.round, payload)

    def view(self, v0, v1):
        self.observed = [set(v0), set(v1)]
        return self.snapshot()

    def snapshot(self):
        self.emit(EventKind.SNAPSHOT, agents=[
            {"agent": k, "observed": self.observed[k], "believed": self.observed[k] | self.received[k],
             "phantoms": []}
            for k in (0, 1)
        ])
        return self

    def say(self, sender, text, deliver=True):
        msg = make_message(self.n_messages, sender, self.t, text)
        self.n_messages += 1
        self.emit(EventKind.MESSAGE_SENT, sender, cost=1, **msg.to_dict())
        if deliver:
            self.emit(EventKind.MESSAGE_RECEIVED, 1 - sender, index=msg.index, sender=sender,
                      mentions=list(msg.mentions))
            self.received[1 - sender].update(msg.mentions)
        return msg

    def act(self, agent, tool, target=None, cost=1, failed=False):
        kind = EventKind.ACTION_FAILURE if failed else EventKind.ACTION
        self.emit(kind, agent, tool=tool, args=[target] if target else [], target=target, cost=cost,
                  facts_added=[], facts_removed=[])
        self.t += cost
        return self

    def next_round(self):
        self.round += 1
        return self

    def finish(self, status="done"):
        self.snapshot()
        self.emit(EventKind.TERMINAL, status=status)
        return self.trace


@pytest.fixture
def builder():
    return TraceBuilder()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0].lstrip("#"))):
            terminalreporter.write_line(line)
