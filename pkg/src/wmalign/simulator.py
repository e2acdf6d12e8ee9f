"""Two-agent episode engine.

Lockstep rounds: in every round each active agent whose replan is due takes
one turn, in ``turn_order``. A turn may contain any number of free calls
(perception, ``ReadMessages``, rejected tools) up to ``max_free_calls``, and
ends with one committing action: a motor/control skill, or ``SendMessage``
under SC. Steps are charged against a budget shared by both agents.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Sequence

from .agents import (
    AGENTS,
    AgentView,
    available_tools,
    sync_body,
    update_belief_on_receive,
    update_observation,
)
from .dialogue import Architecture, ChannelUnavailable, MessageBuffer
from .evaluation import EvalSpec, FirstSatisfaction, check_spec_against_scene
from .policies import Policy, PolicyDecision, PolicyInput
from .scene import (
    PERCEPTION_TOOLS,
    Action,
    ActionFailure,
    EntityKind,
    SceneGraph,
    Tool,
    apply_action,
)
from .trace import EpisodeTrace, EventKind, TerminalStatus

__all__ = [
    "AgentView",
    "SimConfig",
    "charge_step",
    "replan_due",
    "run_episode",
    "update_belief_on_receive",
    "update_observation",
]


@dataclass(frozen=True)
class SimConfig:
    architecture: Architecture
    spawn_rooms: tuple[str, str]
    budget: int = 10_000
    seed: int = 0
    motor_step_cost: int = 1
    turn_order: tuple[int, int] = (0, 1)
    max_free_calls: int = 8
    condition: str = ""

    def __post_init__(self):
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        object.__setattr__(self, "spawn_rooms", tuple(self.spawn_rooms))
        object.__setattr__(self, "turn_order", tuple(self.turn_order))
        if len(self.spawn_rooms) != 2 or self.spawn_rooms[0] == self.spawn_rooms[1]:
            raise ValueError("the two agents need distinct spawn rooms")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.motor_step_cost <= 0:
            raise ValueError("motor step cost must be positive")
        if sorted(self.turn_order) != [0, 1]:
            raise ValueError("turn_order must be a permutation of (0, 1)")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["architecture"] = self.architecture.value
        d["spawn_rooms"] = list(self.spawn_rooms)
        d["turn_order"] = list(self.turn_order)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def charge_step(config: SimConfig, action: Action) -> int:
    """Steps an action costs. Perception and ReadMessages are free; SendMessage costs 1 only under SC."""
    tool = action.tool
    if tool in PERCEPTION_TOOLS or tool is Tool.READ_MESSAGES:
        return 0
    if tool is Tool.SEND_MESSAGE:
        return 1 if config.architecture is Architecture.SC else 0
    return config.motor_step_cost


def replan_due(trace: EpisodeTrace, agent: int, t: int | None = None, start: int = 0) -> bool:
    """True iff, since ``agent``'s last replan, its action completed, its
    observations changed, or a partner message reached it.

    ``start`` lets callers skip a known-irrelevant prefix of the event list.
    """
    arch = Architecture(trace.architecture)
    events = trace.events
    last = -1
    for i in range(len(events) - 1, start - 1, -1):
        e = events[i]
        if e.kind is EventKind.REPLAN and e.agent == agent:
            last = i
            break
    if last == -1 and start == 0:
        return True
    for e in events[max(last + 1, start):]:
        if t is not None and e.t > t:
            break
        if e.agent == agent and e.kind in (EventKind.ACTION, EventKind.ACTION_FAILURE):
            return True
        if e.agent == agent and e.kind is EventKind.OBSERVATION and e.payload.get("new"):
            return True
        if e.agent == agent and e.kind is EventKind.MESSAGE_RECEIVED:
            return True
        if arch is Architecture.ACF and e.kind is EventKind.MESSAGE_SENT and e.agent != agent:
            return True
    return False


def _target(action: Action, before: SceneGraph, after: SceneGraph | ActionFailure, agent: int) -> str | None:
    if action.tool is Tool.EXPLORE:
        if isinstance(after, SceneGraph):
            return after.agents[agent].location
        return None
    if action.tool is Tool.SEND_MESSAGE:
        return None
    return action.target


def _fact_diff(before: SceneGraph, after: SceneGraph) -> tuple[list, list]:
    fb, fa = before.facts(), after.facts()
    return sorted(fa - fb), sorted(fb - fa)


@dataclass
class _Episode:
    scene: SceneGraph
    config: SimConfig
    policies: Sequence[Policy]
    spec: EvalSpec
    trace: EpisodeTrace
    views: list[AgentView] = field(default_factory=list)
    buffer: MessageBuffer = field(default_factory=MessageBuffer)
    used: int = 0
    round: int = 0
    active: list[bool] = field(default_factory=lambda: [True, True])
    last_result: list[dict | None] = field(default_factory=lambda: [None, None])
    status: TerminalStatus | None = None

    def __post_init__(self):
        self.tracker = FirstSatisfaction(self.spec)
        self.tracker.observe(0, self.scene.facts())
        self.replan_index = [0, 0]

    # -- events ---------------------------------------------------------------

    def emit(self, kind: EventKind, agent: int | None = None, **payload) -> None:
        self.trace.emit(self.used, kind, agent, self.round, payload)

    def snapshot(self) -> None:
        last = self.trace.events[-1] if self.trace.events else None
        if last is not None and last.kind is EventKind.SNAPSHOT:
            return
        handles = self.scene.handles
        self.emit(
            EventKind.SNAPSHOT,
            agents=[
                {
                    "agent": v.agent_id,
                    "observed": v.observed,
                    "believed": v.believed,
                    "phantoms": v.believed - handles,
                }
                for v in self.views
            ],
        )

    def observe(self, agent: int) -> None:
        view = sync_body(self.views[agent], self.scene)
        new = update_observation(view, self.scene, self.used)
        added = new.observed - view.observed
        self.views[agent] = new
        if added or not self.trace.events:
            self.emit(EventKind.OBSERVATION, agent, location=new.location, new=added, source="look")

    def receive(self, agent: int) -> list:
        msgs = self.buffer.read_new(agent)
        for m in msgs:
            self.views[agent] = update_belief_on_receive(self.views[agent], m)
            self.emit(EventKind.MESSAGE_RECEIVED, agent, index=m.index, sender=m.sender, mentions=m.mentions)
        self.views[agent] = replace(self.views[agent], message_cursor=self.buffer.cursors[agent])
        return msgs

    # -- a turn -----------------------------------------------------------------

    def turn(self, agent: int) -> None:
        arch = self.config.architecture
        self.observe(agent)
        delivered = self.receive(agent) if arch is Architecture.ACF else []
        reasons = self._replan_reasons(agent)
        self.replan_index[agent] = len(self.trace.events)
        self.emit(EventKind.REPLAN, agent, reasons=reasons, policy_state=_policy_state(self.policies[agent]))
        self.snapshot()
        policy = self.policies[agent]
        for _ in range(self.config.max_free_calls + 1):
            inp = PolicyInput(
                view=self.views[agent],
                messages=tuple(delivered),
                spec=self.spec,
                architecture=arch,
                t=self.used,
                last_result=self.last_result[agent],
            )
            decision = policy.decide(inp)
            delivered = []
            if not isinstance(decision, PolicyDecision):
                raise TypeError(f"policy returned {type(decision).__name__}, not PolicyDecision")
            committed, delivered = self._execute(agent, decision)
            if committed or self.status is not None:
                return

    def _replan_reasons(self, agent: int) -> list[str]:
        if self.round == 1:
            return ["start"]
        reasons = []
        for e in self.trace.events[self.replan_index[agent]:]:
            if e.agent == agent and e.kind in (EventKind.ACTION, EventKind.ACTION_FAILURE):
                reasons.append("completion")
            elif e.agent == agent and e.kind is EventKind.OBSERVATION and e.payload.get("new"):
                reasons.append("observation")
            elif e.agent == agent and e.kind is EventKind.MESSAGE_RECEIVED:
                reasons.append("message")
        return sorted(set(reasons))

    def _fail(self, agent: int, action: Action, reason: str, cost: int) -> None:
        self.emit(
            EventKind.ACTION_FAILURE,
            agent,
            tool=action.tool.value,
            args=action.args,
            target=action.target if action.tool is not Tool.EXPLORE else None,
            cost=cost,
            reason=reason,
        )
        self.used += cost
        self.last_result[agent] = {"tool": action.tool.value, "ok": False, "reason": reason}

    def _send(self, agent: int, text: str) -> bool:
        """Append a message; under SC this is the turn's committing action."""
        arch = self.config.architecture
        action = Action(Tool.SEND_MESSAGE, (text,))
        cost = charge_step(self.config, action)
        if self.used + cost > self.config.budget:
            self.status = TerminalStatus.BUDGET_EXHAUSTED
            return False
        self.snapshot()
        msg = self.buffer.send(agent, text, self.used, arch)
        self.emit(EventKind.MESSAGE_SENT, agent, cost=cost, **msg.to_dict())
        if arch is Architecture.SC:
            self.emit(EventKind.ACTION, agent, tool=Tool.SEND_MESSAGE.value, args=(), target=None, cost=cost,
                      facts_added=[], facts_removed=[])
        self.used += cost
        self.last_result[agent] = {"tool": Tool.SEND_MESSAGE.value, "ok": True, "reason": None}
        return True

    def _execute(self, agent: int, decision: PolicyDecision) -> tuple[bool, list]:
        """Run one decision. Returns (turn committed, messages delivered by this call)."""
        arch = self.config.architecture
        action, text = decision.action, decision.message
        if action is not None and action.tool is Tool.SEND_MESSAGE:
            text = text if text is not None else (action.args[0] if action.args else "")
            action = None
        if text is not None:
            if arch is Architecture.SILENT:
                self._fail(agent, Action(Tool.SEND_MESSAGE), str(ChannelUnavailable("silent architecture")), 0)
                if action is None:
                    return False, []
            elif arch is Architecture.SC:
                if action is not None:
                    self._fail(agent, action, "SC allows either a message or an action per turn", 0)
                if not self._send(agent, text):
                    return True, []
                return True, []
            else:
                if not self._send(agent, text):
                    return True, []
                if action is None:
                    self._fail(agent, Action(Tool.WAIT), "ACF decision carries no action", 0)
                    action = Action(Tool.WAIT)
        if action is None:
            self._fail(agent, Action(Tool.WAIT), "empty decision", 0)
            return False, []

        if action.tool not in available_tools(agent, arch):
            self._fail(agent, action, "tool unavailable to agent", 0)
            return False, []
        if action.tool is Tool.READ_MESSAGES:
            self.emit(EventKind.ACTION, agent, tool=action.tool.value, args=(), target=None, cost=0,
                      facts_added=[], facts_removed=[])
            msgs = self.receive(agent)
            self.last_result[agent] = {"tool": action.tool.value, "ok": True, "reason": None, "count": len(msgs)}
            return False, msgs
        if action.tool in PERCEPTION_TOOLS:
            result = self._perceive(agent, action)
            self.emit(EventKind.ACTION, agent, tool=action.tool.value, args=action.args, target=action.target,
                      cost=0, facts_added=[], facts_removed=[])
            self.emit(EventKind.OBSERVATION, agent, location=self.views[agent].location, new=[],
                      source="perception", query=action.args, result=result)
            self.last_result[agent] = {"tool": action.tool.value, "ok": True, "reason": None, "result": result}
            return False, []

        cost = charge_step(self.config, action)
        if self.used + cost > self.config.budget:
            self.status = TerminalStatus.BUDGET_EXHAUSTED
            return True, []
        before = self.scene
        outcome = apply_action(before, agent, action)
        if isinstance(outcome, ActionFailure):
            self._fail(agent, action, outcome.reason, cost)
        else:
            added, removed = _fact_diff(before, outcome)
            self.emit(
                EventKind.ACTION,
                agent,
                tool=action.tool.value,
                args=action.args,
                target=_target(action, before, outcome, agent),
                cost=cost,
                facts_added=added,
                facts_removed=removed,
            )
            if added or removed:
                self.tracker.observe(self.used, outcome.facts())
            self.scene = outcome
            self.used += cost
            self.last_result[agent] = {"tool": action.tool.value, "ok": True, "reason": None}
            if action.tool is Tool.DONE:
                self.active[agent] = False
        self.observe(agent)
        return True, []

    def _perceive(self, agent: int, action: Action) -> list[str]:
        view = self.views[agent]
        query = (action.target or "").lower()
        if action.tool is Tool.FIND_AGENT:
            partner = self.scene.agents[1 - agent]
            return [partner.location] if partner.location == view.location else []
        kind = {
            Tool.FIND_OBJECT: EntityKind.OBJECT,
            Tool.FIND_RECEPTACLE: EntityKind.FURNITURE,
            Tool.FIND_ROOM: EntityKind.ROOM,
        }[action.tool]
        return [h for h in view.known(kind) if query in h]

    # -- episode loop -------------------------------------------------------------

    def fingerprint(self) -> tuple:
        return (
            self.scene.canonical(),
            tuple((v.location, v.held, v.observed, v.believed) for v in self.views),
            len(self.buffer),
            tuple(self.active),
        )

    def run(self) -> EpisodeTrace:
        self.scene = self.scene.with_agents(self.config.spawn_rooms)
        self.views = [AgentView(i, location=self.config.spawn_rooms[i]) for i in AGENTS]
        for i, p in enumerate(self.policies):
            p.reset(i, self.config.seed)
        for i in AGENTS:
            self.observe(i)
        self.snapshot()
        while self.status is None:
            self.round += 1
            before = self.fingerprint()
            for agent in self.config.turn_order:
                if not self.active[agent]:
                    continue
                if not replan_due(self.trace, agent, start=self.replan_index[agent]):
                    continue
                self.turn(agent)
                if self.status is not None:
                    break
                if self.tracker.result().sr:
                    self.status = TerminalStatus.DONE
                    break
            if self.status is None:
                if not any(self.active):
                    self.status = TerminalStatus.DONE
                elif self.fingerprint() == before:
                    self.status = TerminalStatus.STALLED
        self.snapshot()
        self.emit(EventKind.TERMINAL, None, status=self.status)
        return self.trace


def _policy_state(policy: Policy) -> dict[str, Any]:
    state = getattr(policy, "state", None)
    return state() if callable(state) else {}


def run_episode(
    scene: SceneGraph,
    config: SimConfig,
    policies: Sequence[Policy],
    spec: EvalSpec,
    episode_id: str = "episode",
) -> EpisodeTrace:
    """Simulate one episode to a terminal status and return its trace."""
    if len(policies) != 2:
        raise ValueError("exactly two policies are required")
    check_spec_against_scene(spec, scene.handles)
    for room in config.spawn_rooms:
        if room not in scene.entities or scene.kind(room) is not EntityKind.ROOM:
            raise ValueError(f"spawn {room!r} is not a room of scene {scene.scene_id}")
    trace = EpisodeTrace(
        episode_id,
        header={
            "config": config.to_dict(),
            "scene": scene.to_document(),
            "eval": spec.to_document(),
            "policies": [getattr(p, "name", type(p).__name__) for p in policies],
        },
    )
    return _Episode(scene, config, policies, spec, trace).run()
