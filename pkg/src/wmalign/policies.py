"""Policy interface and scripted policies.

A policy sees only a :class:`PolicyInput`: its own :class:`AgentView`, the
messages just delivered to it, the task and the architecture. Nothing about
the partner's private sets ever reaches it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol

from .agents import AgentView
from .dialogue import Architecture, IntentTag, Message
from .evaluation import STATE, EvalSpec, Proposition
from .scene import Action, EntityKind, Tool, parse_handle

POLICY_IO_VERSION = 1


@dataclass(frozen=True)
class PolicyInput:
    view: AgentView
    messages: tuple[Message, ...]
    spec: EvalSpec
    architecture: Architecture
    t: int = 0
    last_result: Mapping[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "policy_io_version": POLICY_IO_VERSION,
            "view": self.view.to_dict(),
            "messages": [m.to_dict() for m in self.messages],
            "spec": self.spec.to_document(),
            "architecture": self.architecture.value,
            "t": self.t,
            "last_result": dict(self.last_result) if self.last_result else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PolicyInput":
        return cls(
            view=AgentView.from_dict(d["view"]),
            messages=tuple(Message.from_dict(m) for m in d.get("messages", ())),
            spec=EvalSpec.from_document(d["spec"]),
            architecture=Architecture(d["architecture"]),
            t=int(d.get("t", 0)),
            last_result=d.get("last_result"),
        )


@dataclass(frozen=True)
class PolicyDecision:
    action: Action | None = None
    message: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "policy_io_version": POLICY_IO_VERSION,
            "action": self.action.to_dict() if self.action else None,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PolicyDecision":
        action = d.get("action")
        return cls(Action.from_dict(action) if action else None, d.get("message"))


def act(tool: Tool, *args: str) -> PolicyDecision:
    return PolicyDecision(Action(tool, tuple(args)))


class Policy(Protocol):
    name: str

    def reset(self, agent_id: int, seed: int) -> None: ...

    def decide(self, inp: PolicyInput) -> PolicyDecision: ...

    def state(self) -> dict[str, Any]: ...


# -- task execution from the agent's own world graph --------------------------

_STATE_TOOL = {"is_clean": Tool.CLEAN, "is_filled": Tool.FILL, "is_powered_on": Tool.POWER_ON}


def believed_holds(view: AgentView, prop: Proposition) -> bool:
    info = view.graph.get(prop.args[0])
    if info is None:
        return False
    if prop.predicate in ("is_on", "is_inside"):
        return info.parent == prop.args[1] and info.relation == prop.predicate[3:]
    if prop.predicate == "is_next_to":
        return prop.args[1] in info.next_to
    return bool(info.attributes.get(prop.predicate[3:]))


def task_order(spec: EvalSpec) -> list[int]:
    """Proposition indices in an order that respects every ``before`` constraint."""
    remaining = list(range(len(spec.propositions)))
    order: list[int] = []
    while remaining:
        for i in remaining:
            if all(p in order for p in spec.prerequisites(i)):
                order.append(i)
                remaining.remove(i)
                break
        else:  # cyclic constraints: fall back to index order
            order.extend(remaining)
            break
    return order


def _reach(view: AgentView, obj: str) -> Action | None:
    """Navigate to / open around ``obj`` until it can be manipulated; None when ready."""
    info = view.graph.get(obj)
    if view.held == obj:
        return None
    if view.room_of(obj) != view.location:
        return Action(Tool.NAVIGATE, (obj,))
    if info and info.relation == "inside" and info.parent:
        parent = view.graph.get(info.parent)
        if parent and parent.openness == "closed":
            return Action(Tool.OPEN, (info.parent,))
    return None


def plan_proposition(view: AgentView, prop: Proposition) -> Action | None:
    """Next oracle-skill call towards ``prop``, or None if the agent lacks the knowledge."""
    if prop.predicate in STATE:
        obj = prop.args[0]
        if obj not in view.graph or (view.graph[obj].parent is None and view.held != obj):
            return None
        return _reach(view, obj) or Action(_STATE_TOOL[prop.predicate], (obj,))

    obj = prop.args[0]
    if prop.predicate == "is_next_to":
        ref = prop.args[1]
        ref_info = view.graph.get(ref)
        if ref_info is None or ref_info.parent is None:
            return None
        furniture, rel, extra = ref_info.parent, "on", ("next_to", ref)
    else:
        furniture, rel, extra = prop.args[1], prop.predicate[3:], ()
    f_info = view.graph.get(furniture)
    if f_info is None:
        return None
    placement = (obj, rel, furniture, *extra)
    closed = rel == "inside" and f_info.openness == "closed"

    if view.held is not None and view.held != obj:
        here = [f for f in view.known(EntityKind.FURNITURE) if view.room_of(f) == view.location]
        return Action(Tool.PLACE, (view.held, "on", here[0])) if here else None
    if view.held == obj:
        if view.room_of(furniture) != view.location:
            return Action(Tool.NAVIGATE, (furniture,))
        if closed:
            return Action(Tool.OPEN, (furniture,))
        return Action(Tool.PLACE, placement)
    o_info = view.graph.get(obj)
    if o_info is None or o_info.parent is None:
        return None
    step = _reach(view, obj)
    if step is not None:
        return step
    if view.room_of(furniture) == view.location and not closed:
        return Action(Tool.REARRANGE, placement)
    return Action(Tool.PICK, (obj,))


# -- scripted policies ---------------------------------------------------------


class ScriptedPolicy:
    """Finite-state script base.

    Under SC every turn opens with a free ``ReadMessages``. Subclasses
    implement :meth:`step`; internal state is exposed through :meth:`state`
    so it can be written into the trace.
    """

    name = "scripted"
    reads = True

    def __init__(self, explore_first: bool = False):
        self.explore_first = explore_first
        self.agent_id = 0
        self.rng = random.Random(0)

    def reset(self, agent_id: int, seed: int) -> None:
        self.agent_id = agent_id
        self.rng = random.Random(seed * 2 + agent_id)
        self.completed: set[int] = set()
        self.explored_all = False
        self.heard: set[str] = set()
        self.inbox: list[Message] = []
        self.turns = 0
        self._just_read = False

    def state(self) -> dict[str, Any]:
        return {
            "policy": self.name,
            "completed": sorted(self.completed),
            "explored_all": self.explored_all,
            "heard": sorted(self.heard),
            "turns": self.turns,
        }

    def decide(self, inp: PolicyInput) -> PolicyDecision:
        for m in inp.messages:
            self.heard.update(m.mentions)
            self.inbox.append(m)
        last = inp.last_result or {}
        if last.get("tool") == Tool.EXPLORE.value and last.get("reason") == "no unvisited rooms":
            self.explored_all = True
        if inp.architecture is Architecture.SC and self.reads and not self._just_read:
            self._just_read = True
            return act(Tool.READ_MESSAGES)
        self._just_read = False
        self.turns += 1
        return self.step(inp)

    def step(self, inp: PolicyInput) -> PolicyDecision:
        raise NotImplementedError

    # helpers

    def assigned(self, spec: EvalSpec, i: int) -> bool:
        return True

    def refresh_completed(self, inp: PolicyInput) -> None:
        for i, prop in enumerate(inp.spec.propositions):
            if believed_holds(inp.view, prop):
                self.completed.add(i)

    def task_action(self, inp: PolicyInput) -> Action | None:
        self.refresh_completed(inp)
        spec = inp.spec
        for i in task_order(spec):
            if i in self.completed or not self.assigned(spec, i):
                continue
            if any(p not in self.completed for p in spec.prerequisites(i)):
                continue
            prop = spec.propositions[i]
            if prop.predicate in STATE and self.agent_id != 1:
                continue
            action = plan_proposition(inp.view, prop)
            if action is not None:
                return action
        return None

    def all_done(self, spec: EvalSpec) -> bool:
        return all(i in self.completed for i in range(len(spec.propositions)) if self.assigned(spec, i))

    def work(self, inp: PolicyInput) -> Action:
        """Explore/execute/idle: the default silent behaviour."""
        if self.explore_first and not self.explored_all:
            return Action(Tool.EXPLORE)
        action = self.task_action(inp)
        if action is not None:
            return action
        if not self.explored_all and not self.all_done(inp.spec):
            return Action(Tool.EXPLORE)
        if self.all_done(inp.spec):
            return Action(Tool.DONE)
        return Action(Tool.WAIT)

    def speak_or_act(self, inp: PolicyInput, text: str | None) -> PolicyDecision:
        """SC: speaking replaces acting. ACF: both. Silent: act only."""
        if text is None or inp.architecture is Architecture.SILENT:
            return PolicyDecision(self.work(inp))
        if inp.architecture is Architecture.SC:
            return PolicyDecision(None, text)
        return PolicyDecision(self.work(inp), text)


class SilentExplorer(ScriptedPolicy):
    """Explores until the task's entities are known, then executes the task. Never speaks."""

    name = "silent_explorer"

    def step(self, inp):
        return PolicyDecision(self.work(inp))


class Mirror(ScriptedPolicy):
    """Agent-independent script: navigate to each task handle in turn, then Done."""

    name = "mirror"

    def __init__(self, cycles: int = 2):
        super().__init__()
        self.cycles = cycles

    def step(self, inp):
        targets = sorted(inp.spec.handles)
        k = self.turns - 1
        if k >= self.cycles * len(targets):
            return act(Tool.DONE)
        return act(Tool.NAVIGATE, targets[k % len(targets)])


class DisjointSplitter(ScriptedPolicy):
    """Each agent only works on its own share of the propositions and idles with Wait."""

    name = "disjoint_splitter"

    def assigned(self, spec, i):
        prop = spec.propositions[i]
        if prop.predicate in STATE:
            return self.agent_id == 1
        spatial = [k for k, p in enumerate(spec.propositions) if p.predicate not in STATE]
        return spatial.index(i) % 2 == self.agent_id

    def step(self, inp):
        action = self.task_action(inp)
        if action is not None:
            return PolicyDecision(action)
        if self.all_done(inp.spec):
            return act(Tool.WAIT)
        if not self.explored_all:
            return act(Tool.EXPLORE)
        return act(Tool.WAIT)


class NovelMessenger(ScriptedPolicy):
    """Names one observed handle the partner has not been told about, one per message.

    The estimate of what the partner lacks is tracked from own sends and from
    handles the partner has mentioned.
    """

    name = "novel_messenger"

    def __init__(self, every: int = 1, explore_first: bool = False):
        super().__init__(explore_first)
        self.every = max(1, every)

    def reset(self, agent_id, seed):
        super().reset(agent_id, seed)
        self.sent: set[str] = set()

    def state(self):
        return {**super().state(), "sent": sorted(self.sent)}

    def step(self, inp):
        text = None
        if inp.architecture is not Architecture.SILENT and (self.turns - 1) % self.every == 0:
            gap = sorted(inp.view.observed - self.sent - self.heard)
            if gap:
                self.sent.add(gap[0])
                text = f"[STATUS] I can see {gap[0]}."
        return self.speak_or_act(inp, text)


class CommonGroundMessenger(ScriptedPolicy):
    """Only mentions handles it has seen itself and heard the partner mention."""

    name = "common_ground_messenger"

    def __init__(self, every: int = 1, explore_first: bool = False):
        super().__init__(explore_first)
        self.every = max(1, every)

    def reset(self, agent_id, seed):
        super().reset(agent_id, seed)
        self.sent: set[str] = set()

    def state(self):
        return {**super().state(), "sent": sorted(self.sent)}

    def step(self, inp):
        text = None
        if inp.architecture is not Architecture.SILENT and (self.turns - 1) % self.every == 0:
            shared = sorted((inp.view.observed & self.heard) - self.sent)
            if shared:
                self.sent.add(shared[0])
                text = f"[PLAN] Let's coordinate around {shared[0]}."
        return self.speak_or_act(inp, text)


def phantom_handles(spec: EvalSpec, offset: int = 100, limit: int = 3) -> list[str]:
    """Plausible-looking handles for task entities, shifted off the real indices."""
    out = []
    for h in sorted(spec.handles):
        base, index = parse_handle(h)
        out.append(f"{base}_{index + offset}")
    return out[:limit]


class HallucinatingMessenger(ScriptedPolicy):
    """Claims the task is complete, naming entities nobody has observed, before acting.

    ``then="done"`` stops right after the claim; ``then="work"`` carries on
    with the silent behaviour.
    """

    name = "hallucinating_messenger"

    def __init__(self, then: str = "done", offset: int = 100):
        super().__init__()
        if then not in ("done", "work"):
            raise ValueError("then must be 'done' or 'work'")
        self.then = then
        self.offset = offset

    def reset(self, agent_id, seed):
        super().reset(agent_id, seed)
        self.claimed = False

    def state(self):
        return {**super().state(), "claimed": self.claimed}

    def step(self, inp):
        if inp.architecture is Architecture.SILENT:
            return PolicyDecision(self.work(inp))
        if not self.claimed:
            self.claimed = True
            names = phantom_handles(inp.spec, self.offset)
            text = f"[STATUS] Task complete: {', '.join(names)} are in place."
            if inp.architecture is Architecture.SC:
                return PolicyDecision(None, text)
            nxt = Action(Tool.DONE) if self.then == "done" else self.work(inp)
            return PolicyDecision(nxt, text)
        if self.then == "done":
            return act(Tool.DONE)
        return PolicyDecision(self.work(inp))


def claims_completion(m: Message) -> bool:
    return m.intent is IntentTag.STATUS and "complete" in m.text.lower()


class PrematureConfirmer(ScriptedPolicy):
    """Works silently until a partner STATUS claims completion, then confirms and stops."""

    name = "premature_confirmer"

    def reset(self, agent_id, seed):
        super().reset(agent_id, seed)
        self.confirmed = False

    def state(self):
        return {**super().state(), "confirmed": self.confirmed}

    def step(self, inp):
        if self.confirmed:
            return act(Tool.DONE)
        if any(claims_completion(m) for m in self.inbox) and inp.architecture is not Architecture.SILENT:
            self.confirmed = True
            text = "[CONFIRM] Got it, the task is complete. Stopping now."
            if inp.architecture is Architecture.SC:
                return PolicyDecision(None, text)
            return PolicyDecision(Action(Tool.DONE), text)
        return PolicyDecision(self.work(inp))


class AcfRepeater(ScriptedPolicy):
    """Re-emits the same STATUS at every replan.

    The status is composed once, at the first replan, from what the agent can
    see. Under SC it only speaks on alternate turns so it still gets to act.
    """

    name = "acf_repeater"

    def __init__(self, explore_first: bool = True):
        super().__init__(explore_first)

    def reset(self, agent_id, seed):
        super().reset(agent_id, seed)
        self.status: str | None = None

    def state(self):
        return {**super().state(), "status": self.status}

    def step(self, inp):
        if self.status is None:
            view = inp.view
            names = [view.location] + [
                f for f in view.known(EntityKind.FURNITURE) if view.room_of(f) == view.location
            ]
            self.status = f"[STATUS] Working from {names[0]}: {', '.join(names)} checked."
        if inp.architecture is Architecture.SC and self.turns % 2 == 0:
            return PolicyDecision(self.work(inp))
        return self.speak_or_act(inp, self.status)


class RandomAgent(ScriptedPolicy):
    """Seeded random actions and messages, for property tests.

    Messages mention a random mix of observed, believed and phantom handles.
    """

    name = "random_agent"

    def __init__(self, p_message: float = 0.3, p_phantom: float = 0.3, p_done: float = 0.0):
        super().__init__()
        self.p_message = p_message
        self.p_phantom = p_phantom
        self.p_done = p_done

    def _mentions(self, view: AgentView) -> list[str]:
        pool = sorted(view.believed)
        k = self.rng.randint(0, 3)
        picks = [self.rng.choice(pool) for _ in range(k)] if pool else []
        if self.rng.random() < self.p_phantom:
            picks.append(f"{self.rng.choice(['lamp', 'kettle', 'backpack'])}_{self.rng.randint(50, 60)}")
        return picks

    def _action(self, inp: PolicyInput) -> Action:
        view, rng = inp.view, self.rng
        if rng.random() < self.p_done:
            return Action(Tool.DONE)
        here = [h for h in sorted(view.observed) if view.room_of(h) == view.location]
        objects = [h for h in here if view.graph[h].kind == EntityKind.OBJECT.value]
        furniture = [h for h in here if view.graph[h].kind == EntityKind.FURNITURE.value]
        choices: list[Action] = [Action(Tool.EXPLORE), Action(Tool.WAIT)]
        if view.observed:
            choices.append(Action(Tool.NAVIGATE, (rng.choice(sorted(view.observed)),)))
        if objects:
            choices.append(Action(Tool.PICK, (rng.choice(objects),)))
        if view.held and furniture:
            choices.append(Action(Tool.PLACE, (view.held, "on", rng.choice(furniture))))
        if objects and furniture:
            choices.append(Action(Tool.REARRANGE, (rng.choice(objects), "on", rng.choice(furniture))))
        if furniture:
            choices.append(Action(rng.choice([Tool.OPEN, Tool.CLOSE]), (rng.choice(furniture),)))
        if objects:
            tool = rng.choice([Tool.CLEAN, Tool.FILL, Tool.POWER_ON, Tool.POWER_OFF])
            choices.append(Action(tool, (rng.choice(objects),)))
        if rng.random() < 0.1:
            choices.append(Action(Tool.FIND_OBJECT, ("",)))
        return rng.choice(choices)

    def step(self, inp):
        text = None
        if inp.architecture is not Architecture.SILENT and self.rng.random() < self.p_message:
            tag = self.rng.choice([t.value for t in IntentTag if t is not IntentTag.OTHER] + [""])
            names = self._mentions(inp.view)
            text = (f"[{tag}] " if tag else "") + "About " + " and ".join(names or ["the task"]) + "."
        action = self._action(inp)
        if text is None or inp.architecture is Architecture.SILENT:
            return PolicyDecision(action)
        if inp.architecture is Architecture.SC:
            return PolicyDecision(None, text)
        return PolicyDecision(action, text)


_CATALOG: dict[str, Callable[..., ScriptedPolicy]] = {
    cls.name: cls
    for cls in (
        SilentExplorer,
        Mirror,
        DisjointSplitter,
        NovelMessenger,
        CommonGroundMessenger,
        HallucinatingMessenger,
        PrematureConfirmer,
        AcfRepeater,
        RandomAgent,
    )
}


def builtin_policies() -> dict[str, Callable[..., ScriptedPolicy]]:
    return dict(_CATALOG)


class UnknownPolicy(KeyError):
    pass


def make_policy(spec: str | Mapping[str, Any]) -> Policy:
    """Build a policy from a name, ``{"name": ..., "params": {...}}`` or ``{"external": [argv]}``."""
    if isinstance(spec, str):
        spec = {"name": spec}
    if "external" in spec:
        from .adapter import ExternalPolicy

        return ExternalPolicy(list(spec["external"]), timeout=float(spec.get("timeout", 30.0)))
    name = spec.get("name")
    if name not in _CATALOG:
        raise UnknownPolicy(f"unknown policy {name!r}; known: {', '.join(sorted(_CATALOG))}")
    return _CATALOG[name](**dict(spec.get("params", {})))

