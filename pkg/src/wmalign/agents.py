"""Per-agent private state: observation set, belief set and world graph."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from .dialogue import Architecture, Message
from .scene import (
    DIALOGUE_TOOLS,
    STATE_CHANGE_AGENT,
    STATE_CHANGE_TOOLS,
    EntityKind,
    SceneGraph,
    Tool,
    visible_entities,
)

AGENTS = (0, 1)


@dataclass(frozen=True)
class NodeInfo:
    """What an agent last saw of one entity. ``parent`` is None when unknown or held."""

    kind: str
    parent: str | None = None
    relation: str | None = None
    openness: str | None = None
    attributes: Mapping[str, bool] = field(default_factory=dict)
    next_to: frozenset[str] = frozenset()
    seen_at: int = 0


@dataclass(frozen=True)
class AgentView:
    agent_id: int
    location: str
    held: str | None = None
    observed: frozenset[str] = frozenset()
    believed: frozenset[str] = frozenset()
    message_cursor: int = 0
    graph: Mapping[str, NodeInfo] = field(default_factory=dict)
    visited: frozenset[str] = frozenset()

    def room_of(self, handle: str) -> str | None:
        """Room of ``handle`` according to this agent's own world graph."""
        node = handle
        for _ in range(4):
            info = self.graph.get(node)
            if info is None:
                return None
            if info.kind == EntityKind.ROOM.value:
                return node
            if node == self.held:
                return self.location
            if info.parent is None:
                return None
            node = info.parent
        return None

    def known(self, kind: EntityKind) -> list[str]:
        return sorted(h for h, n in self.graph.items() if n.kind == kind.value)

    def to_dict(self) -> dict[str, Any]:
        """The policy-facing rendering of the view (own fields only)."""
        return {
            "agent_id": self.agent_id,
            "location": self.location,
            "held": self.held,
            "observed": sorted(self.observed),
            "believed": sorted(self.believed),
            "message_cursor": self.message_cursor,
            "visited": sorted(self.visited),
            "graph": {
                h: {
                    "kind": n.kind,
                    "parent": n.parent,
                    "relation": n.relation,
                    "openness": n.openness,
                    "attributes": dict(sorted(n.attributes.items())),
                    "next_to": sorted(n.next_to),
                    "seen_at": n.seen_at,
                }
                for h, n in sorted(self.graph.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AgentView":
        graph = {
            h: NodeInfo(
                kind=n["kind"],
                parent=n.get("parent"),
                relation=n.get("relation"),
                openness=n.get("openness"),
                attributes=dict(n.get("attributes", {})),
                next_to=frozenset(n.get("next_to", ())),
                seen_at=int(n.get("seen_at", 0)),
            )
            for h, n in d.get("graph", {}).items()
        }
        return cls(
            agent_id=int(d["agent_id"]),
            location=d["location"],
            held=d.get("held"),
            observed=frozenset(d.get("observed", ())),
            believed=frozenset(d.get("believed", ())),
            message_cursor=int(d.get("message_cursor", 0)),
            graph=graph,
            visited=frozenset(d.get("visited", ())),
        )


def available_tools(agent: int, architecture: Architecture | str) -> frozenset[Tool]:
    arch = Architecture(architecture)
    tools = set(Tool) - DIALOGUE_TOOLS
    if agent != STATE_CHANGE_AGENT:
        tools -= STATE_CHANGE_TOOLS
    if arch is Architecture.SC:
        tools |= {Tool.SEND_MESSAGE, Tool.READ_MESSAGES}
    elif arch is Architecture.ACF:
        tools.add(Tool.SEND_MESSAGE)
    return frozenset(tools)


def sync_body(view: AgentView, scene: SceneGraph) -> AgentView:
    body = scene.agents[view.agent_id]
    return replace(view, location=body.location, held=body.held, visited=view.visited | body.visited)


def update_observation(view: AgentView, scene: SceneGraph, t: int) -> AgentView:
    """Add everything visible from ``view.location`` to both the observed and believed sets.

    The world graph is refreshed for visible entities; entities the graph placed
    in this room that are no longer visible lose their recorded parent.
    """
    visible = visible_entities(scene, view.location)
    graph = dict(view.graph)
    for h in visible:
        e = scene.entities[h]
        holder = scene.holder(h)
        graph[h] = NodeInfo(
            kind=e.kind.value,
            parent=None if holder is not None else scene.parent.get(h),
            relation="held" if holder is not None else scene.relation_to_parent(h),
            openness=e.openness,
            attributes=dict(e.attributes),
            next_to=frozenset(o for s, r, o in scene.relations if s == h and r == "next_to")
            | frozenset(s for s, r, o in scene.relations if o == h and r == "next_to"),
            seen_at=t,
        )
    for h, info in view.graph.items():
        if h in visible or info.kind != EntityKind.OBJECT.value or info.parent is None:
            continue
        if view.room_of(h) == view.location:
            graph[h] = replace(info, parent=None, relation=None, next_to=frozenset(), seen_at=t)
    return replace(
        view,
        observed=view.observed | visible,
        believed=view.believed | visible,
        graph=graph,
    )


def update_belief_on_receive(view: AgentView, message: Message) -> AgentView:
    """Receiving a message adds its mentions (phantoms included) to the belief set only."""
    if message.receiver != view.agent_id:
        raise ValueError(f"message {message.index} is not addressed to agent {view.agent_id}")
    return replace(
        view,
        believed=view.believed | frozenset(message.mentions),
        message_cursor=max(view.message_cursor, message.index + 1),
    )
