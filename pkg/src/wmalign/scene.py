"""Ground-truth scene graph and the deterministic oracle skills that act on it.

A scene is an immutable snapshot: a containment tree
``house -> room -> furniture -> object`` with per-entity attribute state,
symbolic spatial relations and the two agents' bodies (room, held object,
visited rooms).  :func:`apply_action` never mutates its input; it returns a
new :class:`SceneGraph` or an :class:`ActionFailure`.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping

HANDLE_RE = re.compile(r"^[a-z][a-z0-9]*(?:_[a-z0-9]+)*_[0-9]+$")

ATTRIBUTES = ("clean", "filled", "powered_on")
OPENNESS = ("open", "closed", "not_articulated")
RELATIONS = ("on", "inside", "next_to")


class SceneError(ValueError):
    """Raised when a scene document violates the schema or the tree invariants."""


class EntityKind(str, Enum):
    HOUSE = "house"
    ROOM = "room"
    FURNITURE = "furniture"
    OBJECT = "object"


PARENT_KIND = {
    EntityKind.ROOM: EntityKind.HOUSE,
    EntityKind.FURNITURE: EntityKind.ROOM,
    EntityKind.OBJECT: EntityKind.FURNITURE,
}


class Tool(str, Enum):
    NAVIGATE = "Navigate"
    EXPLORE = "Explore"
    PICK = "Pick"
    PLACE = "Place"
    REARRANGE = "Rearrange"
    OPEN = "Open"
    CLOSE = "Close"
    CLEAN = "Clean"
    FILL = "Fill"
    POUR = "Pour"
    POWER_ON = "PowerOn"
    POWER_OFF = "PowerOff"
    FIND_OBJECT = "FindObject"
    FIND_RECEPTACLE = "FindReceptacle"
    FIND_ROOM = "FindRoom"
    FIND_AGENT = "FindAgent"
    WAIT = "Wait"
    DONE = "Done"
    SEND_MESSAGE = "SendMessage"
    READ_MESSAGES = "ReadMessages"


STATE_CHANGE_TOOLS = frozenset(
    {Tool.CLEAN, Tool.FILL, Tool.POUR, Tool.POWER_ON, Tool.POWER_OFF}
)
PERCEPTION_TOOLS = frozenset(
    {Tool.FIND_OBJECT, Tool.FIND_RECEPTACLE, Tool.FIND_ROOM, Tool.FIND_AGENT}
)
CONTROL_TOOLS = frozenset({Tool.WAIT, Tool.DONE})
DIALOGUE_TOOLS = frozenset({Tool.SEND_MESSAGE, Tool.READ_MESSAGES})
MOTOR_TOOLS = frozenset(Tool) - STATE_CHANGE_TOOLS - PERCEPTION_TOOLS - CONTROL_TOOLS - DIALOGUE_TOOLS

# Agent 1 (the humanoid) is the only one with state-change skills.
STATE_CHANGE_AGENT = 1


@dataclass(frozen=True)
class Action:
    """A high-level action ``(tool, args)``.

    ``args`` holds handles and relation keywords in PARTNR order, e.g.
    ``Rearrange[toy_food_1, on, counter_68, next_to, toy_pineapple_0]``.
    For ``SendMessage`` the single argument is the message text.
    """

    tool: Tool
    args: tuple[str, ...] = ()

    @property
    def target(self) -> str | None:
        return self.args[0] if self.args else None

    def __str__(self) -> str:
        return f"{self.tool.value}[{', '.join(self.args)}]"

    def to_dict(self) -> dict[str, Any]:
        return {"tool": self.tool.value, "args": list(self.args)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Action":
        return cls(Tool(d["tool"]), tuple(str(a) for a in d.get("args", ())))

    @classmethod
    def parse(cls, text: str) -> "Action":
        """Parse ``Tool[arg, arg]`` notation."""
        m = re.fullmatch(r"\s*(\w+)\s*(?:\[(.*)\])?\s*", text, re.S)
        if not m:
            raise ValueError(f"cannot parse action {text!r}")
        args = tuple(a.strip() for a in m.group(2).split(",")) if m.group(2) else ()
        return cls(Tool(m.group(1)), tuple(a for a in args if a))


@dataclass(frozen=True)
class ActionFailure:
    tool: str
    target: str | None
    reason: str

    def to_dict(self) -> dict[str, Any]:
        return {"tool": self.tool, "target": self.target, "reason": self.reason}


@dataclass(frozen=True)
class Entity:
    handle: str
    kind: EntityKind
    attributes: Mapping[str, bool] = field(default_factory=dict)
    openness: str | None = None

    @property
    def articulated(self) -> bool:
        return self.openness in ("open", "closed")


@dataclass(frozen=True)
class AgentBody:
    location: str
    held: str | None = None
    visited: frozenset[str] = frozenset()


@dataclass(frozen=True)
class SceneGraph:
    scene_id: str
    entities: Mapping[str, Entity]
    parent: Mapping[str, str]
    relations: frozenset[tuple[str, str, str]] = frozenset()
    agents: Mapping[int, AgentBody] = field(default_factory=dict)

    # -- queries -----------------------------------------------------------

    @property
    def handles(self) -> frozenset[str]:
        return frozenset(self.entities)

    def kind(self, handle: str) -> EntityKind:
        return self.entities[handle].kind

    def of_kind(self, kind: EntityKind) -> list[str]:
        return sorted(h for h, e in self.entities.items() if e.kind is kind)

    @property
    def rooms(self) -> list[str]:
        return self.of_kind(EntityKind.ROOM)

    def children(self, handle: str) -> list[str]:
        return sorted(c for c, p in self.parent.items() if p == handle)

    def holder(self, handle: str) -> int | None:
        for agent, body in self.agents.items():
            if body.held == handle:
                return agent
        return None

    def room_of(self, handle: str) -> str | None:
        """Room containing ``handle``; held objects are in their holder's room."""
        kind = self.entities[handle].kind
        if kind is EntityKind.HOUSE:
            return None
        if kind is EntityKind.ROOM:
            return handle
        holder = self.holder(handle)
        if holder is not None:
            return self.agents[holder].location
        node = handle
        while node in self.parent:
            node = self.parent[node]
            if self.entities[node].kind is EntityKind.ROOM:
                return node
        return None

    def relation_to_parent(self, handle: str) -> str | None:
        p = self.parent.get(handle)
        for s, rel, o in self.relations:
            if s == handle and o == p and rel in ("on", "inside"):
                return rel
        return None

    def is_concealed(self, handle: str) -> bool:
        """An object is concealed while it sits inside a closed receptacle."""
        if self.entities[handle].kind is not EntityKind.OBJECT:
            return False
        p = self.parent.get(handle)
        if p is None:
            return False
        return self.entities[p].openness == "closed" and self.relation_to_parent(handle) == "inside"

    def facts(self) -> frozenset[tuple[str, ...]]:
        """World-state atoms over which evaluation predicates are decided."""
        out: set[tuple[str, ...]] = set()
        for s, rel, o in self.relations:
            out.add((f"is_{rel}", s, o))
        for h, e in self.entities.items():
            for attr, value in e.attributes.items():
                if value:
                    out.add((f"is_{attr}", h))
        return frozenset(out)

    # -- transforms --------------------------------------------------------

    def with_agents(self, spawns: Iterable[str]) -> "SceneGraph":
        bodies = {}
        for i, room in enumerate(spawns):
            if room not in self.entities or self.kind(room) is not EntityKind.ROOM:
                raise SceneError(f"spawn {room!r} is not a room")
            bodies[i] = AgentBody(location=room, visited=frozenset({room}))
        return replace(self, agents=bodies)

    # -- serialization -----------------------------------------------------

    def to_document(self) -> dict[str, Any]:
        held = {b.held for b in self.agents.values() if b.held}
        entities = []
        for h in sorted(self.entities):
            e = self.entities[h]
            doc: dict[str, Any] = {"handle": h, "kind": e.kind.value, "parent": self.parent.get(h)}
            if e.kind in (EntityKind.OBJECT, EntityKind.FURNITURE):
                doc["attributes"] = dict(sorted(e.attributes.items()))
            if e.kind is EntityKind.FURNITURE:
                doc["openness"] = e.openness or "not_articulated"
            if h in held:
                doc["held"] = True
            entities.append(doc)
        doc = {
            "scene_id": self.scene_id,
            "entities": entities,
            "relations": [list(r) for r in sorted(self.relations)],
        }
        if self.agents:
            doc["agents"] = [
                {
                    "agent": i,
                    "location": b.location,
                    "held": b.held,
                    "visited": sorted(b.visited),
                }
                for i, b in sorted(self.agents.items())
            ]
        return doc

    def canonical(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))


def parse_handle(handle: str) -> tuple[str, int]:
    if not HANDLE_RE.match(handle):
        raise ValueError(f"not an entity handle: {handle!r}")
    base, index = handle.rsplit("_", 1)
    return base, int(index)


def load_scene(document: Mapping[str, Any]) -> SceneGraph:
    """Build and validate a :class:`SceneGraph` from a scene document."""
    if "entities" not in document:
        raise SceneError("schema violation: missing 'entities'")
    entities: dict[str, Entity] = {}
    parent: dict[str, str] = {}
    held_flags: set[str] = set()
    for raw in document["entities"]:
        handle = raw.get("handle")
        if not isinstance(handle, str) or not HANDLE_RE.match(handle):
            raise SceneError(f"schema violation: bad handle {handle!r}")
        if handle in entities:
            raise SceneError(f"duplicate handle {handle}")
        try:
            kind = EntityKind(raw.get("kind"))
        except ValueError:
            raise SceneError(f"schema violation in {handle}: unknown kind {raw.get('kind')!r}") from None
        attrs = raw.get("attributes") or {}
        if attrs and kind not in (EntityKind.OBJECT, EntityKind.FURNITURE):
            raise SceneError(f"schema violation in {handle}: attributes on a {kind.value}")
        for name, value in attrs.items():
            if name not in ATTRIBUTES or not isinstance(value, bool):
                raise SceneError(f"schema violation in {handle}: bad attribute {name}={value!r}")
        openness = raw.get("openness")
        if kind is EntityKind.FURNITURE:
            openness = openness or "not_articulated"
            if openness not in OPENNESS:
                raise SceneError(f"schema violation in {handle}: bad openness {openness!r}")
        elif openness is not None:
            raise SceneError(f"schema violation in {handle}: openness on a {kind.value}")
        entities[handle] = Entity(handle, kind, dict(attrs), openness)
        if raw.get("parent") is not None:
            parent[handle] = raw["parent"]
        if raw.get("held"):
            held_flags.add(handle)

    for child, p in parent.items():
        if p not in entities:
            raise SceneError(f"schema violation in {child}: unknown parent {p!r}")
    for start in parent:
        seen = {start}
        node = start
        while node in parent:
            node = parent[node]
            if node in seen:
                raise SceneError(f"cycle in parent map at {start}")
            seen.add(node)

    houses = [h for h, e in entities.items() if e.kind is EntityKind.HOUSE]
    if len(houses) != 1:
        raise SceneError(f"schema violation: expected exactly one house, found {len(houses)}")
    for h, e in entities.items():
        if e.kind is EntityKind.HOUSE:
            if h in parent:
                raise SceneError(f"kind hierarchy violated: house {h} has a parent")
            continue
        if h not in parent:
            if e.kind is EntityKind.OBJECT and h in held_flags:
                continue
            raise SceneError(f"schema violation in {h}: missing parent")
        pk = entities[parent[h]].kind
        if pk is not PARENT_KIND[e.kind]:
            raise SceneError(
                f"kind hierarchy violated: {h} ({e.kind.value}) parented to {parent[h]} ({pk.value})"
            )

    relations: set[tuple[str, str, str]] = set()
    for triple in document.get("relations", ()):
        if len(triple) != 3:
            raise SceneError(f"schema violation: bad relation {triple!r}")
        s, rel, o = (str(x) for x in triple)
        if rel not in RELATIONS:
            raise SceneError(f"schema violation: unknown relation {rel!r}")
        if s not in entities or o not in entities:
            raise SceneError(f"schema violation: relation {triple!r} names an unknown entity")
        if rel in ("on", "inside"):
            if entities[o].kind is not EntityKind.FURNITURE:
                raise SceneError(f"schema violation: {rel} target {o} is not furniture")
            if parent.get(s) != o:
                raise SceneError(f"schema violation: {s} {rel} {o} disagrees with parent map")
        relations.add((s, rel, o))
    for h, e in entities.items():
        if e.kind is EntityKind.OBJECT and h in parent:
            rels = [r for r in relations if r[0] == h and r[1] in ("on", "inside")]
            if len(rels) > 1:
                raise SceneError(f"schema violation in {h}: multiple support relations")
            if not rels:
                relations.add((h, "on", parent[h]))

    scene = SceneGraph(
        scene_id=str(document.get("scene_id", "scene")),
        entities=entities,
        parent=parent,
        relations=frozenset(relations),
    )
    if "agents" in document:
        bodies = {}
        for a in document["agents"]:
            bodies[int(a["agent"])] = AgentBody(
                location=a["location"], held=a.get("held"), visited=frozenset(a.get("visited", ()))
            )
        scene = replace(scene, agents=bodies)
    held = {b.held for b in scene.agents.values() if b.held}
    if held != held_flags:
        raise SceneError("schema violation: held flags disagree with agent bodies")
    return scene


def load_scene_file(path) -> SceneGraph:
    with open(path, encoding="utf-8") as fh:
        return load_scene(json.load(fh))


def check_invariants(scene: SceneGraph) -> None:
    """Re-validate a scene; raises :class:`SceneError` on any violation."""
    again = load_scene(scene.to_document())
    if again != scene:
        raise SceneError("scene does not round-trip through its document")


def visible_entities(scene: SceneGraph, room: str) -> frozenset[str]:
    if room not in scene.entities or scene.kind(room) is not EntityKind.ROOM:
        raise SceneError(f"{room!r} is not a room")
    seen = {room}
    for furniture in scene.children(room):
        seen.add(furniture)
        for obj in scene.children(furniture):
            if not scene.is_concealed(obj):
                seen.add(obj)
    for body in scene.agents.values():
        if body.held and body.location == room:
            seen.add(body.held)
    return frozenset(seen)


# -- oracle skills ---------------------------------------------------------


def _fail(action: Action, reason: str) -> ActionFailure:
    return ActionFailure(action.tool.value, action.target, reason)


def _detach(relations: frozenset, obj: str) -> frozenset:
    return frozenset(
        r for r in relations if r[0] != obj and not (r[1] == "next_to" and r[2] == obj)
    )


def _placement(scene: SceneGraph, action: Action, actor: int, args: tuple[str, ...]):
    """Validate ``obj, rel, furniture[, next_to, ref]``; return (obj, rel, furn, ref) or a failure."""
    if len(args) not in (3, 5):
        return _fail(action, "expected [object, relation, furniture(, next_to, reference)]")
    obj, rel, furn = args[:3]
    ref = None
    if len(args) == 5:
        if args[3] != "next_to":
            return _fail(action, f"unsupported constraint {args[3]!r}")
        ref = args[4]
    for h in (obj, furn) + ((ref,) if ref else ()):
        if h not in scene.entities:
            return _fail(action, f"unknown handle {h}")
    if rel not in ("on", "inside"):
        return _fail(action, f"unsupported relation {rel!r}")
    if scene.kind(obj) is not EntityKind.OBJECT:
        return _fail(action, f"{obj} is not an object")
    if scene.kind(furn) is not EntityKind.FURNITURE:
        return _fail(action, f"{furn} is not furniture")
    here = scene.agents[actor].location
    if scene.room_of(furn) != here:
        return _fail(action, f"{furn} is not in {here}")
    if rel == "inside" and scene.entities[furn].openness == "closed":
        return _fail(action, f"{furn} is closed")
    if ref is not None:
        if ref == obj or scene.kind(ref) is not EntityKind.OBJECT:
            return _fail(action, f"{ref} is not a valid reference object")
        if scene.holder(ref) is not None:
            return _fail(action, f"{ref} is held")
    return obj, rel, furn, ref


def _put(scene: SceneGraph, obj: str, rel: str, furn: str, ref: str | None, actor: int) -> SceneGraph:
    parent = dict(scene.parent)
    parent[obj] = furn
    relations = set(_detach(scene.relations, obj))
    relations.add((obj, rel, furn))
    if ref is not None:
        relations.add((obj, "next_to", ref))
    agents = dict(scene.agents)
    agents[actor] = replace(agents[actor], held=None)
    return replace(scene, parent=parent, relations=frozenset(relations), agents=agents)


def _reachable_object(scene: SceneGraph, action: Action, actor: int, obj: str):
    if obj not in scene.entities:
        return _fail(action, f"unknown handle {obj}")
    if scene.kind(obj) is not EntityKind.OBJECT:
        return _fail(action, f"{obj} is not an object")
    holder = scene.holder(obj)
    if holder is not None and holder != actor:
        return _fail(action, f"{obj} is held by agent {holder}")
    if scene.room_of(obj) != scene.agents[actor].location:
        return _fail(action, f"{obj} is not in {scene.agents[actor].location}")
    if scene.is_concealed(obj):
        return _fail(action, f"{obj} is not visible")
    return None


def apply_action(scene: SceneGraph, actor: int, action: Action) -> SceneGraph | ActionFailure:
    """Run one oracle skill. Failures leave ``scene`` untouched."""
    if actor not in scene.agents:
        return _fail(action, f"no agent {actor} in scene")
    tool = action.tool
    body = scene.agents[actor]
    if tool in STATE_CHANGE_TOOLS and actor != STATE_CHANGE_AGENT:
        return _fail(action, "tool unavailable to agent")
    if tool in PERCEPTION_TOOLS or tool in DIALOGUE_TOOLS:
        return _fail(action, "not a scene action")
    if tool in CONTROL_TOOLS:
        return scene

    if tool is Tool.EXPLORE:
        unvisited = [r for r in scene.rooms if r not in body.visited]
        if not unvisited:
            return _fail(action, "no unvisited rooms")
        room = unvisited[0]
        agents = dict(scene.agents)
        agents[actor] = replace(body, location=room, visited=body.visited | {room})
        return replace(scene, agents=agents)

    target = action.target
    if target is None:
        return _fail(action, "missing target")

    if tool is Tool.NAVIGATE:
        if target not in scene.entities:
            return _fail(action, f"unknown handle {target}")
        room = scene.room_of(target)
        if room is None:
            return _fail(action, f"{target} has no room")
        agents = dict(scene.agents)
        agents[actor] = replace(body, location=room, visited=body.visited | {room})
        return replace(scene, agents=agents)

    if tool is Tool.PICK:
        if body.held is not None:
            return _fail(action, f"already holding {body.held}")
        bad = _reachable_object(scene, action, actor, target)
        if bad:
            return bad
        parent = dict(scene.parent)
        del parent[target]
        agents = dict(scene.agents)
        agents[actor] = replace(body, held=target)
        return replace(
            scene, parent=parent, relations=_detach(scene.relations, target), agents=agents
        )

    if tool is Tool.PLACE:
        placed = _placement(scene, action, actor, action.args)
        if isinstance(placed, ActionFailure):
            return placed
        obj, rel, furn, ref = placed
        if body.held != obj:
            return _fail(action, f"not holding {obj}")
        return _put(scene, obj, rel, furn, ref, actor)

    if tool is Tool.REARRANGE:
        placed = _placement(scene, action, actor, action.args)
        if isinstance(placed, ActionFailure):
            return placed
        obj, rel, furn, ref = placed
        if body.held not in (None, obj):
            return _fail(action, f"already holding {body.held}")
        bad = _reachable_object(scene, action, actor, obj)
        if bad:
            return bad
        return _put(scene, obj, rel, furn, ref, actor)

    if target not in scene.entities:
        return _fail(action, f"unknown handle {target}")
    entity = scene.entities[target]

    if tool in (Tool.OPEN, Tool.CLOSE):
        if entity.kind is not EntityKind.FURNITURE:
            return _fail(action, f"{target} is not furniture")
        if not entity.articulated:
            return _fail(action, f"{target} is not articulated")
        if scene.room_of(target) != body.location:
            return _fail(action, f"{target} is not in {body.location}")
        state = "open" if tool is Tool.OPEN else "closed"
        return _set_entity(scene, replace(entity, openness=state))

    # state-change tools
    if entity.kind not in (EntityKind.OBJECT, EntityKind.FURNITURE):
        return _fail(action, f"{target} has no state")
    if body.held != target:
        if scene.room_of(target) != body.location:
            return _fail(action, f"{target} is not in {body.location}")
        if scene.is_concealed(target):
            return _fail(action, f"{target} is not visible")
        if scene.holder(target) is not None:
            return _fail(action, f"{target} is held by agent {scene.holder(target)}")
    if tool is Tool.POUR:
        source = body.held
        if source is None or source == target:
            return _fail(action, "nothing to pour from")
        filled = _set_entity(scene, _with_attr(entity, "filled", True))
        return _set_entity(filled, _with_attr(filled.entities[source], "filled", False))
    attr, value = {
        Tool.CLEAN: ("clean", True),
        Tool.FILL: ("filled", True),
        Tool.POWER_ON: ("powered_on", True),
        Tool.POWER_OFF: ("powered_on", False),
    }[tool]
    return _set_entity(scene, _with_attr(entity, attr, value))


def _with_attr(entity: Entity, name: str, value: bool) -> Entity:
    attrs = dict(entity.attributes)
    attrs[name] = value
    return replace(entity, attributes=attrs)


def _set_entity(scene: SceneGraph, entity: Entity) -> SceneGraph:
    entities = dict(scene.entities)
    entities[entity.handle] = entity
    return replace(scene, entities=entities)


# -- random scenes for property tests and smoke runs ------------------------

_ROOM_NAMES = ("kitchen", "living_room", "bedroom", "bathroom", "hallway", "office")
_FURNITURE_NAMES = ("table", "counter", "shelves", "cabinet", "chair", "fridge", "sofa")
_ARTICULATED = {"cabinet", "fridge"}
_OBJECT_NAMES = ("cup", "plate", "kettle", "lamp", "book", "toy_food", "bowl", "vase")


def random_scene(seed: int, n_rooms: int | None = None) -> SceneGraph:
    """Generate a small valid scene; same seed, same scene."""
    rng = random.Random(seed)
    n_rooms = n_rooms or rng.randint(2, 4)
    counters: dict[str, int] = {}

    def fresh(base: str) -> str:
        counters[base] = counters.get(base, -1) + 1
        return f"{base}_{counters[base]}"

    entities = [{"handle": "house_0", "kind": "house", "parent": None}]
    relations = []
    for room_base in rng.sample(_ROOM_NAMES, n_rooms):
        room = fresh(room_base)
        entities.append({"handle": room, "kind": "room", "parent": "house_0"})
        for _ in range(rng.randint(1, 3)):
            fb = rng.choice(_FURNITURE_NAMES)
            furn = fresh(fb)
            openness = rng.choice(["open", "closed"]) if fb in _ARTICULATED else "not_articulated"
            entities.append(
                {"handle": furn, "kind": "furniture", "parent": room, "attributes": {}, "openness": openness}
            )
            for _ in range(rng.randint(0, 3)):
                obj = fresh(rng.choice(_OBJECT_NAMES))
                attrs = {a: rng.random() < 0.3 for a in ATTRIBUTES}
                entities.append({"handle": obj, "kind": "object", "parent": furn, "attributes": attrs})
                rel = "inside" if fb in _ARTICULATED else "on"
                relations.append([obj, rel, furn])
    if not any(e["kind"] == "object" for e in entities):
        furn = next(e for e in entities if e["kind"] == "furniture")
        rel = "inside" if furn["openness"] != "not_articulated" else "on"
        entities.append({"handle": fresh(rng.choice(_OBJECT_NAMES)), "kind": "object", "parent": furn["handle"]})
        relations.append([entities[-1]["handle"], rel, furn["handle"]])
    return load_scene({"scene_id": f"random_{seed}", "entities": entities, "relations": relations})
