"""Task evaluation (propositions, ``before`` constraints, PC/SR) and paired deltas."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import fmean
from typing import Any, Iterable, Mapping, Sequence

from .scene import EntityKind, load_scene
from .trace import EpisodeTrace, EventKind, TerminalStatus

SPATIAL = ("is_on", "is_inside", "is_next_to")
STATE = ("is_clean", "is_filled", "is_powered_on")


class EvalSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Proposition:
    predicate: str
    args: tuple[str, ...]

    def __post_init__(self):
        if self.predicate in SPATIAL:
            arity = 2
        elif self.predicate in STATE:
            arity = 1
        else:
            raise EvalSpecError(f"unknown predicate {self.predicate!r}")
        if len(self.args) != arity:
            raise EvalSpecError(f"{self.predicate} takes {arity} argument(s), got {len(self.args)}")

    def holds(self, facts: frozenset | set) -> bool:
        if (self.predicate, *self.args) in facts:
            return True
        if self.predicate == "is_next_to":
            a, b = self.args
            return ("is_next_to", b, a) in facts
        return False

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(self.args)})"


@dataclass(frozen=True)
class Constraint:
    kind: str
    args: tuple[int, int]


@dataclass(frozen=True)
class EvalSpec:
    propositions: tuple[Proposition, ...]
    constraints: tuple[Constraint, ...] = ()
    instruction: str = ""

    def __post_init__(self):
        if not self.propositions:
            raise EvalSpecError("an evaluation spec needs at least one proposition")
        n = len(self.propositions)
        for c in self.constraints:
            if c.kind != "before":
                raise EvalSpecError(f"unsupported constraint {c.kind!r}")
            i, j = c.args
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise EvalSpecError(f"constraint before({i}, {j}) does not index two distinct propositions")

    @property
    def handles(self) -> frozenset[str]:
        return frozenset(h for p in self.propositions for h in p.args)

    def prerequisites(self, j: int) -> list[int]:
        return [c.args[0] for c in self.constraints if c.args[1] == j]

    def to_document(self) -> dict[str, Any]:
        return {
            "instruction": self.instruction,
            "propositions": [{"predicate": p.predicate, "args": list(p.args)} for p in self.propositions],
            "constraints": [{"kind": c.kind, "args": list(c.args)} for c in self.constraints],
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "EvalSpec":
        try:
            props = tuple(Proposition(p["predicate"], tuple(p["args"])) for p in doc["propositions"])
            cons = tuple(Constraint(c["kind"], (int(c["args"][0]), int(c["args"][1]))) for c in doc.get("constraints", ()))
        except (KeyError, TypeError, IndexError) as exc:
            raise EvalSpecError(f"malformed evaluation spec: {exc}") from None
        return cls(props, cons, str(doc.get("instruction", "")))


def load_eval_spec(path) -> EvalSpec:
    with open(path, encoding="utf-8") as fh:
        return EvalSpec.from_document(json.load(fh))


@dataclass(frozen=True)
class EvalResult:
    tau: tuple[int | None, ...]
    complete: tuple[bool, ...]
    pc: Fraction
    sr: int

    @property
    def n(self) -> int:
        return len(self.tau)


def score(spec: EvalSpec, tau: Sequence[int | None]) -> EvalResult:
    """Completion bits, PC and SR from first-satisfaction times.

    ``before(i, j)`` gates only ``j``: it completes iff ``tau_i`` exists and
    ``tau_i <= tau_j``.
    """
    complete = []
    for j, tj in enumerate(tau):
        ok = tj is not None
        for i in spec.prerequisites(j):
            ti = tau[i]
            if ti is None or (tj is not None and ti > tj):
                ok = False
        complete.append(ok)
    pc = Fraction(sum(complete), len(complete))
    return EvalResult(tuple(tau), tuple(complete), pc, int(pc == 1))


class FirstSatisfaction:
    """Incremental tracker of ``tau_i`` over a stream of world-state facts."""

    def __init__(self, spec: EvalSpec):
        self.spec = spec
        self.tau: list[int | None] = [None] * len(spec.propositions)

    def observe(self, t: int, facts: frozenset | set) -> None:
        for i, p in enumerate(self.spec.propositions):
            if self.tau[i] is None and p.holds(facts):
                self.tau[i] = t

    def result(self) -> EvalResult:
        return score(self.spec, self.tau)


def check_spec_against_scene(spec: EvalSpec, handles: frozenset[str]) -> None:
    missing = sorted(spec.handles - handles)
    if missing:
        raise EvalSpecError(f"evaluation spec references handles absent from the scene: {', '.join(missing)}")


def world_states(trace: EpisodeTrace) -> Iterable[tuple[int, frozenset]]:
    """Yield ``(t, facts)`` for the initial scene and after every state change."""
    scene_doc = trace.header.get("scene")
    if scene_doc is None:
        raise EvalSpecError("trace header carries no scene")
    facts = set(load_scene(scene_doc).facts())
    yield 0, frozenset(facts)
    for e in trace.of_kind(EventKind.ACTION):
        added = e.payload.get("facts_added", ())
        removed = e.payload.get("facts_removed", ())
        if not added and not removed:
            continue
        facts.difference_update(tuple(f) for f in removed)
        facts.update(tuple(f) for f in added)
        yield e.t, frozenset(facts)


def evaluate(trace: EpisodeTrace, spec: EvalSpec | None = None) -> EvalResult:
    if spec is None:
        if "eval" not in trace.header:
            raise EvalSpecError("no evaluation spec given and none embedded in the trace")
        spec = EvalSpec.from_document(trace.header["eval"])
    scene = load_scene(trace.header["scene"])
    check_spec_against_scene(spec, scene.handles)
    tracker = FirstSatisfaction(spec)
    for t, facts in world_states(trace):
        tracker.observe(t, facts)
    return tracker.result()


# -- paired condition deltas -------------------------------------------------


@dataclass(frozen=True)
class EpisodeOutcome:
    episode_id: str
    sr: float
    pc: float
    r_conf: float | None
    status: str = TerminalStatus.DONE.value

    @property
    def terminated(self) -> bool:
        return self.status in (TerminalStatus.DONE.value, TerminalStatus.BUDGET_EXHAUSTED.value)


@dataclass(frozen=True)
class PairedDeltas:
    delta_sr: float | None
    delta_pc: float | None
    delta_r_conf: float | None
    n: int
    episode_ids: tuple[str, ...] = field(default=())

    @property
    def defined(self) -> bool:
        return self.n > 0


def _mean(values: list[float]) -> float | None:
    return fmean(values) if values else None


def paired_deltas(a: Iterable[EpisodeOutcome], b: Iterable[EpisodeOutcome]) -> PairedDeltas:
    """Mean(A) - mean(B) over episode IDs that terminated under both conditions."""
    a_by = {o.episode_id: o for o in a if o.terminated}
    b_by = {o.episode_id: o for o in b if o.terminated}
    ids = tuple(sorted(a_by.keys() & b_by.keys()))
    if not ids:
        return PairedDeltas(None, None, None, 0, ())
    d_sr = fmean(a_by[i].sr for i in ids) - fmean(b_by[i].sr for i in ids)
    d_pc = fmean(a_by[i].pc for i in ids) - fmean(b_by[i].pc for i in ids)
    conf_ids = [i for i in ids if a_by[i].r_conf is not None and b_by[i].r_conf is not None]
    ma = _mean([a_by[i].r_conf for i in conf_ids])
    mb = _mean([b_by[i].r_conf for i in conf_ids])
    d_conf = None if ma is None or mb is None else ma - mb
    return PairedDeltas(d_sr, d_pc, d_conf, len(ids), ids)


def random_task(scene, seed: int, n: int = 2) -> EvalSpec:
    """A small feasible-looking task over a scene's objects: spatial moves plus at most one state change."""
    rng = random.Random(seed)
    objects = sorted(scene.of_kind(EntityKind.OBJECT))
    furniture = sorted(scene.of_kind(EntityKind.FURNITURE))
    if not objects or not furniture:
        raise EvalSpecError(f"scene {scene.scene_id} has no objects to build a task from")
    props = []
    for obj in rng.sample(objects, min(n, len(objects))):
        if rng.random() < 0.3 and len(props) == 0:
            props.append(Proposition("is_clean", (obj,)))
        else:
            props.append(Proposition("is_on", (obj, rng.choice(furniture))))
    cons = (Constraint("before", (0, 1)),) if len(props) > 1 and rng.random() < 0.5 else ()
    return EvalSpec(tuple(props), cons, "random task")
