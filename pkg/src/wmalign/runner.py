"""Condition files and the batch runner.

A condition file is JSON::

    {
      "condition_version": 1,
      "name": "sc_scripted",
      "architecture": "SC",
      "policies": ["hallucinating_messenger", {"name": "silent_explorer"}],
      "seed_base": 0,
      "budget": 200,
      "episodes": [
        {"id": "ep0", "scene": "../scenes/two_room.json", "task": "../tasks/two_room.json",
         "spawn": ["kitchen_1", "living_room_0"]},
        {"id": "r1", "random": 17}
      ]
    }

Relative paths resolve against the condition file. A ``random`` episode
builds its scene and task from the given seed and spawns the agents in the
first two rooms.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .dialogue import Architecture
from .evaluation import EvalSpec, load_eval_spec, random_task
from .policies import make_policy
from .scene import SceneGraph, load_scene_file, random_scene
from .simulator import SimConfig, run_episode
from .trace import EpisodeTrace

CONDITION_VERSION = 1


class ConditionError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeSpec:
    episode_id: str
    scene: str | None = None
    task: str | None = None
    spawn: tuple[str, str] | None = None
    random_seed: int | None = None

    def load(self) -> tuple[SceneGraph, EvalSpec, tuple[str, str]]:
        if self.random_seed is not None:
            scene = random_scene(self.random_seed)
            task = random_task(scene, self.random_seed)
        else:
            scene = load_scene_file(self.scene)
            task = load_eval_spec(self.task)
        spawn = self.spawn or tuple(scene.rooms[:2])
        return scene, task, spawn


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    architecture: Architecture
    policies: tuple[Any, Any]
    episodes: tuple[EpisodeSpec, ...]
    seed_base: int = 0
    budget: int = 10_000
    max_free_calls: int = 8
    base_dir: str = "."

    def __post_init__(self):
        ids = [e.episode_id for e in self.episodes]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ConditionError(f"condition {self.name}: duplicate episode ids {', '.join(dup)}")
        if len(self.policies) != 2:
            raise ConditionError(f"condition {self.name}: 'policies' must list exactly two policies")

    @classmethod
    def from_document(cls, doc: Mapping[str, Any], base_dir: str | Path = ".") -> "ConditionSpec":
        base = Path(base_dir)
        version = doc.get("condition_version", CONDITION_VERSION)
        if version != CONDITION_VERSION:
            raise ConditionError(f"unsupported condition_version {version!r}")
        for key in ("name", "architecture", "policies", "episodes"):
            if key not in doc:
                raise ConditionError(f"condition file: missing '{key}'")
        try:
            arch = Architecture(doc["architecture"])
        except ValueError:
            raise ConditionError(f"condition file: unknown architecture {doc['architecture']!r}") from None
        episodes = []
        for k, ep in enumerate(doc["episodes"]):
            if "id" not in ep:
                raise ConditionError(f"condition file: episodes[{k}] has no 'id'")
            if "random" in ep:
                episodes.append(EpisodeSpec(str(ep["id"]), random_seed=int(ep["random"]),
                                            spawn=tuple(ep["spawn"]) if "spawn" in ep else None))
                continue
            for key in ("scene", "task"):
                if key not in ep:
                    raise ConditionError(f"condition file: episodes[{k}] ({ep['id']}) has no '{key}'")
            episodes.append(
                EpisodeSpec(
                    str(ep["id"]),
                    scene=str((base / ep["scene"]).resolve()),
                    task=str((base / ep["task"]).resolve()),
                    spawn=tuple(ep["spawn"]) if "spawn" in ep else None,
                )
            )
        return cls(
            name=str(doc["name"]),
            architecture=arch,
            policies=tuple(doc["policies"]),
            episodes=tuple(episodes),
            seed_base=int(doc.get("seed_base", 0)),
            budget=int(doc.get("budget", 10_000)),
            max_free_calls=int(doc.get("max_free_calls", 8)),
            base_dir=str(base),
        )


def load_condition(path: str | Path) -> ConditionSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConditionError(f"{path}: invalid JSON at line {exc.lineno} ({exc.msg})") from None
    return ConditionSpec.from_document(doc, path.parent)


def trace_filename(condition: str, episode_id: str) -> str:
    return f"{condition}__{episode_id}.jsonl"


@dataclass(frozen=True)
class _Job:
    condition: ConditionSpec
    index: int
    seed: int


def _run_job(job: _Job) -> EpisodeTrace:
    cond = job.condition
    ep = cond.episodes[job.index]
    scene, task, spawn = ep.load()
    config = SimConfig(
        architecture=cond.architecture,
        spawn_rooms=spawn,
        budget=cond.budget,
        seed=job.seed,
        max_free_calls=cond.max_free_calls,
        condition=cond.name,
    )
    policies = [make_policy(p) for p in cond.policies]
    try:
        return run_episode(scene, config, policies, task, ep.episode_id)
    finally:
        for p in policies:
            close = getattr(p, "close", None)
            if callable(close):
                close()


@dataclass
class RunResult:
    traces: list[EpisodeTrace] = field(default_factory=list)
    paths: list[Path] = field(default_factory=list)

    @property
    def all_terminal(self) -> bool:
        return all(t.is_terminal for t in self.traces)


def run_condition(
    condition: ConditionSpec, out_dir: str | Path | None = None, workers: int = 1, seed: int | None = None
) -> RunResult:
    """Run every episode of a condition; episode ``k`` gets seed ``base + k``.

    ``seed`` overrides the condition's ``seed_base``. Results come back in
    episode order whatever the worker count.
    """
    base = condition.seed_base if seed is None else seed
    jobs = [_Job(condition, k, base + k) for k in range(len(condition.episodes))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_job, jobs))
    else:
        traces = [_run_job(j) for j in jobs]
    result = RunResult(traces)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for tr in traces:
            result.paths.append(tr.write(out / trace_filename(condition.name, tr.episode_id)))
    return result
