"""Deterministic two-agent embodied coordination simulator with a dialogue
channel, and the alignment metrics computed over its traces."""

from __future__ import annotations

from .dialogue import Architecture, IntentTag, Message, MessageBuffer
from .evaluation import EvalSpec, evaluate, load_eval_spec, paired_deltas
from .metrics import (
    alignment_gap,
    belief_convergence,
    bsm,
    conflict_rate,
    information_novelty,
    jaccard,
    observation_convergence,
    trajectories,
)
from .policies import builtin_policies, make_policy
from .scene import SceneGraph, load_scene, load_scene_file
from .simulator import SimConfig, run_episode
from .trace import EpisodeTrace, loads, read_trace

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "EpisodeTrace",
    "EvalSpec",
    "IntentTag",
    "Message",
    "MessageBuffer",
    "SceneGraph",
    "SimConfig",
    "alignment_gap",
    "belief_convergence",
    "bsm",
    "builtin_policies",
    "conflict_rate",
    "evaluate",
    "information_novelty",
    "jaccard",
    "load_eval_spec",
    "load_scene",
    "load_scene_file",
    "loads",
    "make_policy",
    "observation_convergence",
    "paired_deltas",
    "read_trace",
    "run_episode",
    "trajectories",
]
