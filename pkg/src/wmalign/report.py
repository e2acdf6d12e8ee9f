"""Report bundles: flat, line-delimited rows assembled from episode traces.

Every row is a JSON object with a ``table`` field. Row tables:

- ``bundle``: one header row (version, options)
- ``episode``: per-episode outcome and metric values
- ``aggregate``: per-condition means, recomputable from ``episode`` rows
- ``trajectory``: one alignment point per snapshot (absolute step ``t``)
- ``message``: per-message mention classes and information novelty
- ``bsm``: pooled and per-intent BSM per condition, global and episode-mean pooling
- ``classification``: per-condition mention class totals
- ``deltas``: paired deltas for every pair of conditions in the bundle
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from statistics import fmean
from typing import Any, Iterable, Mapping

from . import metrics
from .evaluation import EpisodeOutcome, EvalSpec, evaluate, load_eval_spec, paired_deltas
from .mentions import ClassCounts, classify_trace
from .trace import EpisodeTrace, EventKind, dumps_record

BUNDLE_VERSION = 1
TABLES = ("bundle", "episode", "aggregate", "trajectory", "message", "bsm", "classification", "deltas")


class BundleError(ValueError):
    pass


def _num(x: Fraction | int | float | None) -> float | None:
    return None if x is None else float(x)


def _condition(trace: EpisodeTrace) -> str:
    return trace.condition or "unnamed"


@dataclass
class ReportBundle:
    rows: list[dict[str, Any]] = field(default_factory=list)

    def table(self, name: str) -> list[dict[str, Any]]:
        return [r for r in self.rows if r["table"] == name]

    @property
    def conditions(self) -> list[str]:
        return sorted({r["condition"] for r in self.table("episode")})

    def outcomes(self, condition: str | None = None) -> list[EpisodeOutcome]:
        out = []
        for r in self.table("episode"):
            if condition is not None and r["condition"] != condition:
                continue
            out.append(EpisodeOutcome(r["episode_id"], r["sr"], r["pc"], r["r_conf"], r["status"]))
        return out

    def dumps(self) -> str:
        return "".join(dumps_record(r) + "\n" for r in self.rows)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def load_bundle(path: str | Path) -> ReportBundle:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise BundleError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict) or row.get("table") not in TABLES:
                raise BundleError(f"{path}: line {lineno}: not a bundle row")
            rows.append(row)
    if not rows or rows[0]["table"] != "bundle":
        raise BundleError(f"{path}: missing bundle header row")
    if rows[0].get("bundle_version") != BUNDLE_VERSION:
        raise BundleError(f"{path}: unsupported bundle_version {rows[0].get('bundle_version')!r}")
    return ReportBundle(rows)


# -- analysis ---------------------------------------------------------------------


def find_spec(specs_dir: str | Path | None, trace: EpisodeTrace) -> EvalSpec | None:
    """``<specs_dir>/<episode_id>.json`` overrides the evaluation spec embedded in the trace."""
    if specs_dir is None:
        return None
    path = Path(specs_dir) / f"{trace.episode_id}.json"
    return load_eval_spec(path) if path.exists() else None


def episode_row(trace: EpisodeTrace, spec: EvalSpec | None = None, grounded: bool = False) -> dict[str, Any]:
    result = evaluate(trace, spec)
    conflict = metrics.conflict_rate(trace)
    points = metrics.trajectories(trace)
    end = points[-1] if points else None
    b = metrics.bsm(trace)
    row = {
        "table": "episode",
        "condition": _condition(trace),
        "architecture": trace.architecture,
        "episode_id": trace.episode_id,
        "status": trace.status.value if trace.status else None,
        "terminated": trace.status is not None and trace.status.value != "stalled",
        "sr": result.sr,
        "pc": float(result.pc),
        "r_conf": _num(conflict.rate),
        "joint_rounds": conflict.joint_rounds,
        "conflicts": conflict.conflicts,
        "turns": sum(1 for _ in trace.of_kind(EventKind.REPLAN)),
        "steps": trace.events[-1].t if trace.events else 0,
        "comm_steps": metrics.communication_steps(trace),
        "messages": len(trace.messages()),
        "oc_end": _num(end.oc if end else None),
        "bc_end": _num(end.bc if end else None),
        "delta_align_end": _num(end.delta_align if end else None),
        "bsm": _num(b.pooled),
    }
    if grounded:
        row["delta_align_grounded_end"] = _num(end.delta_align_grounded if end else None)
    return row


def _mean_defined(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return fmean(vals) if vals else None


AGGREGATED = ("sr", "pc", "r_conf", "turns", "steps", "comm_steps", "messages", "delta_align_end")


def aggregate_rows(episode_rows: list[dict[str, Any]], grounded: bool = False) -> list[dict[str, Any]]:
    cols = AGGREGATED + (("delta_align_grounded_end",) if grounded else ())
    by_cond: dict[str, list[dict]] = defaultdict(list)
    for r in episode_rows:
        by_cond[r["condition"]].append(r)
    out = []
    for cond, rows in sorted(by_cond.items()):
        agg = {"table": "aggregate", "condition": cond, "n": len(rows),
               "n_terminated": sum(1 for r in rows if r["terminated"])}
        for c in cols:
            agg[c] = _mean_defined(r.get(c) for r in rows)
        out.append(agg)
    return out


def analyze(
    traces: Iterable[EpisodeTrace], specs_dir: str | Path | None = None, grounded: bool = False
) -> ReportBundle:
    traces = sorted(traces, key=lambda t: (_condition(t), t.episode_id))
    rows: list[dict[str, Any]] = [{"table": "bundle", "bundle_version": BUNDLE_VERSION, "grounded": grounded}]
    episodes, detail = [], []
    by_cond: dict[str, list[EpisodeTrace]] = defaultdict(list)
    seen = set()
    for tr in traces:
        key = (_condition(tr), tr.episode_id)
        if key in seen:
            raise BundleError(f"episode {tr.episode_id} appears twice in condition {key[0]}")
        seen.add(key)
        by_cond[key[0]].append(tr)
        episodes.append(episode_row(tr, find_spec(specs_dir, tr), grounded))
        for p in metrics.trajectories(tr):
            point = {"table": "trajectory", "condition": key[0], "episode_id": tr.episode_id, "t": p.t,
                     "oc": float(p.oc), "bc": float(p.bc), "delta_align": float(p.delta_align)}
            if grounded:
                point["delta_align_grounded"] = float(p.delta_align_grounded)
            detail.append(point)
        for m in metrics.message_table(tr):
            detail.append({"table": "message", "condition": key[0], "episode_id": tr.episode_id,
                           "index": m.index, "t": m.t, "sender": m.sender, "intent": m.intent,
                           "mentions": m.mentions, "both": m.both, "only_sender": m.only_sender,
                           "only_receiver": m.only_receiver, "neither": m.neither,
                           "novelty": _num(m.novelty)})
    rows += episodes
    rows += aggregate_rows(episodes, grounded)
    rows += detail
    for cond, group in sorted(by_cond.items()):
        rows += bsm_rows(cond, group)
        counts = sum((classify_trace(t) for t in group), ClassCounts())
        rows.append({"table": "classification", "condition": cond, **counts.as_dict()})
    bundle = ReportBundle(rows)
    for a, b in combinations(bundle.conditions, 2):
        rows.append(deltas_row(a, b, bundle.outcomes(a), bundle.outcomes(b)))
    return bundle


def bsm_rows(condition: str, traces: list[EpisodeTrace]) -> list[dict[str, Any]]:
    rows = []
    report = metrics.bsm(traces)
    total_mentions = sum(report.mention_counts.values())
    total_messages = sum(report.message_counts.values())
    rows.append({"table": "bsm", "condition": condition, "pooling": "global", "intent": "ALL",
                 "value": _num(report.pooled), "mentions": total_mentions, "messages": total_messages})
    for intent, value in report.per_intent.items():
        rows.append({"table": "bsm", "condition": condition, "pooling": "global", "intent": intent,
                     "value": _num(value), "mentions": report.mention_counts[intent],
                     "messages": report.message_counts[intent]})
    rows.append({"table": "bsm", "condition": condition, "pooling": "episode_mean", "intent": "ALL",
                 "value": _num(metrics.bsm_episode_mean(traces)), "mentions": total_mentions,
                 "messages": total_messages})
    return rows


def deltas_row(a: str, b: str, out_a, out_b) -> dict[str, Any]:
    d = paired_deltas(out_a, out_b)
    return {"table": "deltas", "a": a, "b": b, "n": d.n, "episode_ids": list(d.episode_ids),
            "delta_sr": d.delta_sr, "delta_pc": d.delta_pc, "delta_r_conf": d.delta_r_conf}


# -- audit ---------------------------------------------------------------------------


def _close(x: float | None, y: float | None) -> bool:
    if x is None or y is None:
        return x is y
    return math.isclose(x, y, rel_tol=1e-12, abs_tol=1e-12)


def audit(bundle: ReportBundle, traces: Iterable[EpisodeTrace] = ()) -> list[str]:
    """Recompute every aggregate from the episode rows; also check traces' stored belief sets."""
    problems = []
    header = bundle.rows[0] if bundle.rows else {}
    grounded = bool(header.get("grounded"))
    expected = {r["condition"]: r for r in aggregate_rows(bundle.table("episode"), grounded)}
    stored = {r["condition"]: r for r in bundle.table("aggregate")}
    if set(expected) != set(stored):
        problems.append(f"aggregate conditions {sorted(stored)} != episode conditions {sorted(expected)}")
    for cond in sorted(set(expected) & set(stored)):
        for key, value in expected[cond].items():
            if key == "table":
                continue
            got = stored[cond].get(key)
            same = _close(value, got) if isinstance(value, float) or value is None else value == got
            if not same:
                problems.append(f"aggregate {cond}.{key}: stored {got!r}, recomputed {value!r}")
    for r in bundle.table("deltas"):
        again = deltas_row(r["a"], r["b"], bundle.outcomes(r["a"]), bundle.outcomes(r["b"]))
        for key in ("n", "episode_ids"):
            if again[key] != r[key]:
                problems.append(f"deltas {r['a']} vs {r['b']}: {key} disagrees with episode rows")
        for key in ("delta_sr", "delta_pc", "delta_r_conf"):
            if not _close(again[key], r[key]):
                problems.append(f"deltas {r['a']} vs {r['b']}: {key} disagrees with episode rows")
    for r in bundle.table("message"):
        parts = r["both"] + r["only_sender"] + r["only_receiver"] + r["neither"]
        if parts != r["mentions"]:
            problems.append(f"message {r['episode_id']}#{r['index']}: mention classes do not partition")
    for tr in traces:
        problems += [f"{tr.episode_id}: {p}" for p in metrics.belief_inconsistencies(tr)]
    return problems


# -- comparison and rendering -----------------------------------------------------------


def single_condition(bundle: ReportBundle, label: str) -> str:
    conds = bundle.conditions
    if len(conds) != 1:
        raise BundleError(f"bundle {label} holds {len(conds)} conditions; compare needs exactly one")
    return conds[0]


def compare(a: ReportBundle, b: ReportBundle) -> dict[str, Any]:
    ca, cb = single_condition(a, "A"), single_condition(b, "B")
    return deltas_row(ca, cb, a.outcomes(), b.outcomes())


def _fmt(v: Any) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return str(v)


def format_table(rows: list[Mapping[str, Any]]) -> str:
    """Aligned plain-text table over the union of the rows' keys (minus ``table``)."""
    if not rows:
        return "(no rows)\n"
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k != "table" and k not in cols]
    cells = [[_fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(line[i]) for line in cells)) for i, c in enumerate(cols)]
    out = ["  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip()]
    out.append("  ".join("-" * w for w in widths))
    out += ["  ".join(v.ljust(w) for v, w in zip(line, widths)).rstrip() for line in cells]
    return "\n".join(out) + "\n"


def render(bundle: ReportBundle, fmt: str = "table") -> str:
    if fmt == "rows":
        return bundle.dumps()
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    parts = []
    for name in TABLES[1:]:
        rows = bundle.table(name)
        if rows:
            parts.append(f"== {name} ==\n" + format_table(rows))
    return "\n".join(parts) if parts else "(empty bundle)\n"
