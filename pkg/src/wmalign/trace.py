"""Episode traces: append-only event logs in a canonical line-delimited form.

Line 1 is a header record; every following line is one event. The last
event is always ``terminal``. Serialization is canonical (sorted keys,
compact separators, sorted handle lists), so parse -> dump is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .dialogue import Message
from .mentions import TraceIntegrityError

TRACE_VERSION = 1


class TraceFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EventKind(str, Enum):
    ACTION = "action"
    ACTION_FAILURE = "action_failure"
    OBSERVATION = "observation"
    MESSAGE_SENT = "message_sent"
    MESSAGE_RECEIVED = "message_received"
    REPLAN = "replan"
    SNAPSHOT = "snapshot"
    TERMINAL = "terminal"


class TerminalStatus(str, Enum):
    DONE = "done"
    BUDGET_EXHAUSTED = "budget_exhausted"
    STALLED = "stalled"


@dataclass(frozen=True)
class Event:
    t: int
    kind: EventKind
    agent: int | None = None
    round: int = 0
    payload: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "record": "event",
            "t": self.t,
            "round": self.round,
            "agent": self.agent,
            "kind": self.kind.value,
            "payload": self.payload,
        }


@dataclass(frozen=True)
class Snapshot:
    t: int
    observed: tuple[frozenset[str], frozenset[str]]
    believed: tuple[frozenset[str], frozenset[str]]
    position: int = 0  # index of the snapshot event in the trace
    believed_grounded: tuple[frozenset[str], frozenset[str]] | None = None


@dataclass(frozen=True)
class MessageContext:
    """A sent message with both agents' observation sets in effect when it was sent."""

    message: Message
    sender_observed: frozenset[str]
    receiver_observed: frozenset[str]


def dumps_record(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


@dataclass
class EpisodeTrace:
    episode_id: str
    header: dict[str, Any] = field(default_factory=dict)
    events: list[Event] = field(default_factory=list)

    # -- building ----------------------------------------------------------

    def emit(
        self, t: int, kind: EventKind, agent: int | None = None, round: int = 0, payload: Mapping[str, Any] | None = None
    ) -> Event:
        if self.events and t < self.events[-1].t:
            raise TraceIntegrityError("event steps must be non-decreasing")
        if self.is_terminal:
            raise TraceIntegrityError("trace is already terminal")
        ev = Event(t, EventKind(kind), agent, round, _normalize(payload or {}))
        self.events.append(ev)
        return ev

    # -- queries -----------------------------------------------------------

    @property
    def is_terminal(self) -> bool:
        return bool(self.events) and self.events[-1].kind is EventKind.TERMINAL

    @property
    def status(self) -> TerminalStatus | None:
        if not self.is_terminal:
            return None
        return TerminalStatus(self.events[-1].payload["status"])

    @property
    def condition(self) -> str:
        return str(self.header.get("config", {}).get("condition", ""))

    @property
    def architecture(self) -> str:
        return str(self.header.get("config", {}).get("architecture", "silent"))

    def of_kind(self, *kinds: EventKind) -> Iterator[Event]:
        return (e for e in self.events if e.kind in kinds)

    def messages(self) -> list[Message]:
        return [Message.from_dict(e.payload) for e in self.of_kind(EventKind.MESSAGE_SENT)]

    def snapshots(self) -> list[Snapshot]:
        out = []
        for i, e in enumerate(self.events):
            if e.kind is EventKind.SNAPSHOT:
                out.append(snapshot_from_event(e, i))
        return out

    def message_contexts(self) -> list[MessageContext]:
        """Pair each sent message with the latest snapshot preceding it."""
        out = []
        last: Snapshot | None = None
        for i, e in enumerate(self.events):
            if e.kind is EventKind.SNAPSHOT:
                last = snapshot_from_event(e, i)
            elif e.kind is EventKind.MESSAGE_SENT:
                msg = Message.from_dict(e.payload)
                if last is None:
                    raise TraceIntegrityError(f"no snapshot before message {msg.index} at t={msg.t}")
                out.append(
                    MessageContext(msg, last.observed[msg.sender], last.observed[msg.receiver])
                )
        return out

    # -- serialization -----------------------------------------------------

    def header_record(self) -> dict[str, Any]:
        rec = {"record": "header", "trace_version": TRACE_VERSION, "episode_id": self.episode_id}
        rec.update({k: v for k, v in self.header.items() if k not in rec})
        return rec

    def lines(self) -> Iterator[str]:
        yield dumps_record(self.header_record())
        for e in self.events:
            yield dumps_record(e.to_dict())

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def snapshot_from_event(e: Event, position: int = 0) -> Snapshot:
    agents = {int(a["agent"]): a for a in e.payload["agents"]}
    if set(agents) != {0, 1}:
        raise TraceIntegrityError(f"snapshot at t={e.t} lacks both agents")
    return Snapshot(
        t=e.t,
        observed=(frozenset(agents[0]["observed"]), frozenset(agents[1]["observed"])),
        believed=(frozenset(agents[0]["believed"]), frozenset(agents[1]["believed"])),
        position=position,
    )


def _normalize(value: Any) -> Any:
    """Canonical JSON-able form: sets become sorted lists, enums their values."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (set, frozenset)):
        return sorted(_normalize(v) for v in value)
    if isinstance(value, Mapping):
        return {str(k): _normalize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_normalize(v) for v in value]
    return value


def loads(text: str) -> EpisodeTrace:
    return parse_lines(text.splitlines())


def parse_lines(lines: Iterable[str]) -> EpisodeTrace:
    trace: EpisodeTrace | None = None
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise TraceFormatError("record is not an object", lineno)
        if trace is None:
            if rec.get("record") != "header":
                raise TraceFormatError("first record must be the header", lineno)
            if rec.get("trace_version") != TRACE_VERSION:
                raise TraceFormatError(f"unsupported trace_version {rec.get('trace_version')!r}", lineno)
            header = {k: v for k, v in rec.items() if k not in ("record", "trace_version", "episode_id")}
            trace = EpisodeTrace(str(rec.get("episode_id")), header)
            continue
        if rec.get("record") != "event":
            raise TraceFormatError(f"unexpected record {rec.get('record')!r}", lineno)
        try:
            kind = EventKind(rec["kind"])
            t = int(rec["t"])
            agent = rec.get("agent")
            ev = Event(t, kind, None if agent is None else int(agent), int(rec.get("round", 0)), rec.get("payload", {}))
        except (KeyError, ValueError, TypeError) as exc:
            raise TraceFormatError(f"malformed event ({exc})", lineno) from None
        if trace.events and t < trace.events[-1].t:
            raise TraceFormatError("step numbers decrease", lineno)
        if trace.is_terminal:
            raise TraceFormatError("event after terminal", lineno)
        trace.events.append(ev)
    if trace is None:
        raise TraceFormatError("empty trace")
    return trace


def read_trace(path: str | Path) -> EpisodeTrace:
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh)
