"""Alignment and dialogue diagnostics over episode traces.

Set ratios are returned as :class:`fractions.Fraction` so that identities
such as ``BC == OC`` on silent traces hold exactly; convert with ``float``
for reporting.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Collection, Iterable

from .dialogue import IntentTag, Message
from .mentions import TraceIntegrityError
from .scene import PERCEPTION_TOOLS, Tool
from .trace import EpisodeTrace, EventKind, Snapshot, snapshot_from_event

# Actions that are not effort on the world never count as conflicting.
NON_EFFORT_TOOLS = frozenset(
    {Tool.WAIT.value, Tool.DONE.value, Tool.SEND_MESSAGE.value, Tool.READ_MESSAGES.value}
    | {t.value for t in PERCEPTION_TOOLS}
)


def jaccard(a: Collection[str], b: Collection[str]) -> Fraction:
    """|A n B| / |A u B|; two empty sets agree perfectly (1)."""
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return Fraction(1)
    return Fraction(len(a & b), len(union))


def observation_convergence(snapshot: Snapshot) -> Fraction:
    return jaccard(*snapshot.observed)


def belief_convergence(snapshot: Snapshot) -> Fraction:
    return jaccard(*snapshot.believed)


def alignment_gap(snapshot: Snapshot, grounded: bool = False) -> Fraction:
    """BC - OC. The grounded variant needs ``snapshot.believed_grounded`` (see :func:`aligned_snapshots`)."""
    if grounded:
        if snapshot.believed_grounded is None:
            raise ValueError("snapshot carries no grounded belief sets; use aligned_snapshots()")
        bc = jaccard(*snapshot.believed_grounded)
    else:
        bc = belief_convergence(snapshot)
    return bc - observation_convergence(snapshot)


def aligned_snapshots(trace: EpisodeTrace) -> list[Snapshot]:
    """Snapshots with grounded belief sets attached.

    Grounded beliefs re-run the belief update with each received message's
    mentions restricted to the union of sender and receiver observations at
    send time.
    """
    out: list[Snapshot] = []
    received: list[set[str]] = [set(), set()]
    allowed: dict[int, tuple[Message, frozenset[str]]] = {}
    last: Snapshot | None = None
    for i, e in enumerate(trace.events):
        if e.kind is EventKind.SNAPSHOT:
            last = snapshot_from_event(e, i)
            grounded = (last.observed[0] | received[0], last.observed[1] | received[1])
            out.append(replace(last, believed_grounded=grounded))
        elif e.kind is EventKind.MESSAGE_SENT:
            msg = Message.from_dict(e.payload)
            if last is None:
                raise TraceIntegrityError(f"no snapshot before message {msg.index}")
            allowed[msg.index] = (msg, last.observed[0] | last.observed[1])
        elif e.kind is EventKind.MESSAGE_RECEIVED:
            idx = int(e.payload["index"])
            if idx not in allowed:
                raise TraceIntegrityError(f"message {idx} received before it was sent")
            msg, ok = allowed[idx]
            received[e.agent].update(h for h in msg.mentions if h in ok)
    return out


def belief_inconsistencies(trace: EpisodeTrace) -> list[str]:
    """Snapshots whose stored belief sets differ from observed sets plus received mentions."""
    problems = []
    received: list[set[str]] = [set(), set()]
    mentions: dict[int, tuple[str, ...]] = {}
    for e in trace.events:
        if e.kind is EventKind.MESSAGE_SENT:
            mentions[int(e.payload["index"])] = tuple(e.payload.get("mentions", ()))
        elif e.kind is EventKind.MESSAGE_RECEIVED:
            received[e.agent].update(mentions.get(int(e.payload["index"]), ()))
        elif e.kind is EventKind.SNAPSHOT:
            snap = snapshot_from_event(e)
            for k in (0, 1):
                if snap.believed[k] != snap.observed[k] | received[k]:
                    problems.append(f"t={e.t} agent {k}: belief set disagrees with observations + messages")
    return problems


@dataclass(frozen=True)
class AlignmentPoint:
    t: int
    oc: Fraction
    bc: Fraction
    delta_align: Fraction
    delta_align_grounded: Fraction


def trajectories(trace: EpisodeTrace) -> list[AlignmentPoint]:
    points = []
    for snap in aligned_snapshots(trace):
        oc = observation_convergence(snap)
        bc = belief_convergence(snap)
        points.append(AlignmentPoint(snap.t, oc, bc, bc - oc, alignment_gap(snap, grounded=True)))
    return points


def information_novelty(
    message: Message, sender_observed: Collection[str], receiver_observed: Collection[str]
) -> Fraction | None:
    """Share of mentions the sender has observed and the receiver has not; None without mentions."""
    mu = set(message.mentions)
    if not mu:
        return None
    novel = set(sender_observed) - set(receiver_observed)
    return Fraction(len(mu & novel), len(mu))


@dataclass(frozen=True)
class MessageRow:
    index: int
    t: int
    sender: int
    intent: str
    mentions: int
    both: int
    only_sender: int
    only_receiver: int
    neither: int
    novelty: Fraction | None


def message_table(trace: EpisodeTrace) -> list[MessageRow]:
    rows = []
    for ctx in trace.message_contexts():
        m = ctx.message
        vs, vr = ctx.sender_observed, ctx.receiver_observed
        mu = set(m.mentions)
        rows.append(
            MessageRow(
                index=m.index,
                t=m.t,
                sender=m.sender,
                intent=m.intent.value,
                mentions=len(mu),
                both=len(mu & vs & vr),
                only_sender=len((mu & vs) - vr),
                only_receiver=len((mu & vr) - vs),
                neither=len(mu - vs - vr),
                novelty=information_novelty(m, vs, vr),
            )
        )
    return rows


# -- belief-sensitive messaging ------------------------------------------------


@dataclass(frozen=True)
class BsmTerm:
    """One qualifying message: its intent, mention count and the two probabilities."""

    intent: str
    mentions: int
    p_ment: Fraction
    p_base: Fraction


def bsm_terms(trace: EpisodeTrace) -> list[BsmTerm]:
    terms = []
    for ctx in trace.message_contexts():
        mu = set(ctx.message.mentions)
        vs = ctx.sender_observed
        if not mu or not vs:
            continue
        gap = vs - ctx.receiver_observed
        terms.append(
            BsmTerm(
                ctx.message.intent.value,
                len(mu),
                Fraction(len(mu & gap), len(mu)),
                Fraction(len(gap), len(vs)),
            )
        )
    return terms


@dataclass(frozen=True)
class BsmReport:
    pooled: Fraction | None
    per_intent: dict[str, Fraction] = field(default_factory=dict)
    mention_counts: dict[str, int] = field(default_factory=dict)
    message_counts: dict[str, int] = field(default_factory=dict)
    weighting: str = "mention"

    @property
    def defined(self) -> bool:
        return self.pooled is not None


def _pool(terms: list[BsmTerm], weighting: str) -> Fraction | None:
    if not terms:
        return None
    if weighting == "mention":
        weights = [Fraction(t.mentions) for t in terms]
    elif weighting == "message":
        weights = [Fraction(1)] * len(terms)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    total = sum(weights)
    p_ment = sum(w * t.p_ment for w, t in zip(weights, terms)) / total
    p_base = sum(w * t.p_base for w, t in zip(weights, terms)) / total
    return p_ment - p_base


def bsm_from_terms(terms: Iterable[BsmTerm], weighting: str = "mention") -> BsmReport:
    terms = list(terms)
    strata: dict[str, list[BsmTerm]] = defaultdict(list)
    for t in terms:
        strata[t.intent].append(t)
    return BsmReport(
        pooled=_pool(terms, weighting),
        per_intent={k: _pool(v, weighting) for k, v in sorted(strata.items())},
        mention_counts={k: sum(t.mentions for t in v) for k, v in sorted(strata.items())},
        message_counts={k: len(v) for k, v in sorted(strata.items())},
        weighting=weighting,
    )


def bsm(trace: EpisodeTrace | Iterable[EpisodeTrace], weighting: str = "mention") -> BsmReport:
    """BSM = p_ment - p_base, pooled over qualifying messages and per intent.

    Several traces are pooled globally (every message weighted alike).
    Intents with no qualifying message are absent from ``per_intent``.
    """
    traces = [trace] if isinstance(trace, EpisodeTrace) else list(trace)
    return bsm_from_terms((t for tr in traces for t in bsm_terms(tr)), weighting)


INTENTS = tuple(t.value for t in IntentTag)


# -- conflict --------------------------------------------------------------------


@dataclass(frozen=True)
class ConflictReport:
    rate: Fraction | None
    joint_rounds: int
    conflicts: int

    @property
    def defined(self) -> bool:
        return self.rate is not None


def committed_actions(trace: EpisodeTrace) -> dict[tuple[int, int], tuple[str, str | None]]:
    """Each agent's last action attempt per round, as normalized ``(tool, target)``."""
    out: dict[tuple[int, int], tuple[str, str | None]] = {}
    for e in trace.of_kind(EventKind.ACTION, EventKind.ACTION_FAILURE):
        if e.agent is None:
            continue
        target = e.payload.get("target")
        if isinstance(target, str):
            target = target.strip().lower() or None
        out[(e.round, e.agent)] = (e.payload["tool"], target)
    return out


def conflict_rate(trace: EpisodeTrace) -> ConflictReport:
    """Fraction of joint-replan rounds where both agents chose the same effortful (tool, target)."""
    acts = committed_actions(trace)
    rounds = sorted({r for r, _ in acts})
    joint = [r for r in rounds if (r, 0) in acts and (r, 1) in acts]
    hits = 0
    for r in joint:
        a0, a1 = acts[(r, 0)], acts[(r, 1)]
        if a0 == a1 and a0[0] not in NON_EFFORT_TOOLS and a0[1] is not None:
            hits += 1
    if not joint:
        return ConflictReport(None, 0, 0)
    return ConflictReport(Fraction(hits, len(joint)), len(joint), hits)


def communication_steps(trace: EpisodeTrace) -> int:
    return sum(int(e.payload.get("cost", 0)) for e in trace.of_kind(EventKind.MESSAGE_SENT))


def charged_steps(trace: EpisodeTrace) -> int:
    """All steps charged in the episode. SC messages are charged through their SendMessage action event."""
    return sum(int(e.payload.get("cost", 0)) for e in trace.of_kind(EventKind.ACTION, EventKind.ACTION_FAILURE))


def bsm_episode_mean(traces: Iterable[EpisodeTrace], weighting: str = "mention") -> Fraction | None:
    """Alternative pooling: BSM per episode, then the unweighted mean over episodes where it is defined."""
    values = [r.pooled for r in (bsm(t, weighting) for t in traces) if r.pooled is not None]
    if not values:
        return None
    return sum(values, Fraction(0)) / len(values)
