"""Entity-mention extraction and four-way handle classification."""

from __future__ import annotations

import re
from collections.abc import Collection
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .trace import EpisodeTrace

# Token-bounded: lowercase alnum segments joined by "_", ending in "_<digits>".
MENTION_RE = re.compile(r"(?<![A-Za-z0-9_])[a-z][a-z0-9]*(?:_[a-z0-9]+)*_[0-9]+(?![A-Za-z0-9_])")


class TraceIntegrityError(ValueError):
    pass


class HandleClass(str, Enum):
    BOTH = "both"
    ONLY_SENDER = "only_sender"
    ONLY_RECEIVER = "only_receiver"
    NEITHER = "neither"


def extract_mentions(text: str) -> list[str]:
    """Return simulator handles in ``text``, deduplicated in first-occurrence order.

    Prose references ("the lamp") are not resolved.
    """
    return list(dict.fromkeys(MENTION_RE.findall(text)))


def classify(handle: str, sender_observed: Collection[str], receiver_observed: Collection[str]) -> HandleClass:
    in_s = handle in sender_observed
    in_r = handle in receiver_observed
    if in_s and in_r:
        return HandleClass.BOTH
    if in_s:
        return HandleClass.ONLY_SENDER
    if in_r:
        return HandleClass.ONLY_RECEIVER
    return HandleClass.NEITHER


@dataclass(frozen=True)
class ClassifiedMention:
    handle: str
    cls: HandleClass
    message_index: int
    t: int


@dataclass(frozen=True)
class ClassCounts:
    both: int = 0
    only_sender: int = 0
    only_receiver: int = 0
    neither: int = 0

    @property
    def total(self) -> int:
        return self.both + self.only_sender + self.only_receiver + self.neither

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(
            self.both + other.both,
            self.only_sender + other.only_sender,
            self.only_receiver + other.only_receiver,
            self.neither + other.neither,
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "both": self.both,
            "only_sender": self.only_sender,
            "only_receiver": self.only_receiver,
            "neither": self.neither,
            "total": self.total,
        }


def classified_mentions(trace: "EpisodeTrace") -> list[ClassifiedMention]:
    out = []
    for ctx in trace.message_contexts():
        for h in ctx.message.mentions:
            out.append(
                ClassifiedMention(h, classify(h, ctx.sender_observed, ctx.receiver_observed), ctx.message.index, ctx.message.t)
            )
    return out


def classify_trace(trace: "EpisodeTrace") -> ClassCounts:
    """Count every mention of every message by handle class at mention time."""
    tally = {c: 0 for c in HandleClass}
    for cm in classified_mentions(trace):
        tally[cm.cls] += 1
    return ClassCounts(
        tally[HandleClass.BOTH],
        tally[HandleClass.ONLY_SENDER],
        tally[HandleClass.ONLY_RECEIVER],
        tally[HandleClass.NEITHER],
    )
