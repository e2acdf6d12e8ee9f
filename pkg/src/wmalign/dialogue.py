"""Shared append-only message buffer with SC and ACF delivery."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

from .mentions import extract_mentions


class Architecture(str, Enum):
    SILENT = "silent"
    SC = "SC"
    ACF = "ACF"


class IntentTag(str, Enum):
    PLAN = "PLAN"
    STATUS = "STATUS"
    CONFIRM = "CONFIRM"
    BLOCKED = "BLOCKED"
    CORRECT = "CORRECT"
    OTHER = "OTHER"


class ChannelUnavailable(RuntimeError):
    pass


_TAG_RE = re.compile(r"^\s*\[([A-Za-z]+)\]")


def parse_intent(text: str) -> IntentTag:
    """Leading ``[TAG]`` (any case) selects the intent; anything else is OTHER."""
    m = _TAG_RE.match(text)
    if m:
        try:
            return IntentTag(m.group(1).upper())
        except ValueError:
            pass
    return IntentTag.OTHER


@dataclass(frozen=True)
class Message:
    index: int
    sender: int
    t: int
    intent: IntentTag
    text: str
    mentions: tuple[str, ...]

    @property
    def receiver(self) -> int:
        return 1 - self.sender

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "sender": self.sender,
            "t": self.t,
            "intent": self.intent.value,
            "text": self.text,
            "mentions": list(self.mentions),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Message":
        return cls(
            index=int(d["index"]),
            sender=int(d["sender"]),
            t=int(d["t"]),
            intent=IntentTag(d.get("intent", "OTHER")),
            text=d.get("text", ""),
            mentions=tuple(d.get("mentions", ())),
        )


def make_message(index: int, sender: int, t: int, text: str) -> Message:
    return Message(index, sender, t, parse_intent(text), text, tuple(extract_mentions(text)))


@dataclass
class MessageBuffer:
    """Owned by one episode; callers only ever see immutable :class:`Message` values."""

    messages: list[Message] = field(default_factory=list)
    cursors: dict[int, int] = field(default_factory=lambda: {0: 0, 1: 0})

    def __len__(self) -> int:
        return len(self.messages)

    def send(self, sender: int, text: str, t: int, architecture: Architecture) -> Message:
        if Architecture(architecture) is Architecture.SILENT:
            raise ChannelUnavailable("no dialogue channel under the silent architecture")
        if sender not in (0, 1):
            raise ValueError(f"bad sender {sender}")
        if self.messages and t < self.messages[-1].t:
            raise ValueError("message timestamps must be non-decreasing")
        msg = make_message(len(self.messages), sender, t, text)
        self.messages.append(msg)
        return msg

    def read_new(self, reader: int) -> list[Message]:
        """Partner messages since ``reader``'s last read; advances the cursor."""
        start = self.cursors.get(reader, 0)
        self.cursors[reader] = len(self.messages)
        return [m for m in self.messages[start:] if m.sender != reader]

    def unread(self, reader: int) -> int:
        start = self.cursors.get(reader, 0)
        return sum(1 for m in self.messages[start:] if m.sender != reader)
