"""Shared value types: addresses, ticks, gists, chunks, and broadcast records.

Everything here is an immutable value; instances can be copied and shared
across threads without synchronization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

# A processor's address is its leaf index in the competition tree,
# an integer in [0, N) with N a power of two.
ProcessorAddress = int

# Central clock counter; increases by exactly 1 per engine cycle.
Tick = int

GIST_MAX_BYTES = 4096


class ValidationError(ValueError):
    """A value violated one of the constructor preconditions."""


class GistKind(str, Enum):
    REQUEST = "request"
    ANSWER = "answer"
    COMMENT = "comment"
    OBSERVATION = "observation"
    VERDICT = "verdict"


@dataclass(frozen=True)
class Gist:
    """Content payload of a chunk.

    The engine and the competition never read any of these fields; gists
    are opaque to everything except the processors themselves.  ``refs``
    may only name broadcast identifiers that were already emitted.
    """

    kind: GistKind
    text: str = ""
    refs: tuple[int, ...] = ()
    payload: Mapping[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "text": self.text,
            "refs": list(self.refs),
            "payload": dict(self.payload),
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Gist":
        return cls(
            kind=GistKind(obj["kind"]),
            text=obj["text"],
            refs=tuple(obj["refs"]),
            payload=dict(obj["payload"]),
        )


# Gist submitted on behalf of processors that have nothing to say this tick.
NULL_GIST = Gist(kind=GistKind.COMMENT, text="", refs=(), payload={})


@dataclass(frozen=True)
class Chunk:
    """Unit of competition and broadcast.

    ``intensity`` is the unsigned competition strength, ``mood`` the signed
    valence; both derive from ``weight`` at creation and never change.
    """

    address: ProcessorAddress
    t: Tick
    gist: Gist
    weight: float
    intensity: float
    mood: float

    def to_json(self) -> dict[str, Any]:
        return {
            "address": self.address,
            "t": self.t,
            "gist": self.gist.to_json(),
            "weight": self.weight,
            "intensity": self.intensity,
            "mood": self.mood,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Chunk":
        chunk = cls(
            address=obj["address"],
            t=obj["t"],
            gist=Gist.from_json(obj["gist"]),
            weight=obj["weight"],
            intensity=obj["intensity"],
            mood=obj["mood"],
        )
        if chunk.intensity != abs(chunk.weight) or chunk.mood != chunk.weight:
            raise ValidationError("chunk aggregates inconsistent with weight")
        return chunk


@dataclass(frozen=True)
class BroadcastRecord:
    """The conscious content of one tick: the winning chunk plus the root
    aggregates of the tournament that selected it."""

    broadcast_id: int
    winner: Chunk
    root_intensity: float
    root_mood: float
    tick_won: Tick

    def to_json(self) -> dict[str, Any]:
        return {
            "broadcast_id": self.broadcast_id,
            "winner": self.winner.to_json(),
            "root_intensity": self.root_intensity,
            "root_mood": self.root_mood,
            "tick_won": self.tick_won,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "BroadcastRecord":
        return cls(
            broadcast_id=obj["broadcast_id"],
            winner=Chunk.from_json(obj["winner"]),
            root_intensity=obj["root_intensity"],
            root_mood=obj["root_mood"],
            tick_won=obj["tick_won"],
        )


def new_chunk(address: ProcessorAddress, t: Tick, gist: Gist, weight: float) -> Chunk:
    """Create a chunk with intensity ``|weight|`` and mood ``weight``.

    Raises ValidationError for non-finite weights.
    """
    weight = float(weight)
    if not math.isfinite(weight):
        raise ValidationError(f"chunk weight must be finite, got {weight}")
    return Chunk(
        address=address,
        t=t,
        gist=gist,
        weight=weight,
        intensity=abs(weight),
        mood=weight,
    )


def null_chunk(address: ProcessorAddress, t: Tick) -> Chunk:
    """Zero-weight chunk submitted for a silent processor."""
    return Chunk(address=address, t=t, gist=NULL_GIST, weight=0.0, intensity=0.0, mood=0.0)


def gist_size_bytes(gist: Gist) -> int:
    return len(json.dumps(gist.to_json(), separators=(",", ":")).encode("utf-8"))


def validate_gist(gist: Gist, known_broadcasts: Iterable[int]) -> list[str]:
    """Return all violated gist invariants; an empty list means ok.

    Checked: the serialized size bound and the no-forward-reference rule
    (refs may only name broadcasts that already happened).
    """
    violations = []
    known = set(known_broadcasts)
    for ref in gist.refs:
        if ref not in known:
            violations.append(f"forward reference: broadcast {ref} not yet emitted")
    if gist_size_bytes(gist) > GIST_MAX_BYTES:
        violations.append(f"size: serialized gist exceeds {GIST_MAX_BYTES} bytes")
    return violations


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0
