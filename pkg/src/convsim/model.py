"""Conversational and retrieval data model."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Union

from .errors import InvalidMove, StateClosed


class Discourse(str, Enum):
    QUERY = "query"
    ANSWER = "answer"
    FEEDBACK = "feedback"


class SystemKind(str, Enum):
    RESPONSE = "response"
    CLARIFYING_QUESTION = "clarifying_question"


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class Passage:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("passage id must be nonempty")
        if not self.text:
            raise ValueError(f"passage {self.id!r} has empty text")


@dataclass(frozen=True)
class Utterance:
    discourse: Discourse
    text: str
    turn: int

    role = "user"


@dataclass(frozen=True)
class SystemUtterance:
    kind: SystemKind
    text: str
    turn: int
    sourced_passages: tuple[str, ...] = ()

    role = "system"

    def __post_init__(self):
        object.__setattr__(self, "sourced_passages", tuple(self.sourced_passages))


Move = Union[Utterance, SystemUtterance]


@dataclass(frozen=True)
class InformationNeed:
    conversation_id: str
    turn: str
    description: str

    def __post_init__(self):
        if not self.description.strip():
            raise ValueError(f"empty information need for {self.conversation_id}/{self.turn}")


@dataclass(frozen=True)
class FeedbackLabel:
    polarity: Polarity
    has_clarification: bool = False

    def __post_init__(self):
        if self.has_clarification and self.polarity is not Polarity.NEGATIVE:
            raise ValueError("only negative feedback can carry a clarification")

    @property
    def positive(self) -> bool:
        return self.polarity is Polarity.POSITIVE


@dataclass
class ConversationState:
    """Single-owner mutable state of one conversation.

    ``current_turn`` is the index of the turn in progress (0 before the
    opening query). ``satisfied`` is reset whenever a new turn opens.
    """

    conversation_id: str = ""
    patience: int = 0
    history: list[Move] = field(default_factory=list)
    current_turn: int = 0
    satisfied: bool = False

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError("patience must be nonnegative")

    @property
    def closed(self) -> bool:
        return self.satisfied or self.patience == 0

    def moves_for_turn(self, turn: int) -> list[Move]:
        return [m for m in self.history if m.turn == turn]


def append_move(state: ConversationState, move: Move) -> ConversationState:
    """Append ``move`` to the history, updating turn and patience in place."""
    if move.turn not in (state.current_turn, state.current_turn + 1):
        raise InvalidMove(
            f"move turn {move.turn} must be {state.current_turn} or {state.current_turn + 1}"
        )
    if move.turn == state.current_turn + 1 and not (
        isinstance(move, Utterance) and move.discourse is Discourse.QUERY
    ):
        raise InvalidMove("a new turn must open with a query")
    if isinstance(move, Utterance) and move.discourse is Discourse.FEEDBACK:
        if state.closed:
            raise StateClosed(
                f"conversation {state.conversation_id!r} accepts no more feedback "
                f"(patience={state.patience}, satisfied={state.satisfied})"
            )
        state.patience -= 1
    if move.turn == state.current_turn + 1:
        state.satisfied = False
    state.current_turn = move.turn
    state.history.append(move)
    return state


@dataclass(frozen=True)
class WeightedQuery:
    original_text: str
    terms: dict[str, float]

    def __post_init__(self):
        for term, weight in self.terms.items():
            if not (math.isfinite(weight) and weight > 0):
                raise ValueError(f"term {term!r} has invalid weight {weight}")

    @classmethod
    def from_text(cls, text: str, analyzer) -> "WeightedQuery":
        """Unit weight for every distinct analyzed term."""
        return cls(text, {t: 1.0 for t in analyzer.analyze(text)})

    def __hash__(self):
        return hash((self.original_text, tuple(sorted(self.terms.items()))))


@dataclass(frozen=True)
class RankedList:
    entries: tuple[tuple[str, float], ...]
    depth_limit: int

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(p), float(s)) for p, s in self.entries))
        ids = [p for p, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("ranked list contains duplicate passage ids")
        if len(ids) > self.depth_limit:
            raise ValueError("ranked list longer than its depth limit")
        scores = [s for _, s in self.entries]
        if any(not math.isfinite(s) for s in scores):
            raise ValueError("ranked list scores must be finite")
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("ranked list scores must be non-increasing")

    @property
    def ids(self) -> list[str]:
        return [p for p, _ in self.entries]

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(self.entries)

    def head(self, n: int) -> "RankedList":
        return RankedList(self.entries[:n], self.depth_limit)


# ---------------------------------------------------------------------------
# Transcripts


def move_to_record(conversation_id: str, move: Move) -> dict:
    record = {"conversation_id": conversation_id, "turn": move.turn, "role": move.role}
    if isinstance(move, Utterance):
        record["discourse"] = move.discourse.value
        record["text"] = move.text
        record["sourced_passages"] = []
    else:
        record["kind"] = move.kind.value
        record["text"] = move.text
        record["sourced_passages"] = list(move.sourced_passages)
    return record


def record_to_move(record: dict) -> Move:
    if record["role"] == "user":
        return Utterance(Discourse(record["discourse"]), record["text"], int(record["turn"]))
    if record["role"] == "system":
        return SystemUtterance(
            SystemKind(record["kind"]),
            record["text"],
            int(record["turn"]),
            tuple(record.get("sourced_passages", ())),
        )
    raise ValueError(f"unknown role {record['role']!r}")


def serialize_transcript(state: ConversationState) -> list[str]:
    return [
        json.dumps(move_to_record(state.conversation_id, m), ensure_ascii=False)
        for m in state.history
    ]


def parse_transcript(lines: Iterable[str], patience: int = 0) -> list[ConversationState]:
    """Rebuild conversation states from transcript lines.

    Moves are replayed through :func:`append_move`, so ``patience`` is the
    initial patience of each conversation. The ``satisfied`` flag is not
    part of the record format and comes back False.
    """
    states: dict[str, ConversationState] = {}
    for line in lines:
        if not line.strip():
            continue
        record = json.loads(line)
        cid = record["conversation_id"]
        if cid not in states:
            states[cid] = ConversationState(conversation_id=cid, patience=patience)
        state = states[cid]
        append_move(state, record_to_move(record))
    return list(states.values())
