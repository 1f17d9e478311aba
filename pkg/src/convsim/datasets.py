"""Topic and information-need files, plus a converter for the CAsT topic format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ParseError
from .model import InformationNeed


@dataclass(frozen=True)
class TopicTurn:
    turn_id: str
    raw_query: str
    manual_rewrite: str | None = None


@dataclass
class Conversation:
    conversation_id: str
    turns: list[TopicTurn] = field(default_factory=list)


def _load_json(path: str | Path) -> tuple[Any, str]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), exc.lineno, exc.msg) from None


def _line_of(text: str, key: str, occurrence: int) -> int:
    """Line of the ``occurrence``-th (0-based) appearance of ``"key"`` in the raw text."""
    needle = f'"{key}"'
    pos = -1
    for _ in range(occurrence + 1):
        pos = text.find(needle, pos + 1)
        if pos < 0:
            return 1
    return text.count("\n", 0, pos) + 1


def read_topics(path: str | Path) -> list[Conversation]:
    """``{"conversations": [{"conversation_id", "turns": [{"turn_id", "raw_query", "manual_rewrite"?}]}]}``.

    A bare list of conversations is accepted too.
    """
    doc, text = _load_json(path)
    convs = doc.get("conversations") if isinstance(doc, dict) else doc
    if not isinstance(convs, list):
        raise ParseError(str(path), 1, "expected a list of conversations")
    out = []
    turn_no = 0
    for ci, conv in enumerate(convs):
        try:
            cid = str(conv["conversation_id"])
            turns, seen = [], set()
            for t in conv["turns"]:
                tid = str(t["turn_id"])
                if tid in seen:
                    raise ValueError(f"duplicate turn id {tid!r} in conversation {cid!r}")
                seen.add(tid)
                if not str(t["raw_query"]).strip():
                    raise ValueError(f"empty query for turn {tid!r}")
                turns.append(TopicTurn(tid, str(t["raw_query"]), t.get("manual_rewrite")))
                turn_no += 1
        except (KeyError, TypeError, ValueError) as exc:
            line = _line_of(text, "turn_id", turn_no) if "turn" in str(exc) else _line_of(text, "conversation_id", ci)
            raise ParseError(str(path), line, f"bad topic record: {exc}") from None
        out.append(Conversation(cid, turns))
    return out


def write_topics(path: str | Path, conversations: list[Conversation]) -> None:
    doc = {
        "conversations": [
            {
                "conversation_id": c.conversation_id,
                "turns": [
                    {"turn_id": t.turn_id, "raw_query": t.raw_query,
                     **({"manual_rewrite": t.manual_rewrite} if t.manual_rewrite else {})}
                    for t in c.turns
                ],
            }
            for c in conversations
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def read_information_needs(path: str | Path) -> dict[tuple[str, str], InformationNeed]:
    """JSON list of ``{"conversation_id", "turn", "description"}``; one per (conversation, turn)."""
    doc, text = _load_json(path)
    records = doc.get("information_needs") if isinstance(doc, dict) else doc
    if not isinstance(records, list):
        raise ParseError(str(path), 1, "expected a list of information needs")
    out: dict[tuple[str, str], InformationNeed] = {}
    for i, rec in enumerate(records):
        try:
            need = InformationNeed(str(rec["conversation_id"]), str(rec["turn"]), str(rec["description"]))
            key = (need.conversation_id, need.turn)
            if key in out:
                raise ValueError(f"duplicate information need for {key}")
            out[key] = need
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(str(path), _line_of(text, "description", i), f"bad information need: {exc}") from None
    return out


def convert_cast_topics(path: str | Path) -> list[Conversation]:
    """Read CAsT-style topics: a list of ``{"number", "turn": [{"number", "raw_utterance"|"utterance", ...}]}``."""
    doc, text = _load_json(path)
    if isinstance(doc, dict):
        doc = doc.get("topics", doc.get("conversations"))
    if not isinstance(doc, list):
        raise ParseError(str(path), 1, "expected a list of CAsT topics")
    out = []
    for ci, topic in enumerate(doc):
        try:
            cid = str(topic["number"])
            turns = []
            for t in topic["turn"]:
                if t.get("participant", "User").lower() not in ("user", "simulator"):
                    continue
                query = t.get("raw_utterance") or t.get("utterance")
                if not query:
                    raise KeyError("raw_utterance")
                manual = t.get("manual_rewritten_utterance")
                turns.append(TopicTurn(f"{cid}_{t['number']}", query, manual))
        except (KeyError, TypeError) as exc:
            raise ParseError(str(path), _line_of(text, "number", ci), f"bad CAsT topic: missing {exc}") from None
        out.append(Conversation(cid, turns))
    return out
