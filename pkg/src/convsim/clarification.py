"""Clarifying-question selection from a pool and entity-template generation."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .analysis import Analyzer
from .config import CQConfig
from .errors import EmbedderUnavailable, NoEntities, ParseError, PoolMiss
from .index import BM25Params, InvertedIndex, bm25_retrieve, build_index
from .model import Passage, RankedList, SystemKind, SystemUtterance, WeightedQuery


@dataclass
class QuestionPool:
    questions: dict[str, str]
    index: InvertedIndex

    @classmethod
    def from_questions(cls, questions: Sequence[tuple[str, str]], analyzer: Analyzer | None = None) -> "QuestionPool":
        ordered = dict(questions)
        if len(ordered) != len(questions):
            raise ValueError("question ids must be unique")
        return cls(ordered, build_index((Passage(i, t) for i, t in questions), analyzer))

    def __len__(self):
        return len(self.questions)


def read_question_pool(path: str | Path, analyzer: Analyzer | None = None) -> QuestionPool:
    questions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                questions.append((str(rec["id"]), rec["text"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(str(path), lineno, f"bad question record: {exc}") from exc
    try:
        return QuestionPool.from_questions(questions, analyzer)
    except ValueError as exc:
        raise ParseError(str(path), 0, str(exc)) from exc


def _as_question(pool: QuestionPool, qid: str, turn: int) -> SystemUtterance:
    return SystemUtterance(SystemKind.CLARIFYING_QUESTION, pool.questions[qid], turn)


def select_cq_bm25(
    pool: QuestionPool, query: WeightedQuery, turn: int = 0, params: BM25Params | None = None
) -> SystemUtterance:
    if not len(pool):
        raise ValueError("empty question pool")
    best = bm25_retrieve(pool.index, query, params, k=1)
    if not best.entries:
        raise PoolMiss(f"no pool question matches {query.original_text!r}")
    return _as_question(pool, best.entries[0][0], turn)


class TextEmbedder(Protocol):
    def embed(self, text: str) -> Sequence[float]: ...


class TfIdfEmbedder:
    """L2-normalized tf*idf vector over a fixed vocabulary."""

    def __init__(self, index: InvertedIndex):
        self.index = index
        self.vocabulary = index.vocabulary
        self._pos = {t: i for i, t in enumerate(self.vocabulary)}

    def embed(self, text):
        vec = [0.0] * len(self.vocabulary)
        for t, tf in Counter(self.index.analyzer.analyze(text)).items():
            i = self._pos.get(t)
            if i is not None:
                vec[i] = tf * self.index.idf(t)
        norm = math.sqrt(sum(v * v for v in vec))
        return [v / norm for v in vec] if norm else vec


class RemoteEmbedder:
    def __init__(self, client):
        self.client = client

    def embed(self, text):
        return self.client.embed(text)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise ValueError("embedding dimensions differ")
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def select_cq_embedding(
    pool: QuestionPool, query: WeightedQuery, embedder: TextEmbedder, turn: int = 0
) -> SystemUtterance:
    if not len(pool):
        raise ValueError("empty question pool")
    try:
        qv = embedder.embed(query.original_text)
        scored = [(cosine(qv, embedder.embed(text)), qid) for qid, text in pool.questions.items()]
    except Exception as exc:
        raise EmbedderUnavailable(f"embedder failed: {exc}") from exc
    best = min(scored, key=lambda st: (-st[0], st[1]))
    return _as_question(pool, best[1], turn)


@dataclass(frozen=True)
class SalientEntity:
    surface: str
    saliency: float

    def __post_init__(self):
        if not math.isfinite(self.saliency):
            raise ValueError("saliency must be finite")


class EntityExtractor(Protocol):
    def extract(self, text: str) -> list[SalientEntity]: ...


_CAP_PHRASE = re.compile(r"\b[A-Z][\w'-]*(?:\s+(?:of\s+|the\s+)?[A-Z][\w'-]*)*")


class CapitalizedPhraseExtractor:
    """Runs of capitalized words; saliency is frequency over the most frequent phrase.

    A single capitalized stopword (sentence-initial "The", "It", ...) is skipped.
    """

    def __init__(self, stopwords: frozenset[str] | None = None):
        self.stopwords = stopwords if stopwords is not None else Analyzer().stopwords

    def extract(self, text):
        counts: Counter[str] = Counter()
        for m in _CAP_PHRASE.finditer(text):
            words = m.group(0).split()
            while words and words[0].lower() in self.stopwords:
                words = words[1:]
            if not words:
                continue
            counts[" ".join(words)] += 1
        if not counts:
            return []
        top = max(counts.values())
        return [SalientEntity(s, c / top) for s, c in sorted(counts.items())]


def render_entity_question(entities: Sequence[str]) -> str:
    if not entities:
        raise NoEntities("nothing to ask about")
    if len(entities) == 1:
        body = entities[0]
    elif len(entities) == 2:
        body = f"{entities[0]} or {entities[1]}"
    else:
        body = f"{', '.join(entities[:-1])}, or {entities[-1]}"
    return f"Are you interested in {body}?"


def generate_cq_entity(
    results: RankedList,
    passages: Mapping[str, Passage],
    cfg: CQConfig,
    extractor: EntityExtractor,
    turn: int = 0,
) -> SystemUtterance:
    """Ask about the most salient entities of the top results.

    Duplicate surfaces across passages keep their highest saliency.
    """
    if not results.entries:
        raise ValueError("no results to extract entities from")
    best: dict[str, float] = {}
    for pid in results.ids[: cfg.top_n_results]:
        for ent in extractor.extract(passages[pid].text):
            if ent.saliency > best.get(ent.surface, -math.inf):
                best[ent.surface] = ent.saliency
    kept = sorted(((s, e) for e, s in best.items() if s > cfg.rho), key=lambda se: (-se[0], se[1]))
    if not kept:
        raise NoEntities(f"no entity above saliency {cfg.rho}")
    return SystemUtterance(
        SystemKind.CLARIFYING_QUESTION,
        render_entity_question([e for _, e in kept[: cfg.m]]),
        turn,
    )
