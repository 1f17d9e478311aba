"""Inverted index and BM25 retrieval."""

from __future__ import annotations

import bisect
import heapq
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .analysis import Analyzer
from .errors import DuplicateDocument, EmptyCollection, ParseError
from .model import Passage, RankedList, WeightedQuery


@dataclass(frozen=True)
class BM25Params:
    k1: float = 4.46
    b: float = 0.82

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    analyzer: Analyzer = field(default_factory=Analyzer)

    def __post_init__(self):
        self.doc_count = len(self.doc_lengths)
        total = sum(self.doc_lengths.values())
        self.avg_doc_length = total / self.doc_count if self.doc_count else 0.0
        self._df = {t: len(p) for t, p in self.postings.items()}

    def df(self, term: str) -> int:
        return self._df.get(term, 0)

    def idf(self, term: str) -> float:
        n = self.df(term)
        return math.log(1.0 + (self.doc_count - n + 0.5) / (n + 0.5))

    def tf(self, term: str, pid: str) -> int:
        plist = self.postings.get(term)
        if not plist:
            return 0
        i = bisect.bisect_left(plist, (pid, 0))
        if i < len(plist) and plist[i][0] == pid:
            return plist[i][1]
        return 0

    def __contains__(self, term: str) -> bool:
        return term in self.postings

    @property
    def vocabulary(self) -> list[str]:
        return sorted(self.postings)

    def to_dict(self) -> dict:
        return {
            "analyzer": self.analyzer.to_dict(),
            "doc_lengths": self.doc_lengths,
            "postings": {t: [[p, tf] for p, tf in plist] for t, plist in sorted(self.postings.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InvertedIndex":
        return cls(
            postings={t: [(p, int(tf)) for p, tf in plist] for t, plist in d["postings"].items()},
            doc_lengths={p: int(n) for p, n in d["doc_lengths"].items()},
            analyzer=Analyzer.from_dict(d["analyzer"]),
        )


def build_index(passages: Iterable[Passage], analyzer: Analyzer | None = None) -> InvertedIndex:
    analyzer = analyzer or Analyzer()
    postings: dict[str, list[tuple[str, int]]] = defaultdict(list)
    doc_lengths: dict[str, int] = {}
    for passage in passages:
        if passage.id in doc_lengths:
            raise DuplicateDocument(f"duplicate passage id {passage.id!r}")
        terms = analyzer.analyze(passage.text)
        doc_lengths[passage.id] = len(terms)
        for term, tf in Counter(terms).items():
            postings[term].append((passage.id, tf))
    if not doc_lengths:
        raise EmptyCollection("cannot index an empty collection")
    # sorted postings make the build independent of insertion order
    ordered = {t: sorted(plist) for t, plist in sorted(postings.items())}
    return InvertedIndex(ordered, dict(sorted(doc_lengths.items())), analyzer)


def bm25_retrieve(
    index: InvertedIndex,
    query: WeightedQuery,
    params: BM25Params | None = None,
    k: int | None = 1000,
) -> RankedList:
    """Score every document sharing a term with ``query``; ties go to the smaller id.

    ``k=None`` returns all matching documents.
    """
    params = params or BM25Params()
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    k1, b = params.k1, params.b
    avg = index.avg_doc_length or 1.0
    scores: dict[str, float] = defaultdict(float)
    for term in sorted(query.terms):
        plist = index.postings.get(term)
        if not plist:
            continue
        w = query.terms[term] * index.idf(term)
        for pid, tf in plist:
            norm = k1 * (1.0 - b + b * index.doc_lengths[pid] / avg)
            scores[pid] += w * tf * (k1 + 1.0) / (tf + norm)
    key = lambda item: (-item[1], item[0])  # noqa: E731
    if k is None:
        ranked = sorted(scores.items(), key=key)
    else:
        ranked = heapq.nsmallest(k, scores.items(), key=key)
    depth = k if k is not None else max(len(ranked), 1)
    return RankedList(tuple(ranked), depth)


def bm25_score(index: InvertedIndex, query: WeightedQuery, pid: str, params: BM25Params | None = None) -> float:
    """BM25 score of a single document, same formula as :func:`bm25_retrieve`."""
    params = params or BM25Params()
    if pid not in index.doc_lengths:
        return 0.0
    avg = index.avg_doc_length or 1.0
    norm = params.k1 * (1.0 - params.b + params.b * index.doc_lengths[pid] / avg)
    score = 0.0
    for term in sorted(query.terms):
        tf = index.tf(term, pid)
        if tf:
            score += query.terms[term] * index.idf(term) * tf * (params.k1 + 1.0) / (tf + norm)
    return score


# ---------------------------------------------------------------------------
# Collections on disk


def read_collection(path: str | Path) -> list[Passage]:
    """Read a TSV (``id<TAB>text``) or JSON-lines (``{"id", "text"}``) collection."""
    path = Path(path)
    jsonl = path.suffix.lower() in (".jsonl", ".json", ".ndjson")
    passages = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            try:
                if jsonl:
                    rec = json.loads(line)
                    pid, text = str(rec["id"]), rec["text"]
                else:
                    pid, text = line.split("\t", 1)
                passages.append(Passage(pid, text))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(str(path), lineno, f"bad collection record: {exc}") from exc
    return passages


def save_index(path: str | Path, index: InvertedIndex, passages: Mapping[str, Passage]) -> None:
    doc = index.to_dict()
    doc["passages"] = {pid: passages[pid].text for pid in sorted(passages)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, separators=(",", ":"))


def load_index(path: str | Path) -> tuple[InvertedIndex, dict[str, Passage]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    passages = {pid: Passage(pid, text) for pid, text in doc.get("passages", {}).items()}
    return InvertedIndex.from_dict(doc), passages
