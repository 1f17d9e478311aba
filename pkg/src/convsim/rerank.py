"""Feedback-aware reranking over a pluggable relevance scorer."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Protocol

from .analysis import Analyzer
from .config import PromptFormat, RerankConfig
from .errors import RerankerUnavailable
from .index import BM25Params, InvertedIndex, bm25_score
from .model import Passage, RankedList, Utterance, WeightedQuery

MONOT5_PREFIX = "Query "
MONOT5_PASSAGE = " Passage "
MONOT5_SUFFIX = " Relevant:"
SEP = " [SEP] "


@dataclass(frozen=True)
class ScoreRequest:
    prompt: str
    passage_id: str


def _fit(pieces: list[str], render, analyzer: Analyzer, max_tokens: int) -> list[str]:
    """Shrink pieces from last to first until ``render(pieces)`` fits ``max_tokens``."""
    if analyzer.count(render(pieces)) <= max_tokens:
        return pieces
    pieces = list(pieces)
    for i in reversed(range(len(pieces))):
        without = pieces[:i] + [""] + pieces[i + 1:]
        budget = max_tokens - analyzer.count(render(without))
        if budget >= 0:
            pieces[i] = analyzer.truncate(pieces[i], budget)
            return pieces
        pieces[i] = ""
    return pieces


def build_monot5_prompt(
    query: WeightedQuery,
    feedback: Utterance | None,
    passage: Passage,
    analyzer: Analyzer | None = None,
    max_tokens: int = 512,
) -> str:
    """``Query {q} {f} Passage {p} Relevant:``, passage text cut first when too long."""
    analyzer = analyzer or Analyzer()

    def render(pieces):
        q, f, p = pieces
        head = f"{q} {f}" if f is not None else q
        return f"{MONOT5_PREFIX}{head}{MONOT5_PASSAGE}{p}{MONOT5_SUFFIX}"

    f = feedback.text if feedback is not None else None
    if f is None:
        q, _, p = _fit([query.original_text, "", passage.text],
                       lambda ps: render([ps[0], None, ps[2]]), analyzer, max_tokens)
        return render([q, None, p])
    return render(_fit([query.original_text, f, passage.text], render, analyzer, max_tokens))


def build_crossencoder_input(
    query: WeightedQuery,
    feedback: Utterance | None,
    passage: Passage,
    analyzer: Analyzer | None = None,
    max_tokens: int = 512,
) -> str:
    """``{q} [SEP] {f} [SEP] {p}``; the feedback slot disappears when absent."""
    analyzer = analyzer or Analyzer()
    if feedback is None:
        pieces = [query.original_text, passage.text]
    else:
        pieces = [query.original_text, feedback.text, passage.text]
    return SEP.join(_fit(pieces, SEP.join, analyzer, max_tokens))


def prompt_query_text(prompt: str) -> str:
    """Recover the query (+ feedback) part of a prompt built by either template."""
    if prompt.startswith(MONOT5_PREFIX) and prompt.endswith(MONOT5_SUFFIX) and MONOT5_PASSAGE in prompt:
        return prompt[len(MONOT5_PREFIX):].split(MONOT5_PASSAGE, 1)[0]
    if SEP in prompt:
        return prompt.rsplit(SEP, 1)[0].replace(SEP, " ")
    return prompt


class RelevanceScorer(Protocol):
    def score(self, request: ScoreRequest) -> float: ...


class RemoteScorer:
    def __init__(self, client):
        self.client = client

    def score(self, request):
        return self.client.score(request.prompt)


class LexicalFallbackScorer:
    """BM25 of the prompt's query/feedback terms against the target passage."""

    def __init__(self, index: InvertedIndex, params: BM25Params | None = None):
        self.index = index
        self.params = params or BM25Params()

    def score(self, request):
        q = WeightedQuery.from_text(prompt_query_text(request.prompt), self.index.analyzer)
        return bm25_score(self.index, q, request.passage_id, self.params)


def rerank(
    ranked: RankedList,
    query: WeightedQuery,
    feedback: Utterance | None,
    cfg: RerankConfig,
    scorer: RelevanceScorer,
    passages: Mapping[str, Passage],
    analyzer: Analyzer | None = None,
) -> RankedList:
    """Rescore the top ``cfg.depth`` entries; the rest keep their relative order below them.

    Equal scores keep their prior rank. Tail scores are shifted under the
    head's minimum so the list stays score-sorted.
    """
    if not ranked.entries:
        raise ValueError("cannot rerank an empty list")
    analyzer = analyzer or Analyzer()
    build = build_monot5_prompt if cfg.prompt_format is PromptFormat.MONOT5 else build_crossencoder_input
    head, tail = ranked.entries[: cfg.depth], ranked.entries[cfg.depth:]
    requests = [
        ScoreRequest(build(query, feedback, passages[pid], analyzer, cfg.max_tokens), pid)
        for pid, _ in head
    ]

    scores: dict[str, float] = {}

    def run(req: ScoreRequest) -> tuple[str, float]:
        return req.passage_id, float(scorer.score(req))

    try:
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [pool.submit(run, r) for r in requests]
                errors = []
                for fut in futures:
                    try:
                        pid, s = fut.result()
                        scores[pid] = s
                    except Exception as exc:  # collected, raised below with partials
                        errors.append(exc)
                if errors:
                    raise errors[0]
        else:
            for r in requests:
                pid, s = run(r)
                scores[pid] = s
    except Exception as exc:
        raise RerankerUnavailable(f"scorer failed: {exc}", partial=scores) from exc
    bad = [pid for pid, s in scores.items() if not math.isfinite(s)]
    if bad:
        raise RerankerUnavailable(f"non-finite score for {bad[0]!r}", partial=scores)

    order = sorted(range(len(head)), key=lambda i: (-scores[head[i][0]], i))
    new_head = [(head[i][0], scores[head[i][0]]) for i in order]
    new_tail = []
    if tail:
        floor = new_head[-1][1] - 1.0
        first = tail[0][1]
        new_tail = [(pid, s - first + floor) for pid, s in tail]
    return RankedList(tuple(new_head + new_tail), ranked.depth_limit)
