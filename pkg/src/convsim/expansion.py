"""Query reformulation from feedback: RM3, Rocchio, history terms, clarification
concatenation, and the discourse gate over a pluggable rewriter."""

from __future__ import annotations

import math
from collections import Counter
from typing import Protocol, Sequence

from .analysis import Analyzer
from .config import CompletionParams, ExpansionConfig
from .index import InvertedIndex
from .model import (
    ConversationState,
    Discourse,
    FeedbackLabel,
    SystemKind,
    SystemUtterance,
    Utterance,
    WeightedQuery,
)

ADDED_WEIGHT_CAP = 0.5


def tfidf_scores(text: str, index: InvertedIndex, exclude=frozenset()) -> dict[str, float]:
    # terms the collection never uses cannot move a ranking
    counts = Counter(index.analyzer.analyze(text))
    return {t: tf * index.idf(t) for t, tf in counts.items() if t not in exclude and index.df(t)}


def top_terms(scores: dict[str, float], n: int) -> list[tuple[str, float]]:
    """Highest scores first, ties broken alphabetically."""
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


def _scale_added(selected: list[tuple[str, float]], query: WeightedQuery) -> dict[str, float]:
    # the best added term gets half the weight of the strongest original term
    if not selected:
        return {}
    cap = ADDED_WEIGHT_CAP * max(query.terms.values(), default=1.0)
    best = selected[0][1]
    if best <= 0:
        return {}
    return {t: cap * s / best for t, s in selected if s > 0}


def _require_feedback(feedback: Utterance) -> None:
    if feedback.discourse is not Discourse.FEEDBACK:
        raise ValueError(f"expected a feedback utterance, got {feedback.discourse.value}")


def rm3_expand(
    query: WeightedQuery, feedback: Utterance, index: InvertedIndex, cfg: ExpansionConfig | None = None
) -> WeightedQuery:
    """Add up to ``rm3_max_terms`` feedback terms ranked by tf*idf.

    Original terms keep their weights; terms already in the query are not
    candidates.
    """
    _require_feedback(feedback)
    cfg = cfg or ExpansionConfig()
    candidates = tfidf_scores(feedback.text, index, exclude=query.terms.keys())
    added = _scale_added(top_terms(candidates, cfg.rm3_max_terms), query)
    if not added:
        return query
    return WeightedQuery(query.original_text, {**query.terms, **added})


def rocchio_expand(
    query: WeightedQuery, feedback: Utterance, index: InvertedIndex, cfg: ExpansionConfig | None = None
) -> WeightedQuery:
    """alpha * query + beta * centroid of the (L2-normalized) feedback tf*idf vector.

    There is no non-relevant set, so ``rocchio_gamma`` never contributes.
    """
    _require_feedback(feedback)
    cfg = cfg or ExpansionConfig()
    vec = tfidf_scores(feedback.text, index)
    norm = math.sqrt(sum(v * v for v in vec.values()))
    if norm == 0.0:
        return query
    centroid = {t: v / norm for t, v in vec.items()}
    combined: dict[str, float] = {}
    for t in sorted(set(query.terms) | set(centroid)):
        w = cfg.rocchio_alpha * query.terms.get(t, 0.0) + cfg.rocchio_beta * centroid.get(t, 0.0)
        if w > 0:
            combined[t] = w
    if not combined:
        return query
    return WeightedQuery(query.original_text, combined)


class TermSelector(Protocol):
    def select(self, query: WeightedQuery, context: Sequence[str], max_terms: int) -> list[tuple[str, float]]:
        """Return up to ``max_terms`` (term, score) pairs, best first, none already in ``query``."""
        ...


class TfIdfTermSelector:
    """Ranks terms of the concatenated context by tf*idf against the collection."""

    def __init__(self, index: InvertedIndex):
        self.index = index

    def select(self, query, context, max_terms):
        scores = tfidf_scores(" ".join(context), self.index, exclude=query.terms.keys())
        return top_terms(scores, max_terms)


class CompletionTermSelector:
    """Asks a completion model which context terms to add; output is re-analyzed."""

    prompt = (
        "Select the terms from the conversation that are needed to resolve the last query.\n"
        "Conversation:\n{context}\nQuery: {query}\nTerms (space separated):"
    )

    def __init__(self, client, analyzer: Analyzer, params: CompletionParams | None = None):
        self.client = client
        self.analyzer = analyzer
        self.params = params or CompletionParams(max_tokens=32, temperature=0.0)

    def select(self, query, context, max_terms):
        text = self.client.complete(
            self.prompt.format(context="\n".join(context), query=query.original_text), self.params
        )
        out: list[tuple[str, float]] = []
        for t in self.analyzer.analyze(text):
            if t not in query.terms and t not in dict(out):
                out.append((t, 1.0))
        return out[:max_terms]


def history_expand(
    query: WeightedQuery,
    feedback: Utterance | None,
    history: ConversationState,
    cfg: ExpansionConfig | None = None,
    selector: TermSelector | None = None,
    index: InvertedIndex | None = None,
) -> WeightedQuery:
    """Add terms chosen from the user side of the history plus the feedback."""
    cfg = cfg or ExpansionConfig()
    if selector is None:
        if index is None:
            raise ValueError("history_expand needs a selector or an index")
        selector = TfIdfTermSelector(index)
    context = [m.text for m in history.history if isinstance(m, Utterance) and m is not feedback]
    if feedback is not None and feedback.text.strip():
        context.append(feedback.text)
    context = [c for c in context if c.strip()]
    if not context:
        return query
    added = _scale_added(selector.select(query, context, cfg.history_max_terms), query)
    added = {t: w for t, w in added.items() if t not in query.terms}
    if not added:
        return query
    return WeightedQuery(query.original_text, {**query.terms, **added})


def concat_clarification(
    query: WeightedQuery, cq: SystemUtterance, answer: Utterance, analyzer: Analyzer
) -> WeightedQuery:
    if cq.kind is not SystemKind.CLARIFYING_QUESTION:
        raise ValueError("concat_clarification expects a clarifying question")
    if answer.discourse is not Discourse.ANSWER:
        raise ValueError("concat_clarification expects an answer utterance")
    pieces = [p for p in (query.original_text, cq.text, answer.text) if p]
    return WeightedQuery.from_text(" ".join(pieces), analyzer)


def discourse_gate(label: FeedbackLabel, rewritten: WeightedQuery, previous: WeightedQuery) -> WeightedQuery:
    """Only negative feedback may change the query."""
    return previous if label.positive else rewritten


class Rewriter(Protocol):
    def rewrite(self, utterance: str, context: Sequence[str]) -> str: ...


class PassThroughRewriter:
    def rewrite(self, utterance, context):
        return utterance


class CompletionRewriter:
    """Context-dependent rewriting through a completion endpoint."""

    prompt = (
        "Rewrite the last utterance of the conversation as a self-contained search query.\n"
        "Conversation:\n{context}\nLast utterance: {utterance}\nRewrite:"
    )

    def __init__(self, client, params: CompletionParams | None = None):
        self.client = client
        self.params = params or CompletionParams(max_tokens=64, temperature=0.0,
                                                 frequency_penalty=0.0, presence_penalty=0.0)

    def rewrite(self, utterance, context):
        text = self.client.complete(
            self.prompt.format(context="\n".join(context), utterance=utterance), self.params
        ).strip()
        return text or utterance
