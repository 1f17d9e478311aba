"""Multi-turn, multi-round loop between the simulated user and the search pipeline."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

from .analysis import Analyzer
from .clarification import (
    CapitalizedPhraseExtractor,
    EntityExtractor,
    QuestionPool,
    RemoteEmbedder,
    TextEmbedder,
    TfIdfEmbedder,
    generate_cq_entity,
    select_cq_bm25,
    select_cq_embedding,
)
from .config import (
    ClarificationNeed,
    CompletionParams,
    CQMethod,
    ExpansionKind,
    PipelineConfig,
    RewriterKind,
    ScorerKind,
)
from .datasets import Conversation
from .errors import ConfigError, NoEntities, PoolMiss, StageError
from .evaluation import EvalReport, Qrels, evaluate_run, format_run, stratify_by_feedback
from .expansion import (
    CompletionRewriter,
    CompletionTermSelector,
    PassThroughRewriter,
    Rewriter,
    TermSelector,
    TfIdfTermSelector,
    concat_clarification,
    discourse_gate,
    history_expand,
    rm3_expand,
    rocchio_expand,
)
from .index import InvertedIndex, bm25_retrieve
from .model import (
    ConversationState,
    Discourse,
    FeedbackLabel,
    InformationNeed,
    Move,
    Passage,
    RankedList,
    SystemKind,
    SystemUtterance,
    Utterance,
    WeightedQuery,
    append_move,
    serialize_transcript,
)
from .rerank import LexicalFallbackScorer, RelevanceScorer, RemoteScorer, rerank
from .simulator import Simulator, should_continue

logger = logging.getLogger(__name__)

NO_RESULTS = "Sorry, I could not find anything relevant."


class ResponseGenerator(Protocol):
    def generate(self, query: WeightedQuery, passages: Sequence[Passage]) -> str: ...


class ConcatResponseGenerator:
    """Joins the passage texts and cuts the result after ``max_tokens`` analyzed tokens."""

    def __init__(self, analyzer: Analyzer, max_tokens: int = 250):
        self.analyzer = analyzer
        self.max_tokens = max_tokens

    def generate(self, query, passages):
        return self.analyzer.truncate(" ".join(p.text for p in passages), self.max_tokens)


class CompletionResponseGenerator:
    prompt = "Summarize the following passages as an answer to the question.\nQuestion: {q}\nPassages:\n{p}\nAnswer:"

    def __init__(self, client, params: CompletionParams | None = None):
        self.client = client
        self.params = params or CompletionParams(max_tokens=128, temperature=0.0,
                                                 frequency_penalty=0.0, presence_penalty=0.0)

    def generate(self, query, passages):
        body = "\n".join(f"- {p.text}" for p in passages)
        return self.client.complete(self.prompt.format(q=query.original_text, p=body), self.params)


@dataclass
class PipelineDeps:
    index: InvertedIndex
    passages: Mapping[str, Passage]
    simulator: Simulator | None = None
    rewriter: Rewriter | None = None
    scorer: RelevanceScorer | None = None
    term_selector: TermSelector | None = None
    question_pool: QuestionPool | None = None
    embedder: TextEmbedder | None = None
    extractor: EntityExtractor | None = None
    response_generator: ResponseGenerator | None = None

    @property
    def analyzer(self) -> Analyzer:
        return self.index.analyzer


@dataclass
class TurnResult:
    turn_id: str
    final_ranked_list: RankedList
    rounds_used: int
    transcript_slice: list[Move]
    per_round_lists: list[RankedList]
    per_round_queries: list[WeightedQuery] = field(default_factory=list)
    labels: list[FeedbackLabel] = field(default_factory=list)
    retrievals: int = 0


@contextmanager
def _stage(name: str, state: ConversationState, start: int):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc, state.history[start:]) from exc


def _simulation_enabled(cfg: PipelineConfig) -> bool:
    cq = cfg.clarification
    return cfg.feedback_rounds > 0 or (cq is not None and cq.clarification_need is ClarificationNeed.ALWAYS)


def _clarify(query, current, in_need, state, cfg, deps) -> WeightedQuery:
    cq_cfg = cfg.clarification
    turn = state.current_turn
    try:
        if cq_cfg.method is CQMethod.GENERATE_ENTITY:
            prelim = bm25_retrieve(deps.index, current, cfg.bm25, cfg.retrieval_k)
            if not prelim.entries:
                return current
            cq = generate_cq_entity(prelim, deps.passages, cq_cfg,
                                    deps.extractor or CapitalizedPhraseExtractor(), turn)
        else:
            if deps.question_pool is None:
                raise ConfigError("question selection needs a question pool")
            if cq_cfg.method is CQMethod.SELECT_EMBEDDING:
                embedder = deps.embedder or TfIdfEmbedder(deps.question_pool.index)
                cq = select_cq_embedding(deps.question_pool, current, embedder, turn)
            else:
                cq = select_cq_bm25(deps.question_pool, current, turn, cfg.bm25)
    except (PoolMiss, NoEntities) as exc:
        logger.info("turn %d: clarification skipped (%s)", turn, exc)
        return current
    append_move(state, cq)
    answer = deps.simulator.answer_clarifying(in_need, cq, state)
    append_move(state, answer)
    return concat_clarification(current, cq, answer, deps.analyzer)


def _reformulate(current: WeightedQuery, feedback: Utterance, label: FeedbackLabel,
                 state: ConversationState, cfg: PipelineConfig, deps: PipelineDeps) -> WeightedQuery:
    query = current
    gated = cfg.rewriter is RewriterKind.DISCOURSE_GATED
    if cfg.rewriter is not RewriterKind.NONE:
        rewriter = deps.rewriter or PassThroughRewriter()
        context = [m.text for m in state.history if m is not feedback]
        candidate = WeightedQuery.from_text(rewriter.rewrite(feedback.text, context), deps.analyzer)
        if not candidate.terms:
            candidate = current
        query = discourse_gate(label, candidate, current) if gated else candidate
    if gated and label.positive:
        return query
    p = cfg.expansion_params
    if cfg.expansion is ExpansionKind.RM3:
        query = rm3_expand(query, feedback, deps.index, p)
    elif cfg.expansion is ExpansionKind.ROCCHIO:
        query = rocchio_expand(query, feedback, deps.index, p)
    elif cfg.expansion is ExpansionKind.HISTORY:
        query = history_expand(query, feedback, state, p, deps.term_selector, deps.index)
    return query


def run_turn(
    query: Utterance,
    in_need: InformationNeed | None,
    state: ConversationState,
    cfg: PipelineConfig,
    deps: PipelineDeps,
    turn_id: str | None = None,
    search_text: str | None = None,
) -> TurnResult:
    """Run one conversational turn, including clarification and feedback rounds.

    ``search_text`` replaces the query text for retrieval only (manual rewrites).
    """
    if query.discourse is not Discourse.QUERY:
        raise ValueError("a turn must open with a query")
    turn_id = turn_id or str(query.turn)
    start = len(state.history)
    analyzer = deps.analyzer
    generator = deps.response_generator or ConcatResponseGenerator(analyzer, cfg.response_max_tokens)
    needs_sim = _simulation_enabled(cfg)
    if needs_sim and (in_need is None or deps.simulator is None):
        raise ConfigError(f"turn {turn_id}: simulation needs an information need and a simulator")
    retrievals = 0

    with _stage("state", state, start):
        append_move(state, query)
    turn = state.current_turn

    with _stage("rewrite", state, start):
        text = search_text or query.text
        if cfg.rewriter is not RewriterKind.NONE:
            context = [m.text for m in state.history[:start]
                       if (isinstance(m, Utterance) and m.discourse is Discourse.QUERY)
                       or (isinstance(m, SystemUtterance) and m.kind is SystemKind.RESPONSE)]
            text = (deps.rewriter or PassThroughRewriter()).rewrite(text, context) or text
        current = WeightedQuery.from_text(text, analyzer)

    cq_cfg = cfg.clarification
    if cq_cfg is not None and cq_cfg.clarification_need is ClarificationNeed.ALWAYS:
        with _stage("clarification", state, start):
            current = _clarify(query, current, in_need, state, cfg, deps)
            if cq_cfg.method is CQMethod.GENERATE_ENTITY:
                retrievals += 1

    def search(q: WeightedQuery, feedback: Utterance | None) -> tuple[RankedList, SystemUtterance]:
        nonlocal retrievals
        with _stage("retrieve", state, start):
            ranked = bm25_retrieve(deps.index, q, cfg.bm25, cfg.retrieval_k)
            retrievals += 1
        if cfg.rerank is not None and ranked.entries:
            with _stage("rerank", state, start):
                scorer = deps.scorer or LexicalFallbackScorer(deps.index, cfg.bm25)
                ranked = rerank(ranked, q, feedback, cfg.rerank, scorer, deps.passages, analyzer)
        with _stage("respond", state, start):
            top = ranked.ids[: cfg.response_top_k]
            text = generator.generate(q, [deps.passages[p] for p in top]) if top else ""
            response = SystemUtterance(SystemKind.RESPONSE, text.strip() or NO_RESULTS, turn, tuple(top))
            append_move(state, response)
        return ranked, response

    ranked, response = search(current, None)
    lists, queries, labels = [ranked], [current], []
    rounds_used = 0

    for _ in range(cfg.feedback_rounds):
        if state.closed:
            break
        with _stage("simulator", state, start):
            feedback, label = deps.simulator.give_feedback(in_need, response, state)
            append_move(state, feedback)
        rounds_used += 1
        labels.append(label)
        go_on = should_continue(state, label, cfg.stop_on_positive)
        if cfg.stop_on_positive and label.positive:
            # need met: the ranking stands, nothing is retrieved again
            state.satisfied = True
            lists.append(ranked)
            queries.append(current)
            break
        with _stage("reformulate", state, start):
            current = _reformulate(current, feedback, label, state, cfg, deps)
        ranked, response = search(current, feedback)
        lists.append(ranked)
        queries.append(current)
        if not go_on:
            break

    return TurnResult(turn_id, lists[-1], rounds_used, state.history[start:], lists, queries, labels, retrievals)


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class DatasetResult:
    run: dict[str, RankedList]
    round_runs: list[dict[str, RankedList]]
    transcripts: list[str]
    labels: dict[str, FeedbackLabel]
    turn_results: list[TurnResult]
    report: EvalReport | None = None

    def run_lines(self, tag: str) -> list[str]:
        return format_run(self.run, tag)


def _run_conversation(conv: Conversation, ins, cfg: PipelineConfig, deps: PipelineDeps):
    patience = cfg.patience if cfg.patience is not None else cfg.feedback_rounds * len(conv.turns)
    state = ConversationState(conversation_id=conv.conversation_id, patience=patience)
    results = []
    for i, t in enumerate(conv.turns, 1):
        query = Utterance(Discourse.QUERY, t.raw_query, i)
        search_text = t.manual_rewrite if cfg.use_manual_rewrite and t.manual_rewrite else None
        need = ins.get((conv.conversation_id, t.turn_id))
        results.append(run_turn(query, need, state, cfg, deps, t.turn_id, search_text))
    return state, results


def run_dataset(
    topics: Sequence[Conversation],
    ins: Mapping[tuple[str, str], InformationNeed],
    qrels: Qrels | None,
    cfg: PipelineConfig,
    deps: PipelineDeps,
) -> DatasetResult:
    """Run every conversation; output order follows the topic file regardless of workers."""
    if _simulation_enabled(cfg):
        missing = [f"{c.conversation_id}/{t.turn_id}" for c in topics for t in c.turns
                   if (c.conversation_id, t.turn_id) not in ins]
        if missing:
            raise ConfigError(f"missing information needs for {len(missing)} turn(s): {missing[:5]}")
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = list(pool.map(lambda c: _run_conversation(c, ins, cfg, deps), topics))
    else:
        outputs = [_run_conversation(c, ins, cfg, deps) for c in topics]

    run: dict[str, RankedList] = {}
    round_runs: list[dict[str, RankedList]] = [{} for _ in range(cfg.feedback_rounds + 1)]
    transcripts: list[str] = []
    labels: dict[str, FeedbackLabel] = {}
    turn_results: list[TurnResult] = []
    for state, results in outputs:
        transcripts.extend(serialize_transcript(state))
        for r in results:
            turn_results.append(r)
            run[r.turn_id] = r.final_ranked_list
            for i, rr in enumerate(round_runs):
                rr[r.turn_id] = r.per_round_lists[min(i, len(r.per_round_lists) - 1)]
            if r.labels:
                labels[r.turn_id] = r.labels[0]
    result = DatasetResult(run, round_runs, transcripts, labels, turn_results)
    if qrels is not None:
        result.report = evaluate_run(run, qrels)
        if result.report.per_turn and all(t in labels for t in result.report.per_turn):
            stratify_by_feedback(result.report, labels)
    return result


def build_deps(
    cfg: PipelineConfig,
    index: InvertedIndex,
    passages: Mapping[str, Passage],
    factory=None,
    question_pool: QuestionPool | None = None,
) -> PipelineDeps:
    """Wire stage backends from the config; ``factory`` hands out per-role model clients."""
    deps = PipelineDeps(index, passages, question_pool=question_pool)
    if _simulation_enabled(cfg):
        deps.simulator = Simulator.from_config(factory.get("simulator"), cfg.simulator)
    if cfg.rewriter is not RewriterKind.NONE:
        deps.rewriter = CompletionRewriter(factory.get("rewriter")) if factory and factory.has("rewriter") \
            else PassThroughRewriter()
    if cfg.rerank is not None:
        if cfg.rerank.scorer is ScorerKind.REMOTE:
            deps.scorer = RemoteScorer(factory.get("scorer"))
        else:
            deps.scorer = LexicalFallbackScorer(index, cfg.bm25)
    if cfg.expansion is ExpansionKind.HISTORY:
        deps.term_selector = (CompletionTermSelector(factory.get("selector"), index.analyzer)
                              if factory and factory.has("selector") else TfIdfTermSelector(index))
    cq = cfg.clarification
    if cq is not None and cq.method is CQMethod.SELECT_EMBEDDING and question_pool is not None:
        deps.embedder = (RemoteEmbedder(factory.get("embedder")) if factory and factory.has("embedder")
                         else TfIdfEmbedder(question_pool.index))
    if cq is not None and cq.method is not CQMethod.GENERATE_ENTITY and \
            cq.clarification_need is ClarificationNeed.ALWAYS and question_pool is None:
        raise ConfigError("clarification by selection needs a question pool")
    deps.extractor = CapitalizedPhraseExtractor()
    if factory and factory.has("summarizer"):
        deps.response_generator = CompletionResponseGenerator(factory.get("summarizer"))
    else:
        deps.response_generator = ConcatResponseGenerator(index.analyzer, cfg.response_max_tokens)
    return deps
