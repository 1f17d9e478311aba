import pytest

from convsim.analysis import Analyzer
from convsim.config import PromptFormat, RerankConfig
from convsim.errors import RerankerUnavailable
from convsim.index import BM25Params, bm25_retrieve, bm25_score, build_index
from convsim.model import Discourse, Passage, RankedList, Utterance, WeightedQuery
from convsim.rerank import (
    LexicalFallbackScorer,
    RemoteScorer,
    build_crossencoder_input,
    build_monot5_prompt,
    prompt_query_text,
    rerank,
)
from convsim.client import MockModelClient

A = Analyzer()


def wq(text):
    return WeightedQuery.from_text(text, A)


def fb(text):
    return Utterance(Discourse.FEEDBACK, text, 1)


def test_monot5_template():
    assert build_monot5_prompt(wq("a"), fb("b"), Passage("p", "c")) == "Query a b Passage c Relevant:"
    assert build_monot5_prompt(wq("a"), None, Passage("p", "c")) == "Query a Passage c Relevant:"


def test_crossencoder_template():
    assert build_crossencoder_input(wq("a"), fb("b"), Passage("p", "c")) == "a [SEP] b [SEP] c"
    assert build_crossencoder_input(wq("a"), None, Passage("p", "c")) == "a [SEP] c"


def long_passage(n):
    return " ".join(f"tok{i}" for i in range(n))


@pytest.mark.parametrize("builder", [build_monot5_prompt, build_crossencoder_input])
def test_truncation_token_count(builder):
    passage = Passage("p", long_passage(600))
    prompt = builder(wq("coral reef"), fb("bleaching causes"), passage)
    assert A.count(prompt) == 512
    # the query and feedback survive whole; the passage loses its tail
    assert "coral reef" in prompt and "bleaching causes" in prompt
    assert "tok0 " in prompt and "tok599" not in prompt


@pytest.mark.parametrize("builder", [build_monot5_prompt, build_crossencoder_input])
def test_truncation_cuts_feedback_after_passage(builder):
    huge_fb = fb(long_passage(700).replace("tok", "fb"))
    prompt = builder(wq("coral reef"), huge_fb, Passage("p", "some passage words"), A, 100)
    assert A.count(prompt) == 100
    assert "coral reef" in prompt and "some passage words" not in prompt
    assert "fb0 " in prompt and "fb699" not in prompt


def test_short_prompts_untouched():
    p = Passage("p", "short text")
    assert build_monot5_prompt(wq("q"), fb("f"), p, A, 512) == "Query q f Passage short text Relevant:"


def test_prompt_query_text():
    assert prompt_query_text("Query a b Passage c Relevant:") == "a b"
    assert prompt_query_text("a [SEP] b [SEP] c") == "a b"
    assert prompt_query_text("a [SEP] c") == "a"


def make_list(n):
    return RankedList(tuple((f"d{i:02d}", float(100 - i)) for i in range(n)), 1000)


def passages_for(ranked):
    return {pid: Passage(pid, f"text of {pid}") for pid in ranked.ids}


class Const:
    def score(self, req):
        return 1.0


class ByPosition:
    """Scores rise with the original rank, so a full rerank reverses the head."""

    def __init__(self, ranked):
        self.pos = {pid: i for i, pid in enumerate(ranked.ids)}

    def score(self, req):
        return float(self.pos[req.passage_id])


def test_constant_scorer_is_identity():
    r = make_list(20)
    out = rerank(r, wq("q"), None, RerankConfig(depth=20), Const(), passages_for(r))
    assert out.ids == r.ids


@pytest.mark.parametrize("depth,n", [(3, 10), (10, 30), (50, 80), (100, 150)])
def test_depth_rule_and_reversal(depth, n):
    r = make_list(n)
    out = rerank(r, wq("q"), None, RerankConfig(depth=depth), ByPosition(r), passages_for(r))
    assert out.ids[:depth] == list(reversed(r.ids[:depth]))
    assert out.ids[depth:] == r.ids[depth:]
    scores = [s for _, s in out.entries]
    assert scores == sorted(scores, reverse=True)


def test_negated_bm25_reverses_head():
    passages = [Passage(f"p{i}", "coral " * (i + 1) + "filler " * (10 - i)) for i in range(8)]
    idx = build_index(passages)
    q = wq("coral")
    ranked = bm25_retrieve(idx, q)

    class NegBM25:
        def score(self, req):
            return -bm25_score(idx, q, req.passage_id)

    out = rerank(ranked, q, None, RerankConfig(depth=8), NegBM25(), {p.id: p for p in passages})
    assert out.ids == list(reversed(ranked.ids))


def test_parallel_scoring_same_result():
    r = make_list(40)
    serial = rerank(r, wq("q"), None, RerankConfig(depth=30), ByPosition(r), passages_for(r))
    para = rerank(r, wq("q"), None, RerankConfig(depth=30, workers=4), ByPosition(r), passages_for(r))
    assert serial == para


def test_scorer_failure_keeps_partial():
    r = make_list(5)

    class Flaky:
        def __init__(self):
            self.n = 0

        def score(self, req):
            self.n += 1
            if self.n == 3:
                raise RuntimeError("down")
            return 1.0

    with pytest.raises(RerankerUnavailable) as err:
        rerank(r, wq("q"), None, RerankConfig(depth=5), Flaky(), passages_for(r))
    assert set(err.value.partial) == {"d00", "d01"}


def test_lexical_fallback_and_remote_scorers():
    passages = [Passage("a", "coral reef bleaching"), Passage("b", "sourdough bread")]
    idx = build_index(passages)
    ranked = RankedList((("b", 2.0), ("a", 1.0)), 10)
    out = rerank(ranked, wq("coral"), fb("bleaching"), RerankConfig(depth=2),
                 LexicalFallbackScorer(idx, BM25Params()), {p.id: p for p in passages}, A)
    assert out.ids == ["a", "b"]
    client = MockModelClient([0.1, 0.9])
    out = rerank(ranked, wq("coral"), None, RerankConfig(depth=2, prompt_format=PromptFormat.CROSS_ENCODER),
                 RemoteScorer(client), {p.id: p for p in passages}, A)
    assert out.ids == ["a", "b"]
    assert client.prompts == ["coral [SEP] sourdough bread", "coral [SEP] coral reef bleaching"]


def test_empty_list_rejected():
    with pytest.raises(ValueError):
        rerank(RankedList((), 10), wq("q"), None, RerankConfig(), Const(), {})
