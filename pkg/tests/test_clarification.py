import math
import random
from collections import Counter

import pytest

from convsim.analysis import Analyzer
from convsim.clarification import (
    CapitalizedPhraseExtractor,
    QuestionPool,
    SalientEntity,
    TfIdfEmbedder,
    cosine,
    generate_cq_entity,
    read_question_pool,
    render_entity_question,
    select_cq_bm25,
    select_cq_embedding,
)
from convsim.config import CQConfig
from convsim.errors import EmbedderUnavailable, NoEntities, ParseError, PoolMiss
from convsim.model import Passage, RankedList, SystemKind, WeightedQuery
from oracles import bm25_exhaustive

A = Analyzer()
VOCAB = ("solar wind coal nuclear hydro cost price install panel turbine battery grid storage "
         "emission carbon tax subsidy roof efficiency maintenance").split()


def random_pool(n, seed):
    rng = random.Random(seed)
    return QuestionPool.from_questions(
        [(f"q{i:02d}", "Are you asking about " + " ".join(rng.sample(VOCAB, rng.randint(2, 5))) + "?")
         for i in range(n)]
    )


def wq(text):
    return WeightedQuery.from_text(text, A)


def test_pool_of_one():
    pool = QuestionPool.from_questions([("only", "Do you mean wind turbines?")])
    cq = select_cq_bm25(pool, wq("wind"))
    assert cq.text == "Do you mean wind turbines?" and cq.kind is SystemKind.CLARIFYING_QUESTION


def test_single_matching_question():
    pool = QuestionPool.from_questions([("a", "solar panels?"), ("b", "coal plants?"), ("c", "grid storage?")])
    assert select_cq_bm25(pool, wq("coal mining")).text == "coal plants?"


def test_pool_miss():
    pool = QuestionPool.from_questions([("a", "solar panels?")])
    with pytest.raises(PoolMiss):
        select_cq_bm25(pool, wq("sourdough"))


def test_bm25_selection_matches_score_all_oracle():
    pool = random_pool(50, 7)
    docs = {qid: A.analyze(t) for qid, t in pool.questions.items()}
    rng = random.Random(8)
    for _ in range(25):
        q = wq(" ".join(rng.sample(VOCAB, 3)))
        want = bm25_exhaustive(docs, q.terms, 4.46, 0.82)
        if not want:
            continue
        assert select_cq_bm25(pool, q).text == pool.questions[want[0][0]]


def test_cosine_basics():
    assert cosine([1, 0], [0, 1]) == 0
    assert cosine([1, 2], [2, 4]) == pytest.approx(1.0)
    assert cosine([0, 0], [1, 1]) == 0.0
    with pytest.raises(ValueError):
        cosine([1], [1, 2])


def test_embedding_identical_text_selected():
    pool = QuestionPool.from_questions([("a", "battery storage cost"), ("b", "wind turbine noise")])
    emb = TfIdfEmbedder(pool.index)
    assert select_cq_embedding(pool, wq("wind turbine noise"), emb).text == "wind turbine noise"


def test_embedding_orthogonal_tie_breaks_by_id():
    pool = QuestionPool.from_questions([("b", "battery"), ("a", "turbine")])
    emb = TfIdfEmbedder(pool.index)
    assert select_cq_embedding(pool, wq("sourdough"), emb).text == "turbine"


def test_embedding_matches_brute_force_cosine():
    pool = random_pool(20, 9)
    emb = TfIdfEmbedder(pool.index)
    idx = pool.index

    def vec(text):
        tf = Counter(A.analyze(text))
        return {t: n * idx.idf(t) for t, n in tf.items() if t in idx}

    def cos(u, v):
        dot = sum(u[t] * v.get(t, 0.0) for t in u)
        nu, nv = math.sqrt(sum(x * x for x in u.values())), math.sqrt(sum(x * x for x in v.values()))
        return dot / (nu * nv) if nu and nv else 0.0

    rng = random.Random(10)
    for _ in range(20):
        text = " ".join(rng.sample(VOCAB, 3))
        qv = vec(text)
        best = min(pool.questions, key=lambda qid: (-cos(qv, vec(pool.questions[qid])), qid))
        assert select_cq_embedding(pool, wq(text), emb).text == pool.questions[best]


def test_embedder_failure():
    class Broken:
        def embed(self, text):
            raise RuntimeError("no")

    with pytest.raises(EmbedderUnavailable):
        select_cq_embedding(random_pool(3, 1), wq("solar"), Broken())


class Fixed:
    def __init__(self, ents):
        self.ents = ents

    def extract(self, text):
        return [SalientEntity(s, v) for s, v in self.ents]


def one_result():
    return RankedList((("p", 1.0),), 10), {"p": Passage("p", "x")}


def test_entity_templates():
    r, ps = one_result()
    cfg = CQConfig()
    three = generate_cq_entity(r, ps, cfg, Fixed([("solar", 0.9), ("wind", 0.8), ("coal", 0.5)]))
    assert three.text == "Are you interested in solar, wind, or coal?"
    two = generate_cq_entity(r, ps, cfg, Fixed([("solar", 0.9), ("wind", 0.8)]))
    assert two.text == "Are you interested in solar or wind?"
    one = generate_cq_entity(r, ps, cfg, Fixed([("solar", 0.9)]))
    assert one.text == "Are you interested in solar?"
    assert render_entity_question(["a", "b", "c", "d"]) == "Are you interested in a, b, c, or d?"


def test_entity_threshold_and_cap():
    r, ps = one_result()
    with pytest.raises(NoEntities):
        generate_cq_entity(r, ps, CQConfig(), Fixed([("a", 0.2), ("b", 0.2)]))
    cq = generate_cq_entity(r, ps, CQConfig(m=2), Fixed([("c", 0.5), ("a", 0.9), ("b", 0.9), ("d", 0.35)]))
    assert cq.text == "Are you interested in a or b?"


def test_entity_dedup_across_passages():
    r = RankedList((("p1", 2.0), ("p2", 1.0)), 10)
    ps = {"p1": Passage("p1", "Apollo, then Apollo, then Moon."), "p2": Passage("p2", "Moon, Moon, Moon, and Apollo.")}
    cq = generate_cq_entity(r, ps, CQConfig(rho=0.0), CapitalizedPhraseExtractor())
    assert cq.text == "Are you interested in Apollo or Moon?"


def test_capitalized_phrase_extractor():
    ents = CapitalizedPhraseExtractor().extract("The Great Barrier Reef lies off Queensland. The reef is large.")
    assert {e.surface for e in ents} == {"Great Barrier Reef", "Queensland"}
    assert all(e.saliency == 1.0 for e in ents)


def test_read_question_pool(tmp_path):
    p = tmp_path / "q.jsonl"
    p.write_text('{"id": "a", "text": "x?"}\n{"id": "b"}\n', encoding="utf-8")
    with pytest.raises(ParseError, match="q.jsonl:2:"):
        read_question_pool(p)
