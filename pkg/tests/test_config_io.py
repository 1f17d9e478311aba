import json

import pytest

from convsim.config import ExpansionKind, PipelineConfig, load_config
from convsim.datasets import convert_cast_topics, read_information_needs, read_topics, write_topics
from convsim.errors import ConfigError, ParseError


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.bm25.k1 == 4.46 and cfg.bm25.b == 0.82
    assert cfg.rerank is None and cfg.clarification is None
    assert cfg.simulator.completion.max_tokens == 50
    assert cfg.simulator.completion.temperature == 0.5
    assert cfg.simulator.completion.frequency_penalty == 0.2
    assert cfg.simulator.completion.presence_penalty == 0.5
    assert cfg.remote.timeout == 30 and cfg.remote.retries == 3


def test_load_with_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"expansion": "rm3", "mock_scripts": {"simulator": "s.jsonl"}}), encoding="utf-8")
    cfg = load_config(p, {"rerank.depth": 10, "feedback_rounds": 2})
    assert cfg.expansion is ExpansionKind.RM3 and cfg.rerank.depth == 10 and cfg.feedback_rounds == 2
    assert cfg.mock_scripts["simulator"] == str(tmp_path / "s.jsonl")


@pytest.mark.parametrize("doc", [
    {"feedback_rounds": 11},
    {"unknown_field": 1},
    {"mock_scripts": {"wizard": "x"}},
    {"bm25": {"k1": -1}},
])
def test_invalid_config(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(p)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_topics_round_trip(tmp_path, toy_dir):
    convs = read_topics(toy_dir / "topics.json")
    assert [c.conversation_id for c in convs] == ["1", "2", "3"]
    assert convs[0].turns[1].manual_rewrite.startswith("Why is the Great Barrier Reef")
    out = tmp_path / "t.json"
    write_topics(out, convs)
    assert read_topics(out) == convs


def test_topics_errors_have_lines(tmp_path):
    p = tmp_path / "t.json"
    p.write_text('{"conversations": [\n {"conversation_id": "1", "turns": [\n'
                 '  {"turn_id": "a", "raw_query": "x"},\n  {"turn_id": "a", "raw_query": "y"}\n]}]}',
                 encoding="utf-8")
    with pytest.raises(ParseError, match=r"t.json:4:"):
        read_topics(p)
    p.write_text('{"conversations": [\n', encoding="utf-8")
    with pytest.raises(ParseError, match=r"t.json:2:"):
        read_topics(p)


def test_information_needs(toy_dir, tmp_path):
    ins = read_information_needs(toy_dir / "needs.json")
    assert len(ins) == 6 and ins[("2", "2_2")].description.startswith("You want to know how often")
    p = tmp_path / "n.json"
    p.write_text('[\n{"conversation_id": "1", "turn": "1", "description": "a"},\n'
                 '{"conversation_id": "1", "turn": "1", "description": "b"}\n]', encoding="utf-8")
    with pytest.raises(ParseError, match=r"n.json:3:"):
        read_information_needs(p)


def test_convert_cast(tmp_path):
    p = tmp_path / "cast.json"
    p.write_text(json.dumps([
        {"number": 101, "turn": [
            {"number": 1, "raw_utterance": "What is throat cancer?", "manual_rewritten_utterance": "What is throat cancer?"},
            {"number": 2, "raw_utterance": "Is it treatable?"},
            {"number": 3, "participant": "System", "utterance": "Yes."},
        ]},
    ]), encoding="utf-8")
    [conv] = convert_cast_topics(p)
    assert conv.conversation_id == "101"
    assert [t.turn_id for t in conv.turns] == ["101_1", "101_2"]
    assert conv.turns[1].manual_rewrite is None
