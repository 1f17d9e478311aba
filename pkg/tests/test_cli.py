import json
import shutil

import pytest
from click.testing import CliRunner

from convsim.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def toy_index_file(runner, toy_dir, tmp_path):
    path = tmp_path / "toy.idx"
    res = runner.invoke(main, ["index", str(toy_dir / "collection.tsv"), str(path)])
    assert res.exit_code == 0, res.output
    return path


def run_args(toy_dir, index, out, *extra):
    return ["run", "--config", str(toy_dir / "config.json"), "--index", str(index),
            "--topics", str(toy_dir / "topics.json"), "--needs", str(toy_dir / "needs.json"),
            "--out", str(out), *extra]


def test_eval_matches_golden(runner, toy_dir):
    res = runner.invoke(main, ["eval", str(toy_dir / "run.txt"), str(toy_dir / "qrels.txt")])
    assert res.exit_code == 0
    assert res.output == (toy_dir / "eval_golden.txt").read_text(encoding="utf-8")


def test_eval_json_and_strata(runner, toy_dir, tmp_path):
    out = tmp_path / "r.json"
    res = runner.invoke(main, ["eval", str(toy_dir / "run.txt"), str(toy_dir / "qrels.txt"),
                               "--strata-labels", str(toy_dir / "labels.json"), "--json", str(out)])
    assert res.exit_code == 0, res.output
    doc = json.loads(out.read_text())
    assert doc["strata"]["positive"]["count"] == 2 and doc["strata"]["negative"]["count"] == 4
    assert "positive (33.3%)" in res.output


def test_compare_same_run(runner, toy_dir):
    run = str(toy_dir / "run.txt")
    res = runner.invoke(main, ["compare", run, run, str(toy_dir / "qrels.txt")])
    assert res.exit_code == 0
    rows = res.output.splitlines()[1:]
    assert len(rows) == 5
    for row in rows:
        parts = row.split()
        assert float(parts[3]) == 0.0 and float(parts[5]) == 1.0


def test_run_without_feedback_one_system_move_per_turn(runner, toy_dir, toy_index_file, tmp_path):
    out = tmp_path / "out"
    res = runner.invoke(main, run_args(toy_dir, toy_index_file, out, "--feedback-rounds", "0"))
    assert res.exit_code == 0, res.output
    moves = [json.loads(line) for line in (out / "transcripts.jsonl").read_text().splitlines()]
    per_turn = {}
    for m in moves:
        if m["role"] == "system":
            per_turn[(m["conversation_id"], m["turn"])] = per_turn.get((m["conversation_id"], m["turn"]), 0) + 1
    assert len(per_turn) == 6 and set(per_turn.values()) == {1}


def test_run_with_qrels_writes_report(runner, toy_dir, toy_index_file, tmp_path):
    out = tmp_path / "out"
    res = runner.invoke(main, run_args(toy_dir, toy_index_file, out, "--qrels", str(toy_dir / "qrels.txt")))
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert set(report["per_turn"]) == {"1_1", "1_2", "2_1", "2_2", "3_1", "3_2"}
    assert set(report["strata"]) == {"positive", "negative"}
    assert (out / "run.round2.txt").exists()


def test_manual_rewrite_and_set_flags(runner, toy_dir, toy_index_file, tmp_path):
    out = tmp_path / "out"
    res = runner.invoke(main, run_args(toy_dir, toy_index_file, out, "--feedback-rounds", "0",
                                       "--manual-rewrite", "--set", "run_tag=\"manual\"", "--k1", "1.2"))
    assert res.exit_code == 0, res.output
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["use_manual_rewrite"] and cfg["run_tag"] == "manual" and cfg["bm25"]["k1"] == 1.2
    assert (out / "run.txt").read_text().splitlines()[0].endswith(" manual")


def test_exit_codes(runner, toy_dir, toy_index_file, tmp_path, monkeypatch):
    # config error
    res = runner.invoke(main, run_args(toy_dir, toy_index_file, tmp_path / "a", "--set", "feedback_rounds=99"))
    assert res.exit_code == 1
    # data error with file:line
    bad = tmp_path / "bad.tsv"
    bad.write_text("d1\tok\nbroken line\n", encoding="utf-8")
    res = runner.invoke(main, ["index", str(bad), str(tmp_path / "i")])
    assert res.exit_code == 2 and f"{bad}:2:" in res.output
    # remote error: the mock script runs dry
    short = tmp_path / "short.jsonl"
    short.write_text('"No, wrong."\n', encoding="utf-8")
    res = runner.invoke(main, run_args(toy_dir, toy_index_file, tmp_path / "b", "--mock", f"simulator={short}"))
    assert res.exit_code == 3 and "exhausted" in res.output
    # remote mode without a token
    monkeypatch.delenv("CONVSIM_API_TOKEN", raising=False)
    cfg = tmp_path / "remote.json"
    cfg.write_text(json.dumps({"feedback_rounds": 1, "remote": {"endpoints": {
        "completion": {"url": "http://127.0.0.1:9/x", "response_path": "text"}}}}), encoding="utf-8")
    res = runner.invoke(main, ["run", "--config", str(cfg), "--index", str(toy_index_file),
                               "--topics", str(toy_dir / "topics.json"), "--needs", str(toy_dir / "needs.json"),
                               "--out", str(tmp_path / "c")])
    assert res.exit_code == 1 and "CONVSIM_API_TOKEN" in res.output


def test_missing_needs_is_config_error(runner, toy_dir, toy_index_file, tmp_path):
    res = runner.invoke(main, ["run", "--config", str(toy_dir / "config.json"), "--index", str(toy_index_file),
                               "--topics", str(toy_dir / "topics.json"), "--out", str(tmp_path / "o")])
    assert res.exit_code == 1


def test_convert_topics(runner, tmp_path):
    src = tmp_path / "cast.json"
    src.write_text(json.dumps([{"number": 7, "turn": [{"number": 1, "raw_utterance": "hi there"}]}]))
    dst = tmp_path / "topics.json"
    res = runner.invoke(main, ["convert-topics", str(src), str(dst)])
    assert res.exit_code == 0
    assert json.loads(dst.read_text())["conversations"][0]["turns"][0]["turn_id"] == "7_1"


def test_run_is_idempotent(runner, toy_dir, toy_index_file, tmp_path):
    outs = []
    for name in ("one", "two"):
        out = tmp_path / name
        res = runner.invoke(main, run_args(toy_dir, toy_index_file, out))
        assert res.exit_code == 0, res.output
        outs.append(out)
    for f in ("run.txt", "transcripts.jsonl", "run.round1.txt"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    shutil.rmtree(outs[1])
