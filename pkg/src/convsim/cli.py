"""Command-line entry point: index, run, eval, compare, convert-topics."""

from __future__ import annotations

import json
import logging
import sys
from functools import wraps
from pathlib import Path

import click

from .analysis import Analyzer, load_stopwords
from .clarification import read_question_pool
from .client import ClientFactory
from .config import (
    ClarificationNeed,
    CQMethod,
    ExpansionKind,
    PromptFormat,
    RewriterKind,
    ScorerKind,
    load_config,
)
from .datasets import convert_cast_topics, read_information_needs, read_topics, write_topics
from .errors import ConfigError, DataError, RemoteServiceError, StageError
from .evaluation import (
    compare_reports,
    evaluate_run,
    format_comparison,
    format_report,
    format_run,
    read_qrels,
    read_run,
    stratify_by_feedback,
)
from .index import build_index, load_index, read_collection, save_index
from .pipeline import build_deps, run_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_REMOTE = 0, 1, 2, 3

logger = logging.getLogger("convsim")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, RemoteServiceError):
        return EXIT_REMOTE
    return EXIT_DATA


def _handled(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, DataError, RemoteServiceError, StageError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exit_code_for(exc))
        except (OSError, json.JSONDecodeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


def _choice(enum):
    return click.Choice([e.value for e in enum])


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for debug logging.")
def main(verbose: int) -> None:
    """Simulated-user feedback experiments for conversational passage retrieval."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("index")
@click.argument("collection", type=click.Path(exists=True, dir_okay=False))
@click.argument("index_path", type=click.Path(dir_okay=False))
@click.option("--no-lowercase", is_flag=True)
@click.option("--stemmer", type=click.Choice(["porter", "none"]), default="porter", show_default=True)
@click.option("--stopwords", type=click.Path(exists=True, dir_okay=False),
              help="One word per line; defaults to the bundled English list.")
@click.option("--no-stopwords", is_flag=True)
@_handled
def cmd_index(collection, index_path, no_lowercase, stemmer, stopwords, no_stopwords):
    """Build an inverted index from a TSV or JSON-lines passage collection."""
    words = frozenset() if no_stopwords else load_stopwords(stopwords)
    analyzer = Analyzer(lowercase=not no_lowercase, stopwords=words, stemmer=stemmer)
    passages = read_collection(collection)
    index = build_index(passages, analyzer)
    save_index(index_path, index, {p.id: p for p in passages})
    click.echo(f"indexed {index.doc_count} passages, {len(index.vocabulary)} terms -> {index_path}")


# Flags that mirror config fields, mapped onto dotted config keys.
_RUN_FLAGS = [
    ("run_tag", "--run-tag", str, None),
    ("rewriter", "--rewriter", _choice(RewriterKind), None),
    ("expansion", "--expansion", _choice(ExpansionKind), None),
    ("expansion_params.rm3_max_terms", "--rm3-max-terms", int, None),
    ("expansion_params.rocchio_alpha", "--rocchio-alpha", float, None),
    ("expansion_params.rocchio_beta", "--rocchio-beta", float, None),
    ("expansion_params.rocchio_gamma", "--rocchio-gamma", float, None),
    ("expansion_params.history_max_terms", "--history-max-terms", int, None),
    ("bm25.k1", "--k1", float, None),
    ("bm25.b", "--b", float, None),
    ("retrieval_k", "--retrieval-k", int, None),
    ("rerank.depth", "--rerank-depth", int, None),
    ("rerank.scorer", "--rerank-scorer", _choice(ScorerKind), None),
    ("rerank.prompt_format", "--prompt-format", _choice(PromptFormat), None),
    ("rerank.max_tokens", "--rerank-max-tokens", int, None),
    ("rerank.workers", "--rerank-workers", int, None),
    ("clarification.rho", "--cq-rho", float, None),
    ("clarification.m", "--cq-m", int, None),
    ("clarification.top_n_results", "--cq-top-n", int, None),
    ("clarification.clarification_need", "--clarification-need", _choice(ClarificationNeed), None),
    ("clarification.method", "--cq-method", _choice(CQMethod), None),
    ("feedback_rounds", "--feedback-rounds", int, None),
    ("response_top_k", "--response-top-k", int, None),
    ("response_max_tokens", "--response-max-tokens", int, None),
    ("stop_on_positive", "--stop-on-positive/--no-stop-on-positive", bool, None),
    ("patience", "--patience", int, None),
    ("use_manual_rewrite", "--manual-rewrite/--no-manual-rewrite", bool, None),
    ("workers", "--workers", int, None),
    ("simulator.completion.max_tokens", "--sim-max-tokens", int, None),
    ("simulator.completion.temperature", "--sim-temperature", float, None),
    ("simulator.completion.frequency_penalty", "--sim-frequency-penalty", float, None),
    ("simulator.completion.presence_penalty", "--sim-presence-penalty", float, None),
    ("remote.token_env", "--token-env", str, None),
    ("remote.timeout", "--timeout", float, None),
    ("remote.retries", "--retries", int, None),
    ("remote.max_in_flight", "--max-in-flight", int, None),
    ("remote.requests_per_minute", "--requests-per-minute", int, None),
]


def _param_name(dotted: str) -> str:
    return "opt_" + dotted.replace(".", "__")


def _run_options(fn):
    for dotted, flag, typ, default in reversed(_RUN_FLAGS):
        kwargs = {"default": default, "help": f"Overrides config field {dotted}."}
        if typ is bool:
            fn = click.option(flag, _param_name(dotted), **kwargs)(fn)
        else:
            fn = click.option(flag, _param_name(dotted), type=typ, **kwargs)(fn)
    return fn


def _parse_set(values) -> dict:
    out = {}
    for item in values:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _write_lines(path: Path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


@main.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--index", "index_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--topics", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--needs", type=click.Path(exists=True, dir_okay=False),
              help="Information needs; required when the simulator is used.")
@click.option("--questions", type=click.Path(exists=True, dir_okay=False),
              help="Clarifying-question pool (JSON lines).")
@click.option("--qrels", type=click.Path(exists=True, dir_okay=False),
              help="Evaluate the final run and write report.json.")
@click.option("--mock", "mocks", multiple=True, metavar="ROLE=PATH",
              help="Scripted responses for a model role.")
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
              help="Any dotted config field, value parsed as JSON when possible.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@_run_options
@_handled
def cmd_run(config_path, index_path, topics, needs, questions, qrels, mocks, sets, out_dir, **opts):
    """Run the pipeline over a topic file and write run files and transcripts."""
    overrides = {}
    for dotted, _flag, _typ, _default in _RUN_FLAGS:
        value = opts[_param_name(dotted)]
        if value is not None:
            overrides[dotted] = value
    for item in mocks:
        role, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--mock expects role=path, got {item!r}")
        overrides[f"mock_scripts.{role}"] = str(Path(path).resolve())
    overrides.update(_parse_set(sets))
    cfg = load_config(config_path, overrides)

    index, passages = load_index(index_path)
    conversations = read_topics(topics)
    ins = read_information_needs(needs) if needs else {}
    pool = read_question_pool(questions, index.analyzer) if questions else None
    judgments = read_qrels(qrels) if qrels else None

    deps = build_deps(cfg, index, passages, ClientFactory(cfg), pool)
    result = run_dataset(conversations, ins, judgments, cfg, deps)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_lines(out / "run.txt", result.run_lines(cfg.run_tag))
    if cfg.feedback_rounds:
        for i, rr in enumerate(result.round_runs):
            _write_lines(out / f"run.round{i}.txt", format_run(rr, f"{cfg.run_tag}.r{i}"))
    _write_lines(out / "transcripts.jsonl", result.transcripts)
    labels = {t: lab.polarity.value for t, lab in result.labels.items()}
    if labels:
        (out / "labels.json").write_text(json.dumps(labels, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "config.json").write_text(cfg.model_dump_json(indent=2) + "\n", encoding="utf-8")
    if result.report is not None:
        (out / "report.json").write_text(json.dumps(result.report.to_dict(), indent=2) + "\n", encoding="utf-8")
        click.echo(format_report(result.report), nl=False)
    click.echo(f"{len(result.run)} turns -> {out}", err=True)


@main.command("eval")
@click.argument("run_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("qrels_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-k", "depth", type=int, default=1000, show_default=True, help="Cutoff for recall/MAP/MRR/nDCG.")
@click.option("--threshold", type=int, default=2, show_default=True, help="Minimum grade counted as relevant.")
@click.option("--strata-labels", type=click.Path(exists=True, dir_okay=False),
              help="JSON object turn -> positive|negative.")
@click.option("--json", "json_path", type=click.Path(dir_okay=False), help="Also write the report as JSON.")
@_handled
def cmd_eval(run_path, qrels_path, depth, threshold, strata_labels, json_path):
    """Score a TREC run file against qrels."""
    run = read_run(run_path)
    qrels = read_qrels(qrels_path, threshold)
    report = evaluate_run(run, qrels, depth)
    if strata_labels:
        with open(strata_labels, encoding="utf-8") as fh:
            labels = json.load(fh)
        try:
            stratify_by_feedback(report, labels)
        except ValueError as exc:
            raise DataError(f"{strata_labels}: {exc}") from exc
    click.echo(format_report(report), nl=False)
    if json_path:
        Path(json_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


@main.command("compare")
@click.argument("run_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("run_b", type=click.Path(exists=True, dir_okay=False))
@click.argument("qrels_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-k", "depth", type=int, default=1000, show_default=True)
@click.option("--threshold", type=int, default=2, show_default=True)
@_handled
def cmd_compare(run_a, run_b, qrels_path, depth, threshold):
    """Per-metric deltas (B - A) with two-tailed paired t-tests."""
    qrels = read_qrels(qrels_path, threshold)
    a = evaluate_run(read_run(run_a), qrels, depth)
    b = evaluate_run(read_run(run_b), qrels, depth)
    click.echo(format_comparison(compare_reports(a, b)), nl=False)


@main.command("convert-topics")
@click.argument("cast_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
@_handled
def cmd_convert_topics(cast_path, out_path):
    """Convert CAsT-format topics into the topic JSON used by ``run``."""
    conversations = convert_cast_topics(cast_path)
    write_topics(out_path, conversations)
    click.echo(f"{len(conversations)} conversations, {sum(len(c.turns) for c in conversations)} turns -> {out_path}")


if __name__ == "__main__":
    main()
