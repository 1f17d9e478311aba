"""TREC-style effectiveness metrics, paired t-tests and feedback strata."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from scipy import stats

from .errors import DegenerateVariance, MissingJudgments, ParseError
from .model import FeedbackLabel, Polarity, RankedList

logger = logging.getLogger(__name__)

METRICS = ("recall", "map", "mrr", "ndcg", "ndcg_at_3")


@dataclass
class Qrels:
    judgments: dict[str, dict[str, int]]
    binary_threshold: int = 2

    def __post_init__(self):
        for turn, docs in self.judgments.items():
            for pid, g in docs.items():
                if not isinstance(g, int) or g < 0:
                    raise ValueError(f"bad grade {g!r} for {turn}/{pid}")

    def grades(self, turn: str) -> dict[str, int]:
        try:
            return self.judgments[turn]
        except KeyError:
            raise MissingJudgments(f"no judgments for turn {turn!r}") from None

    def relevant(self, turn: str, threshold: int | None = None) -> set[str]:
        t = self.binary_threshold if threshold is None else threshold
        return {pid for pid, g in self.grades(turn).items() if g >= t}

    @property
    def turns(self) -> list[str]:
        return list(self.judgments)


def read_qrels(path: str | Path, binary_threshold: int = 2) -> Qrels:
    judgments: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ParseError(str(path), lineno, f"expected 4 fields, got {len(parts)}")
            turn, _, pid, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise ParseError(str(path), lineno, f"grade {grade!r} is not an integer") from None
            if g < 0:
                raise ParseError(str(path), lineno, f"negative grade {g}")
            judgments.setdefault(turn, {})[pid] = g
    return Qrels(judgments, binary_threshold)


def read_run(path: str | Path) -> dict[str, RankedList]:
    rows: dict[str, list[tuple[float, int, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError(str(path), lineno, f"expected 6 fields, got {len(parts)}")
            turn, _, pid, rank, score, _tag = parts
            try:
                rows.setdefault(turn, []).append((float(score), int(rank), pid))
            except ValueError as exc:
                raise ParseError(str(path), lineno, str(exc)) from None
    run = {}
    for turn, entries in rows.items():
        entries.sort(key=lambda e: (-e[0], e[1]))
        try:
            run[turn] = RankedList(tuple((pid, s) for s, _, pid in entries), len(entries))
        except ValueError as exc:
            raise ParseError(str(path), 0, f"turn {turn}: {exc}") from None
    return run


def format_run(run: Mapping[str, RankedList], tag: str) -> list[str]:
    lines = []
    for turn, ranked in run.items():
        for rank, (pid, score) in enumerate(ranked.entries, 1):
            lines.append(f"{turn} Q0 {pid} {rank} {score:.6f} {tag}")
    return lines


# ---------------------------------------------------------------------------
# Per-turn metrics


def ndcg_at_k(ranked: RankedList, qrels: Qrels, turn: str, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    grades = qrels.grades(turn)
    dcg = sum(
        (2 ** grades.get(pid, 0) - 1) / math.log2(i + 1)
        for i, pid in enumerate(ranked.ids[:k], 1)
    )
    ideal = sorted(grades.values(), reverse=True)[:k]
    idcg = sum((2 ** g - 1) / math.log2(i + 1) for i, g in enumerate(ideal, 1))
    return dcg / idcg if idcg > 0 else 0.0


def average_precision(ranked: RankedList, qrels: Qrels, turn: str, depth: int = 1000,
                      threshold: int | None = None) -> float:
    rel = qrels.relevant(turn, threshold)
    if not rel:
        return 0.0
    hits, total = 0, 0.0
    for i, pid in enumerate(ranked.ids[:depth], 1):
        if pid in rel:
            hits += 1
            total += hits / i
    return total / len(rel)


def reciprocal_rank(ranked: RankedList, qrels: Qrels, turn: str, depth: int = 1000,
                    threshold: int | None = None) -> float:
    rel = qrels.relevant(turn, threshold)
    for i, pid in enumerate(ranked.ids[:depth], 1):
        if pid in rel:
            return 1.0 / i
    return 0.0


def recall(ranked: RankedList, qrels: Qrels, turn: str, depth: int = 1000,
           threshold: int | None = None) -> float:
    rel = qrels.relevant(turn, threshold)
    if not rel:
        return 0.0
    return len(rel.intersection(ranked.ids[:depth])) / len(rel)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class TurnMetrics:
    recall: float
    map: float
    mrr: float
    ndcg: float
    ndcg_at_3: float


@dataclass
class Stratum:
    count: int
    percentage: float
    macro: dict[str, float]


@dataclass
class EvalReport:
    per_turn: dict[str, TurnMetrics]
    macro: dict[str, float]
    strata: dict[str, Stratum] | None = None
    flagged: list[str] = field(default_factory=list)
    unjudged: list[str] = field(default_factory=list)

    def vector(self, metric: str, turns: Sequence[str] | None = None) -> list[float]:
        turns = list(self.per_turn) if turns is None else turns
        return [getattr(self.per_turn[t], metric) for t in turns]

    def to_dict(self) -> dict:
        out = {
            "per_turn": {t: asdict(m) for t, m in self.per_turn.items()},
            "macro": self.macro,
            "flagged": self.flagged,
            "unjudged": self.unjudged,
        }
        if self.strata is not None:
            out["strata"] = {k: asdict(v) for k, v in self.strata.items()}
        return out


def _macro(rows: Iterable[TurnMetrics]) -> dict[str, float]:
    rows = list(rows)
    if not rows:
        return {m: 0.0 for m in METRICS}
    return {m: sum(getattr(r, m) for r in rows) / len(rows) for m in METRICS}


def evaluate_turn(ranked: RankedList, qrels: Qrels, turn: str, depth: int = 1000,
                  threshold: int | None = None) -> TurnMetrics:
    return TurnMetrics(
        recall=recall(ranked, qrels, turn, depth, threshold),
        map=average_precision(ranked, qrels, turn, depth, threshold),
        mrr=reciprocal_rank(ranked, qrels, turn, depth, threshold),
        ndcg=ndcg_at_k(ranked, qrels, turn, depth),
        ndcg_at_3=ndcg_at_k(ranked, qrels, turn, 3),
    )


def evaluate_run(run: Mapping[str, RankedList], qrels: Qrels, depth: int = 1000,
                 threshold: int | None = None) -> EvalReport:
    """Macro-average over turns that are both in the run and judged.

    Turns without any judged-relevant passage score 0 on the binary
    metrics and are listed in ``flagged``.
    """
    per_turn: dict[str, TurnMetrics] = {}
    flagged, unjudged = [], []
    for turn in sorted(run):
        if turn not in qrels.judgments:
            unjudged.append(turn)
            continue
        per_turn[turn] = evaluate_turn(run[turn], qrels, turn, depth, threshold)
        if not qrels.relevant(turn, threshold):
            flagged.append(turn)
    if unjudged:
        logger.warning("%d run turn(s) have no judgments and were skipped", len(unjudged))
    return EvalReport(per_turn, _macro(per_turn.values()), None, flagged, unjudged)


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-tailed paired t-test; returns (t, p)."""
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    diffs = [x - y for x, y in zip(a, b)]
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        raise DegenerateVariance("differences are constant and nonzero")
    t = mean / math.sqrt(var / n)
    p = 2.0 * stats.t.sf(abs(t), n - 1)
    return t, min(1.0, float(p))


def _polarity(label) -> Polarity:
    if isinstance(label, FeedbackLabel):
        return label.polarity
    return Polarity(str(label).lower())


def stratify_by_feedback(report: EvalReport, labels: Mapping[str, FeedbackLabel | str]) -> dict[str, Stratum]:
    missing = [t for t in report.per_turn if t not in labels]
    if missing:
        raise ValueError(f"no feedback label for turn(s) {missing[:5]}")
    groups: dict[Polarity, list[TurnMetrics]] = {Polarity.POSITIVE: [], Polarity.NEGATIVE: []}
    for turn, metrics in report.per_turn.items():
        groups[_polarity(labels[turn])].append(metrics)
    total = len(report.per_turn)
    strata = {}
    for polarity, rows in groups.items():
        if not rows:
            logger.warning("no %s-feedback turns; stratum omitted", polarity.value)
            continue
        strata[polarity.value] = Stratum(len(rows), 100.0 * len(rows) / total, _macro(rows))
    report.strata = strata
    return strata


@dataclass
class Comparison:
    metric: str
    mean_a: float
    mean_b: float
    delta: float
    t: float
    p: float


def compare_reports(a: EvalReport, b: EvalReport) -> list[Comparison]:
    """Per-metric deltas (b - a) and paired t-tests over the turns both reports share."""
    turns = sorted(set(a.per_turn) & set(b.per_turn))
    out = []
    for metric in METRICS:
        va, vb = a.vector(metric, turns), b.vector(metric, turns)
        mean_a = sum(va) / len(va) if va else 0.0
        mean_b = sum(vb) / len(vb) if vb else 0.0
        try:
            t, p = paired_ttest(vb, va)
        except DegenerateVariance:
            t, p = math.copysign(math.inf, mean_b - mean_a), 0.0
        except ValueError:
            t, p = math.nan, math.nan
        out.append(Comparison(metric, mean_a, mean_b, mean_b - mean_a, t, p))
    return out


# ---------------------------------------------------------------------------
# Text output


_HEADER = ("recall", "map", "mrr", "ndcg", "ndcg@3")


def format_report(report: EvalReport) -> str:
    strata = [(f"{name} ({s.percentage:.1f}%)", s.macro) for name, s in (report.strata or {}).items()]
    width = max([len("turn"), len("all")] + [len(t) for t in report.per_turn] + [len(s) for s, _ in strata]) + 2
    rows = [(turn, asdict(m)) for turn, m in report.per_turn.items()]
    rows.append(("all", report.macro))
    rows.extend(strata)
    lines = [f"{'turn':<{width}}" + "".join(f"{h:>9}" for h in _HEADER)]
    for label, values in rows:
        lines.append(f"{label:<{width}}" + "".join(f"{values[k]:>9.4f}" for k in METRICS))
    return "\n".join(lines) + "\n"


def format_comparison(rows: Sequence[Comparison]) -> str:
    lines = [f"{'metric':<10}{'a':>9}{'b':>9}{'delta':>9}{'t':>9}{'p':>9}"]
    for r in rows:
        name = "ndcg@3" if r.metric == "ndcg_at_3" else r.metric
        lines.append(f"{name:<10}{r.mean_a:>9.4f}{r.mean_b:>9.4f}{r.delta:>+9.4f}{r.t:>9.3f}{r.p:>9.4f}")
    return "\n".join(lines) + "\n"
