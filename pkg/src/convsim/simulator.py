"""Simulated user: answers clarifying questions and gives feedback on responses."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

from .analysis import Analyzer
from .config import CompletionParams, SimulatorConfig
from .errors import ConfigError, EmptyCompletion, SimulatorUnavailable, StateClosed
from .model import (
    ConversationState,
    Discourse,
    FeedbackLabel,
    InformationNeed,
    Move,
    Polarity,
    SystemKind,
    SystemUtterance,
    Utterance,
)

ANSWER_TASK = (
    "You are a user talking to a search system. The system has asked you a clarifying "
    "question. Answer it briefly and in line with your information need. Do not ask new questions."
)
FEEDBACK_TASK = (
    "You are a user talking to a search system. Give short feedback on the system's last "
    "response with respect to your information need. If it satisfies the need, say so. "
    "If it does not, say so and, where useful, ask a more specific follow-up question."
)


def _read_text(path: str | None, default_name: str) -> str:
    if path is None:
        return resources.files("convsim.data").joinpath(default_name).read_text("utf-8")
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def load_fewshot(path: str | None, default_name: str) -> list[str]:
    """Few-shot transcripts separated by lines containing only ``---``."""
    text = _read_text(path, default_name)
    return [block.strip() for block in re.split(r"^---\s*$", text, flags=re.M) if block.strip()]


def render_history(history: Sequence[Move]) -> str:
    lines = []
    for move in history:
        speaker = "User" if move.role == "user" else "System"
        lines.append(f"{speaker}: {move.text}")
    return "\n".join(lines)


@dataclass(frozen=True)
class PromptSpec:
    task_description: str
    information_need: str
    few_shot_transcripts: tuple[str, ...]
    history_rendering: str

    def render(self) -> str:
        for name in ("task_description", "information_need", "history_rendering"):
            if not getattr(self, name).strip():
                raise ValueError(f"prompt field {name} is empty")
        if not self.few_shot_transcripts:
            raise ValueError("prompt needs at least one few-shot transcript")
        examples = "\n\n".join(f"Example {i}:\n{t}" for i, t in enumerate(self.few_shot_transcripts, 1))
        return (
            f"{self.task_description}\n\n{examples}\n\n"
            f"Now it is your turn.\nInformation need: {self.information_need}\n"
            f"{self.history_rendering}\nUser:"
        )


# ---------------------------------------------------------------------------
# Feedback polarity


def _compile(patterns: Sequence[str]) -> list[re.Pattern]:
    return [re.compile(r"(?<!\w)" + re.escape(p.lower())) for p in patterns]


def _normalize(text: str) -> str:
    return text.lower().replace("’", "'").replace("‘", "'")


class FeedbackClassifier:
    """Rule cascade: negation -> question with content -> gratitude -> negative."""

    def __init__(self, negative: Sequence[str], positive: Sequence[str], analyzer: Analyzer | None = None):
        self.negative = _compile(negative)
        self.positive = _compile(positive)
        self.analyzer = analyzer or Analyzer()

    @classmethod
    def from_file(cls, path: str | None = None) -> "FeedbackClassifier":
        data = json.loads(_read_text(path, "feedback_patterns.json"))
        return cls(data["negative"], data["positive"])

    def _question_has_content(self, text: str) -> bool:
        for sentence in re.findall(r"[^.!?]*\?", text):
            for pat in self.positive:
                sentence = pat.sub(" ", sentence)
            if self.analyzer.analyze(sentence):
                return True
        return False

    def classify(self, text: str) -> FeedbackLabel:
        norm = _normalize(text)
        if any(p.search(norm) for p in self.negative):
            return FeedbackLabel(Polarity.NEGATIVE, False)
        if "?" in norm and self._question_has_content(norm):
            return FeedbackLabel(Polarity.NEGATIVE, True)
        if any(p.search(norm) for p in self.positive):
            return FeedbackLabel(Polarity.POSITIVE, False)
        return FeedbackLabel(Polarity.NEGATIVE, False)


_default_classifier: FeedbackClassifier | None = None


def classify_feedback(text: str, classifier: FeedbackClassifier | None = None) -> FeedbackLabel:
    global _default_classifier
    if classifier is None:
        if _default_classifier is None:
            _default_classifier = FeedbackClassifier.from_file()
        classifier = _default_classifier
    return classifier.classify(text)


def should_continue(state: ConversationState, label: FeedbackLabel, stop_on_positive: bool) -> bool:
    if state.patience == 0:
        return False
    return not (stop_on_positive and label.positive)


# ---------------------------------------------------------------------------
# Simulator


class Simulator:
    """Binds a completion client to prompts, parameters and the polarity classifier."""

    def __init__(
        self,
        client,
        params: CompletionParams | None = None,
        classifier: FeedbackClassifier | None = None,
        fewshot_answer: Sequence[str] | None = None,
        fewshot_feedback: Sequence[str] | None = None,
    ):
        self.client = client
        self.params = params or CompletionParams()
        self.classifier = classifier or FeedbackClassifier.from_file()
        self.fewshot_answer = tuple(fewshot_answer or load_fewshot(None, "fewshot_answer.txt"))
        self.fewshot_feedback = tuple(fewshot_feedback or load_fewshot(None, "fewshot_feedback.txt"))

    @classmethod
    def from_config(cls, client, cfg: SimulatorConfig) -> "Simulator":
        return cls(
            client,
            cfg.completion,
            FeedbackClassifier.from_file(cfg.patterns_path),
            load_fewshot(cfg.fewshot_answer_path, "fewshot_answer.txt"),
            load_fewshot(cfg.fewshot_feedback_path, "fewshot_feedback.txt"),
        )

    def build_prompt(self, task: str, fewshot: Sequence[str], in_need: InformationNeed,
                     last: SystemUtterance, state: ConversationState) -> str:
        history = list(state.history)
        if not history or history[-1] != last:
            history.append(last)
        return PromptSpec(task, in_need.description, tuple(fewshot), render_history(history)).render()

    def _complete(self, prompt: str) -> str:
        try:
            text = self.client.complete(prompt, self.params).strip()
            if not text:
                text = self.client.complete(prompt, self.params).strip()
        except ConfigError:
            raise
        except Exception as exc:
            raise SimulatorUnavailable(f"simulator completion failed: {exc}") from exc
        if not text:
            raise EmptyCompletion("simulator returned an empty completion twice")
        return text

    def answer_clarifying(self, in_need: InformationNeed, cq: SystemUtterance,
                          state: ConversationState) -> Utterance:
        if cq.kind is not SystemKind.CLARIFYING_QUESTION:
            raise ValueError("answer_clarifying expects a clarifying question")
        prompt = self.build_prompt(ANSWER_TASK, self.fewshot_answer, in_need, cq, state)
        return Utterance(Discourse.ANSWER, self._complete(prompt), state.current_turn)

    def give_feedback(self, in_need: InformationNeed, response: SystemUtterance,
                      state: ConversationState) -> tuple[Utterance, FeedbackLabel]:
        if response.kind is not SystemKind.RESPONSE:
            raise ValueError("give_feedback expects a system response")
        if state.closed:
            raise StateClosed(f"no feedback left (patience={state.patience}, satisfied={state.satisfied})")
        prompt = self.build_prompt(FEEDBACK_TASK, self.fewshot_feedback, in_need, response, state)
        text = self._complete(prompt)
        return Utterance(Discourse.FEEDBACK, text, state.current_turn), self.classifier.classify(text)


def answer_clarifying(in_need, cq, state, client) -> Utterance:
    return Simulator(client).answer_clarifying(in_need, cq, state)


def give_feedback(in_need, response, state, client) -> tuple[Utterance, FeedbackLabel]:
    return Simulator(client).give_feedback(in_need, response, state)
