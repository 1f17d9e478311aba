"""Text analysis: tokenization, stopping and stemming."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from nltk.stem.porter import PorterStemmer

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

_porter = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


@lru_cache(maxsize=200_000)
def _stem(token: str) -> str:
    return _porter.stem(token, to_lowercase=False)


def load_stopwords(path: str | None = None) -> frozenset[str]:
    if path is None:
        text = resources.files("convsim.data").joinpath("stopwords_en.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


DEFAULT_STOPWORDS = load_stopwords()


@dataclass(frozen=True)
class Analyzer:
    """Deterministic text -> term pipeline used for documents and queries alike."""

    lowercase: bool = True
    stopwords: frozenset[str] = field(default=DEFAULT_STOPWORDS, repr=False)
    stemmer: str = "porter"

    def __post_init__(self):
        if self.stemmer not in ("porter", "none"):
            raise ValueError(f"unknown stemmer {self.stemmer!r}")

    def spans(self, text: str) -> list[tuple[str, int, int]]:
        """Analyzed terms with the character span of their source token."""
        out = []
        for m in _TOKEN.finditer(text):
            tok = m.group(0)
            if self.lowercase:
                tok = tok.lower()
            if tok.lower() in self.stopwords:
                continue
            if self.stemmer == "porter":
                tok = _stem(tok)
            out.append((tok, m.start(), m.end()))
        return out

    def analyze(self, text: str) -> list[str]:
        return [t for t, _, _ in self.spans(text)]

    def count(self, text: str) -> int:
        return len(self.spans(text))

    def truncate(self, text: str, max_tokens: int) -> str:
        """Cut ``text`` right after its ``max_tokens``-th analyzed token."""
        if max_tokens <= 0:
            return ""
        spans = self.spans(text)
        if len(spans) <= max_tokens:
            return text
        return text[: spans[max_tokens - 1][2]]

    def to_dict(self) -> dict:
        return {
            "lowercase": self.lowercase,
            "stemmer": self.stemmer,
            "stopwords": sorted(self.stopwords),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Analyzer":
        return cls(
            lowercase=d.get("lowercase", True),
            stopwords=frozenset(d["stopwords"]) if "stopwords" in d else DEFAULT_STOPWORDS,
            stemmer=d.get("stemmer", "porter"),
        )
