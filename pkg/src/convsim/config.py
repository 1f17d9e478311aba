"""Pipeline configuration document (JSON) and its parts."""

from __future__ import annotations

import json
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .index import BM25Params


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)


class RewriterKind(str, Enum):
    NONE = "none"
    REMOTE = "remote"
    DISCOURSE_GATED = "discourse_gated"


class ExpansionKind(str, Enum):
    NONE = "none"
    RM3 = "rm3"
    ROCCHIO = "rocchio"
    HISTORY = "history"


class ScorerKind(str, Enum):
    REMOTE = "remote"
    LEXICAL_FALLBACK = "lexical_fallback"


class PromptFormat(str, Enum):
    MONOT5 = "monot5"
    CROSS_ENCODER = "cross_encoder"


class ClarificationNeed(str, Enum):
    NEVER = "never"
    ALWAYS = "always"


class CQMethod(str, Enum):
    SELECT_BM25 = "select_bm25"
    SELECT_EMBEDDING = "select_embedding"
    GENERATE_ENTITY = "generate_entity"


class ExpansionConfig(_Model):
    rm3_max_terms: int = Field(10, ge=1)
    rocchio_alpha: float = Field(1.0, ge=0)
    rocchio_beta: float = Field(0.75, ge=0)
    rocchio_gamma: float = 0.0
    history_max_terms: int = Field(10, ge=1)


class RerankConfig(_Model):
    depth: int = Field(100, ge=1)
    scorer: ScorerKind = ScorerKind.LEXICAL_FALLBACK
    prompt_format: PromptFormat = PromptFormat.MONOT5
    max_tokens: int = Field(512, ge=1)
    workers: int = Field(1, ge=1)


class CQConfig(_Model):
    rho: float = 0.35
    m: int = Field(3, ge=1)
    top_n_results: int = Field(3, ge=1)
    clarification_need: ClarificationNeed = ClarificationNeed.ALWAYS
    method: CQMethod = CQMethod.SELECT_BM25


class CompletionParams(_Model):
    max_tokens: int = 50
    temperature: float = 0.5
    frequency_penalty: float = 0.2
    presence_penalty: float = 0.5


class EndpointConfig(_Model):
    url: str
    response_path: str
    extra_body: dict[str, Any] = Field(default_factory=dict)


class RemoteConfig(_Model):
    """Shared transport settings plus one endpoint per model role."""

    token_env: str = "CONVSIM_API_TOKEN"
    timeout: float = Field(30.0, gt=0)
    retries: int = Field(3, ge=1)
    backoff: float = Field(1.0, ge=0)
    max_in_flight: int = Field(4, ge=1)
    requests_per_minute: Optional[int] = Field(None, ge=1)
    endpoints: dict[str, EndpointConfig] = Field(default_factory=dict)


class SimulatorConfig(_Model):
    completion: CompletionParams = CompletionParams()
    patterns_path: Optional[str] = None
    fewshot_answer_path: Optional[str] = None
    fewshot_feedback_path: Optional[str] = None


class PipelineConfig(_Model):
    run_tag: str = "convsim"
    rewriter: RewriterKind = RewriterKind.NONE
    expansion: ExpansionKind = ExpansionKind.NONE
    expansion_params: ExpansionConfig = ExpansionConfig()
    bm25: BM25Params = BM25Params()
    retrieval_k: int = Field(1000, ge=1)
    rerank: Optional[RerankConfig] = None
    clarification: Optional[CQConfig] = None
    feedback_rounds: int = Field(0, ge=0, le=10)
    response_top_k: int = Field(3, ge=1)
    response_max_tokens: int = Field(250, ge=1)
    stop_on_positive: bool = False
    patience: Optional[int] = Field(None, ge=0)
    use_manual_rewrite: bool = False
    workers: int = Field(1, ge=1)
    simulator: SimulatorConfig = SimulatorConfig()
    remote: RemoteConfig = RemoteConfig()
    mock_scripts: dict[str, str] = Field(default_factory=dict)

    @field_validator("mock_scripts")
    @classmethod
    def _known_roles(cls, v: dict[str, str]) -> dict[str, str]:
        unknown = set(v) - MODEL_ROLES
        if unknown:
            raise ValueError(f"unknown model roles {sorted(unknown)}; expected {sorted(MODEL_ROLES)}")
        return v


MODEL_ROLES = {"simulator", "rewriter", "summarizer", "scorer", "embedder", "selector"}


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Load a config document and apply dotted-key overrides (``rerank.depth``)."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = Path(path).resolve().parent
        for role, script in list(data.get("mock_scripts", {}).items()):
            if not Path(script).is_absolute():
                data["mock_scripts"][role] = str(base / script)
    for key, value in (overrides or {}).items():
        _set_dotted(data, key, value)
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid pipeline config: {exc}") from exc


def _set_dotted(data: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        node = child
    if value is None and parts[-1] in node:
        del node[parts[-1]]
    elif value is not None:
        node[parts[-1]] = value
