"""Simulated-user feedback experiments for conversational passage retrieval."""

from .analysis import Analyzer
from .config import PipelineConfig, load_config
from .evaluation import EvalReport, Qrels, evaluate_run, paired_ttest
from .index import BM25Params, InvertedIndex, bm25_retrieve, build_index
from .model import (
    ConversationState,
    FeedbackLabel,
    InformationNeed,
    Passage,
    RankedList,
    SystemUtterance,
    Utterance,
    WeightedQuery,
)
from .pipeline import PipelineDeps, build_deps, run_dataset, run_turn

__version__ = "0.1.0"

__all__ = [
    "Analyzer", "BM25Params", "ConversationState", "EvalReport", "FeedbackLabel", "InformationNeed",
    "InvertedIndex", "Passage", "PipelineConfig", "PipelineDeps", "Qrels", "RankedList",
    "SystemUtterance", "Utterance", "WeightedQuery", "bm25_retrieve", "build_deps", "build_index",
    "evaluate_run", "load_config", "paired_ttest", "run_dataset", "run_turn",
]
