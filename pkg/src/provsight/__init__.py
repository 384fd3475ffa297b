"""Endpoint behavior analytics: provenance graphs, security enrichment,
windowed sequence classification with attention-based explanations."""

__version__ = "0.1.0"

from .enrich import EnrichedGraph, SecurityFeatures, enrich_graphs
from .errors import ProvsightError
from .events import EventLog, EventType, RawEvent, load_log, make_log
from .experiment import RunConfig, run_experiment, split_graphs
from .explain import AttentionReport, attention_scores, top_k_events
from .graphs import BuildConfig, ProvenanceGraph, build_graphs
from .metrics import MetricsReport, RocCurve, auc, evaluate, roc, tpr_at_fpr
from .rules import RuleSet, default_rules, load_rules
from .synth import GroundTruth, SynthConfig, apply_ground_truth, generate_synthetic_corpus
from .transformer import TrainConfig, TransformerConfig, TransformerModel, train_model
from .windows import (
    FeatureCodec,
    Window,
    WindowConfig,
    WindowDataset,
    WindowMode,
    graph_to_sequence,
    make_windows,
)

__all__ = [
    "__version__",
    "AttentionReport",
    "BuildConfig",
    "EnrichedGraph",
    "EventLog",
    "EventType",
    "FeatureCodec",
    "GroundTruth",
    "MetricsReport",
    "ProvenanceGraph",
    "ProvsightError",
    "RawEvent",
    "RocCurve",
    "RuleSet",
    "RunConfig",
    "SecurityFeatures",
    "SynthConfig",
    "TrainConfig",
    "TransformerConfig",
    "TransformerModel",
    "Window",
    "WindowConfig",
    "WindowDataset",
    "WindowMode",
    "apply_ground_truth",
    "attention_scores",
    "auc",
    "build_graphs",
    "default_rules",
    "enrich_graphs",
    "evaluate",
    "generate_synthetic_corpus",
    "graph_to_sequence",
    "load_log",
    "load_rules",
    "make_log",
    "make_windows",
    "roc",
    "run_experiment",
    "split_graphs",
    "top_k_events",
    "tpr_at_fpr",
    "train_model",
]
