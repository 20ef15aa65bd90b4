"""Metrics and diagnostics over prediction dumps; imports no model code."""

from .diagnostics import (
    EntropyAnalysis,
    GenerativeWorld,
    class_separation,
    embedding_diagnostics,
    entropy,
    entropy_error_histogram,
    entropy_noise_dumps,
    error_category_table,
    factorization_check,
    mixture,
    sharpen,
    write_cosine_csv,
)
from .dump import DumpError, SceneDump, as_f32, load_dump, perfect_dump, random_dump, save_dump
from .metrics import (
    object_mean_recall_at_k,
    object_recall_at_k,
    predicate_frequencies,
    predicate_mean_recall_at_k,
    predicate_recall_at_k,
    sgcls_predcls,
    split_metrics,
    tercile_groups,
    triplet_mean_recall_at_k,
    triplet_recall_at_k,
    triplet_vocabulary,
)
from .report import Row, build_report, load_report, lookup, save_report

__all__ = [
    "DumpError",
    "EntropyAnalysis",
    "GenerativeWorld",
    "Row",
    "SceneDump",
    "as_f32",
    "build_report",
    "class_separation",
    "embedding_diagnostics",
    "entropy",
    "entropy_error_histogram",
    "entropy_noise_dumps",
    "error_category_table",
    "factorization_check",
    "load_dump",
    "load_report",
    "lookup",
    "mixture",
    "object_mean_recall_at_k",
    "object_recall_at_k",
    "perfect_dump",
    "predicate_frequencies",
    "predicate_mean_recall_at_k",
    "predicate_recall_at_k",
    "random_dump",
    "save_dump",
    "save_report",
    "sgcls_predcls",
    "sharpen",
    "split_metrics",
    "tercile_groups",
    "triplet_mean_recall_at_k",
    "triplet_recall_at_k",
    "triplet_vocabulary",
    "write_cosine_csv",
]
