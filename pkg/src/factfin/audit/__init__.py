"""Benchmark answer scoring and memorization audit metrics."""

from factfin.audit.metrics import AuditInputs, audit_report, bias_score, generalization_change, memory_score
from factfin.audit.scoring import (
    CATEGORIES, AnswerRecord, BenchReport, QaItem, ScoringError, bench_accuracy, bundled, load_answers,
    load_items, price_bands, score_answer,
)

__all__ = [
    "AuditInputs", "audit_report", "bias_score", "generalization_change", "memory_score", "CATEGORIES",
    "AnswerRecord", "BenchReport", "QaItem", "ScoringError", "bench_accuracy", "bundled", "load_answers",
    "load_items", "price_bands", "score_answer",
]
