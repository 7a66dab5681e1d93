"""Retrieval metrics against category ground truth.

AP is list-local: it is normalised by the number of relevant items that
appear in the ranked list. Precision@K always divides by K, so short or
empty result lists are penalised.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

__all__ = ["GroundTruth", "MetricReport", "average_precision", "precision_at_k", "evaluate", "AP_VARIANT"]

log = logging.getLogger(__name__)

AP_VARIANT = "list-local (normalised by relevant items retrieved)"


def _relevance(ranked: Sequence, relevant) -> np.ndarray:
    if callable(relevant):
        return np.fromiter((bool(relevant(item)) for item in ranked), dtype=bool, count=len(ranked))
    return np.asarray(relevant, dtype=bool)


def average_precision(ranked: Sequence, relevant: Callable | Iterable[bool]) -> float:
    """Mean of precision@p over the positions p of relevant hits.

    ``relevant`` is either a predicate on list items or a boolean mask
    aligned with ``ranked``. Returns 0.0 (with a warning) when nothing in
    the list is relevant.
    """
    hits = _relevance(ranked, relevant)
    total = int(hits.sum())
    if total == 0:
        log.warning("average precision: no relevant item in a list of %d", len(hits))
        return 0.0
    positions = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, total + 1) / positions))


def precision_at_k(ranked: Sequence, relevant: Callable | Iterable[bool], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    hits = _relevance(ranked, relevant)
    return float(np.count_nonzero(hits[:k])) / k


@dataclass(frozen=True)
class GroundTruth:
    query_category: Mapping[str, str]
    video_category: Mapping[str, str]


@dataclass(frozen=True)
class MetricReport:
    map: float
    precision_at_k: float
    k: int
    per_query: dict = field(default_factory=dict)  # query id -> (AP, P@K)

    def to_text(self) -> str:
        lines = [
            f"ap_variant={AP_VARIANT}",
            f"queries={len(self.per_query)}",
            f"map={self.map:.6f}",
            f"k={self.k}",
            f"precision_at_k={self.precision_at_k:.6f}",
        ]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = ["query_id\tap\tprecision_at_k"]
        for qid in sorted(self.per_query):
            ap, pk = self.per_query[qid]
            rows.append(f"{qid}\t{ap!r}\t{pk!r}")
        return "\n".join(rows) + "\n"


def evaluate(run: Mapping[str, Sequence[str]], truth: GroundTruth, k: int = 500) -> MetricReport:
    """Aggregate AP and P@K over every query in ``run``.

    ``run`` maps query ids to ranked video ids. Any id missing from
    ``truth`` is a hard error.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    bad_queries = sorted(q for q in run if q not in truth.query_category)
    bad_videos = sorted({v for ranked in run.values() for v in ranked if v not in truth.video_category})
    if bad_queries or bad_videos:
        parts = []
        if bad_queries:
            parts.append("unknown query ids: " + ", ".join(bad_queries))
        if bad_videos:
            parts.append("unknown video ids: " + ", ".join(bad_videos))
        raise DataError("; ".join(parts))
    if not run:
        raise DataError("run contains no queries")

    per_query = {}
    for qid in sorted(run):
        ranked = list(run[qid])
        cat = truth.query_category[qid]
        mask = np.array([truth.video_category[v] == cat for v in ranked], dtype=bool)
        ap = average_precision(ranked, mask) if ranked else 0.0
        per_query[qid] = (ap, precision_at_k(ranked, mask, k))
    aps = [v[0] for v in per_query.values()]
    pks = [v[1] for v in per_query.values()]
    return MetricReport(float(np.mean(aps)), float(np.mean(pks)), k, per_query)
