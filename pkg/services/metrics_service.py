"""
Scalar privacy-leakage metrics and chance/prior baselines.

This module provides:
- Demographic classification accuracy
- Hit rate at k for retrieval rankings, with empty-positive exclusion
- Chance hit rate of a uniformly random top-k
- Majority-class prior accuracy
- Attribute consistency at k (retrieval used as a demographic classifier)

Author: EgoLeak Team
Version: 1.0.0
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Any, Dict, Hashable, Iterable, Mapping, Sequence, Set

from config import Config
from utils.error_handling import MissingDataError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricReport:
    """One metric value with its evaluation counts and parameters."""
    metric_name: str
    value: float
    n_evaluated: int
    n_excluded: int = 0
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValidationError(f"{self.metric_name} value {self.value} outside [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric_name": self.metric_name,
            "value": round(float(self.value), Config.METRIC_DECIMALS),
            "n_evaluated": self.n_evaluated,
            "n_excluded": self.n_excluded,
            "parameters": dict(self.parameters),
        }


def accuracy(predictions: Mapping[str, Hashable], labels: Mapping[str, Hashable],
             name: str = "accuracy") -> MetricReport:
    """
    Fraction of predicted clips whose prediction equals their label.

    Raises:
        MissingDataError: a predicted clip has no label
        ValidationError: nothing to evaluate
    """
    if not predictions:
        raise ValidationError("empty evaluation set")
    missing = [clip_id for clip_id in predictions if clip_id not in labels]
    if missing:
        raise MissingDataError(f"prediction for unlabeled clip {sorted(missing)[0]}")
    correct = sum(1 for clip_id, predicted in predictions.items() if labels[clip_id] == predicted)
    return MetricReport(name, correct / len(predictions), n_evaluated=len(predictions))


def hit_rate_at_k(rankings: Mapping[str, Sequence[str]], positives: Mapping[str, Set[str]], k: int) -> MetricReport:
    """
    Fraction of queries whose top-k candidates contain at least one positive.

    Args:
        rankings: query id -> candidate ids in rank order (or Ranking objects)
        positives: query id -> positive clip ids; empty sets are excluded
        k: cut-off

    Raises:
        ValidationError: k < 1, or k exceeds a ranking's gallery size
    """
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    hits = evaluated = excluded = 0
    for query_id, ranking in rankings.items():
        candidate_ids = _candidate_ids(ranking)
        if k > len(candidate_ids):
            raise ValidationError(f"k={k} exceeds gallery size {len(candidate_ids)} for query {query_id}")
        positive = positives.get(query_id, set())
        if not positive:
            excluded += 1
            continue
        evaluated += 1
        if any(candidate in positive for candidate in candidate_ids[:k]):
            hits += 1
    if excluded:
        logger.info(f"HR@{k}: excluded {excluded} queries with empty positive sets")
    value = hits / evaluated if evaluated else 0.0
    return MetricReport(f"HR@{k}", value, n_evaluated=evaluated, n_excluded=excluded, parameters={"k": k})


def chance_hit_rate(gallery_size: int, positives_per_query: int, k: int) -> float:
    """
    Probability that a uniformly random size-k subset of N clips hits one of p positives.

    Computed exactly as 1 - C(N-p, k) / C(N, k) before conversion to float.
    """
    n, p = gallery_size, positives_per_query
    if not (0 < p <= n):
        raise ValidationError(f"need 0 < positives ({p}) <= gallery size ({n})")
    if not (0 < k <= n):
        raise ValidationError(f"need 0 < k ({k}) <= gallery size ({n})")
    return float(1 - Fraction(comb(n - p, k), comb(n, k)))


def majority_class(labels: Iterable[Hashable]) -> Hashable:
    """Most frequent label; ties go to the lexicographically smallest label."""
    counts = Counter(labels)
    if not counts:
        raise ValidationError("empty train set")
    top = max(counts.values())
    return min(label for label, count in counts.items() if count == top)


def prior_accuracy(train_labels: Sequence[Hashable], test_labels: Sequence[Hashable]) -> MetricReport:
    """Accuracy of predicting the training majority class for every test item."""
    if not train_labels:
        raise ValidationError("empty train set")
    if not test_labels:
        raise ValidationError("empty evaluation set")
    majority = majority_class(train_labels)
    correct = sum(1 for label in test_labels if label == majority)
    return MetricReport("prior", correct / len(test_labels), n_evaluated=len(test_labels),
                        parameters={"majority": majority})


def attribute_consistency_at_k(rankings: Mapping[str, Sequence[str]], attribute_of: Mapping[str, Hashable],
                               k: int, name: str = "attribute_consistency") -> MetricReport:
    """
    Fraction of queries whose top-k candidates include one sharing the query's attribute.

    Queries without an attribute are excluded and counted.

    Raises:
        MissingDataError: a top-k candidate has no attribute
    """
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    hits = evaluated = excluded = 0
    for query_id, ranking in rankings.items():
        query_attribute = attribute_of.get(query_id)
        if query_attribute is None:
            excluded += 1
            continue
        top = _candidate_ids(ranking)[:k]
        if len(top) < k:
            raise ValidationError(f"k={k} exceeds gallery size {len(top)} for query {query_id}")
        unlabeled = [candidate for candidate in top if attribute_of.get(candidate) is None]
        if unlabeled:
            raise MissingDataError(f"candidate {unlabeled[0]} has no attribute")
        evaluated += 1
        if any(attribute_of[candidate] == query_attribute for candidate in top):
            hits += 1
    if not evaluated:
        raise ValidationError("empty evaluation set")
    return MetricReport(f"{name}@{k}", hits / evaluated, n_evaluated=evaluated, n_excluded=excluded,
                        parameters={"k": k})


def chance_attribute_consistency(attribute_of: Mapping[str, Hashable]) -> float:
    """Probability that a random candidate shares a random query's class: sum of squared class frequencies."""
    counts = Counter(value for value in attribute_of.values() if value is not None)
    total = sum(counts.values())
    if not total:
        raise ValidationError("no labelled clips")
    return sum((count / total) ** 2 for count in counts.values())


def _candidate_ids(ranking) -> Sequence[str]:
    if hasattr(ranking, "candidate_ids"):
        return ranking.candidate_ids
    return list(ranking)
