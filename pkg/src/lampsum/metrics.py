"""Evaluation metrics for the LaMP tasks and aggregation over repeated runs.

Conventions:

* accuracy is exact match after stripping and case-folding;
* F1 is macro-averaged over the labels that occur in the golds, with
  predictions outside the label set mapped to a reserved invalid label;
* a rating prediction that does not parse as an integer 1..5 is scored as
  the valid rating farthest from its gold;
* ROUGE uses ``retrieval.tokenize`` with no stemming; empty vs empty scores
  1.0 and empty vs non-empty scores 0.0.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .retrieval import tokenize
from .store import parse_rating

METRIC_IDS = ("accuracy", "f1", "mae", "rmse", "rouge1", "rougeL")
LOWER_IS_BETTER = frozenset({"mae", "rmse"})
HIGHER_IS_BETTER = frozenset({"accuracy", "f1", "rouge1", "rougeL"})
INVALID_LABEL = "\x00invalid"


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricValue:
    metric_id: str
    value: float
    n: int

    def __post_init__(self):
        if self.metric_id not in METRIC_IDS:
            raise MetricError(f"unknown metric {self.metric_id!r}")
        if self.n <= 0:
            raise MetricError("metric computed over zero samples")
        hi = 1.0 + 1e-12 if self.metric_id in HIGHER_IS_BETTER else math.inf
        if not -1e-12 <= self.value <= hi:
            raise MetricError(f"{self.metric_id} value {self.value} out of range")


def higher_is_better(metric_id: str) -> bool:
    if metric_id in HIGHER_IS_BETTER:
        return True
    if metric_id in LOWER_IS_BETTER:
        return False
    raise MetricError(f"no known direction for metric {metric_id!r}")


def _check(preds: Sequence, golds: Sequence) -> None:
    if len(preds) != len(golds):
        raise MetricError(f"{len(preds)} predictions vs {len(golds)} golds")
    if not golds:
        raise MetricError("empty input")


def _norm(s: str) -> str:
    return s.strip().casefold()


def accuracy(preds: Sequence[str], golds: Sequence[str]) -> MetricValue:
    _check(preds, golds)
    hits = sum(_norm(p) == _norm(g) for p, g in zip(preds, golds))
    return MetricValue("accuracy", hits / len(golds), len(golds))


def macro_f1(preds: Sequence[str], golds: Sequence[str], label_set: Iterable[str]) -> MetricValue:
    _check(preds, golds)
    labels = {_norm(label) for label in label_set}
    g = [_norm(x) for x in golds]
    stray = sorted(set(g) - labels)
    if stray:
        raise MetricError(f"gold labels outside the label set: {stray}")
    p = [_norm(x) if _norm(x) in labels else INVALID_LABEL for x in preds]
    tp: Counter = Counter()
    pred_count: Counter = Counter(p)
    gold_count: Counter = Counter(g)
    for a, b in zip(p, g):
        if a == b:
            tp[b] += 1
    scores = []
    for label in sorted(gold_count):
        prec = tp[label] / pred_count[label] if pred_count[label] else 0.0
        rec = tp[label] / gold_count[label]
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return MetricValue("f1", sum(scores) / len(scores), len(golds))


def parse_rating_prediction(pred: str, gold: int) -> int:
    value = parse_rating(pred)
    if value is not None:
        return value
    return 1 if abs(gold - 1) >= abs(gold - 5) else 5


def _rating_errors(preds: Sequence[str], golds: Sequence[str]) -> list[int]:
    _check(preds, golds)
    errors = []
    for p, g in zip(preds, golds):
        gold = parse_rating(g)
        if gold is None:
            raise MetricError(f"gold rating {g!r} is not an integer 1..5")
        errors.append(parse_rating_prediction(p, gold) - gold)
    return errors


def mae(preds: Sequence[str], golds: Sequence[str]) -> MetricValue:
    errs = _rating_errors(preds, golds)
    return MetricValue("mae", sum(abs(e) for e in errs) / len(errs), len(errs))


def rmse(preds: Sequence[str], golds: Sequence[str]) -> MetricValue:
    errs = _rating_errors(preds, golds)
    return MetricValue("rmse", math.sqrt(sum(e * e for e in errs) / len(errs)), len(errs))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _f1(overlap: int, n_pred: int, n_gold: int) -> float:
    if overlap == 0:
        return 0.0
    p, r = overlap / n_pred, overlap / n_gold
    return 2 * p * r / (p + r)


def rouge1(pred: str, gold: str) -> float:
    a, b = tokenize(pred), tokenize(gold)
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    overlap = sum((Counter(a) & Counter(b)).values())
    return _f1(overlap, len(a), len(b))


def rougeL(pred: str, gold: str) -> float:
    a, b = tokenize(pred), tokenize(gold)
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return _f1(lcs_length(a, b), len(a), len(b))


def corpus_rouge(preds: Sequence[str], golds: Sequence[str]) -> tuple[MetricValue, MetricValue]:
    _check(preds, golds)
    n = len(golds)
    r1 = sum(rouge1(p, g) for p, g in zip(preds, golds)) / n
    rl = sum(rougeL(p, g) for p, g in zip(preds, golds)) / n
    return MetricValue("rouge1", r1, n), MetricValue("rougeL", rl, n)


def evaluate(metric_ids: Sequence[str], preds: Sequence[str], golds: Sequence[str],
             label_set: Iterable[str] = ()) -> dict[str, MetricValue]:
    """Compute the requested metrics, in the order given."""
    out: dict[str, MetricValue] = {}
    rouge = None
    for mid in metric_ids:
        if mid == "accuracy":
            out[mid] = accuracy(preds, golds)
        elif mid == "f1":
            out[mid] = macro_f1(preds, golds, label_set)
        elif mid == "mae":
            out[mid] = mae(preds, golds)
        elif mid == "rmse":
            out[mid] = rmse(preds, golds)
        elif mid in ("rouge1", "rougeL"):
            rouge = rouge or corpus_rouge(preds, golds)
            out[mid] = rouge[0] if mid == "rouge1" else rouge[1]
        else:
            raise MetricError(f"unknown metric {mid!r}")
    return out


@dataclass(frozen=True)
class Aggregate:
    metric_id: str
    mean: float
    stddev: float
    n_runs: int


def aggregate_runs(values: Sequence[MetricValue]) -> Aggregate:
    """Mean and sample standard deviation of one metric over repeated runs."""
    if not values:
        raise MetricError("cannot aggregate an empty group")
    ids = {v.metric_id for v in values}
    if len(ids) > 1:
        raise MetricError(f"mixed metric ids in one group: {sorted(ids)}")
    xs = [v.value for v in values]
    sd = statistics.stdev(xs) if len(xs) > 1 else 0.0
    return Aggregate(ids.pop(), statistics.fmean(xs), sd, len(xs))
