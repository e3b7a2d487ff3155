"""Ranking metrics for detectors and fused verdicts.

Average precision is the rank-based form: the mean of precision evaluated
at each true positive's rank, with score ties kept in input order (a
pessimistic variant ranking tied negatives first is available). The PR
curve sweeps every distinct score as a threshold with the decision rule
score >= threshold.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .events import EventLabel, ORIGIN_SOURCE


@dataclass(frozen=True)
class ScoredSample:
    score: float
    truth: bool

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")


@dataclass
class PrPoint:
    threshold: float
    precision: float
    recall: float
    f1: float


@dataclass
class PrCurve:
    points: list[PrPoint]
    ap: float
    optimal_f1: float
    optimal_threshold: float


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean, defined as 0 when either input is 0."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _ranked_truths(samples: list[ScoredSample], pessimistic_ties: bool) -> np.ndarray:
    scores = np.array([s.score for s in samples])
    truths = np.array([s.truth for s in samples], dtype=bool)
    if pessimistic_ties:
        # negatives above positives within a tied score
        order = sorted(range(len(samples)), key=lambda i: (-scores[i], truths[i]))
    else:
        order = np.argsort(-scores, kind="stable")
    return truths[np.asarray(order)]


def average_precision(samples: list[ScoredSample], pessimistic_ties: bool = False) -> float:
    """Mean precision at each positive's rank; ties follow input order."""
    if not any(s.truth for s in samples):
        raise ValueError("AP undefined: no positive samples")
    ranked = _ranked_truths(samples, pessimistic_ties)
    ranks = np.arange(1, len(ranked) + 1)
    cum_pos = np.cumsum(ranked)
    return float((cum_pos[ranked] / ranks[ranked]).mean())


def precision_recall_at(samples: list[ScoredSample], threshold: float) -> tuple[float, float]:
    """Precision and recall of the rule score >= threshold.

    Precision with zero predictions is defined as 1.0 (nothing asserted,
    nothing wrong).
    """
    predicted = sum(1 for s in samples if s.score >= threshold)
    tp = sum(1 for s in samples if s.score >= threshold and s.truth)
    pos = sum(1 for s in samples if s.truth)
    precision = tp / predicted if predicted else 1.0
    recall = tp / pos if pos else 0.0
    return precision, recall


def pr_curve(samples: list[ScoredSample], pessimistic_ties: bool = False) -> PrCurve:
    """Precision/recall/F1 at every distinct score threshold."""
    truths = [s.truth for s in samples]
    if len(set(truths)) < 2:
        raise ValueError("curve undefined: need both classes")

    points = []
    for threshold in sorted({s.score for s in samples}, reverse=True):
        precision, recall = precision_recall_at(samples, threshold)
        points.append(PrPoint(threshold, precision, recall, f1_score(precision, recall)))

    best = max(points, key=lambda p: p.f1)
    return PrCurve(
        points=points,
        ap=average_precision(samples, pessimistic_ties),
        optimal_f1=best.f1,
        optimal_threshold=best.threshold,
    )


def recall_at_precision(curve: PrCurve, min_precision: float) -> float:
    """Best recall among operating points with at least the given precision."""
    eligible = [p.recall for p in curve.points if p.precision >= min_precision]
    return max(eligible) if eligible else 0.0


def evaluate_verdicts(
    verdicts,
    truth_events: list[EventLabel],
    window_s: float = 26.0,
) -> list[ScoredSample]:
    """Pair each fused window score with its ground truth.

    A window is positive iff it overlaps a source-originated event that was
    clearly audible at the receiver; everything else (interferers, faint or
    unheard events, empty spans) is negative.
    """
    positives = [
        e for e in truth_events if e.origin == ORIGIN_SOURCE and e.binary
    ]
    samples = []
    for v in verdicts:
        truth = any(e.overlaps(v.window_start_s, v.window_start_s + window_s)
                    for e in positives)
        samples.append(ScoredSample(score=v.score, truth=truth))
    return samples


def score_series_windows(series, window_starts, window_s: float = 26.0):
    """Single-device window scores: the max prediction inside each window.

    The receiver-only baseline the fused scores are compared against.
    """
    scores = []
    for w in window_starts:
        part = series.slice_time(w, w + window_s)
        scores.append(float(part.probs.max()) if len(part) else 0.0)
    return scores


def seed_spread(values) -> tuple[float, float]:
    """Mean and standard deviation over training seeds (reported as such)."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def write_pr_csv(path, curve: PrCurve) -> None:
    """threshold,precision,recall,f1 rows for plotting and the review UI."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "f1"])
        for p in curve.points:
            writer.writerow([f"{p.threshold:.6f}", f"{p.precision:.6f}",
                             f"{p.recall:.6f}", f"{p.f1:.6f}"])
