"""Evaluation metrics: per-frame confusion matrices and localization error CDFs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import N_REAL_EVENTS, RealEvent
from .errors import EvaluationError


@dataclass(frozen=True)
class ConfusionMatrix:
    """4x4 counts of (true event, predicted event)."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (N_REAL_EVENTS, N_REAL_EVENTS) or np.any(counts < 0):
            raise EvaluationError("confusion counts must be a non-negative 4x4 matrix")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        if total == 0:
            raise EvaluationError("confusion matrix is empty")
        return float(np.trace(self.counts)) / total

    def precision(self, event: RealEvent) -> float:
        col = self.counts[:, event.value].sum()
        return float(self.counts[event.value, event.value]) / col if col else 0.0

    def recall(self, event: RealEvent) -> float:
        row = self.counts[event.value].sum()
        return float(self.counts[event.value, event.value]) / row if row else 0.0


def score_events(truth, pred, mask=None) -> tuple[ConfusionMatrix, float]:
    """Count every (kept) frame once; accuracy is the diagonal fraction.

    ``mask`` selects the frames to score (callers drop warm-up sentinels
    before counting).
    """
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise EvaluationError(f"truth and pred must be equal-length 1-D, got {truth.shape} vs {pred.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != truth.shape:
            raise EvaluationError("mask must match the label length")
        truth, pred = truth[mask], pred[mask]
    if truth.size == 0:
        raise EvaluationError("no frames left to score")
    if truth.min() < 0 or truth.max() >= N_REAL_EVENTS or pred.min() < 0 or pred.max() >= N_REAL_EVENTS:
        raise EvaluationError("labels out of range")
    counts = np.zeros((N_REAL_EVENTS, N_REAL_EVENTS), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    cm = ConfusionMatrix(counts)
    return cm, cm.accuracy


@dataclass(frozen=True)
class ErrorCdf:
    """Sorted per-frame localization errors with interpolated percentiles."""

    errors: np.ndarray

    def __post_init__(self) -> None:
        errors = np.sort(np.asarray(self.errors, dtype=np.float64))
        if errors.size == 0:
            raise EvaluationError("error CDF needs at least one sample")
        if np.any(~np.isfinite(errors)) or np.any(errors < 0):
            raise EvaluationError("errors must be finite and non-negative")
        errors.flags.writeable = False
        object.__setattr__(self, "errors", errors)

    def percentile(self, p: float) -> float:
        """Linear interpolation between order statistics (0 <= p <= 100)."""
        if not (0 <= p <= 100):
            raise EvaluationError(f"percentile must lie in [0, 100], got {p}")
        n = self.errors.size
        if n == 1:
            return float(self.errors[0])
        rank = (n - 1) * (p / 100.0)
        lo = int(np.floor(rank))
        hi = min(lo + 1, n - 1)
        frac = rank - lo
        return float(self.errors[lo] * (1 - frac) + self.errors[hi] * frac)

    @property
    def median(self) -> float:
        return self.percentile(50.0)

    @property
    def p90(self) -> float:
        return self.percentile(90.0)

    @property
    def mean(self) -> float:
        return float(self.errors.mean())

    def points(self) -> list[tuple[float, float]]:
        """(error, cumulative probability) pairs for plotting."""
        n = self.errors.size
        return [(float(e), (i + 1) / n) for i, e in enumerate(self.errors)]


def score_tracking(truth_pos, pred_pos, mask) -> ErrorCdf:
    """Euclidean error per masked frame.

    The mask is expected to keep only frames where both truth and prediction
    agree the target is present; disagreements belong to the confusion
    matrix, not the CDF.
    """
    truth_pos = np.asarray(truth_pos, dtype=np.float64)
    pred_pos = np.asarray(pred_pos, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if truth_pos.shape != pred_pos.shape or truth_pos.ndim != 2 or truth_pos.shape[1] != 2:
        raise EvaluationError("positions must be matching (T, 2) arrays")
    if mask.shape != (truth_pos.shape[0],):
        raise EvaluationError("mask must have one flag per frame")
    if not mask.any():
        raise EvaluationError("tracking mask selects no frames")
    err = np.linalg.norm(truth_pos[mask] - pred_pos[mask], axis=1)
    return ErrorCdf(err)
