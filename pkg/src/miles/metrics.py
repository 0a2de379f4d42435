"""Classification metrics and per-modality utilization quantities."""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .errors import InputError


class MetricKind(str, Enum):
    ACCURACY = "accuracy"
    MACRO_F1 = "macro_f1"


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches between predicted and true class indices."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise InputError(
            f"accuracy: predictions {predictions.shape} and labels {labels.shape} differ"
        )
    if predictions.size == 0:
        raise InputError("accuracy: empty input")
    return float(np.mean(predictions == labels))


def macro_f1(predictions, labels, classes: int) -> float:
    """Unweighted mean of per-class F1 over all `classes` classes.

    A class with no true and no predicted instances contributes F1 = 0,
    which penalizes collapsed predictions on imbalanced data.
    """
    if classes < 2:
        raise InputError(f"macro_f1: need at least 2 classes, got {classes}")
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise InputError(
            f"macro_f1: predictions {predictions.shape} and labels {labels.shape} differ"
        )
    if predictions.size == 0:
        raise InputError("macro_f1: empty input")
    total = 0.0
    for c in range(classes):
        tp = int(np.sum((predictions == c) & (labels == c)))
        fp = int(np.sum((predictions == c) & (labels != c)))
        fn = int(np.sum((predictions != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        if denom > 0:
            total += 2.0 * tp / denom
    return total / classes


def compute_metric(kind: MetricKind, predictions, labels, classes: int) -> float:
    """Dispatch to the requested metric."""
    if MetricKind(kind) is MetricKind.ACCURACY:
        return accuracy(predictions, labels)
    return macro_f1(predictions, labels, classes)


def conditional_utilization(m_ab: float, m_a: float, m_b: float) -> tuple[float, float]:
    """Marginal contribution of each modality to the fused metric.

    u_a is the relative drop from the fused metric to the B-only metric
    (how much modality A adds on top of B), and symmetrically for u_b.
    A fused metric of exactly zero means there is no signal to apportion
    yet; both rates are then defined as 0 so that downstream scheduling
    falls through to its no-action branch.
    """
    for name, value in (("m_ab", m_ab), ("m_a", m_a), ("m_b", m_b)):
        if not 0.0 <= value <= 1.0:
            raise InputError(f"{name} must lie in [0, 1], got {value}")
    if m_ab == 0.0:
        return 0.0, 0.0
    return (m_ab - m_b) / m_ab, (m_ab - m_a) / m_ab


def utilization_delta(u_a: float, u_b: float) -> float:
    """Absolute difference of the two utilization rates."""
    if not (math.isfinite(u_a) and math.isfinite(u_b)):
        raise InputError(f"utilization rates must be finite, got {u_a}, {u_b}")
    return abs(u_a - u_b)


def encoder_gap(metric_strong: float, metric_weak: float) -> float:
    """Signed metric difference: designated-stronger modality minus the other.

    Negative values mean the designated-weaker modality overtook.
    """
    for name, value in (("metric_strong", metric_strong), ("metric_weak", metric_weak)):
        if not 0.0 <= value <= 1.0:
            raise InputError(f"{name} must lie in [0, 1], got {value}")
    return float(metric_strong - metric_weak)
