"""Classification metrics: confusion-matrix scalars, agreement coefficients,
and one-vs-rest threshold-sweep curves.

Conventions: any metric whose denominator vanishes returns 0 with its
``degenerate`` flag set; multiclass aggregation is unweighted macro
averaging; curve sweeps group all samples sharing a score into a single
threshold step, which makes the trapezoid AUROC equal the Mann-Whitney
ranking statistic with half-weight ties.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError, UndefinedCurveError


class MetricValue(NamedTuple):
    value: float
    degenerate: bool = False


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise DataError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DataError("confusion matrix entries must be nonnegative")

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def from_labels(cls, true_labels, predicted_labels, n_classes: int):
        true_labels = np.asarray(true_labels, dtype=np.int64)
        predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
        if true_labels.shape != predicted_labels.shape:
            raise DataError("label arrays differ in length")
        bad = (true_labels < 0) | (true_labels >= n_classes) | (predicted_labels < 0) | (predicted_labels >= n_classes)
        if bad.any():
            raise DataError(f"labels outside [0, {n_classes})")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (true_labels, predicted_labels), 1)
        return cls(counts)


@dataclass
class ScoredSample:
    """A true label with its per-class probability scores."""

    true_label: int
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1:
            raise DataError(f"scores must be 1-D, got shape {self.scores.shape}")
        if abs(self.scores.sum() - 1.0) > 1e-5 or (self.scores < -1e-9).any():
            raise DataError("scores must form a probability vector within 1e-5")


def binary_counts(cm: ConfusionMatrix, class_c: int):
    """One-vs-rest (TP, FP, FN, TN) for one class."""
    if not 0 <= class_c < cm.n_classes:
        raise DataError(f"class {class_c} outside [0, {cm.n_classes})")
    tp = int(cm.counts[class_c, class_c])
    fp = int(cm.counts[:, class_c].sum()) - tp
    fn = int(cm.counts[class_c, :].sum()) - tp
    tn = cm.n - tp - fp - fn
    return tp, fp, fn, tn


def accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of correctly classified samples (trace / n)."""
    return float(np.trace(cm.counts)) / cm.n if cm.n else 0.0


def _ratio(num: int, den: int) -> MetricValue:
    if den == 0:
        return MetricValue(0.0, True)
    return MetricValue(num / den)


def precision(cm: ConfusionMatrix, class_c: int) -> MetricValue:
    tp, fp, _, _ = binary_counts(cm, class_c)
    return _ratio(tp, tp + fp)


def recall(cm: ConfusionMatrix, class_c: int) -> MetricValue:
    tp, _, fn, _ = binary_counts(cm, class_c)
    return _ratio(tp, tp + fn)


def specificity(cm: ConfusionMatrix, class_c: int) -> MetricValue:
    _, fp, _, tn = binary_counts(cm, class_c)
    return _ratio(tn, tn + fp)


def f1(cm: ConfusionMatrix, class_c: int) -> MetricValue:
    p = precision(cm, class_c)
    r = recall(cm, class_c)
    if p.value + r.value == 0.0:
        return MetricValue(0.0, True)
    return MetricValue(2.0 * p.value * r.value / (p.value + r.value), p.degenerate or r.degenerate)


def mcc(cm: ConfusionMatrix) -> MetricValue:
    """Matthews correlation; the multiclass path uses the covariance
    generalization, which reduces to the binary formula at 2x2."""
    if cm.n_classes == 2:
        tp, fp, fn, tn = binary_counts(cm, 0)
        den2 = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        if den2 == 0:
            return MetricValue(0.0, True)
        return MetricValue(float(np.clip((tp * tn - fp * fn) / np.sqrt(den2), -1.0, 1.0)))
    c = cm.counts.astype(np.float64)
    n = cm.n
    trace = np.trace(c)
    row = c.sum(axis=1)
    col = c.sum(axis=0)
    num = trace * n - row @ col
    den = np.sqrt(n * n - col @ col) * np.sqrt(n * n - row @ row)
    if den == 0:
        return MetricValue(0.0, True)
    return MetricValue(float(np.clip(num / den, -1.0, 1.0)))


def cohen_kappa(cm: ConfusionMatrix) -> float:
    """Agreement beyond chance: (p0 - pe) / (1 - pe); 0 when pe is 1."""
    n = cm.n
    p0 = np.trace(cm.counts) / n
    pe = float(cm.counts.sum(axis=1) @ cm.counts.sum(axis=0)) / (n * n)
    if pe >= 1.0:
        return 0.0
    return float((p0 - pe) / (1.0 - pe))


def _binary_scores(samples, class_c: int):
    labels = np.array([s.true_label == class_c for s in samples], dtype=bool)
    scores = np.array([s.scores[class_c] for s in samples], dtype=np.float64)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(samples):
        raise UndefinedCurveError(
            f"class {class_c} has {'no positive' if n_pos == 0 else 'no negative'} samples"
        )
    return labels, scores, n_pos


def _sweep(labels, scores):
    """Cumulative (tp, fp) after each distinct descending score threshold."""
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    labels = labels[order]
    distinct = np.nonzero(np.diff(scores))[0]
    cut = np.r_[distinct, len(scores) - 1]  # last index of each tie group
    tp = np.cumsum(labels)[cut]
    fp = np.cumsum(~labels)[cut]
    return tp, fp


def roc_curve(samples, class_c: int):
    """(fpr, tpr) points from (0,0) to (1,1), one per distinct score."""
    labels, scores, n_pos = _binary_scores(samples, class_c)
    tp, fp = _sweep(labels, scores)
    n_neg = len(labels) - n_pos
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return list(zip(fpr.tolist(), tpr.tolist()))


def auroc(samples, class_c: int) -> float:
    points = roc_curve(samples, class_c)
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.trapezoid(tpr, fpr))


def pr_curve(samples, class_c: int):
    """(recall, precision) points, one per distinct descending threshold."""
    labels, scores, n_pos = _binary_scores(samples, class_c)
    tp, fp = _sweep(labels, scores)
    recall_pts = tp / n_pos
    precision_pts = tp / (tp + fp)
    return list(zip(recall_pts.tolist(), precision_pts.tolist()))


def aupr(samples, class_c: int) -> float:
    """Step-interpolated area: sum of (R_i - R_{i-1}) * P_i over thresholds."""
    points = pr_curve(samples, class_c)
    area = 0.0
    prev_r = 0.0
    for r, p in points:
        area += (r - prev_r) * p
        prev_r = r
    return float(area)


def macro_average(samples, metric_fn, n_classes: int):
    """Unweighted mean of a per-class curve metric over defined classes."""
    values = []
    for c in range(n_classes):
        try:
            values.append(metric_fn(samples, c))
        except UndefinedCurveError:
            continue
    if not values:
        raise UndefinedCurveError("no class has a defined curve")
    return float(np.mean(values))
