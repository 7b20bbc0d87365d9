import csv
import logging
import math
from dataclasses import dataclass, field
from io import StringIO
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DataError, DegenerateError, ParameterError, ShapeError
from .raster import Grid

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5

MetricValue = Union[int, float, str]


@dataclass(frozen=True)
class SegmentationResult:
    iou: np.ndarray
    dice: np.ndarray
    overall_accuracy: float
    n_classes: int
    confusion: np.ndarray = field(repr=False)
    # classes absent from both prediction and truth (IoU = Dice = 1 by convention)
    absent: List[int] = field(default_factory=list)

    @property
    def present(self) -> List[int]:
        return [c for c in range(self.n_classes) if c not in self.absent]

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.iou[self.present])) if self.present else 1.0

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dice[self.present])) if self.present else 1.0

    def report(self) -> Dict[str, MetricValue]:
        items: Dict[str, MetricValue] = {
            "overall_accuracy": self.overall_accuracy,
            "mean_iou": self.mean_iou,
            "mean_dice": self.mean_dice,
        }
        for c in range(self.n_classes):
            items[f"iou.{c}"] = float(self.iou[c])
            items[f"dice.{c}"] = float(self.dice[c])
        items["absent"] = " ".join(str(c) for c in self.absent)
        return items


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, n_classes: int) -> np.ndarray:
    """Rows are truth, columns are prediction."""
    flat = truth.astype(np.int64) * n_classes + pred.astype(np.int64)
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )


def scores_from_confusion(confusion: np.ndarray) -> SegmentationResult:
    confusion = np.asarray(confusion, dtype=np.int64)
    n_classes = confusion.shape[0]
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp

    union = tp + fp + fn
    absent = [int(c) for c in np.flatnonzero(union == 0)]
    safe = np.where(union == 0, 1.0, union)
    iou = np.where(union == 0, 1.0, tp / safe)
    dice_den = np.where(union == 0, 1.0, 2.0 * tp + fp + fn)
    dice = np.where(union == 0, 1.0, 2.0 * tp / dice_den)

    total = int(confusion.sum())
    if total == 0:
        raise DegenerateError("Segmentation: No valid pixels to score")

    return SegmentationResult(
        iou=iou,
        dice=dice,
        overall_accuracy=float(tp.sum() / total),
        n_classes=n_classes,
        confusion=confusion,
        absent=absent,
    )


def segmentation_metrics(pred: Grid, truth: Grid, n_classes: int) -> SegmentationResult:
    """Confusion-matrix scores; pixels that are nodata in either grid are skipped."""
    if n_classes <= 0:
        raise ParameterError(f"Segmentation: Invalid class count ({n_classes})")
    if pred.shape != truth.shape:
        raise ShapeError(
            f"Segmentation: Prediction {pred.shape} and truth {truth.shape} differ"
        )

    valid = pred.valid_mask() & truth.valid_mask()
    p = pred.data[valid]
    t = truth.data[valid]
    for name, values in (("prediction", p), ("truth", t)):
        if values.size and (values.min() < 0 or values.max() >= n_classes):
            raise DataError(
                f"Segmentation: {name} id out of range [0, {n_classes}) "
                f"({int(values.min())}..{int(values.max())})"
            )

    result = scores_from_confusion(confusion_matrix(p, t, n_classes))
    if result.absent:
        logger.debug("Segmentation: Absent classes %s", result.absent)
    return result


def _regression_arrays(pred: Sequence[float], truth: Sequence[float]) -> tuple:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim != 1 or p.shape != t.shape:
        raise ShapeError(f"Regression: Shapes {p.shape} and {t.shape} differ")
    if p.size < 2:
        raise ParameterError(f"Regression: Need at least 2 values ({p.size})")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise DataError("Regression: Non-finite values")
    return p, t


def r_squared(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _regression_arrays(pred, truth)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0:
        raise DegenerateError("R2: Truth is constant")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


def mean_squared_error(pred: Sequence[float], truth: Sequence[float]) -> float:
    p, t = _regression_arrays(pred, truth)
    return float(np.mean((t - p) ** 2))


def average_precision(scores: np.ndarray, truth: np.ndarray) -> float:
    """Step-function area under the precision-recall curve.

    Ranked by descending score, ties by ascending index.
    """
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = np.asarray(truth)[order].astype(bool)
    n_pos = int(hits.sum())
    if n_pos == 0:
        raise DegenerateError("AP: Label has no positives")
    ranks = np.arange(1, hits.size + 1)
    precision_at = np.cumsum(hits) / ranks
    return float(precision_at[hits].sum() / n_pos)


@dataclass(frozen=True)
class MultiLabelResult:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    ap: np.ndarray
    n_labels: int
    # labels without positives; excluded from macro means, AP is NaN
    excluded: List[int] = field(default_factory=list)

    @property
    def included(self) -> List[int]:
        return [i for i in range(self.n_labels) if i not in self.excluded]

    def _macro(self, values: np.ndarray) -> float:
        return float(np.mean(values[self.included]))

    @property
    def macro_f1(self) -> float:
        return self._macro(self.f1)

    @property
    def macro_ap(self) -> float:
        return self._macro(self.ap)

    @property
    def macro_precision(self) -> float:
        return self._macro(self.precision)

    @property
    def macro_recall(self) -> float:
        return self._macro(self.recall)

    def report(self) -> Dict[str, MetricValue]:
        items: Dict[str, MetricValue] = {
            "macro_f1": self.macro_f1,
            "macro_ap": self.macro_ap,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
        }
        for i in range(self.n_labels):
            items[f"precision.{i}"] = float(self.precision[i])
            items[f"recall.{i}"] = float(self.recall[i])
            items[f"f1.{i}"] = float(self.f1[i])
            items[f"ap.{i}"] = float(self.ap[i])
        items["excluded"] = " ".join(str(i) for i in self.excluded)
        return items


def multilabel_metrics(
    scores: np.ndarray, truth: np.ndarray, threshold: float = DEFAULT_THRESHOLD
) -> MultiLabelResult:
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth))
    if scores.shape != truth.shape:
        raise ShapeError(
            f"MultiLabel: Scores {scores.shape} and truth {truth.shape} differ"
        )
    if not np.all(np.isfinite(scores)):
        raise DataError("MultiLabel: Non-finite scores")
    if not np.all((truth == 0) | (truth == 1)):
        raise DataError("MultiLabel: Truth must be binary")

    positive = truth.astype(bool)
    predicted = scores >= threshold
    tp = (predicted & positive).sum(axis=0).astype(np.float64)
    fp = (predicted & ~positive).sum(axis=0).astype(np.float64)
    fn = (~predicted & positive).sum(axis=0).astype(np.float64)

    def ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    n_labels = scores.shape[1]
    excluded = [int(i) for i in np.flatnonzero(positive.sum(axis=0) == 0)]
    ap = np.full(n_labels, math.nan)
    for i in range(n_labels):
        if i not in excluded:
            ap[i] = average_precision(scores[:, i], positive[:, i])

    if len(excluded) == n_labels:
        raise DegenerateError("MultiLabel: No label has a positive example")
    if excluded:
        logger.warning("MultiLabel: Labels without positives excluded: %s", excluded)

    return MultiLabelResult(
        precision=ratio(tp, tp + fp),
        recall=ratio(tp, tp + fn),
        f1=ratio(2.0 * tp, 2.0 * tp + fp + fn),
        ap=ap,
        n_labels=n_labels,
        excluded=excluded,
    )


@dataclass(frozen=True)
class SeedSummary:
    fraction: float
    mean: float
    std: float
    n_seeds: int


def summarize_seeds(results: Mapping[float, Sequence[float]]) -> List[SeedSummary]:
    """Mean and sample standard deviation of a score per subset fraction."""
    summaries: List[SeedSummary] = []
    for fraction in sorted(results):
        values = np.asarray(results[fraction], dtype=np.float64)
        if values.size == 0:
            raise ParameterError(f"Summary: No scores for fraction {fraction}")
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        summaries.append(
            SeedSummary(
                fraction=fraction,
                mean=float(values.mean()),
                std=std,
                n_seeds=values.size,
            )
        )
    return summaries


def match_point(
    fused: Sequence[SeedSummary], baseline: Sequence[SeedSummary]
) -> Optional[float]:
    """Smallest fraction at which the fused curve reaches the baseline's best mean."""
    if not baseline:
        raise ParameterError("MatchPoint: Empty baseline curve")
    best = max(summary.mean for summary in baseline)
    for summary in sorted(fused, key=lambda s: s.fraction):
        if summary.mean >= best:
            return summary.fraction
    return None


def format_report(items: Mapping[str, MetricValue], fmt: str = "kv") -> str:
    """`metric=value` lines, or a two-row CSV with a header."""

    def text(value: MetricValue) -> str:
        return repr(value) if isinstance(value, float) else str(value)

    if fmt == "kv":
        return "".join(f"{key}={text(value)}\n" for key, value in items.items())
    if fmt == "csv":
        sio = StringIO()
        writer = csv.writer(sio, lineterminator="\n")
        writer.writerow(list(items))
        writer.writerow([text(value) for value in items.values()])
        return sio.getvalue()
    raise ParameterError(f"Report: Unknown format ({fmt}). Use kv or csv.")
