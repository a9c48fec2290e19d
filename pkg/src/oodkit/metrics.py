"""Detection metrics: AUROC, AUPR (average precision) and FPR at a recall level.

Anomalies are the positive class (label 1) and higher scores mean "more
anomalous". Equal scores always form a single threshold group.
"""

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError, InvalidInputError, UndefinedMetricError


@dataclass(frozen=True)
class EvalReport:
    auroc: float
    aupr: float
    fpr_at_recall: float
    recall_level: float
    positives: int
    negatives: int
    skipped_images: int = 0

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CurvePoints:
    thresholds: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "x", "y"])
            for t, x, y in zip(self.thresholds, self.x, self.y):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])


def _prepare(scores, labels, need_negatives=True):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise InvalidArgumentError(f"{s.size} scores vs {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("scores contain NaN or Inf")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("labels must be 0 or 1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0:
        raise UndefinedMetricError("no positive (anomalous) labels")
    if need_negatives and n_neg == 0:
        raise UndefinedMetricError("no negative (normal) labels")
    return s, y, n_pos, n_neg


def _threshold_groups(s, y):
    """Distinct thresholds (descending) with cumulative TP/FP counts."""
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last_of_group]
    fp = np.cumsum(~y_sorted)[last_of_group]
    return s_sorted[last_of_group], tp, fp


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate of P(anomaly score > normal score), ties count 1/2."""
    s, y, n_pos, n_neg = _prepare(scores, labels)
    ranks = rankdata(s, method="average")
    # midranks are half-integers, so this numerator is exact
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Non-interpolated average precision."""
    s, y, n_pos, _ = _prepare(scores, labels, need_negatives=False)
    _, tp, fp = _threshold_groups(s, y)
    precision = tp / (tp + fp)
    new_tp = np.diff(np.r_[0, tp])
    return float((new_tp * precision).sum() / n_pos)


def fpr_at_tpr(scores, labels, level: float = 0.95) -> float:
    """FPR at the highest threshold whose TPR reaches ``level``."""
    if not 0.0 < level <= 1.0:
        raise InvalidArgumentError(f"recall level must be in (0, 1], got {level}")
    s, y, n_pos, n_neg = _prepare(scores, labels)
    _, tp, fp = _threshold_groups(s, y)
    idx = int(np.argmax(tp / n_pos >= level))  # TPR is non-decreasing; final group has TPR 1
    return float(fp[idx] / n_neg)


def evaluate(scores, labels, level: float = 0.95) -> EvalReport:
    s, y, n_pos, n_neg = _prepare(scores, labels)
    return EvalReport(
        auroc=auroc(s, y),
        aupr=aupr(s, y),
        fpr_at_recall=fpr_at_tpr(s, y, level),
        recall_level=level,
        positives=n_pos,
        negatives=n_neg,
    )


def evaluate_segmentation(score_maps, masks, level: float = 0.95) -> EvalReport:
    """Evaluate each image on its own pixels, then average over images.

    Images whose mask holds a single class have no defined metric and are
    skipped; ``skipped_images`` reports how many. Means are unweighted.
    """
    score_maps = list(score_maps)
    masks = list(masks)
    if len(score_maps) != len(masks):
        raise InvalidArgumentError(f"{len(score_maps)} score maps vs {len(masks)} masks")
    reports = []
    skipped = 0
    for smap, mask in zip(score_maps, masks):
        smap = np.asarray(smap)
        mask = np.asarray(mask)
        if smap.shape != mask.shape:
            raise InvalidArgumentError(f"score map {smap.shape} vs mask {mask.shape}")
        n_pos = int(np.count_nonzero(mask))
        if n_pos == 0 or n_pos == mask.size:
            skipped += 1
            continue
        reports.append(evaluate(smap, mask, level))
    if not reports:
        raise UndefinedMetricError("every image has a single-class mask")
    return EvalReport(
        auroc=float(np.mean([r.auroc for r in reports])),
        aupr=float(np.mean([r.aupr for r in reports])),
        fpr_at_recall=float(np.mean([r.fpr_at_recall for r in reports])),
        recall_level=level,
        positives=sum(r.positives for r in reports),
        negatives=sum(r.negatives for r in reports),
        skipped_images=skipped,
    )


def roc_curve(scores, labels) -> CurvePoints:
    """ROC points from (0, 0) at threshold +inf to (1, 1)."""
    s, y, n_pos, n_neg = _prepare(scores, labels)
    thr, tp, fp = _threshold_groups(s, y)
    return CurvePoints(
        thresholds=np.r_[np.inf, thr],
        x=np.r_[0.0, fp / n_neg],
        y=np.r_[0.0, tp / n_pos],
    )


def pr_curve(scores, labels) -> CurvePoints:
    """Precision-recall points, starting at (recall 0, precision 1)."""
    s, y, n_pos, n_neg = _prepare(scores, labels)
    thr, tp, fp = _threshold_groups(s, y)
    return CurvePoints(
        thresholds=np.r_[np.inf, thr],
        x=np.r_[0.0, tp / n_pos],
        y=np.r_[1.0, tp / (tp + fp)],
    )
