"""Confusion matrices, classification metrics, ROC/AUC, fold averages and post-validation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, ShapeError

POSITIVE_CLASS = 0  # "filled": anticoagulant present


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise ShapeError("confusion matrix counts must be nonnegative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def to_csv(self, class_names=None) -> str:
        names = list(class_names) if class_names is not None else [str(i) for i in range(self.n_classes)]
        lines = ["true\\pred," + ",".join(names)]
        for name, row in zip(names, self.counts):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion(preds, truths, n_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise ShapeError(f"predictions {preds.shape} and truths {truths.shape} must be equal-length vectors")
    for what, arr in (("prediction", preds), ("truth", truths)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ShapeError(f"{what} label outside 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    recall: float | None = None
    specificity: float | None = None
    precision: float | None = None
    f1: float | None = None

    def fields(self) -> list[tuple[str, float]]:
        names = ("accuracy", "recall", "specificity", "precision", "f1")
        return [(n, getattr(self, n)) for n in names if getattr(self, n) is not None]

    def to_text(self) -> str:
        return "".join(f"{name} {value:.6f}\n" for name, value in self.fields())


def binary_metrics(cm: ConfusionMatrix, positive_class: int = POSITIVE_CLASS) -> MetricsReport:
    """Accuracy, recall, specificity, precision and F1; zero denominators give 0."""
    if cm.n_classes != 2:
        raise ShapeError(f"binary metrics need a 2x2 matrix, got {cm.counts.shape}")
    if positive_class not in (0, 1):
        raise ShapeError(f"positive class must be 0 or 1, got {positive_class}")
    p, n = positive_class, 1 - positive_class
    c = cm.counts
    tp, fn, fp, tn = c[p, p], c[p, n], c[n, p], c[n, n]
    rec = _ratio(tp, tp + fn)
    prec = _ratio(tp, tp + fp)
    return MetricsReport(
        accuracy=_ratio(tp + tn, cm.total),
        recall=rec,
        specificity=_ratio(tn, tn + fp),
        precision=prec,
        f1=_ratio(2 * prec * rec, prec + rec),
    )


def metrics_for(cm: ConfusionMatrix, positive_class: int = POSITIVE_CLASS) -> MetricsReport:
    """Full binary report for 2 classes, accuracy only otherwise."""
    if cm.n_classes == 2:
        return binary_metrics(cm, positive_class)
    return MetricsReport(accuracy=cm.accuracy)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        for t, f, r in zip(self.thresholds, self.fpr, self.tpr):
            lines.append(f"{float(t)!r},{float(f)!r},{float(r)!r}")
        return "\n".join(lines) + "\n"


def roc_auc(scores, truths) -> RocCurve:
    """ROC over distinct score thresholds (descending), tied scores form one step.

    ``truths`` are booleans (or 0/1) marking positives. The first point is
    (0, 0) at threshold +inf; the last is (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(bool)
    if scores.shape != truths.shape or scores.ndim != 1:
        raise ShapeError("scores and truths must be equal-length vectors")
    if not np.all(np.isfinite(scores)):
        raise ShapeError("scores must be finite")
    n_pos = int(truths.sum())
    n_neg = truths.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DatasetError("ROC AUC is undefined when only one class is present")
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], truths[order]
    # last index of each group of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(t)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def fold_average(values) -> float:
    """Arithmetic mean of per-fold values (accuracies or errors)."""
    values = [float(v) for v in values]
    if not values:
        raise DatasetError("fold_average needs at least one fold")
    return float(np.mean(values))


@dataclass(frozen=True)
class FoldSummary:
    accuracies: tuple[float, ...]

    @property
    def mean_accuracy(self) -> float:
        return fold_average(self.accuracies)

    @property
    def mean_error(self) -> float:
        return fold_average([1.0 - a for a in self.accuracies])

    def to_text(self) -> str:
        """Per-fold accuracy table in percent, average in the last column."""
        k = len(self.accuracies)
        head = [f"Fold {i + 1}" for i in range(k)] + ["Average"]
        vals = [f"{100 * a:.3f}%" for a in self.accuracies] + [f"{100 * self.mean_accuracy:.3f}%"]
        width = max(len(x) for x in head + vals)
        return (" ".join(h.rjust(width) for h in head) + "\n"
                + " ".join(v.rjust(width) for v in vals) + "\n"
                + f"mean error {self.mean_error:.5f}\n")

    def to_csv(self) -> str:
        lines = ["fold,accuracy,error"]
        for i, a in enumerate(self.accuracies, start=1):
            lines.append(f"{i},{float(a)!r},{float(1.0 - a)!r}")
        lines.append(f"average,{float(self.mean_accuracy)!r},{float(self.mean_error)!r}")
        return "\n".join(lines) + "\n"


def _predict_labels(model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    if hasattr(model, "predict"):
        out = [model.predict(images[i:i + batch_size]) for i in range(0, len(images), batch_size)]
        return np.concatenate(out)
    return np.asarray(model(images), dtype=np.int64)


def post_validate(model, sets, batch_size: int = 64) -> dict[int, float]:
    """Misclassification rate per validation set.

    ``model`` is a network with ``predict`` or a callable mapping an image
    batch (N x H x W x 3 floats) to labels. ``sets`` maps set id to a
    :class:`~vialnet.data.Dataset`.
    """
    errors = {}
    for set_id, ds in sorted(dict(sets).items()):
        if len(ds.items) == 0:
            raise DatasetError(f"validation set {set_id} is empty")
        preds = _predict_labels(model, ds.inputs(), batch_size)
        errors[set_id] = float(np.mean(preds != ds.labels()))
    return errors


def format_post_validation(errors: dict[int, float], name: str = "ConvNet3_4") -> str:
    ids = sorted(errors)
    head = ["model"] + [f"set{i}" for i in ids]
    row = [name] + [f"{errors[i]:.4f}" for i in ids]
    width = max(len(x) for x in head + row)
    return " ".join(h.ljust(width) for h in head).rstrip() + "\n" + " ".join(r.ljust(width) for r in row).rstrip() + "\n"
