"""Confusion matrices, derived metrics and their text/SVG renderings.

"Pathological" (label 1) is the positive class throughout.
"""

from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from eeg_engine.errors import EmptyInputError, LabelError
from eeg_engine.models import ConfusionMatrix, Metrics, TrialResult
from eeg_engine.plotting import figure_svg, new_figure
from utils.logger import get_logger

logger = get_logger(__name__)

METRIC_NAMES = ["accuracy", "sensitivity", "specificity", "precision_normal", "precision_pathological"]


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def confusion_from_predictions(true_labels: Sequence[int], predicted_labels: Sequence[int]) -> ConfusionMatrix:
    truth = np.asarray(true_labels, dtype=np.int64)
    pred = np.asarray(predicted_labels, dtype=np.int64)
    if truth.shape != pred.shape:
        raise LabelError(f"{truth.size} true labels for {pred.size} predictions")
    for name, labels in (("true", truth), ("predicted", pred)):
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise LabelError(f"{name} labels must be 0 (normal) or 1 (pathological)")
    return ConfusionMatrix(
        tn=int(np.sum((truth == 0) & (pred == 0))),
        fp=int(np.sum((truth == 0) & (pred == 1))),
        fn=int(np.sum((truth == 1) & (pred == 0))),
        tp=int(np.sum((truth == 1) & (pred == 1))),
    )


def trial_confusion(result: TrialResult) -> ConfusionMatrix:
    return confusion_from_predictions(result.true_labels, result.predicted_labels)


def crop_confusion(result: TrialResult) -> ConfusionMatrix:
    truth = [np.full(len(pred), label) for pred, label in zip(result.crop_predictions, result.true_labels)]
    if not truth:
        return ConfusionMatrix(tn=0, fp=0, fn=0, tp=0)
    return confusion_from_predictions(np.concatenate(truth), np.concatenate(result.crop_predictions))


def sum_confusions(matrices: Iterable[ConfusionMatrix]) -> ConfusionMatrix:
    total = ConfusionMatrix(tn=0, fp=0, fn=0, tp=0)
    for m in matrices:
        total = ConfusionMatrix(tn=total.tn + m.tn, fp=total.fp + m.fp, fn=total.fn + m.fn, tp=total.tp + m.tp)
    return total


def metrics(matrix: ConfusionMatrix) -> Metrics:
    """Accuracy, sensitivity, specificity and per-class precision.

    Raises:
        EmptyInputError: when the matrix holds no counts
    """
    if matrix.total == 0:
        raise EmptyInputError("Cannot compute metrics of an empty confusion matrix")
    return Metrics(
        accuracy=(matrix.tp + matrix.tn) / matrix.total,
        sensitivity=_ratio(matrix.tp, matrix.tp + matrix.fn),
        specificity=_ratio(matrix.tn, matrix.tn + matrix.fp),
        precision_normal=_ratio(matrix.tn, matrix.tn + matrix.fn),
        precision_pathological=_ratio(matrix.tp, matrix.tp + matrix.fp),
    )


def mean_metrics(runs: Sequence[Metrics]) -> Metrics:
    """Per-metric mean over runs; absent values are skipped, all-absent stays absent."""
    if not runs:
        raise EmptyInputError("No runs to average")
    averaged = {}
    for name in METRIC_NAMES:
        values = [getattr(m, name) for m in runs if getattr(m, name) is not None]
        averaged[name] = float(np.mean(values)) if values else None
    return Metrics(**averaged)


def format_metric(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def write_metrics_file(path: str, trial: Metrics, crop: Optional[Metrics] = None) -> None:
    """One ``name=value`` line per metric, fixed four decimals, ``n/a`` when absent."""
    lines = [f"trial_{name}={format_metric(getattr(trial, name))}" for name in METRIC_NAMES]
    if crop is not None:
        lines += [f"crop_{name}={format_metric(getattr(crop, name))}" for name in METRIC_NAMES]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"Wrote metrics to {path}")


# Rendering
#
# Rows are predictions, columns are targets, pathological first. The bottom row holds
# sensitivity and specificity, the right column precision, the corner overall accuracy.


def _percent(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{100.0 * value:.1f}%"


def confusion_cells(matrix: ConfusionMatrix) -> List[List[str]]:
    """The rendered table as rows of cell strings, header row and column included."""
    m = metrics(matrix)
    total = matrix.total

    def count(n: int) -> str:
        return f"{n} ({100.0 * n / total:.1f}%)"

    return [
        ["", "Pathological", "Normal", "Precision"],
        ["Pathological", count(matrix.tp), count(matrix.fp), _percent(m.precision_pathological)],
        ["Normal", count(matrix.fn), count(matrix.tn), _percent(m.precision_normal)],
        ["Sens/Spec", _percent(m.sensitivity), _percent(m.specificity), _percent(m.accuracy)],
    ]


def render_confusion_text(matrix: ConfusionMatrix, title: str = "") -> str:
    rows = confusion_cells(matrix)
    widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
    lines = [title] if title else []
    lines.append("rows: predicted, columns: target")
    for row in rows:
        lines.append("  ".join(cell.rjust(width) for cell, width in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _cell_colour(r: int, c: int) -> str:
    if 0 < r < 3 and 0 < c < 3:
        return "#c6dbef" if r == c else "#fde0dd"
    if r == 0 or c == 0:
        return "#ffffff"
    return "#f0f0f0"


def render_confusion_svg(matrix: ConfusionMatrix, title: str = "") -> str:
    rows = confusion_cells(matrix)
    colours = [[_cell_colour(r, c) for c in range(len(row))] for r, row in enumerate(rows)]
    figure = new_figure(6.0, 2.2)
    ax = figure.add_subplot(1, 1, 1)
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    table = ax.table(cellText=rows, cellColours=colours, cellLoc="center", loc="center")
    table.scale(1.0, 1.6)
    return figure_svg(figure)


def render_confusion(matrix: ConfusionMatrix, title: str = "") -> Tuple[str, str]:
    """Text and SVG renderings of the same table."""
    return render_confusion_text(matrix, title), render_confusion_svg(matrix, title)
