import numpy as np
import pytest

from eeg_engine import evaluation
from eeg_engine.errors import EmptyInputError, LabelError
from eeg_engine.models import ConfusionMatrix, Metrics, TrialResult


@pytest.fixture
def matrix():
    return evaluation.confusion_from_predictions([0, 0, 1, 1, 1], [0, 1, 1, 1, 0])


def test_counts(matrix):
    assert (matrix.tn, matrix.fp, matrix.fn, matrix.tp) == (1, 1, 1, 2)
    assert matrix.total == 5


def test_metrics(matrix):
    m = evaluation.metrics(matrix)
    assert m.accuracy == pytest.approx(0.6)
    assert m.sensitivity == pytest.approx(2 / 3)
    assert m.specificity == pytest.approx(0.5)
    assert m.precision_normal == pytest.approx(0.5)
    assert m.precision_pathological == pytest.approx(2 / 3)


def test_zero_denominators_are_absent():
    m = evaluation.metrics(evaluation.confusion_from_predictions([0, 0, 0], [0, 0, 0]))
    assert m.accuracy == 1.0
    assert m.specificity == 1.0
    assert m.sensitivity is None
    assert m.precision_pathological is None


def test_empty_matrix():
    with pytest.raises(EmptyInputError):
        evaluation.metrics(ConfusionMatrix(tn=0, fp=0, fn=0, tp=0))


def test_invalid_labels():
    with pytest.raises(LabelError):
        evaluation.confusion_from_predictions([0, 2], [0, 1])
    with pytest.raises(LabelError):
        evaluation.confusion_from_predictions([0, 1], [0])


def test_mean_metrics_skips_absent():
    runs = [
        Metrics(accuracy=0.5, sensitivity=None, specificity=0.4, precision_normal=None, precision_pathological=None),
        Metrics(accuracy=1.0, sensitivity=0.8, specificity=0.6, precision_normal=None, precision_pathological=1.0),
    ]
    mean = evaluation.mean_metrics(runs)
    assert mean.accuracy == pytest.approx(0.75)
    assert mean.sensitivity == pytest.approx(0.8)
    assert mean.specificity == pytest.approx(0.5)
    assert mean.precision_normal is None


def test_sum_confusions(matrix):
    total = evaluation.sum_confusions([matrix, matrix])
    assert (total.tn, total.fp, total.fn, total.tp) == (2, 2, 2, 4)


def test_crop_confusion():
    result = TrialResult(
        recording_ids=["a", "b"],
        true_labels=[0, 1],
        predicted_labels=[0, 1],
        mean_log_probs=np.zeros((2, 2)),
        crop_log_probs=[
            np.log(np.array([[0.9, 0.1], [0.2, 0.8]])),
            np.log(np.array([[0.3, 0.7], [0.4, 0.6], [0.6, 0.4]])),
        ],
        crop_centers_s=[np.array([1.0, 2.0]), np.array([1.0, 2.0, 3.0])],
    )
    crops = evaluation.crop_confusion(result)
    assert (crops.tn, crops.fp, crops.fn, crops.tp) == (1, 1, 1, 2)
    assert result.crop_accuracy == pytest.approx(0.6)
    assert result.trial_accuracy == 1.0


def test_text_rendering(matrix):
    text = evaluation.render_confusion_text(matrix, title="Deep")
    lines = text.splitlines()
    assert lines[0] == "Deep"
    assert lines[1] == "rows: predicted, columns: target"
    assert lines[3].split()[:3] == ["Pathological", "2", "(40.0%)"]
    assert lines[-1].split() == ["Sens/Spec", "66.7%", "50.0%", "60.0%"]


def test_svg_rendering(matrix):
    text, svg = evaluation.render_confusion(matrix, title="A & B")
    assert "<svg" in svg
    assert svg.rstrip().endswith("</svg>")
    assert ">A &amp; B</text>" in svg
    assert ">66.7%</text>" in svg and "66.7%" in text
    assert ">Sens/Spec</text>" in svg


def test_svg_rendering_is_reproducible(matrix):
    assert evaluation.render_confusion_svg(matrix, "Deep") == evaluation.render_confusion_svg(matrix, "Deep")


def test_metrics_file(tmp_path):
    m = evaluation.metrics(evaluation.confusion_from_predictions([0, 0, 0], [0, 0, 1]))
    path = tmp_path / "metrics.txt"
    evaluation.write_metrics_file(str(path), m, m)
    lines = path.read_text().splitlines()
    assert lines[0] == "trial_accuracy=0.6667"
    assert "trial_sensitivity=n/a" in lines
    assert "trial_precision_pathological=0.0000" in lines
    assert len(lines) == 10
