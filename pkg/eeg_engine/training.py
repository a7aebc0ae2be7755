"""Cropped training, per-recording prediction, reduced-duration grids and accuracy over time."""

import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from eeg_engine import evaluation
from eeg_engine.architectures import Network, build_network
from eeg_engine.eegdata import crop_batch, crop_centers_s, crop_starts, limit_duration
from eeg_engine.errors import (
    ElectrodeError,
    EmptyInputError,
    NumericalError,
    TooShortError,
    TrainingDivergenceError,
    TrialTimeoutError,
)
from eeg_engine.models import (
    ArchitectureConfig,
    EpochLog,
    GridCell,
    MovingAverageCurve,
    Recording,
    RepeatedRuns,
    TrainConfig,
    TrialResult,
)
from utils.logger import get_logger

logger = get_logger(__name__)

PREDICT_BATCH_SIZE = 256


class RecordingPrediction(NamedTuple):
    predicted_label: int
    mean_log_probs: np.ndarray
    crop_log_probs: np.ndarray
    crop_centers_s: np.ndarray


def _check_inputs(network: Network, recordings: Sequence[Recording]) -> None:
    for recording in recordings:
        if recording.n_electrodes != network.config.n_electrodes:
            raise ElectrodeError(
                f"Recording {recording.subject_id} has {recording.n_electrodes} electrodes, "
                f"network expects {network.config.n_electrodes}"
            )


def _crop_index(recordings: Sequence[Recording], crop_len: int, stride: int) -> List[Tuple[int, int]]:
    """(recording index, start sample) of every training crop."""
    return [
        (i, start)
        for i, recording in enumerate(recordings)
        for start in crop_starts(recording.n_samples, crop_len, stride)
    ]


def _batch(recordings: Sequence[Recording], index: Sequence[Tuple[int, int]], crop_len: int) -> Tuple[np.ndarray, np.ndarray]:
    x = np.stack([recordings[i].samples[:, s:s + crop_len] for i, s in index]).astype(np.float64)
    y = np.array([int(recordings[i].label) for i, _ in index], dtype=np.int64)
    return x[:, None, :, :], y


def train(
    network: Network,
    train_set: Sequence[Recording],
    config: TrainConfig,
    monitor_set: Optional[Sequence[Recording]] = None,
) -> Tuple[Network, List[EpochLog]]:
    """Cropped training on every crop of every training recording, shuffled per epoch.

    Args:
        network: Freshly built network, updated in place
        train_set: Labelled, preprocessed recordings
        config: Epochs, batch size, Adam settings, crop stride, seed and duration limit
        monitor_set: Optional recordings evaluated after each epoch for the training log

    Returns:
        tuple: (network, per-epoch logs)

    Raises:
        EmptyInputError: no training recordings
        TrainingDivergenceError: the loss became non-finite
        TrialTimeoutError: ``config.deadline_s`` elapsed
    """
    if not train_set:
        raise EmptyInputError("Training set is empty")
    _check_inputs(network, train_set)
    recordings = [limit_duration(r, config.train_minutes) for r in train_set]
    crop_len = network.receptive_field
    index = _crop_index(recordings, crop_len, config.crop_stride)

    rng = np.random.default_rng(config.seed)
    started = time.monotonic()
    logs: List[EpochLog] = []
    logger.info(
        f"Training {network.config.kind} network on {len(recordings)} recordings, "
        f"{len(index)} crops per epoch, {config.epochs} epochs"
    )

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(index))
        loss_sum = 0.0
        for first in range(0, len(order), config.batch_size):
            batch_index = [index[j] for j in order[first:first + config.batch_size]]
            x, y = _batch(recordings, batch_index, crop_len)
            try:
                loss = network.train_step(
                    x,
                    y,
                    learning_rate=config.learning_rate,
                    beta1=config.beta1,
                    beta2=config.beta2,
                    epsilon=config.adam_epsilon,
                )
            except NumericalError as e:
                network.tape.clear()
                raise TrainingDivergenceError(epoch, str(e))
            if not np.isfinite(loss):
                raise TrainingDivergenceError(epoch, f"loss {loss}")
            loss_sum += loss * len(batch_index)
            if config.deadline_s is not None and time.monotonic() - started > config.deadline_s:
                raise TrialTimeoutError(f"Training exceeded {config.deadline_s:g} s in epoch {epoch}")

        entry = EpochLog(epoch=epoch, loss=loss_sum / len(index))
        if monitor_set:
            result = evaluate(network, monitor_set, config.crop_stride, config.test_minutes, config.workers)
            entry.crop_accuracy = result.crop_accuracy
            entry.trial_accuracy = result.trial_accuracy
        logs.append(entry)
        logger.info(
            f"Epoch {epoch}/{config.epochs}: loss {entry.loss:.4f}"
            + (f", crop acc {entry.crop_accuracy:.3f}, trial acc {entry.trial_accuracy:.3f}" if monitor_set else "")
        )

    return network, logs


def train_from_config(
    architecture: ArchitectureConfig,
    train_set: Sequence[Recording],
    config: TrainConfig,
    monitor_set: Optional[Sequence[Recording]] = None,
) -> Tuple[Network, List[EpochLog]]:
    """Build a network seeded with ``config.seed`` and train it."""
    return train(build_network(architecture, seed=config.seed), train_set, config, monitor_set)


def predict_recording(network: Network, recording: Recording, crop_stride: int) -> RecordingPrediction:
    """Mean crop log-probabilities and their argmax; ties go to class 0 (normal).

    Raises:
        TooShortError: recording shorter than the receptive field
    """
    crop_len = network.receptive_field
    if recording.n_samples < crop_len:
        raise TooShortError(
            f"Recording {recording.subject_id} has {recording.n_samples} samples, needs {crop_len}"
        )
    starts = crop_starts(recording.n_samples, crop_len, crop_stride)
    chunks = [
        network.predict_log_probs(crop_batch(recording, starts[i:i + PREDICT_BATCH_SIZE], crop_len))
        for i in range(0, len(starts), PREDICT_BATCH_SIZE)
    ]
    crop_log_probs = np.concatenate(chunks, axis=0)
    mean = crop_log_probs.mean(axis=0)
    # argmax returns the first maximum, which is the tie rule
    return RecordingPrediction(
        predicted_label=int(np.argmax(mean)),
        mean_log_probs=mean,
        crop_log_probs=crop_log_probs,
        crop_centers_s=crop_centers_s(starts, crop_len, recording.sample_rate_hz),
    )


def evaluate(
    network: Network,
    recordings: Sequence[Recording],
    crop_stride: int,
    test_minutes: Optional[int] = None,
    workers: int = 1,
) -> TrialResult:
    """Predict every recording; results keep the input order whatever ``workers`` is."""
    if not recordings:
        raise EmptyInputError("No recordings to evaluate")
    _check_inputs(network, recordings)
    limited = [limit_duration(r, test_minutes) for r in recordings]

    def run(recording: Recording) -> RecordingPrediction:
        return predict_recording(network, recording, crop_stride)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            predictions = list(pool.map(run, limited))
    else:
        predictions = [run(r) for r in limited]

    return TrialResult(
        recording_ids=[r.subject_id for r in recordings],
        true_labels=[int(r.label) for r in recordings],
        predicted_labels=[p.predicted_label for p in predictions],
        mean_log_probs=np.stack([p.mean_log_probs for p in predictions]),
        crop_log_probs=[p.crop_log_probs for p in predictions],
        crop_centers_s=[p.crop_centers_s for p in predictions],
    )


def reduced_duration_grid(
    architecture: ArchitectureConfig,
    train_set: Sequence[Recording],
    eval_set: Sequence[Recording],
    minutes: Sequence[int],
    config: TrainConfig,
) -> List[GridCell]:
    """Accuracies with the training and/or evaluation recordings cut to the first N minutes.

    The first cell (mode ``both``, minutes None) is the unrestricted baseline. Train-only and
    both-reduced cells of the same N share one trained network. Cells train in parallel when
    ``config.workers`` > 1, each on its own network.
    """
    baseline_config = config.model_copy(update={"train_minutes": None, "test_minutes": None, "workers": 1})

    def fit(limit: Optional[int]) -> Network:
        cell_config = baseline_config.model_copy(update={"train_minutes": limit})
        network, _ = train_from_config(architecture, train_set, cell_config)
        return network

    def cell(mode: str, limit: Optional[int], network: Network, test_limit: Optional[int]) -> GridCell:
        result = evaluate(network, eval_set, config.crop_stride, test_limit)
        return GridCell(mode=mode, minutes=limit, crop_accuracy=result.crop_accuracy, trial_accuracy=result.trial_accuracy)

    limits: List[Optional[int]] = [None] + list(minutes)
    logger.info(f"Reduced-duration grid: {len(limits)} trainings over minutes {list(minutes)}")
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            networks = list(pool.map(fit, limits))
    else:
        networks = [fit(limit) for limit in limits]
    full = networks[0]

    cells = [cell("both", None, full, None)]
    for limit, network in zip(minutes, networks[1:]):
        cells.append(cell("train", limit, network, None))
        cells.append(cell("test", limit, full, limit))
        cells.append(cell("both", limit, network, limit))
    for c in cells:
        logger.info(f"Grid {c.mode:>5} {c.minutes or 'all'} min: crop {c.crop_accuracy:.3f}, trial {c.trial_accuracy:.3f}")
    return cells


def moving_average_from_result(result: TrialResult, window_s: float = 300.0, step_s: float = 30.0) -> MovingAverageCurve:
    """Cropwise accuracy averaged within ``±window_s / 2`` of each window center, then over recordings."""
    if not result.recording_ids:
        raise EmptyInputError("No recordings in the evaluation result")
    # first plus last crop center equals the recording duration
    longest = max(float(centers[-1] + centers[0]) for centers in result.crop_centers_s)
    half = window_s / 2.0
    if longest <= window_s:
        window_centers = np.array([longest / 2.0])
    else:
        window_centers = np.arange(half, longest - half + 1e-9, step_s)

    accuracy = []
    kept_centers = []
    for center in window_centers:
        per_recording = []
        for centers, predictions, label in zip(result.crop_centers_s, result.crop_predictions, result.true_labels):
            inside = np.abs(centers - center) <= half
            if inside.any():
                per_recording.append(float(np.mean(predictions[inside] == label)))
        if per_recording:
            kept_centers.append(float(center))
            accuracy.append(float(np.mean(per_recording)))
    return MovingAverageCurve(window_s=window_s, centers_s=kept_centers, accuracy=accuracy)


def moving_average_accuracy(
    network: Network,
    eval_set: Sequence[Recording],
    window_s: float = 300.0,
    crop_stride: int = 60,
    step_s: float = 30.0,
    workers: int = 1,
) -> MovingAverageCurve:
    return moving_average_from_result(evaluate(network, eval_set, crop_stride, workers=workers), window_s, step_s)


def repeated_runs(
    architecture: ArchitectureConfig,
    train_set: Sequence[Recording],
    eval_set: Sequence[Recording],
    config: TrainConfig,
    seeds: Sequence[int],
) -> RepeatedRuns:
    """Train once per seed; confusions are summed and metrics averaged over runs."""
    if not seeds:
        raise EmptyInputError("No seeds given")
    results = []
    for seed in seeds:
        logger.info(f"Run with seed {seed}")
        network, _ = train_from_config(architecture, train_set, config.model_copy(update={"seed": seed}))
        results.append(evaluate(network, eval_set, config.crop_stride, config.test_minutes, config.workers))

    trial_matrices = [evaluation.trial_confusion(r) for r in results]
    crop_matrices = [evaluation.crop_confusion(r) for r in results]
    return RepeatedRuns(
        seeds=list(seeds),
        results=results,
        confusion=evaluation.sum_confusions(trial_matrices),
        crop_confusion=evaluation.sum_confusions(crop_matrices),
        mean_trial_metrics=evaluation.mean_metrics([evaluation.metrics(m) for m in trial_matrices]),
        mean_crop_metrics=evaluation.mean_metrics([evaluation.metrics(m) for m in crop_matrices]),
    )


def _cell(value: Optional[float], digits: int) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def write_training_log(logs: Sequence[EpochLog], path: str) -> None:
    """Tab-separated ``epoch loss crop_acc trial_acc`` table."""
    lines = ["epoch\tloss\tcrop_acc\ttrial_acc"]
    for entry in logs:
        lines.append(
            f"{entry.epoch}\t{entry.loss:.6f}\t{_cell(entry.crop_accuracy, 4)}\t{_cell(entry.trial_accuracy, 4)}"
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def write_grid(cells: Sequence[GridCell], path: str) -> None:
    lines = ["mode\tminutes\tcrop_acc\ttrial_acc"]
    for c in cells:
        lines.append(f"{c.mode}\t{c.minutes if c.minutes is not None else 'all'}\t{c.crop_accuracy:.4f}\t{c.trial_accuracy:.4f}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
