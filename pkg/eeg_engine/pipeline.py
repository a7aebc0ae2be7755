import os
import shutil
import time
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

from eeg_engine import __version__, evaluation, hpo, perturbviz, reports, spectral, training
from eeg_engine.architectures import Network, load_network, save_network
from eeg_engine.eegdata import load_dataset, preprocess, save_dataset, split_by_subject
from eeg_engine.errors import DataError, EmptyInputError, UsageError
from eeg_engine.models import (
    ArchitectureConfig,
    Dataset,
    PerturbationConfig,
    PreprocessConfig,
    Recording,
    RecordingLabel,
    RunManifest,
    SearchConfig,
    SignatureConfig,
    TrainConfig,
    TrialResult,
)
from eeg_engine.synthetic import synth_dataset
from utils import flatconfig
from utils.logger import attach_run_log, detach_run_log, get_logger

# Set up logger
logger = get_logger(__name__)

MANIFEST_FILE = "manifest.cfg"
NETWORK_FILE = "network.npz"


class RunDirectory:
    """Output directory of one command: created empty, holds the manifest and ``run.log``.

    An existing non-empty directory is refused unless ``force`` is set, in which case it is
    emptied first.
    """

    def __init__(self, path: str, force: bool = False):
        self.path = path
        self.force = force
        self._handler = None

    def __enter__(self) -> "RunDirectory":
        if os.path.isdir(self.path) and os.listdir(self.path):
            if not self.force:
                raise UsageError(f"Output directory {self.path} is not empty; pass --force or choose another --out")
            shutil.rmtree(self.path)
        os.makedirs(self.path, exist_ok=True)
        self._handler = attach_run_log(self.path)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._handler is not None:
            detach_run_log(self._handler)
            self._handler = None

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def write_manifest(self, command: str, config: Dict[str, str], seed: Optional[int], input_paths: Sequence[str]) -> str:
        manifest = RunManifest(
            command=command,
            config=dict(config),
            seed=seed,
            input_paths=list(input_paths),
            output_dir=self.path,
            version=__version__,
            started_at=datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        )
        path = self.file(MANIFEST_FILE)
        flatconfig.save_file(manifest.to_flat(), path)
        return path


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise DataError(f"Missing {what}: {path}")
    return path


def _labelled(recordings: Sequence[Recording], what: str) -> List[Recording]:
    if not recordings:
        raise EmptyInputError(f"No {what} recordings")
    return list(recordings)


def write_predictions(result: TrialResult, path: str) -> None:
    lines = ["recording\ttrue\tpredicted\tlog_p_normal\tlog_p_pathological\tn_crops"]
    for rec_id, truth, pred, mean, crops in zip(
        result.recording_ids, result.true_labels, result.predicted_labels, result.mean_log_probs, result.crop_log_probs
    ):
        lines.append(f"{rec_id}\t{truth}\t{pred}\t{mean[0]:.6f}\t{mean[1]:.6f}\t{len(crops)}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


class ExperimentPipeline:
    """Runs the toolkit's steps against an output directory.

    Every step method reads its inputs, writes its artifacts into ``output_dir`` and returns
    its main result; failures surface as engine errors.
    """

    def __init__(self, output_dir: str, workers: int = 1):
        """Initialize the pipeline.

        Args:
            output_dir: Directory receiving the artifacts (must exist)
            workers: Cap on threads used by parallel steps
        """
        self.output_dir = output_dir
        self.workers = workers

    def _out(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    # Data

    def synth(
        self,
        n_per_class: int,
        duration_s: float,
        seed: int,
        signature: Optional[SignatureConfig] = None,
        eval_fraction: float = 0.2,
    ) -> Dataset:
        signature = signature or SignatureConfig()
        recordings = synth_dataset(n_per_class, duration_s, seed, signature)
        dataset = Dataset(recordings=recordings, splits=split_by_subject(recordings, eval_fraction, seed))
        save_dataset(dataset, self.output_dir)
        flatconfig.save_file(signature.to_flat(), self._out("signature.cfg"))
        return dataset

    def preprocess(self, data_dir: str, config: Optional[PreprocessConfig] = None) -> Dataset:
        dataset = load_dataset(data_dir)
        logger.info(f"Preprocessing {len(dataset.recordings)} recordings")
        processed = Dataset(
            recordings=[preprocess(r, config) for r in dataset.recordings],
            splits=list(dataset.splits),
        )
        save_dataset(processed, self.output_dir)
        return processed

    # Training and evaluation

    def train(self, data_dir: str, architecture: ArchitectureConfig, config: TrainConfig, monitor: bool = True) -> Network:
        dataset = load_dataset(data_dir)
        train_set = _labelled(dataset.train, "training")
        monitor_set = dataset.eval if monitor and dataset.eval else None
        network, logs = training.train_from_config(architecture, train_set, config, monitor_set)
        save_network(network, self._out(NETWORK_FILE))
        training.write_training_log(logs, self._out("training_log.tsv"))
        flatconfig.save_file(architecture.to_flat(), self._out("architecture.cfg"))
        return network

    def load_model(self, model_dir: str) -> Network:
        return load_network(_require_file(os.path.join(model_dir, NETWORK_FILE), "trained network"))

    def evaluate(self, model_dir: str, data_dir: str, crop_stride: int, test_minutes: Optional[int] = None) -> TrialResult:
        network = self.load_model(model_dir)
        eval_set = _labelled(load_dataset(data_dir).eval, "evaluation")
        result = training.evaluate(network, eval_set, crop_stride, test_minutes, self.workers)

        trial_matrix = evaluation.trial_confusion(result)
        crop_matrix = evaluation.crop_confusion(result)
        evaluation.write_metrics_file(self._out("metrics.txt"), evaluation.metrics(trial_matrix), evaluation.metrics(crop_matrix))
        text, svg = evaluation.render_confusion(trial_matrix, title=f"{network.config.kind} ConvNet")
        with open(self._out("confusion.txt"), "w", encoding="utf-8") as f:
            f.write(text)
        with open(self._out("confusion.svg"), "w", encoding="utf-8") as f:
            f.write(svg)
        write_predictions(result, self._out("predictions.tsv"))
        logger.info(f"Trial accuracy {result.trial_accuracy:.4f}, crop accuracy {result.crop_accuracy:.4f}")
        return result

    def reduced_grid(self, data_dir: str, architecture: ArchitectureConfig, config: TrainConfig, minutes: Sequence[int]) -> list:
        dataset = load_dataset(data_dir)
        cells = training.reduced_duration_grid(
            architecture,
            _labelled(dataset.train, "training"),
            _labelled(dataset.eval, "evaluation"),
            minutes,
            config.model_copy(update={"workers": self.workers}),
        )
        training.write_grid(cells, self._out("grid.tsv"))
        return cells

    def moving_average(self, model_dir: str, data_dir: str, crop_stride: int, window_s: float = 300.0, step_s: float = 30.0):
        network = self.load_model(model_dir)
        eval_set = _labelled(load_dataset(data_dir).eval, "evaluation")
        curve = training.moving_average_accuracy(network, eval_set, window_s, crop_stride, step_s, self.workers)
        lines = ["center_s\taccuracy"] + [f"{c:.1f}\t{a:.4f}" for c, a in zip(curve.centers_s, curve.accuracy)]
        with open(self._out("moving_average.tsv"), "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        return curve

    # Visualizations

    def spectral_map(self, data_dir: str) -> list:
        recordings = load_dataset(data_dir).recordings
        pathological = [r for r in recordings if r.label == RecordingLabel.PATHOLOGICAL]
        normal = [r for r in recordings if r.label == RecordingLabel.NORMAL]
        _, maps = spectral.class_contrast_maps(
            _labelled(pathological, "pathological"), _labelled(normal, "normal")
        )
        spectral.write_topomaps(maps, self.output_dir)
        return maps

    def perturb_map(self, model_dir: str, data_dir: str, crop_stride: int, config: PerturbationConfig) -> list:
        network = self.load_model(model_dir)
        eval_set = _labelled(load_dataset(data_dir).eval, "evaluation")
        crops = perturbviz.perturbation_crops(eval_set, network.receptive_field, crop_stride, config.max_crops, config.seed)
        run = perturbviz.run_perturbation(
            network, crops, eval_set[0].electrode_labels, eval_set[0].sample_rate_hz, config, self.workers
        )
        _, maps = perturbviz.correlation_map(run, min_repetitions=config.min_repetitions)
        spectral.write_topomaps(maps, self.output_dir)
        return maps

    def report_words(self, model_dir: str, data_dir: str, crop_stride: int, k: int = 10, min_count: int = 2) -> Dict[str, list]:
        network = self.load_model(model_dir)
        eval_set = _labelled(load_dataset(data_dir).eval, "evaluation")
        result = training.evaluate(network, eval_set, crop_stride, workers=self.workers)
        texts = {r.subject_id: r.report_text for r in eval_set}

        by_class = reports.class_word_ratios(result, texts)
        summary_lines = []
        for name, stats in by_class.items():
            reports.write_word_table(stats, self._out(f"words_{name}.tsv"))
            top = reports.top_words(stats, k, min_count)
            summary_lines.append(f"[{name}] incorrect vs correct")
            summary_lines += [f"  larger  {s.word}\t{reports.format_ratio(s)}" for s in top.largest]
            summary_lines += [f"  smaller {s.word}\t{reports.format_ratio(s)}" for s in top.smallest]
            summary_lines += [f"  only-incorrect {s.word}\t{s.count_incorrect}" for s in top.infinite]

        exclusive = reports.class_exclusive_words(
            {
                "normal": [r.report_text for r in eval_set if r.label == RecordingLabel.NORMAL],
                "pathological": [r.report_text for r in eval_set if r.label == RecordingLabel.PATHOLOGICAL],
            },
            k,
        )
        for name, words in exclusive.items():
            summary_lines.append(f"[{name}] words absent from the other class")
            summary_lines += [f"  {word}\t{count}" for word, count in words]
        with open(self._out("words_summary.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(summary_lines) + "\n")
        return by_class

    # Architecture search

    def hpo_search(
        self,
        data_dir: str,
        kind: str,
        train_config: TrainConfig,
        search_config: SearchConfig,
        evaluate_incumbent: bool = True,
    ):
        dataset = load_dataset(data_dir)
        space = hpo.space_for(kind)
        objective = hpo.ArchitectureObjective(space, _labelled(dataset.train, "training"), train_config, search_config)
        result = hpo.smbo_search(space, objective, search_config.model_copy(update={"workers": self.workers}))
        hpo.write_history(result.history, self._out("history.tsv"))

        incumbent = result.incumbent
        architecture = space.to_architecture(incumbent.assignment)
        flatconfig.save_file(architecture.to_flat(), self._out("incumbent.cfg"))
        if evaluate_incumbent and dataset.eval:
            network, _ = training.train_from_config(architecture, dataset.train, train_config)
            incumbent.evaluation_accuracy = training.evaluate(
                network, dataset.eval, train_config.crop_stride, workers=self.workers
            ).trial_accuracy
        with open(self._out("incumbent.txt"), "w", encoding="utf-8") as f:
            f.write(hpo.describe_incumbent(incumbent, space))
        return result

    # End to end

    def run(
        self, n_per_class: int, duration_s: float, seed: int, kind: str = "deep", epochs: int = 35
    ) -> Tuple[bool, Optional[Dict[str, float]], Dict]:
        """Generate, train and evaluate in subdirectories of the output directory.

        Returns:
            tuple: (success, metrics by name, intermediate data)
        """
        start_time = time.time()
        logger.info(f"Starting end-to-end run: {kind} network, seed {seed}")
        intermediate_data: Dict = {}
        dirs = {name: self._out(name) for name in ("synth", "train", "eval")}
        for path in dirs.values():
            os.makedirs(path, exist_ok=True)

        try:
            # Step 1: Synthetic data
            logger.info("Step 1: Generating synthetic recordings")
            intermediate_data["dataset"] = ExperimentPipeline(dirs["synth"], self.workers).synth(n_per_class, duration_s, seed)

            # Step 2: Training
            logger.info("Step 2: Training")
            config = TrainConfig(seed=seed, epochs=epochs, workers=self.workers)
            intermediate_data["network"] = ExperimentPipeline(dirs["train"], self.workers).train(
                dirs["synth"], ArchitectureConfig.default_for(kind), config
            )

            # Step 3: Evaluation
            logger.info("Step 3: Evaluating")
            result = ExperimentPipeline(dirs["eval"], self.workers).evaluate(dirs["train"], dirs["synth"], config.crop_stride)
            intermediate_data["result"] = result

            elapsed_time = time.time() - start_time
            logger.info(f"Pipeline completed successfully in {elapsed_time:.2f} seconds")
            return True, {"trial_accuracy": result.trial_accuracy, "crop_accuracy": result.crop_accuracy}, intermediate_data

        except Exception as e:
            logger.exception(f"Pipeline execution failed: {str(e)}")
            return False, None, intermediate_data
