import math
import typing
from enum import IntEnum
from fractions import Fraction
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from eeg_engine.errors import ConfigError, DataError, ElectrodeError
from eeg_engine.montage import STANDARD_1020
from utils import flatconfig

REDUCED_MINUTES = (1, 2, 4, 8, 16)


class FlatModel(BaseModel):
    """Model that round-trips through the flat ``key=value`` grammar."""

    model_config = ConfigDict(extra="forbid")

    def to_flat(self) -> Dict[str, flatconfig.FlatValue]:
        return {name: getattr(self, name) for name in type(self).model_fields}

    @classmethod
    def from_flat(cls, values: Mapping[str, str]):
        parsed: Dict[str, Any] = {}
        for name, raw in values.items():
            field = cls.model_fields.get(name)
            if field is None:
                raise ConfigError(f"Unknown {cls.__name__} key: {name}")
            annotation = field.annotation
            optional = type(None) in typing.get_args(annotation)
            if optional and raw in ("", "all", "none", "None"):
                parsed[name] = None
            elif _is_list(annotation):
                parsed[name] = flatconfig.split_list(raw)
            else:
                parsed[name] = raw
        return cls(**parsed)


def _is_list(annotation) -> bool:
    if typing.get_origin(annotation) in (list, List):
        return True
    return any(typing.get_origin(arg) in (list, List) for arg in typing.get_args(annotation))


# Recordings


class RecordingLabel(IntEnum):
    NORMAL = 0
    PATHOLOGICAL = 1
    UNLABELED = 255


class Recording(BaseModel):
    """One multichannel EEG session in microvolts, electrodes x time."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    electrode_labels: List[str]
    sample_rate_hz: float
    samples: np.ndarray
    label: RecordingLabel = RecordingLabel.UNLABELED
    report_text: Optional[str] = None
    subject_id: str = ""

    @model_validator(mode="after")
    def _check(self) -> "Recording":
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 2:
            raise DataError(f"Samples must be a matrix, got shape {samples.shape}")
        if samples.shape[0] != len(self.electrode_labels):
            raise ElectrodeError(
                f"{samples.shape[0]} sample rows for {len(self.electrode_labels)} electrode labels"
            )
        if not self.sample_rate_hz > 0:
            raise DataError(f"Sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise DataError(f"Recording {self.subject_id or '?'} contains non-finite samples")
        samples = np.ascontiguousarray(samples)
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        return self

    @property
    def n_electrodes(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def replace_samples(self, samples: np.ndarray, sample_rate_hz: Optional[float] = None,
                        electrode_labels: Optional[List[str]] = None) -> "Recording":
        return Recording(
            electrode_labels=list(electrode_labels or self.electrode_labels),
            sample_rate_hz=sample_rate_hz or self.sample_rate_hz,
            samples=samples,
            label=self.label,
            report_text=self.report_text,
            subject_id=self.subject_id,
        )


class Dataset(BaseModel):
    """Recordings with their train/eval membership."""

    recordings: List[Recording]
    splits: List[Literal["train", "eval"]]

    @model_validator(mode="after")
    def _aligned(self) -> "Dataset":
        if len(self.recordings) != len(self.splits):
            raise DataError(f"{len(self.recordings)} recordings but {len(self.splits)} split entries")
        return self

    @property
    def train(self) -> List[Recording]:
        return [r for r, s in zip(self.recordings, self.splits) if s == "train"]

    @property
    def eval(self) -> List[Recording]:
        return [r for r, s in zip(self.recordings, self.splits) if s == "eval"]


class PreprocessConfig(FlatModel):
    electrode_subset: List[str] = Field(default_factory=lambda: list(STANDARD_1020))
    skip_head_seconds: float = 60.0
    max_keep_seconds: float = 1200.0
    clip_uv: float = 800.0
    target_rate_hz: float = 100.0
    min_crop_samples: int = 600

    @model_validator(mode="after")
    def _positive(self) -> "PreprocessConfig":
        if not self.electrode_subset:
            raise ConfigError("electrode_subset is empty")
        if self.min_crop_samples < 0:
            raise ConfigError("min_crop_samples must not be negative")
        if min(self.skip_head_seconds, self.max_keep_seconds, self.clip_uv, self.target_rate_hz) <= 0:
            raise ConfigError("Preprocessing values must be positive")
        return self


class Crop(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    recording_index: int
    start_sample: int
    length_samples: int
    samples: np.ndarray

    @property
    def stop_sample(self) -> int:
        return self.start_sample + self.length_samples


class SignatureConfig(FlatModel):
    """Class difference injected by the synthetic generator (amplitude gains)."""

    slowing_electrodes: List[str] = Field(default_factory=lambda: ["T3", "T4"])
    delta_gain: float = 2.0
    theta_gain: float = 2.0
    fast_attenuation: float = 0.7
    fast_lo_hz: float = 14.0
    fast_hi_hz: float = 50.0
    fast_electrodes: List[str] = Field(default_factory=lambda: list(STANDARD_1020))
    background_uv: float = 20.0
    alpha_uv: float = 12.0
    amplitude_jitter: float = 0.1
    severity_min: float = 1.0
    severity_max: float = 1.0

    @classmethod
    def null(cls) -> "SignatureConfig":
        return cls(delta_gain=1.0, theta_gain=1.0, fast_attenuation=1.0)

    @model_validator(mode="after")
    def _check(self) -> "SignatureConfig":
        if min(self.delta_gain, self.theta_gain, self.fast_attenuation) <= 0:
            raise ConfigError("Signature gains must be positive")
        if not 0 <= self.severity_min <= self.severity_max:
            raise ConfigError("Severity range must satisfy 0 <= min <= max")
        return self

    @property
    def is_null(self) -> bool:
        return self.delta_gain == 1.0 and self.theta_gain == 1.0 and self.fast_attenuation == 1.0


# Architectures and training

Nonlinearity = Literal["elu", "square_log", "identity", "max_pool_only"]
PoolMode = Literal["max", "mean"]


class ArchitectureConfig(FlatModel):
    kind: Literal["deep", "shallow", "linear"]
    input_len_samples: int
    n_electrodes: int = 21
    n_classes: int = 2
    n_filters: List[int] = Field(default_factory=list)
    filter_lengths: List[int] = Field(default_factory=list)
    conv_strides: List[int] = Field(default_factory=list)
    pool_lengths: List[int] = Field(default_factory=list)
    pool_strides: List[int] = Field(default_factory=list)
    pool_modes: List[PoolMode] = Field(default_factory=list)
    nonlinearities: List[Nonlinearity] = Field(default_factory=list)
    batch_norm: bool = True
    dropout: float = 0.0
    final_filter_len: int = 1

    @model_validator(mode="after")
    def _check(self) -> "ArchitectureConfig":
        if min(self.input_len_samples, self.n_electrodes, self.n_classes, self.final_filter_len) < 1:
            raise ConfigError("Architecture extents must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        lists = [self.n_filters, self.filter_lengths, self.conv_strides, self.pool_lengths,
                 self.pool_strides, self.pool_modes, self.nonlinearities]
        if self.kind == "linear":
            return self
        n_blocks = len(self.n_filters)
        if n_blocks == 0 or any(len(values) != n_blocks for values in lists):
            raise ConfigError(f"All per-block lists need {n_blocks or 'at least one'} entries")
        for values in lists[:5]:
            if min(values) < 1:
                raise ConfigError("Filter counts, lengths, strides and pool sizes must be positive")
        return self

    @property
    def n_blocks(self) -> int:
        return len(self.n_filters)

    @classmethod
    def default_deep(cls) -> "ArchitectureConfig":
        return cls(
            kind="deep",
            input_len_samples=601,
            n_filters=[25, 50, 100, 200],
            filter_lengths=[10, 10, 10, 10],
            conv_strides=[3, 3, 3, 3],
            pool_lengths=[3, 3, 3, 3],
            pool_strides=[1, 1, 1, 1],
            pool_modes=["max", "max", "max", "max"],
            nonlinearities=["elu", "elu", "elu", "elu"],
            final_filter_len=1,
        )

    @classmethod
    def default_shallow(cls) -> "ArchitectureConfig":
        return cls(
            kind="shallow",
            input_len_samples=594,
            n_filters=[40],
            filter_lengths=[25],
            conv_strides=[1],
            pool_lengths=[75],
            pool_strides=[15],
            pool_modes=["mean"],
            nonlinearities=["square_log"],
            final_filter_len=34,
        )

    @classmethod
    def default_linear(cls) -> "ArchitectureConfig":
        return cls(kind="linear", input_len_samples=600, batch_norm=False)

    @classmethod
    def default_for(cls, kind: str) -> "ArchitectureConfig":
        builders = {"deep": cls.default_deep, "shallow": cls.default_shallow, "linear": cls.default_linear}
        if kind not in builders:
            raise ConfigError(f"Unknown architecture kind: {kind}")
        return builders[kind]()


class TrainConfig(FlatModel):
    seed: int
    epochs: int = 35
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    crop_stride: int = 60
    train_minutes: Optional[int] = None
    test_minutes: Optional[int] = None
    workers: int = 1
    deadline_s: Optional[float] = None

    @field_validator("train_minutes", "test_minutes")
    @classmethod
    def _reduced(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value not in REDUCED_MINUTES:
            raise ConfigError(f"Duration limit must be one of {REDUCED_MINUTES} or all, got {value}")
        return value

    @model_validator(mode="after")
    def _positive(self) -> "TrainConfig":
        if min(self.epochs, self.batch_size, self.crop_stride, self.workers) < 1:
            raise ConfigError("epochs, batch_size, crop_stride and workers must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        return self


class EpochLog(BaseModel):
    epoch: int
    loss: float
    crop_accuracy: Optional[float] = None
    trial_accuracy: Optional[float] = None


class TrialResult(BaseModel):
    """Per-recording and per-crop predictions of one evaluation."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    recording_ids: List[str]
    true_labels: List[int]
    predicted_labels: List[int]
    mean_log_probs: np.ndarray
    crop_log_probs: List[np.ndarray]
    crop_centers_s: List[np.ndarray]

    @model_validator(mode="after")
    def _consistent(self) -> "TrialResult":
        n = len(self.recording_ids)
        if not (len(self.true_labels) == len(self.predicted_labels) == len(self.crop_log_probs) == n):
            raise DataError("TrialResult fields disagree on the number of recordings")
        return self

    @property
    def crop_predictions(self) -> List[np.ndarray]:
        return [np.argmax(lp, axis=1) for lp in self.crop_log_probs]

    @property
    def trial_accuracy(self) -> float:
        truth = np.asarray(self.true_labels)
        return float(np.mean(np.asarray(self.predicted_labels) == truth)) if truth.size else float("nan")

    @property
    def crop_accuracy(self) -> float:
        hits = [np.asarray(pred) == label for pred, label in zip(self.crop_predictions, self.true_labels)]
        return float(np.mean(np.concatenate(hits))) if hits else float("nan")


class GridCell(BaseModel):
    mode: Literal["train", "test", "both"]
    minutes: Optional[int]
    crop_accuracy: float
    trial_accuracy: float


class MovingAverageCurve(BaseModel):
    window_s: float
    centers_s: List[float]
    accuracy: List[float]


# Evaluation


class ConfusionMatrix(BaseModel):
    """Counts with "pathological" as the positive class."""

    tn: int = Field(ge=0)
    fp: int = Field(ge=0)
    fn: int = Field(ge=0)
    tp: int = Field(ge=0)

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


class Metrics(BaseModel):
    """Absent ratios (zero denominator) are None, never 0."""

    accuracy: float
    sensitivity: Optional[float]
    specificity: Optional[float]
    precision_normal: Optional[float]
    precision_pathological: Optional[float]


class RepeatedRuns(BaseModel):
    """Independent training runs that differ only in their seed."""

    seeds: List[int]
    results: List[TrialResult]
    confusion: ConfusionMatrix
    crop_confusion: ConfusionMatrix
    mean_trial_metrics: Metrics
    mean_crop_metrics: Metrics


# Spectral maps


class BandSpec(BaseModel):
    """Half-open frequency range [lo_hz, hi_hz)."""

    name: str
    lo_hz: float
    hi_hz: float

    @model_validator(mode="after")
    def _ordered(self) -> "BandSpec":
        if not 0 <= self.lo_hz < self.hi_hz:
            raise ConfigError(f"Band {self.name} needs 0 <= lo < hi, got [{self.lo_hz}, {self.hi_hz})")
        return self


DEFAULT_BANDS: List[BandSpec] = [
    BandSpec(name="delta", lo_hz=0.0, hi_hz=4.0),
    BandSpec(name="theta", lo_hz=4.0, hi_hz=8.0),
    BandSpec(name="alpha", lo_hz=8.0, hi_hz=14.0),
    BandSpec(name="low_beta", lo_hz=14.0, hi_hz=20.0),
    BandSpec(name="high_beta", lo_hz=20.0, hi_hz=30.0),
    BandSpec(name="low_gamma", lo_hz=30.0, hi_hz=50.0),
]


class SpectralProfile(BaseModel):
    """A per-(electrode, frequency bin) quantity."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    electrodes: List[str]
    freqs_hz: np.ndarray
    values: np.ndarray

    @model_validator(mode="after")
    def _shape(self) -> "SpectralProfile":
        expected = (len(self.electrodes), len(self.freqs_hz))
        if self.values.shape != expected:
            raise DataError(f"Profile values {self.values.shape} do not match {expected}")
        return self


class TopoMap(BaseModel):
    """Per-electrode values of one band; None marks an absent value."""

    band: str
    electrodes: List[str]
    values: List[Optional[float]]
    coordinates: List[Tuple[float, float]]

    @model_validator(mode="after")
    def _check(self) -> "TopoMap":
        if not (len(self.electrodes) == len(self.values) == len(self.coordinates)):
            raise ElectrodeError("TopoMap needs one value and coordinate per electrode")
        if any(v is not None and not math.isfinite(v) for v in self.values):
            raise DataError(f"TopoMap {self.band} contains non-finite values")
        return self

    def value_of(self, electrode: str) -> Optional[float]:
        return self.values[self.electrodes.index(electrode)]


# Perturbation maps


class PerturbationConfig(FlatModel):
    n_repetitions: int = 200
    noise_scale: float = 1.0
    max_crops: int = 1000
    seed: int = 0
    target_class: int = 1
    floor_amplitudes: bool = True
    min_repetitions: int = 30


class PerturbationRun(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    n_repetitions: int
    noise_scale: float
    electrodes: List[str]
    freqs_hz: np.ndarray
    perturbations: np.ndarray
    deltas: np.ndarray

    @model_validator(mode="after")
    def _counts(self) -> "PerturbationRun":
        expected = (self.n_repetitions, len(self.electrodes), len(self.freqs_hz))
        if self.perturbations.shape != expected or self.deltas.shape != (self.n_repetitions,):
            raise DataError(
                f"Perturbation record {self.perturbations.shape}/{self.deltas.shape} does not match {expected}"
            )
        return self


# Reports


class WordStats(BaseModel):
    word: str
    count_incorrect: int
    count_correct: int
    f_minus: float
    f_plus: float
    ratio: Optional[float]
    infinite: bool = False

    _exact: Optional[Fraction] = PrivateAttr(default=None)


class TopWordsReport(BaseModel):
    largest: List[WordStats]
    smallest: List[WordStats]
    infinite: List[WordStats]


# Architecture search


class IntegerParameter(BaseModel):
    kind: Literal["integer"] = "integer"
    name: str
    low: int
    high: int
    active_for: Optional[str] = None

    @model_validator(mode="after")
    def _range(self) -> "IntegerParameter":
        if self.low > self.high:
            raise ConfigError(f"{self.name}: low {self.low} > high {self.high}")
        return self


class CategoricalParameter(BaseModel):
    kind: Literal["categorical"] = "categorical"
    name: str
    choices: List[str]
    active_for: Optional[str] = None

    @model_validator(mode="after")
    def _choices(self) -> "CategoricalParameter":
        if not self.choices:
            raise ConfigError(f"{self.name}: no choices")
        return self


HyperParameter = Union[IntegerParameter, CategoricalParameter]
Assignment = Dict[str, Union[int, str]]


class SearchConfig(FlatModel):
    seed: int = 0
    budget: int = 200
    n_initial: int = 10
    n_folds: int = 10
    subset_size: int = 1500
    n_trees: int = 10
    xi: float = 0.01
    n_neighbors: int = 20
    n_random_candidates: int = 200
    time_budget_s: float = 120.0
    workers: int = 1

    @model_validator(mode="after")
    def _budget(self) -> "SearchConfig":
        if self.budget < 10:
            raise ConfigError(f"Search budget must be at least 10, got {self.budget}")
        if self.n_initial < 1 or self.n_folds < 2:
            raise ConfigError("n_initial must be positive and n_folds at least 2")
        return self


class TrialRecord(BaseModel):
    """One objective evaluation: one config on one fold."""

    index: int
    fold: int
    status: Literal["ok", "timeout", "crash"]
    score: float
    wall_time_s: float
    assignment: Assignment
    message: str = ""


class Trial(BaseModel):
    """A configuration with its per-fold scores."""

    assignment: Assignment
    fold_scores: Dict[int, float] = Field(default_factory=dict)
    status: Literal["ok", "timeout", "crash"] = "ok"
    wall_time_s: float = 0.0
    evaluation_accuracy: Optional[float] = None

    @property
    def mean_score(self) -> float:
        return float(np.mean(list(self.fold_scores.values()))) if self.fold_scores else 0.0


class SearchResult(BaseModel):
    incumbent: Trial
    history: List[TrialRecord]
    incumbent_trajectory: List[float]


# Runs


class RunManifest(BaseModel):
    command: str
    config: Dict[str, str]
    seed: Optional[int]
    input_paths: List[str]
    output_dir: str
    version: str
    started_at: str

    def to_flat(self) -> Dict[str, flatconfig.FlatValue]:
        values: Dict[str, flatconfig.FlatValue] = dict(self.config)
        values.update(
            {
                "manifest.command": self.command,
                "manifest.input_paths": self.input_paths,
                "manifest.output_dir": self.output_dir,
                "manifest.version": self.version,
                "manifest.started_at": self.started_at,
            }
        )
        if self.seed is not None:
            values["seed"] = self.seed
        return values
