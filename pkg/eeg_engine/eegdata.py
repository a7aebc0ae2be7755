"""Recording container format, dataset manifests, preprocessing, resampling and crops."""

import os
import struct
import zlib
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np
from scipy.signal import firwin, resample_poly

from eeg_engine.errors import CorruptionError, DataError, ElectrodeError, FormatError, TooShortError
from eeg_engine.models import Crop, Dataset, PreprocessConfig, Recording, RecordingLabel
from utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"EEGREC01"
VERSION = 2
RECORDING_SUFFIX = ".eegrec"
MANIFEST_NAME = "dataset.manifest"

KAISER_BETA = 8.0
TAPS_PER_FACTOR = 40

_HEADER = struct.Struct("<IIQd")
_CHECKSUM = struct.Struct("<I")


# Container format


def save_recording(recording: Recording, path: str) -> None:
    """Write a recording in the ``EEGREC01`` container format, followed by a CRC-32 of the body."""
    labels = b"".join(label.encode("utf-8") + b"\0" for label in recording.electrode_labels)
    report = (recording.report_text or "").encode("utf-8")
    samples = np.ascontiguousarray(recording.samples, dtype="<f4")

    body = b"".join(
        [
            MAGIC,
            _HEADER.pack(VERSION, recording.n_electrodes, recording.n_samples, float(recording.sample_rate_hz)),
            labels,
            struct.pack("<B", int(recording.label)),
            struct.pack("<I", len(report)),
            report,
            samples.tobytes(order="C"),
        ]
    )
    with open(path, "wb") as f:
        f.write(body)
        f.write(_CHECKSUM.pack(zlib.crc32(body)))


def load_recording(path: str, subject_id: Optional[str] = None) -> Recording:
    """Read a container file; the subject id defaults to the file stem.

    Raises:
        FormatError: wrong magic bytes or unsupported version
        CorruptionError: truncated or inconsistent payload
    """
    with open(path, "rb") as f:
        blob = f.read()

    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path} is not an EEG recording container (bad magic)")
    if len(blob) < len(MAGIC) + _CHECKSUM.size:
        raise CorruptionError(f"{path}: checksum missing")
    (stored,) = _CHECKSUM.unpack_from(blob, len(blob) - _CHECKSUM.size)
    blob = blob[: -_CHECKSUM.size]
    if zlib.crc32(blob) != stored:
        raise CorruptionError(f"{path}: checksum mismatch, file is truncated or damaged")
    offset = len(MAGIC)
    if len(blob) < offset + _HEADER.size:
        raise CorruptionError(f"{path}: header truncated")
    version, n_electrodes, n_samples, sample_rate = _HEADER.unpack_from(blob, offset)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    offset += _HEADER.size

    labels = []
    for _ in range(n_electrodes):
        end = blob.find(b"\0", offset)
        if end < 0:
            raise CorruptionError(f"{path}: electrode labels truncated")
        labels.append(blob[offset:end].decode("utf-8"))
        offset = end + 1

    if len(blob) < offset + 5:
        raise CorruptionError(f"{path}: label/report header truncated")
    label_byte = blob[offset]
    try:
        label = RecordingLabel(label_byte)
    except ValueError:
        raise CorruptionError(f"{path}: invalid label byte {label_byte}")
    (report_len,) = struct.unpack_from("<I", blob, offset + 1)
    offset += 5
    if len(blob) < offset + report_len:
        raise CorruptionError(f"{path}: report text truncated")
    report = blob[offset:offset + report_len].decode("utf-8")
    offset += report_len

    payload = n_electrodes * n_samples * 4
    if len(blob) - offset != payload:
        raise CorruptionError(
            f"{path}: expected {payload} sample bytes, found {len(blob) - offset}"
        )
    samples = np.frombuffer(blob, dtype="<f4", count=n_electrodes * n_samples, offset=offset)
    samples = samples.reshape(n_electrodes, n_samples).astype(np.float32)

    if subject_id is None:
        subject_id = os.path.splitext(os.path.basename(path))[0]
    return Recording(
        electrode_labels=labels,
        sample_rate_hz=sample_rate,
        samples=samples,
        label=label,
        report_text=report or None,
        subject_id=subject_id,
    )


# Datasets


def save_dataset(dataset: Dataset, out_dir: str) -> str:
    """Write every recording plus the ``dataset.manifest`` membership file."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for recording, split in zip(dataset.recordings, dataset.splits):
        name = f"{recording.subject_id}{RECORDING_SUFFIX}"
        save_recording(recording, os.path.join(out_dir, name))
        lines.append(f"{name}\t{split}")
    manifest = os.path.join(out_dir, MANIFEST_NAME)
    with open(manifest, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"Saved {len(lines)} recordings to {out_dir}")
    return manifest


def load_dataset(data_dir: str) -> Dataset:
    manifest = os.path.join(data_dir, MANIFEST_NAME)
    if not os.path.isfile(manifest):
        raise DataError(f"No dataset manifest at {manifest}")
    recordings, splits = [], []
    with open(manifest, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in ("train", "eval"):
                raise FormatError(f"{manifest}:{number}: expected '<path>\\t<train|eval>'")
            path = os.path.join(data_dir, parts[0])
            if not os.path.isfile(path):
                raise DataError(f"Recording listed in manifest is missing: {path}")
            recordings.append(load_recording(path))
            splits.append(parts[1])
    logger.info(f"Loaded {len(recordings)} recordings from {data_dir}")
    return Dataset(recordings=recordings, splits=splits)


def split_by_subject(recordings: Sequence[Recording], eval_fraction: float, seed: int) -> List[str]:
    """Subject-disjoint train/eval assignment, stratified by label."""
    rng = np.random.default_rng(seed)
    splits = ["train"] * len(recordings)
    for label in sorted({int(r.label) for r in recordings}):
        subjects = sorted({r.subject_id for r in recordings if int(r.label) == label})
        chosen = rng.permutation(len(subjects))[: int(round(eval_fraction * len(subjects)))]
        eval_subjects = {subjects[i] for i in chosen}
        for i, recording in enumerate(recordings):
            if int(recording.label) == label and recording.subject_id in eval_subjects:
                splits[i] = "eval"
    return splits


# Resampling


def resample(signal: np.ndarray, from_hz: float, to_hz: float) -> np.ndarray:
    """Polyphase resampling with a Kaiser windowed-sinc anti-aliasing filter.

    Works along the last axis. The low-pass cutoff sits at ``min(from_hz, to_hz) / 2``;
    output length is ``round(n * to_hz / from_hz)``.
    """
    if from_hz <= 0 or to_hz <= 0:
        raise DataError(f"Sample rates must be positive, got {from_hz} -> {to_hz}")
    signal = np.asarray(signal, dtype=np.float64)
    if from_hz == to_hz:
        return signal.copy()

    ratio = Fraction(to_hz / from_hz).limit_denominator(1000)
    up, down = ratio.numerator, ratio.denominator
    max_rate = max(up, down)
    taps = firwin(2 * TAPS_PER_FACTOR * max_rate + 1, 1.0 / max_rate, window=("kaiser", KAISER_BETA))
    out = resample_poly(signal, up, down, axis=-1, window=taps, padtype="line")

    target = int(round(signal.shape[-1] * to_hz / from_hz))
    if out.shape[-1] >= target:
        return out[..., :target]
    pad = [(0, 0)] * (out.ndim - 1) + [(0, target - out.shape[-1])]
    return np.pad(out, pad, mode="edge")


# Preprocessing


def preprocess(recording: Recording, config: Optional[PreprocessConfig] = None) -> Recording:
    """Electrode subset, head removal, duration cap, clipping, resampling, in that order."""
    config = config or PreprocessConfig()

    # 1. electrode subset in configured order
    index = {label: i for i, label in enumerate(recording.electrode_labels)}
    missing = [label for label in config.electrode_subset if label not in index]
    if missing:
        raise ElectrodeError(f"Recording {recording.subject_id} lacks electrodes {missing}")
    rows = [index[label] for label in config.electrode_subset]
    samples = recording.samples[rows].astype(np.float64)
    rate = recording.sample_rate_hz

    # 2. drop the first minute; what is left must hold one crop
    needed_s = config.skip_head_seconds + config.min_crop_samples / config.target_rate_hz
    if recording.duration_s <= config.skip_head_seconds or recording.duration_s < needed_s:
        raise TooShortError(
            f"Recording {recording.subject_id} lasts {recording.duration_s:.1f} s, "
            f"needs {config.skip_head_seconds:g} s of head plus {config.min_crop_samples} samples"
        )
    samples = samples[:, int(round(config.skip_head_seconds * rate)):]

    # 3. cap the remaining duration
    samples = samples[:, : int(round(config.max_keep_seconds * rate))]

    # 4. clip amplitudes
    samples = np.clip(samples, -config.clip_uv, config.clip_uv)

    # 5. resample
    if rate != config.target_rate_hz:
        samples = resample(samples, rate, config.target_rate_hz)

    logger.debug(
        f"Preprocessed {recording.subject_id}: {recording.n_samples} @ {rate:g} Hz -> "
        f"{samples.shape[1]} @ {config.target_rate_hz:g} Hz"
    )
    return recording.replace_samples(
        samples.astype(np.float32),
        sample_rate_hz=config.target_rate_hz,
        electrode_labels=list(config.electrode_subset),
    )


def limit_duration(recording: Recording, minutes: Optional[float]) -> Recording:
    """First ``minutes`` of a recording; None or more than available keeps everything."""
    if minutes is None:
        return recording
    n_keep = int(round(minutes * 60.0 * recording.sample_rate_hz))
    if n_keep >= recording.n_samples:
        return recording
    return recording.replace_samples(recording.samples[:, :n_keep])


# Crops


def crop_starts(n_samples: int, crop_len: int, stride: int) -> List[int]:
    """Start indices 0, stride, ... plus a final crop flush with the end."""
    if crop_len > n_samples:
        raise TooShortError(f"Crop length {crop_len} exceeds recording length {n_samples}")
    if stride < 1:
        raise DataError(f"Crop stride must be positive, got {stride}")
    starts = list(range(0, n_samples - crop_len + 1, stride))
    if starts[-1] != n_samples - crop_len:
        starts.append(n_samples - crop_len)
    return starts


def generate_crops(recording: Recording, crop_len: int, stride: int, recording_index: int = 0) -> List[Crop]:
    return [
        Crop(
            recording_index=recording_index,
            start_sample=start,
            length_samples=crop_len,
            samples=recording.samples[:, start:start + crop_len],
        )
        for start in crop_starts(recording.n_samples, crop_len, stride)
    ]


def crop_batch(recording: Recording, starts: Sequence[int], crop_len: int) -> np.ndarray:
    """Stack crops into a ``[batch, 1, electrodes, time]`` float64 network input."""
    batch = np.stack([recording.samples[:, s:s + crop_len] for s in starts]).astype(np.float64)
    return batch[:, None, :, :]


def crop_centers_s(starts: Sequence[int], crop_len: int, sample_rate_hz: float) -> np.ndarray:
    return (np.asarray(starts, dtype=np.float64) + crop_len / 2.0) / sample_rate_hz

