"""Synthetic EEG with a known class difference.

Both classes share a 1/f background and a 10 Hz posterior alpha rhythm. Pathological
recordings multiply the spectrum by configured gains (delta/theta up at the slowing
electrodes, 14-50 Hz down), so the expected class log power ratio is ``2 ln(gain)``.
"""

import math
from typing import List, Optional, Sequence

import numpy as np

from eeg_engine.models import Recording, RecordingLabel, SignatureConfig
from eeg_engine.montage import OCCIPITAL, STANDARD_1020
from utils.logger import get_logger

logger = get_logger(__name__)

ALPHA_HZ = 10.0
ALPHA_WIDTH_HZ = 1.0
ALPHA_WEIGHTS = {"O1": 1.0, "O2": 1.0, "P3": 0.5, "Pz": 0.5, "P4": 0.5, "T5": 0.4, "T6": 0.4}
ALPHA_DEFAULT_WEIGHT = 0.15

NORMAL_REPORTS = [
    "Normal EEG.",
    "Normal EEG in wakefulness.",
    "Normal EEG in wakefulness and drowsiness.",
    "Normal awake EEG with a well organized posterior dominant rhythm for age.",
]
PATHOLOGICAL_REPORTS = [
    "Abnormal EEG due to intermittent temporal slowing.",
    "Abnormal EEG. Bitemporal slowing in the delta and theta range.",
    "Excess delta and theta activity over the temporal regions, consistent with temporal slowing.",
    "Abnormal EEG due to focal temporal slowing and background disorganization.",
]
SUBTLE_REPORTS = [
    "Abnormal EEG due to a small amount of temporal slowing.",
    "Small amount of excess theta over the temporal regions.",
    "A small amount of temporal slowing, greater than anticipated for age.",
]


def _band_gains(signature: SignatureConfig, electrodes: Sequence[str], freqs: np.ndarray, severity: float) -> np.ndarray:
    """Amplitude gain per (electrode, frequency) for a pathological recording."""

    def scaled(gain: float) -> float:
        return 1.0 + severity * (gain - 1.0)

    gains = np.ones((len(electrodes), len(freqs)))
    delta = freqs < 4.0
    theta = (freqs >= 4.0) & (freqs < 8.0)
    fast = (freqs >= signature.fast_lo_hz) & (freqs < signature.fast_hi_hz)
    for row, label in enumerate(electrodes):
        if label in signature.slowing_electrodes:
            gains[row, delta] *= scaled(signature.delta_gain)
            gains[row, theta] *= scaled(signature.theta_gain)
        if label in signature.fast_electrodes:
            gains[row, fast] *= scaled(signature.fast_attenuation)
    return gains


def expected_log_ratio(signature: SignatureConfig, electrode: str, freq_hz: float) -> float:
    """Analytic pathological/normal log power ratio at full severity."""
    gains = _band_gains(signature, [electrode], np.array([freq_hz]), severity=1.0)
    return float(2.0 * np.log(gains[0, 0]))


def _shaped_noise(rng: np.random.Generator, n_rows: int, n: int, shape: np.ndarray, target_uv: float) -> np.ndarray:
    """Frequency-domain shaped Gaussian noise with expected standard deviation ``target_uv``."""
    weights = np.full(shape.shape, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    power = np.sum(weights * shape ** 2) / n
    scale = target_uv / math.sqrt(power) if power > 0 else 0.0
    return np.fft.rfft(rng.standard_normal((n_rows, n)), axis=1) * (shape * scale)


def _report(rng: np.random.Generator, label: RecordingLabel, severity: float, signature: SignatureConfig) -> str:
    if label == RecordingLabel.NORMAL:
        return NORMAL_REPORTS[rng.integers(len(NORMAL_REPORTS))]
    midpoint = 0.5 * (signature.severity_min + signature.severity_max)
    if signature.severity_max > signature.severity_min and severity < midpoint:
        return SUBTLE_REPORTS[rng.integers(len(SUBTLE_REPORTS))]
    return PATHOLOGICAL_REPORTS[rng.integers(len(PATHOLOGICAL_REPORTS))]


def synth_recording(
    index: int,
    label: RecordingLabel,
    duration_s: float,
    seed: int,
    signature: SignatureConfig,
    sample_rate_hz: float = 100.0,
    electrodes: Sequence[str] = STANDARD_1020,
) -> Recording:
    rng = np.random.default_rng([seed, index])
    n = int(round(duration_s * sample_rate_hz))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)

    background_shape = 1.0 / np.sqrt(np.maximum(freqs, 1.0))
    background_shape[0] = 0.0
    spectrum = _shaped_noise(rng, len(electrodes), n, background_shape, signature.background_uv)

    alpha_shape = np.exp(-0.5 * ((freqs - ALPHA_HZ) / ALPHA_WIDTH_HZ) ** 2)
    alpha = _shaped_noise(rng, len(electrodes), n, alpha_shape, signature.alpha_uv)
    weights = np.array([ALPHA_WEIGHTS.get(e, ALPHA_DEFAULT_WEIGHT) for e in electrodes])
    spectrum += alpha * weights[:, None]

    severity = float(rng.uniform(signature.severity_min, signature.severity_max))
    if label == RecordingLabel.PATHOLOGICAL:
        spectrum *= _band_gains(signature, electrodes, freqs, severity)

    jitter = math.exp(signature.amplitude_jitter * rng.standard_normal())
    samples = np.fft.irfft(spectrum, n=n, axis=1) * jitter

    return Recording(
        electrode_labels=list(electrodes),
        sample_rate_hz=sample_rate_hz,
        samples=samples.astype(np.float32),
        label=label,
        report_text=_report(rng, label, severity, signature),
        subject_id=f"s{index:04d}",
    )


def synth_dataset(
    n_per_class: int,
    duration_s: float,
    seed: int,
    signature: Optional[SignatureConfig] = None,
    sample_rate_hz: float = 100.0,
    electrodes: Sequence[str] = STANDARD_1020,
) -> List[Recording]:
    """Deterministic dataset of ``2 * n_per_class`` recordings, classes interleaved.

    Recording ``i`` is normal for even ``i`` and pathological for odd ``i``; every recording
    is its own subject.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be at least 1, got {n_per_class}")
    signature = signature or SignatureConfig()
    missing = [e for e in list(signature.slowing_electrodes) + OCCIPITAL if e not in electrodes]
    if missing:
        logger.warning(f"Signature electrodes {missing} are not part of the generated montage")

    logger.info(
        f"Generating {2 * n_per_class} synthetic recordings of {duration_s:g} s at {sample_rate_hz:g} Hz "
        f"(seed {seed}{', null signature' if signature.is_null else ''})"
    )
    return [
        synth_recording(
            index,
            RecordingLabel.NORMAL if index % 2 == 0 else RecordingLabel.PATHOLOGICAL,
            duration_s,
            seed,
            signature,
            sample_rate_hz=sample_rate_hz,
            electrodes=electrodes,
        )
        for index in range(2 * n_per_class)
    ]
