"""Input-perturbation network-prediction correlation maps.

Each repetition adds Gaussian noise to the amplitude spectrum of every crop (phases kept),
records the per-(electrode, bin) noise and the mean change of one pre-softmax output unit,
and the map is the Pearson correlation of the two across repetitions.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from eeg_engine.eegdata import crop_starts
from eeg_engine.errors import DimensionError, EmptyInputError
from eeg_engine.models import DEFAULT_BANDS, BandSpec, PerturbationConfig, PerturbationRun, Recording, SpectralProfile, TopoMap
from eeg_engine.spectral import band_aggregate
from utils.logger import get_logger

logger = get_logger(__name__)

LOGIT_BATCH_SIZE = 256


def _as_batch(crops: np.ndarray) -> np.ndarray:
    crops = np.asarray(crops, dtype=np.float64)
    if crops.ndim == 4:
        if crops.shape[1] != 1:
            raise DimensionError(f"Crop batch must be [batch, 1, electrodes, time], got {crops.shape}")
        return crops
    if crops.ndim == 3:
        return crops[:, None]
    raise DimensionError(f"Crop batch must be [batch, electrodes, time], got {crops.shape}")


def amplitude_std(crops: np.ndarray) -> np.ndarray:
    """Standard deviation of the FFT amplitude over crops, per (electrode, bin)."""
    amplitudes = np.abs(np.fft.rfft(_as_batch(crops)[:, 0], axis=-1))
    return amplitudes.std(axis=0)


def perturb_amplitudes(
    crops: np.ndarray,
    noise_scale: float,
    rng: np.random.Generator,
    amplitude_scale: Optional[np.ndarray] = None,
    floor_amplitudes: bool = True,
    bin_mask: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Add one Gaussian amplitude perturbation, shared by all crops, to the batch.

    Args:
        crops: ``[batch, 1, electrodes, time]`` or ``[batch, electrodes, time]``
        noise_scale: Noise standard deviation in units of ``amplitude_scale``
        rng: Source of the noise
        amplitude_scale: Per-(electrode, bin) unit, e.g. :func:`amplitude_std`; ones if omitted
        floor_amplitudes: Clip perturbed amplitudes at zero
        bin_mask: Optional ``[electrodes, bins]`` boolean mask; noise elsewhere is zeroed

    Returns:
        tuple: (perturbed crops shaped like the input, noise ``[electrodes, bins]``)
    """
    batch = _as_batch(crops)
    n_time = batch.shape[-1]
    spectrum = np.fft.rfft(batch, axis=-1)
    amplitude = np.abs(spectrum)
    phase = np.angle(spectrum)

    shape = spectrum.shape[2:]
    unit = np.ones(shape) if amplitude_scale is None else np.asarray(amplitude_scale, dtype=np.float64)
    if unit.shape != shape:
        raise DimensionError(f"Amplitude scale {unit.shape} does not match spectrum {shape}")
    noise = rng.standard_normal(shape) * noise_scale * unit
    if bin_mask is not None:
        noise = np.where(bin_mask, noise, 0.0)

    perturbed_amplitude = amplitude + noise
    if floor_amplitudes:
        perturbed_amplitude = np.maximum(perturbed_amplitude, 0.0)
    perturbed = np.fft.irfft(perturbed_amplitude * np.exp(1j * phase), n=n_time, axis=-1)
    return perturbed.reshape(np.shape(crops)), noise


def _target_logits(network, crops: np.ndarray, target_class: int) -> np.ndarray:
    batch = _as_batch(crops)
    chunks = [network.logits(batch[i:i + LOGIT_BATCH_SIZE]) for i in range(0, len(batch), LOGIT_BATCH_SIZE)]
    return np.concatenate(chunks, axis=0)[:, target_class]


def prediction_delta(network, original: np.ndarray, perturbed: np.ndarray, target_class: int = 1) -> float:
    """Mean change of the ``target_class`` pre-softmax output from original to perturbed crops."""
    if np.shape(original) != np.shape(perturbed):
        raise DimensionError(f"Original {np.shape(original)} and perturbed {np.shape(perturbed)} batches differ")
    return float(np.mean(_target_logits(network, perturbed, target_class) - _target_logits(network, original, target_class)))


def perturbation_crops(recordings: Sequence[Recording], crop_len: int, crop_stride: int, max_crops: int, seed: int) -> np.ndarray:
    """All crops of the recordings, subsampled without replacement to at most ``max_crops``."""
    if not recordings:
        raise EmptyInputError("No recordings to perturb")
    index = [
        (i, start)
        for i, recording in enumerate(recordings)
        for start in crop_starts(recording.n_samples, crop_len, crop_stride)
    ]
    if len(index) > max_crops:
        keep = np.sort(np.random.default_rng(seed).choice(len(index), size=max_crops, replace=False))
        index = [index[k] for k in keep]
    crops = np.stack([recordings[i].samples[:, s:s + crop_len] for i, s in index]).astype(np.float64)
    return crops[:, None]


def run_perturbation(
    network,
    crops: np.ndarray,
    electrodes: Sequence[str],
    sample_rate_hz: float,
    config: Optional[PerturbationConfig] = None,
    workers: int = 1,
) -> PerturbationRun:
    """Repeat perturb-and-predict ``config.n_repetitions`` times.

    Repetition ``r`` draws its noise from seed ``config.seed + r``, so results do not depend
    on ``workers``.
    """
    config = config or PerturbationConfig()
    batch = _as_batch(crops)
    if batch.shape[2] != len(electrodes):
        raise DimensionError(f"{len(electrodes)} electrode labels for crops of {batch.shape[2]} electrodes")
    unit = amplitude_std(batch)
    baseline = _target_logits(network, batch, config.target_class)

    def repetition(r: int) -> Tuple[np.ndarray, float]:
        rng = np.random.default_rng(config.seed + r)
        perturbed, noise = perturb_amplitudes(
            batch, config.noise_scale, rng, amplitude_scale=unit, floor_amplitudes=config.floor_amplitudes
        )
        delta = float(np.mean(_target_logits(network, perturbed, config.target_class) - baseline))
        return noise, delta

    logger.info(
        f"Perturbing {len(batch)} crops, {config.n_repetitions} repetitions, noise scale {config.noise_scale:g}"
    )
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(repetition, range(config.n_repetitions)))
    else:
        outcomes = [repetition(r) for r in range(config.n_repetitions)]

    return PerturbationRun(
        n_repetitions=config.n_repetitions,
        noise_scale=config.noise_scale,
        electrodes=list(electrodes),
        freqs_hz=np.fft.rfftfreq(batch.shape[-1], d=1.0 / sample_rate_hz),
        perturbations=np.stack([noise for noise, _ in outcomes]),
        deltas=np.array([delta for _, delta in outcomes]),
    )


def correlation_profile(run: PerturbationRun, min_repetitions: int = 30) -> SpectralProfile:
    """Pearson correlation per (electrode, bin) across repetitions; NaN where a cell has no variance."""
    if run.n_repetitions < 2:
        raise EmptyInputError("Correlation needs at least two repetitions")
    if run.n_repetitions < min_repetitions:
        logger.warning(f"Only {run.n_repetitions} repetitions; correlations below {min_repetitions} are noisy")

    noise = run.perturbations - run.perturbations.mean(axis=0)
    deltas = run.deltas - run.deltas.mean()
    covariance = np.tensordot(deltas, noise, axes=(0, 0))
    norms = np.sqrt((noise ** 2).sum(axis=0)) * np.sqrt((deltas ** 2).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        correlation = np.where(norms > 0, covariance / norms, np.nan)
    return SpectralProfile(
        electrodes=list(run.electrodes),
        freqs_hz=run.freqs_hz,
        values=np.clip(correlation, -1.0, 1.0),
    )


def correlation_map(
    run: PerturbationRun,
    bands: Sequence[BandSpec] = DEFAULT_BANDS,
    min_repetitions: int = 30,
) -> Tuple[SpectralProfile, List[TopoMap]]:
    profile = correlation_profile(run, min_repetitions)
    return profile, band_aggregate(profile, bands)
