"""Class-contrast spectral maps.

Windowed power spectra of every recording, per-class medians over all windows, the
pathological/normal log ratio, per-band means, and topographic SVG renderings.
"""

import math
import os
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.patches import Circle, PathPatch
from matplotlib.path import Path
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal.windows import blackmanharris
from scipy.spatial.distance import cdist

from eeg_engine.errors import BandError, DataError, ElectrodeError, EmptyInputError, TooShortError
from eeg_engine.models import DEFAULT_BANDS, BandSpec, Recording, SpectralProfile, TopoMap
from eeg_engine.montage import SCALP_COORDINATES
from eeg_engine.plotting import figure_svg, new_figure
from utils.logger import get_logger

logger = get_logger(__name__)

WINDOW_S = 12.0
OVERLAP_S = 6.0
RATIO_FLOOR = 1e-20


def stft(signal: np.ndarray, sample_rate_hz: float, window_s: float = WINDOW_S, overlap_s: float = OVERLAP_S) -> Tuple[np.ndarray, np.ndarray]:
    """One-sided power spectrogram with a 4-term Blackman-Harris window.

    Works along the last axis: ``[n]`` gives ``[windows, bins]``, ``[electrodes, n]`` gives
    ``[electrodes, windows, bins]``. Power is normalized so that the bins of one window sum to
    ``sum((x * w) ** 2) / sum(w ** 2)``. Trailing partial windows are dropped.

    Returns:
        tuple: (bin frequencies in Hz, power)
    """
    signal = np.asarray(signal, dtype=np.float64)
    n_window = int(round(window_s * sample_rate_hz))
    step = n_window - int(round(overlap_s * sample_rate_hz))
    if n_window < 1 or step < 1:
        raise DataError(f"Invalid STFT window {window_s} s / overlap {overlap_s} s")
    if signal.shape[-1] < n_window:
        raise TooShortError(f"Signal of {signal.shape[-1]} samples is shorter than one {n_window}-sample window")

    window = blackmanharris(n_window, sym=False)
    segments = sliding_window_view(signal, n_window, axis=-1)[..., ::step, :]
    spectrum = np.fft.rfft(segments * window, axis=-1)

    weights = np.full(spectrum.shape[-1], 2.0)
    weights[0] = 1.0
    if n_window % 2 == 0:
        weights[-1] = 1.0
    power = weights * np.abs(spectrum) ** 2 / (n_window * np.sum(window ** 2))
    freqs = np.fft.rfftfreq(n_window, d=1.0 / sample_rate_hz)
    return freqs, power


def recording_spectrogram(recording: Recording, window_s: float = WINDOW_S, overlap_s: float = OVERLAP_S) -> Tuple[np.ndarray, np.ndarray]:
    return stft(recording.samples, recording.sample_rate_hz, window_s, overlap_s)


def median_bandpower(recordings: Sequence[Recording], window_s: float = WINDOW_S, overlap_s: float = OVERLAP_S) -> SpectralProfile:
    """Median power per (electrode, bin) over all windows of all recordings of one class.

    Raises:
        EmptyInputError: no recordings
        ElectrodeError: recordings disagree on electrodes
    """
    if not recordings:
        raise EmptyInputError("No recordings for the median band power")
    electrodes = recordings[0].electrode_labels
    rate = recordings[0].sample_rate_hz
    spectra = []
    freqs = None
    for recording in recordings:
        if recording.electrode_labels != electrodes:
            raise ElectrodeError(f"Recording {recording.subject_id} has electrodes {recording.electrode_labels}, expected {electrodes}")
        if recording.sample_rate_hz != rate:
            raise DataError(f"Recording {recording.subject_id} is sampled at {recording.sample_rate_hz} Hz, expected {rate}")
        freqs, power = recording_spectrogram(recording, window_s, overlap_s)
        spectra.append(power)
    values = np.median(np.concatenate(spectra, axis=1), axis=1)
    return SpectralProfile(electrodes=list(electrodes), freqs_hz=freqs, values=values)


def class_log_ratio(pathological: SpectralProfile, normal: SpectralProfile, floor: float = RATIO_FLOOR) -> SpectralProfile:
    """Natural log of pathological over normal median power; non-positive medians are floored."""
    if pathological.electrodes != normal.electrodes:
        raise ElectrodeError("Class profiles disagree on electrodes")
    if pathological.freqs_hz.shape != normal.freqs_hz.shape or not np.allclose(pathological.freqs_hz, normal.freqs_hz):
        raise DataError("Class profiles disagree on frequency bins")

    floored = int(np.sum(pathological.values < floor) + np.sum(normal.values < floor))
    if floored:
        logger.warning(f"Floored {floored} median power values at {floor:g} before the log ratio")
    values = np.log(np.maximum(pathological.values, floor)) - np.log(np.maximum(normal.values, floor))
    return SpectralProfile(electrodes=list(pathological.electrodes), freqs_hz=pathological.freqs_hz, values=values)


def band_mask(freqs_hz: np.ndarray, band: BandSpec) -> np.ndarray:
    """Bins with ``lo <= f < hi``.

    Raises:
        BandError: no bin falls inside the band
    """
    mask = (freqs_hz >= band.lo_hz) & (freqs_hz < band.hi_hz)
    if not mask.any():
        raise BandError(f"Band {band.name} [{band.lo_hz:g}, {band.hi_hz:g}) Hz has no bins up to {freqs_hz[-1]:g} Hz")
    return mask


def band_aggregate(profile: SpectralProfile, bands: Sequence[BandSpec] = DEFAULT_BANDS) -> List[TopoMap]:
    """Mean over the bins of each band, per electrode. Cells that are NaN are skipped;
    an electrode with no finite cell in a band gets an absent value."""
    unknown = [e for e in profile.electrodes if e not in SCALP_COORDINATES]
    if unknown:
        raise ElectrodeError(f"No scalp coordinates for electrodes {unknown}")
    coordinates = [SCALP_COORDINATES[e] for e in profile.electrodes]

    maps = []
    for band in bands:
        cells = profile.values[:, band_mask(profile.freqs_hz, band)]
        finite = np.isfinite(cells)
        counts = finite.sum(axis=1)
        sums = np.where(finite, cells, 0.0).sum(axis=1)
        values = [float(s / c) if c else None for s, c in zip(sums, counts)]
        maps.append(TopoMap(band=band.name, electrodes=list(profile.electrodes), values=values, coordinates=coordinates))
    return maps


def class_contrast_maps(
    pathological: Sequence[Recording],
    normal: Sequence[Recording],
    bands: Sequence[BandSpec] = DEFAULT_BANDS,
    window_s: float = WINDOW_S,
    overlap_s: float = OVERLAP_S,
) -> Tuple[SpectralProfile, List[TopoMap]]:
    """Spectrogram, class medians, log ratio and band means in one call."""
    logger.info(f"Median band power of {len(pathological)} pathological and {len(normal)} normal recordings")
    ratio = class_log_ratio(
        median_bandpower(pathological, window_s, overlap_s),
        median_bandpower(normal, window_s, overlap_s),
    )
    return ratio, band_aggregate(ratio, bands)


# Rendering

HEAD_RADIUS = 1.0
GRID_SIZE = 48
IDW_POWER = 2.0
FIGURE_INCHES = 4.0
CONTOUR_LEVELS = 6
TOPOMAP_CMAP = "RdBu_r"


def interpolate(points: np.ndarray, known: np.ndarray, values: np.ndarray, power: float = IDW_POWER) -> np.ndarray:
    """Inverse-distance-weighted values at ``points`` from ``known`` positions."""
    distances = cdist(points, known)
    exact = distances < 1e-12
    with np.errstate(divide="ignore"):
        weights = np.where(exact, 0.0, 1.0 / distances ** power)
    out = (weights @ values) / weights.sum(axis=1)
    hit_rows = exact.any(axis=1)
    out[hit_rows] = values[exact[hit_rows].argmax(axis=1)]
    return out


def map_scale(topo: TopoMap) -> float:
    present = [abs(v) for v in topo.values if v is not None]
    return max(present) if present else 0.0


def _add_head(ax) -> Circle:
    """Head circle, nose and ears; returns the circle for clipping the color field."""
    head = Circle((0.0, 0.0), HEAD_RADIUS, fill=False, linewidth=2)
    ax.add_patch(head)
    nose = [(-0.1, 0.995), (0.0, 1.1), (0.1, 0.995)]
    left_ear = [(-1.0, 0.134), (-1.04, 0.08), (-1.08, -0.11), (-1.06, -0.16), (-1.02, -0.15), (-1.0, -0.12)]
    right_ear = [(-x, y) for x, y in left_ear]
    for outline in (nose, left_ear, right_ear):
        codes = [Path.MOVETO] + [Path.LINETO] * (len(outline) - 1)
        ax.add_patch(PathPatch(Path(outline, codes), fill=False, linewidth=2))
    return head


def render_topomap(topo: TopoMap, scale: Optional[float] = None, grid_size: int = GRID_SIZE) -> str:
    """SVG scalp map: interpolated color field, head outline, electrodes, title and color bar.

    ``scale`` fixes the color range to ``[-scale, scale]``; it defaults to the largest absolute
    value. Electrodes without a value are drawn hollow.
    """
    scale = map_scale(topo) if scale is None else scale
    limit = scale if np.isfinite(scale) and scale > 0 else 1.0
    known = [(xy, v) for xy, v in zip(topo.coordinates, topo.values) if v is not None]

    axis = np.linspace(-HEAD_RADIUS, HEAD_RADIUS, grid_size)
    gx, gy = np.meshgrid(axis, axis)
    if known:
        points = np.column_stack([gx.ravel(), gy.ravel()])
        field = interpolate(points, np.array([k[0] for k in known]), np.array([k[1] for k in known]))
        field = field.reshape(gx.shape)
    else:
        field = np.zeros_like(gx)
    field = np.ma.masked_where((gx ** 2 + gy ** 2 > HEAD_RADIUS ** 2) | ~np.isfinite(field), field)

    figure = new_figure(FIGURE_INCHES, FIGURE_INCHES + 0.6)
    ax = figure.add_subplot(1, 1, 1)
    extent = (-HEAD_RADIUS, HEAD_RADIUS, -HEAD_RADIUS, HEAD_RADIUS)
    image = ax.imshow(field, origin="lower", extent=extent, cmap=TOPOMAP_CMAP, vmin=-limit, vmax=limit, interpolation="bilinear")
    if field.count() and field.max() > field.min():
        ax.contour(gx, gy, field, levels=CONTOUR_LEVELS, colors="k", linewidths=0.5)
    image.set_clip_path(_add_head(ax))

    present = [xy for xy, v in zip(topo.coordinates, topo.values) if v is not None]
    absent = [xy for xy, v in zip(topo.coordinates, topo.values) if v is None]
    if present:
        xs, ys = zip(*present)
        ax.scatter(xs, ys, s=12, c="k", zorder=3).set_gid("electrodes")
    if absent:
        xs, ys = zip(*absent)
        ax.scatter(xs, ys, s=12, facecolors="white", edgecolors="k", zorder=3).set_gid("absent-electrodes")
    for label, (x, y) in zip(topo.electrodes, topo.coordinates):
        ax.text(x, y + 0.04, label, fontsize=7, ha="center")

    margin = 1.2 * HEAD_RADIUS
    ax.set_xlim(-margin, margin)
    ax.set_ylim(-margin, margin)
    ax.set_aspect("equal")
    ax.set_axis_off()
    ax.set_title(topo.band)
    figure.colorbar(image, ax=ax, orientation="horizontal", fraction=0.05, pad=0.04)
    return figure_svg(figure)


def write_topomaps_tsv(maps: Iterable[TopoMap], path: str) -> None:
    """``electrode band value`` rows, six decimals, ``n/a`` for absent values."""
    lines = ["electrode\tband\tvalue"]
    for topo in maps:
        for electrode, value in zip(topo.electrodes, topo.values):
            lines.append(f"{electrode}\t{topo.band}\t{'n/a' if value is None else f'{value:.6f}'}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def write_topomaps(maps: Sequence[TopoMap], out_dir: str, shared_scale: bool = True) -> List[str]:
    """``<band>.svg`` per map plus ``topomaps.tsv``; returns the written SVG paths."""
    scale = max((map_scale(m) for m in maps), default=0.0) if shared_scale else None
    paths = []
    for topo in maps:
        path = os.path.join(out_dir, f"{topo.band}.svg")
        with open(path, "w", encoding="utf-8") as f:
            f.write(render_topomap(topo, scale=scale))
        paths.append(path)
    write_topomaps_tsv(maps, os.path.join(out_dir, "topomaps.tsv"))
    logger.info(f"Wrote {len(paths)} topographic maps to {out_dir}")
    return paths


def sign_agreement(maps: Sequence[TopoMap], expected: Sequence[Tuple[str, str, float]]) -> float:
    """Fraction of ``(band, electrode, expected value)`` cells whose map value has the expected sign."""
    if not expected:
        raise EmptyInputError("No expected cells")
    by_band = {m.band: m for m in maps}
    hits = 0
    for band, electrode, value in expected:
        actual = by_band[band].value_of(electrode)
        hits += actual is not None and math.copysign(1.0, actual) == math.copysign(1.0, value)
    return hits / len(expected)
