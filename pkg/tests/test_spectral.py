import math

import numpy as np
import pytest
from scipy.signal.windows import blackmanharris

from eeg_engine import spectral
from eeg_engine.errors import BandError, ElectrodeError, EmptyInputError, TooShortError
from eeg_engine.models import DEFAULT_BANDS, BandSpec, Recording, RecordingLabel, SpectralProfile, TopoMap
from eeg_engine.montage import SCALP_COORDINATES


def profile(values, electrodes=("T3", "Cz"), freqs=None) -> SpectralProfile:
    values = np.asarray(values, dtype=np.float64)
    freqs = np.arange(values.shape[1], dtype=np.float64) if freqs is None else freqs
    return SpectralProfile(electrodes=list(electrodes), freqs_hz=freqs, values=values)


class TestStft:
    def test_shapes(self, rng):
        freqs, power = spectral.stft(rng.standard_normal((3, 3000)), 100.0)
        assert power.shape == (3, 4, 601)
        assert freqs[1] == pytest.approx(1.0 / 12.0)
        assert freqs[-1] == 50.0

    def test_parseval_per_window(self, rng):
        x = rng.standard_normal(2400)
        _, power = spectral.stft(x, 100.0)
        window = blackmanharris(1200, sym=False)
        for k, start in enumerate(range(0, 1201, 600)):
            segment = x[start:start + 1200]
            expected = np.sum((segment * window) ** 2) / np.sum(window ** 2)
            assert power[k].sum() == pytest.approx(expected, rel=1e-10)

    def test_on_bin_sine_stays_within_three_bins(self):
        t = np.arange(1200) / 100.0
        _, power = spectral.stft(np.sin(2 * np.pi * 10.0 * t), 100.0)
        assert power.shape == (1, 601)
        assert int(np.argmax(power[0])) == 120
        near = power[0, 117:124].sum()
        assert near / power[0].sum() > 1.0 - 1e-10

    def test_zero_signal(self):
        _, power = spectral.stft(np.zeros(1800), 100.0)
        assert np.all(power == 0.0)

    def test_too_short(self):
        with pytest.raises(TooShortError):
            spectral.stft(np.zeros(1199), 100.0)


class TestClassRatio:
    def test_median_over_all_windows(self, rng):
        a = Recording(electrode_labels=["Cz"], sample_rate_hz=100.0, samples=rng.standard_normal((1, 1200)))
        b = Recording(electrode_labels=["Cz"], sample_rate_hz=100.0, samples=3 * rng.standard_normal((1, 2400)))
        median = spectral.median_bandpower([a, b])
        _, pa = spectral.recording_spectrogram(a)
        _, pb = spectral.recording_spectrogram(b)
        stacked = np.concatenate([pa, pb], axis=1)
        np.testing.assert_allclose(median.values, np.median(stacked, axis=1))

    def test_mismatched_electrodes(self, rng):
        a = Recording(electrode_labels=["Cz"], sample_rate_hz=100.0, samples=rng.standard_normal((1, 1200)))
        b = Recording(electrode_labels=["Pz"], sample_rate_hz=100.0, samples=rng.standard_normal((1, 1200)))
        with pytest.raises(ElectrodeError):
            spectral.median_bandpower([a, b])

    def test_no_recordings(self):
        with pytest.raises(EmptyInputError):
            spectral.median_bandpower([])

    def test_equal_classes_give_zero(self, rng):
        p = profile(rng.uniform(1, 2, (2, 5)))
        np.testing.assert_array_equal(spectral.class_log_ratio(p, p).values, 0.0)

    def test_swapping_classes_negates(self, rng):
        a, b = profile(rng.uniform(1, 2, (2, 5))), profile(rng.uniform(1, 2, (2, 5)))
        np.testing.assert_allclose(spectral.class_log_ratio(a, b).values, -spectral.class_log_ratio(b, a).values)

    def test_zero_power_is_floored(self):
        ratio = spectral.class_log_ratio(profile([[0.0, 1.0], [1.0, 1.0]]), profile([[1.0, 0.0], [1.0, 1.0]]))
        assert np.all(np.isfinite(ratio.values))
        assert ratio.values[0, 0] == pytest.approx(math.log(1e-20))


class TestBands:
    def test_half_open_means(self):
        freqs = np.array([0.0, 2.0, 4.0, 6.0, 8.0])
        maps = spectral.band_aggregate(
            profile([[1.0, 3.0, 5.0, 7.0, 9.0], [0.0, 0.0, 1.0, 1.0, 1.0]], freqs=freqs),
            [BandSpec(name="delta", lo_hz=0, hi_hz=4), BandSpec(name="theta", lo_hz=4, hi_hz=8)],
        )
        assert [m.band for m in maps] == ["delta", "theta"]
        assert maps[0].value_of("T3") == 2.0
        assert maps[1].value_of("T3") == 6.0
        assert maps[1].value_of("Cz") == 1.0
        assert maps[0].coordinates[0] == SCALP_COORDINATES["T3"]

    def test_nan_cells_skipped(self):
        maps = spectral.band_aggregate(
            profile([[np.nan, 4.0], [np.nan, np.nan]]),
            [BandSpec(name="all", lo_hz=0, hi_hz=2)],
        )
        assert maps[0].values == [4.0, None]

    def test_empty_band(self):
        with pytest.raises(BandError):
            spectral.band_aggregate(profile(np.ones((2, 3))), [BandSpec(name="high", lo_hz=60, hi_hz=70)])

    def test_unknown_electrode(self):
        with pytest.raises(ElectrodeError):
            spectral.band_aggregate(profile(np.ones((2, 3)), electrodes=("T3", "EKG")))


class TestRendering:
    def test_interpolation_hits_known_points(self):
        known = np.array([[0.0, 0.0], [1.0, 0.0]])
        out = spectral.interpolate(np.array([[0.0, 0.0], [0.5, 0.0]]), known, np.array([2.0, 4.0]))
        np.testing.assert_allclose(out, [2.0, 3.0])

    def test_svg_marks_absent_electrodes(self):
        topo = TopoMap(
            band="delta",
            electrodes=["T3", "Cz"],
            values=[0.5, None],
            coordinates=[SCALP_COORDINATES["T3"], SCALP_COORDINATES["Cz"]],
        )
        svg = spectral.render_topomap(topo, grid_size=8)
        assert "<svg" in svg
        assert ">delta</text>" in svg
        assert 'id="absent-electrodes"' in svg
        assert ">T3</text>" in svg and ">Cz</text>" in svg

    def test_complete_map_has_no_hollow_electrodes(self):
        electrodes = ["T3", "T4", "Cz"]
        topo = TopoMap(band="theta", electrodes=electrodes, values=[0.5, -0.2, 0.0],
                       coordinates=[SCALP_COORDINATES[e] for e in electrodes])
        svg = spectral.render_topomap(topo, grid_size=8)
        assert 'id="electrodes"' in svg
        assert "absent-electrodes" not in svg

    def test_rendering_is_byte_identical(self):
        electrodes = ["T3", "Cz", "O1"]
        topo = TopoMap(band="alpha", electrodes=electrodes, values=[1.0, None, -0.5],
                       coordinates=[SCALP_COORDINATES[e] for e in electrodes])
        assert spectral.render_topomap(topo, grid_size=12) == spectral.render_topomap(topo, grid_size=12)

    def test_all_values_absent(self):
        topo = TopoMap(band="delta", electrodes=["T3"], values=[None], coordinates=[SCALP_COORDINATES["T3"]])
        assert "absent-electrodes" in spectral.render_topomap(topo, grid_size=8)

    def test_write_topomaps(self, tmp_path):
        electrodes = ["T3", "Cz"]
        maps = [
            TopoMap(band=b.name, electrodes=electrodes, values=[1.0, -1.0],
                    coordinates=[SCALP_COORDINATES[e] for e in electrodes])
            for b in DEFAULT_BANDS
        ]
        paths = spectral.write_topomaps(maps, str(tmp_path))
        assert sorted(p.rsplit("/", 1)[-1] for p in paths) == sorted(f"{b.name}.svg" for b in DEFAULT_BANDS)
        rows = (tmp_path / "topomaps.tsv").read_text().splitlines()
        assert rows[0] == "electrode\tband\tvalue"
        assert rows[1] == "T3\tdelta\t1.000000"
        assert len(rows) == 1 + 6 * 2


def test_sign_agreement():
    electrodes = ["T3", "Cz"]
    maps = [TopoMap(band="delta", electrodes=electrodes, values=[0.8, None],
                    coordinates=[SCALP_COORDINATES[e] for e in electrodes])]
    assert spectral.sign_agreement(maps, [("delta", "T3", 1.0), ("delta", "Cz", 1.0)]) == 0.5
    assert spectral.sign_agreement(maps, [("delta", "T3", -1.0)]) == 0.0


def test_synthetic_contrast_signs(small_recordings):
    pathological = [r for r in small_recordings if r.label == RecordingLabel.PATHOLOGICAL]
    normal = [r for r in small_recordings if r.label == RecordingLabel.NORMAL]
    ratio, maps = spectral.class_contrast_maps(pathological, normal)
    assert ratio.electrodes == ["T3", "C3", "T4", "O1"]
    by_band = {m.band: m for m in maps}
    assert by_band["delta"].value_of("T3") > 1.0
    assert by_band["theta"].value_of("T4") > 1.0
    assert abs(by_band["delta"].value_of("C3")) < 0.7
    assert all(v < 0 for v in by_band["low_gamma"].values)
