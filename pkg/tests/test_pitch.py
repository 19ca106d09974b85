import numpy as np
import pytest

from hummit.corpus import SampledAudio
from hummit.errors import AllUnvoiced, AudioTooShort, NonPositiveFrequency
from hummit.pitch import (
    PitchConfig,
    PitchVector,
    estimate_f0,
    fill_unvoiced,
    format_pitch_values,
    hz_to_semitone,
    read_pitch_file,
    resample_pitch,
    semitone_to_hz,
)


def sine(freq, seconds=1.0, sr=8000, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return SampledAudio(sr, amp * np.sin(2 * np.pi * freq * t))


class TestSemitones:
    def test_a440(self):
        assert hz_to_semitone(440.0) == 69.0

    def test_octave_exact(self):
        for f in (55.0, 123.47, 261.6256, 1000.0):
            assert hz_to_semitone(2 * f) - hz_to_semitone(f) == 12.0

    def test_inverse(self):
        s = np.linspace(30, 90, 61)
        np.testing.assert_allclose(hz_to_semitone(semitone_to_hz(s)), s, atol=1e-9)

    @pytest.mark.parametrize("f", [0.0, -3.0, np.nan])
    def test_non_positive(self, f):
        with pytest.raises(NonPositiveFrequency):
            hz_to_semitone(f)


class TestEstimateF0:
    @pytest.mark.parametrize("freq", [100.0, 220.0, 440.0])
    def test_sine_accuracy(self, freq):
        pv = estimate_f0(sine(freq))
        est = semitone_to_hz(pv.values[pv.voiced])
        assert pv.voiced.mean() > 0.9
        assert np.mean(np.abs(est / freq - 1) <= 0.01) >= 0.95

    def test_frame_rate(self):
        assert estimate_f0(sine(220.0)).frame_rate == 100.0

    def test_silence_unvoiced(self):
        pv = estimate_f0(SampledAudio(8000, np.zeros(8000)))
        assert not pv.voiced.any()

    def test_white_noise_mostly_unvoiced(self):
        noise = np.random.default_rng(0).normal(0, 0.3, 16000).clip(-1, 1)
        assert estimate_f0(SampledAudio(8000, noise)).voiced.mean() < 0.2

    def test_too_short(self):
        with pytest.raises(AudioTooShort):
            estimate_f0(SampledAudio(8000, np.zeros(100)))
        with pytest.raises(AudioTooShort):
            estimate_f0(SampledAudio(8000, np.zeros(0)))

    def test_harmonic_tone_tracks_fundamental(self):
        t = np.arange(8000) / 8000
        x = sum(a * np.sin(2 * np.pi * 150 * h * t) for h, a in ((1, 1.0), (2, 0.8), (3, 0.6)))
        pv = estimate_f0(SampledAudio(8000, 0.3 * x))
        est = semitone_to_hz(pv.values[pv.voiced])
        assert np.mean(np.abs(est / 150 - 1) <= 0.01) >= 0.95

    def test_bad_config(self):
        with pytest.raises(ValueError):
            PitchConfig(f0_min_hz=500, f0_max_hz=60)


class TestPitchVectorOps:
    def test_fill_interior_and_edges(self):
        pv = PitchVector(100, [0, 60, 0, 0, 63, 0], [False, True, False, False, True, False])
        out = fill_unvoiced(pv)
        np.testing.assert_allclose(out.values, [60, 60, 61, 62, 63, 63])
        assert out.voiced.all()

    def test_fill_all_unvoiced(self):
        with pytest.raises(AllUnvoiced):
            fill_unvoiced(PitchVector(100, [0.0, 0.0], [False, False]))

    def test_resample_duration(self):
        pv = PitchVector(31.25, np.arange(250, dtype=float))
        out = resample_pitch(pv, 100.0)
        assert len(out) == 800
        assert out.values[0] == 0.0

    def test_pitch_file_round_trip(self, tmp_path):
        pv = PitchVector(100, [0.0, 60.25, 61.0], [False, True, True])
        path = tmp_path / "q.pv"
        path.write_text(format_pitch_values(pv))
        assert read_pitch_file(path, 100) == pv
