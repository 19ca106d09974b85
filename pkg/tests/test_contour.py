import numpy as np
import pytest

from hummit.contour import (
    NoteContour,
    Segment,
    SlopeConfig,
    detect_transitions,
    extract_melody,
    rebuild_contour,
    slope,
)
from hummit.errors import InvalidTransitionIndex, SignalTooShort
from hummit.pitch import PitchVector


def test_slope():
    np.testing.assert_array_equal(slope([60, 60, 62, 62, 59]), [0, 2, 0, -3])
    with pytest.raises(SignalTooShort):
        slope([1.0])


class TestDetect:
    def test_two_steps(self):
        assert detect_transitions([0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, -3, 0]) == [2, 12]

    def test_below_threshold(self):
        assert detect_transitions([0.1, -0.2, 0.3]) == []

    def test_threshold_inclusive(self):
        assert detect_transitions([0.0, 0.5, 0.0]) == [1]

    def test_close_peaks_keep_larger(self):
        # 10-frame minimum gap at 100 fps
        d = np.zeros(30)
        d[5], d[8] = 1.0, 2.5
        assert detect_transitions(d) == [8]

    def test_close_peaks_tie_keeps_earlier(self):
        d = np.zeros(30)
        d[5], d[8] = 1.0, -1.0
        assert detect_transitions(d) == [5]

    def test_ramp_one_transition(self):
        # glide spread over 5 frames
        d = np.zeros(40)
        d[10:15] = 0.6
        assert len(detect_transitions(d)) == 1


class TestRebuild:
    def test_medians(self):
        c = rebuild_contour(np.array([60.0, 60.2, 59.9, 64.0, 64.1, 63.8]), [2], 100)
        assert c.segments == (Segment(0, 3, 60.0), Segment(3, 3, 64.0))
        np.testing.assert_array_equal(c.expand(), [60, 60, 60, 64, 64, 64])

    def test_no_transitions(self):
        c = rebuild_contour(PitchVector(100, [1.0, 2.0, 3.0]), [])
        assert c.segments == (Segment(0, 3, 2.0),)

    @pytest.mark.parametrize("ts", [[5], [-1], [1, 1], [2, 1]])
    def test_invalid(self, ts):
        with pytest.raises(InvalidTransitionIndex):
            rebuild_contour(np.zeros(6), ts, 100)

    def test_boundaries(self):
        assert len(rebuild_contour(np.zeros(6), [0, 4], 100).segments) == 3

    def test_json(self):
        c = NoteContour((Segment(0, 2, 60.0),), 100.0)
        assert c.to_json() == {"frame_rate": 100.0, "segments": [{"start": 0, "len": 2, "pitch": 60.0}]}

    def test_tiling_enforced(self):
        with pytest.raises(ValueError):
            NoteContour((Segment(0, 2, 60.0), Segment(3, 2, 61.0)), 100.0)


def test_extract_melody_recovers_steps():
    rng = np.random.default_rng(3)
    truth = np.repeat([60.0, 64.0, 62.0, 67.0], [50, 40, 60, 50])
    pv = PitchVector(100.0, truth + rng.normal(0, 0.2, truth.size))
    ext = extract_melody(pv)
    assert ext.transitions == pytest.approx([49, 89, 149], abs=2)
    assert np.all(np.abs(ext.contour.expand() - truth)[np.r_[0:45, 55:85, 95:145, 155:200]] < 0.3)


def test_slope_config_gap():
    assert SlopeConfig().gap_frames(100) == 10
    assert SlopeConfig().gap_frames(31.25) == 3
