"""Slope filtering: note transitions and piecewise-constant melody contours.

A transition reported at slope index ``i`` lies between frames ``i`` and
``i + 1``, so the new note starts at frame ``i + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidTransitionIndex, SignalTooShort
from .pitch import PitchVector, fill_unvoiced
from .tvr import TvrConfig, denoise_tv


@dataclass(frozen=True)
class SlopeConfig:
    threshold_semitones: float = 0.5
    min_gap_s: float = 0.1

    def __post_init__(self):
        if self.threshold_semitones <= 0 or self.min_gap_s <= 0:
            raise ValueError("threshold_semitones and min_gap_s must be positive")

    def gap_frames(self, frame_rate: float) -> int:
        return max(1, int(round(self.min_gap_s * frame_rate)))


@dataclass(frozen=True)
class Segment:
    start: int
    length: int
    pitch: float


@dataclass(frozen=True)
class NoteContour:
    segments: tuple[Segment, ...]
    frame_rate: float

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        pos = 0
        for seg in segs:
            if seg.start != pos or seg.length <= 0:
                raise ValueError("segments must tile the frame range contiguously")
            pos += seg.length

    @property
    def total_frames(self) -> int:
        return sum(s.length for s in self.segments)

    def expand(self) -> np.ndarray:
        """Frame-wise piecewise-constant signal."""
        return np.repeat([s.pitch for s in self.segments],
                         [s.length for s in self.segments]).astype(np.float64)

    def to_json(self) -> dict:
        return {
            "frame_rate": self.frame_rate,
            "segments": [{"start": s.start, "len": s.length, "pitch": s.pitch}
                         for s in self.segments],
        }


def slope(x) -> np.ndarray:
    """First differences ``x[i+1] - x[i]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise SignalTooShort("slope needs at least two samples")
    return np.diff(x)


def detect_transitions(d, cfg: SlopeConfig = SlopeConfig(), frame_rate: float = 100.0) -> list[int]:
    """Indices of slope peaks that mark note transitions.

    Slopes with magnitude at least ``cfg.threshold_semitones`` are
    candidates.  Scanning left to right, a candidate closer than the minimum
    gap to the last kept index competes with it and the larger magnitude
    wins (the earlier index on ties).
    """
    if not frame_rate > 0:
        raise ValueError("frame_rate must be positive")
    mag = np.abs(np.asarray(d, dtype=np.float64))
    gap = cfg.gap_frames(frame_rate)
    kept: list[int] = []
    for i in np.flatnonzero(mag >= cfg.threshold_semitones):
        i = int(i)
        if kept and i - kept[-1] < gap:
            if mag[i] > mag[kept[-1]]:
                kept[-1] = i
        else:
            kept.append(i)
    return kept


def rebuild_contour(pv: PitchVector | np.ndarray, transitions: Sequence[int],
                    frame_rate: float | None = None) -> NoteContour:
    """Piecewise-constant contour with one segment per inter-transition run.

    Segment boundaries fall at 0, ``t + 1`` for each transition ``t`` and the
    signal length; each segment takes the median of its values.
    """
    if isinstance(pv, PitchVector):
        values, frame_rate = pv.values, pv.frame_rate
    else:
        values = np.asarray(pv, dtype=np.float64)
        if frame_rate is None:
            raise ValueError("frame_rate required for a bare array")
    n = values.size
    if n == 0:
        raise SignalTooShort("empty pitch vector")
    ts = [int(t) for t in transitions]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise InvalidTransitionIndex("transitions must be strictly increasing")
    if ts and (ts[0] < 0 or ts[-1] > n - 2):
        raise InvalidTransitionIndex(f"transition indices must lie in [0, {n - 2}]")
    bounds = [0] + [t + 1 for t in ts] + [n]
    segs = tuple(Segment(a, b - a, float(np.median(values[a:b])))
                 for a, b in zip(bounds, bounds[1:]))
    return NoteContour(segs, float(frame_rate))


@dataclass(frozen=True)
class Extraction:
    """Every stage of the melody extraction for one query."""

    raw: PitchVector
    filled: PitchVector
    denoised: np.ndarray
    transitions: list[int]
    contour: NoteContour


def extract_melody(pv: PitchVector, tv_cfg: TvrConfig = TvrConfig(),
                   slope_cfg: SlopeConfig = SlopeConfig()) -> Extraction:
    """Fill gaps, TV-denoise, slope-filter and rebuild the note contour."""
    filled = fill_unvoiced(pv)
    smooth = denoise_tv(filled.values, tv_cfg)
    if smooth.size < 2:
        transitions: list[int] = []
    else:
        transitions = detect_transitions(slope(smooth), slope_cfg, pv.frame_rate)
    contour = rebuild_contour(smooth, transitions, pv.frame_rate)
    return Extraction(pv, filled, smooth, transitions, contour)
