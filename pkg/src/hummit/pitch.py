"""Autocorrelation pitch tracking and semitone pitch vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import SampledAudio
from .errors import AllUnvoiced, AudioTooShort, NonPositiveFrequency

# semitone values are snapped to this grid so that octave shifts are exact
_SEMITONE_GRID = 2.0 ** -32
_ENERGY_FLOOR = 1e-6


@dataclass(frozen=True)
class PitchConfig:
    frame_length_s: float = 0.040
    hop_s: float = 0.010
    f0_min_hz: float = 60.0
    f0_max_hz: float = 500.0
    voicing_threshold: float = 0.45
    # score penalty per octave of lag, favouring the shortest period among
    # near-equal autocorrelation peaks (as in Praat's "octave cost")
    octave_cost: float = 0.01

    def __post_init__(self):
        if not 0 < self.f0_min_hz < self.f0_max_hz:
            raise ValueError("need 0 < f0_min_hz < f0_max_hz")
        if self.frame_length_s < 2.0 / self.f0_min_hz:
            raise ValueError("frame_length_s must cover two periods of f0_min_hz")
        if self.hop_s <= 0:
            raise ValueError("hop_s must be positive")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class PitchVector:
    """Pitch in semitones sampled at ``frame_rate``; ``voiced`` masks valid frames."""

    frame_rate: float
    values: np.ndarray
    voiced: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        voiced = (np.ones(values.shape, dtype=bool) if self.voiced is None
                  else np.asarray(self.voiced, dtype=bool))
        if values.ndim != 1 or voiced.shape != values.shape:
            raise ValueError("values and voiced must be 1-D arrays of equal length")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "voiced", voiced)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, PitchVector):
            return NotImplemented
        return (self.frame_rate == other.frame_rate
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.voiced, other.voiced))


def hz_to_semitone(f):
    """Map frequency in Hz to the MIDI semitone scale, 69 + 12*log2(f/440).

    Accepts scalars or arrays.  Doubling ``f`` adds exactly 12.
    """
    arr = np.asarray(f, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise NonPositiveFrequency("frequency must be positive")
    mant, expo = np.frexp(arr / 440.0)
    frac = 69.0 + 12.0 * np.log2(mant)
    frac = np.round(frac / _SEMITONE_GRID) * _SEMITONE_GRID
    out = 12.0 * expo + frac
    return float(out) if np.ndim(out) == 0 else out


def semitone_to_hz(s):
    return 440.0 * 2.0 ** ((np.asarray(s, dtype=np.float64) - 69.0) / 12.0)


def _normalized_autocorrelation(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """r[i, lag] = sum x[n] x[n+lag] / sqrt(E_head(lag) E_tail(lag)) for lag <= max_lag."""
    n = frames.shape[1]
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(frames, nfft, axis=1)
    acf = np.fft.irfft(spec.real ** 2 + spec.imag ** 2, nfft, axis=1)[:, :max_lag + 1]
    csum = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = csum[:, n - lags]
    tail = csum[:, n][:, None] - csum[:, lags]
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, acf / np.where(denom > 0, denom, 1.0), 0.0)
    return r


def estimate_f0(audio: SampledAudio, cfg: PitchConfig | None = None) -> PitchVector:
    """Track F0 frame by frame with a normalized autocorrelation.

    Within the lag range [sr/f0_max, sr/f0_min] every local maximum is
    refined by parabolic interpolation and scored by its height minus
    ``octave_cost`` per octave of lag.  The best-scoring peak gives the
    F0; the frame is unvoiced when that peak's height is under
    ``voicing_threshold`` or the frame's mean power is under 1e-6.
    """
    cfg = cfg or PitchConfig()
    sr = audio.sample_rate
    frame_len = int(round(cfg.frame_length_s * sr))
    hop = max(1, int(round(cfg.hop_s * sr)))
    x = audio.samples
    if x.size == 0 or x.size < frame_len:
        raise AudioTooShort(f"need at least {frame_len} samples, got {x.size}")

    frames = sliding_window_view(x, frame_len)[::hop]
    power = np.mean(frames ** 2, axis=1)
    frames = frames - frames.mean(axis=1, keepdims=True)

    lag_min = max(2, int(math.floor(sr / cfg.f0_max_hz)))
    lag_max = min(frame_len - 2, int(math.ceil(sr / cfg.f0_min_hz)))
    r = _normalized_autocorrelation(frames, lag_max + 1)

    lags = np.arange(lag_min, lag_max + 1)
    a, b, c = r[:, lags - 1], r[:, lags], r[:, lags + 1]
    is_peak = (b >= a) & (b > c)
    curv = a - 2.0 * b + c
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = np.where(curv < 0, 0.5 * (a - c) / np.where(curv < 0, curv, -1.0), 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    height = b - 0.25 * (a - c) * shift
    refined_lag = lags + shift
    score = np.where(is_peak, height - cfg.octave_cost * np.log2(refined_lag / lag_min), -np.inf)

    best = np.argmax(score, axis=1)
    rows = np.arange(frames.shape[0])
    has_peak = np.isfinite(score[rows, best])
    peak_height = np.where(has_peak, height[rows, best], 0.0)
    voiced = has_peak & (peak_height >= cfg.voicing_threshold) & (power >= _ENERGY_FLOOR)

    f0 = np.clip(sr / refined_lag[rows, best], cfg.f0_min_hz, cfg.f0_max_hz)
    values = np.zeros(frames.shape[0])
    if voiced.any():
        values[voiced] = hz_to_semitone(f0[voiced])
    return PitchVector(sr / hop, values, voiced)


def fill_unvoiced(pv: PitchVector) -> PitchVector:
    """Interpolate over unvoiced frames; the result is fully voiced.

    Interior gaps are bridged linearly, leading and trailing gaps take the
    nearest voiced value.
    """
    idx = np.flatnonzero(pv.voiced)
    if idx.size == 0:
        raise AllUnvoiced("pitch vector has no voiced frame")
    if idx.size == len(pv):
        return PitchVector(pv.frame_rate, pv.values.copy())
    filled = np.interp(np.arange(len(pv)), idx, pv.values[idx])
    filled[idx] = pv.values[idx]
    return PitchVector(pv.frame_rate, filled)


def resample_pitch(pv: PitchVector, frame_rate: float) -> PitchVector:
    """Linearly resample a gap-free pitch vector onto a new frame rate."""
    if pv.frame_rate == frame_rate:
        return pv
    duration = len(pv) / pv.frame_rate
    n_out = max(1, int(round(duration * frame_rate)))
    t_out = np.arange(n_out) / frame_rate
    t_in = np.arange(len(pv)) / pv.frame_rate
    return PitchVector(frame_rate, np.interp(t_out, t_in, pv.values))


def read_pitch_file(path, frame_rate: float) -> PitchVector:
    """Read one value per line; ``0`` marks an unvoiced frame."""
    values = np.array([float(tok) for tok in Path(path).read_text().split()], dtype=np.float64)
    return PitchVector(frame_rate, values, values != 0)


def format_pitch_values(pv: PitchVector) -> str:
    vals = np.where(pv.voiced, pv.values, 0.0)
    return "".join(f"{float(v)!r}\n" for v in vals)
