"""Synthetic stand-in for a hummed-query corpus.

Writes a MIR-QBSH style tree under ``root``::

    midiFile/00001.mid ...                ground-truth melodies
    waveFile/person001/00001.wav ...      one hum of every song per person

Hums start at the beginning of the song and carry the usual defects of
amateur humming: a personal key and tempo, intonation error per note,
vibrato, glides between notes, breath gaps, background noise, microphone
clicks and brief octave cracks.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import SampledAudio, encode_midi, encode_wav


@dataclass(frozen=True)
class HumStyle:
    tempo_spread: float = 0.12          # relative tempo sd
    key_range: float = 5.0              # uniform transposition, semitones
    intonation_sd: float = 0.35         # per-note pitch error, semitones
    drift_sd: float = 0.4               # slow pitch wander, semitones
    vibrato_depth: float = 0.3          # semitones
    glide_s: float = 0.04               # portamento time constant
    breath_prob: float = 0.35           # chance of a gap before a note
    snr_db: float = 25.0
    clicks_per_s: float = 0.6
    cracks_per_s: float = 0.5


def random_melody(rng: np.random.Generator, duration_s: float = 12.0,
                  beat_s: float = 0.5) -> list[tuple[float, float, int]]:
    """Stepwise nursery-rhyme-like melody as ``(onset, duration, pitch)`` notes."""
    beats = [0.5, 1.0, 1.0, 1.0, 1.5, 2.0]
    steps = [-4, -3, -2, -2, -1, -1, 0, 1, 1, 2, 2, 3, 4, 5, -5, 7, -7]
    pitch = int(rng.integers(60, 68))
    t = 0.0
    notes = []
    while t < duration_s:
        dur = beat_s * float(rng.choice(beats))
        notes.append((t, dur, pitch))
        t += dur
        pitch = int(np.clip(pitch + rng.choice(steps), 55, 76))
    return notes


def _harmonic_tone(f0: np.ndarray, sr: int) -> np.ndarray:
    phase = 2 * np.pi * np.cumsum(f0) / sr
    wave = np.zeros_like(f0)
    for h, amp in enumerate((1.0, 0.55, 0.3, 0.18, 0.1), start=1):
        # drop harmonics above Nyquist
        wave += amp * np.sin(h * phase) * (h * f0 < sr / 2)
    return wave


def hum(notes, rng: np.random.Generator, style: HumStyle = HumStyle(),
        duration_s: float = 8.0, sample_rate: int = 8000, register: float = 57.0) -> SampledAudio:
    """Render one imperfect hum of ``notes`` (truncated to ``duration_s``)."""
    sr = sample_rate
    n = int(round(duration_s * sr))
    tempo = float(np.exp(rng.normal(0.0, style.tempo_spread)))
    melody_mean = float(np.mean([p for _, _, p in notes]))
    shift = register - melody_mean + rng.uniform(-style.key_range, style.key_range)

    target = np.full(n, np.nan)
    amp = np.zeros(n)
    for onset, dur, pitch in notes:
        a = int(round(onset * tempo * sr))
        b = min(n, int(round((onset + dur) * tempo * sr)))
        if a >= n:
            break
        target[a:b] = pitch + shift + rng.normal(0.0, style.intonation_sd)
        env = np.ones(b - a)
        ramp = min(b - a, int(0.02 * sr))
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        if rng.random() < style.breath_prob:
            gap = min(b - a, int(rng.uniform(0.03, 0.09) * sr))
            env[:gap] = 0.0
        amp[a:b] = env * rng.uniform(0.5, 0.9)
    # hold the last note past the melody's end
    last = np.flatnonzero(~np.isnan(target))
    target[last[-1] + 1:] = target[last[-1]]
    target[:last[0]] = target[last[0]]

    # portamento: one-pole smoothing of the semitone target at a 1 kHz control rate
    t = np.arange(n) / sr
    ctrl_t = np.arange(0.0, duration_s, 1e-3)
    ctrl = target[np.minimum((ctrl_t * sr).astype(int), n - 1)]
    alpha = 1.0 - np.exp(-1e-3 / style.glide_s)
    acc = ctrl[0]
    for i, v in enumerate(ctrl):
        acc += alpha * (v - acc)
        ctrl[i] = acc
    smooth = np.interp(t, ctrl_t, ctrl)

    drift_knots = rng.normal(0.0, style.drift_sd, int(duration_s) + 2)
    drift = np.interp(t, np.arange(drift_knots.size), drift_knots)
    vib = style.vibrato_depth * np.sin(2 * np.pi * rng.uniform(4.5, 6.5) * t + rng.uniform(0, 2 * np.pi))
    semis = smooth + drift + vib

    for _ in range(rng.poisson(style.cracks_per_s * duration_s)):
        a = int(rng.uniform(0, n))
        semis[a:a + int(rng.uniform(0.03, 0.08) * sr)] += rng.choice([-12.0, 12.0])

    f0 = 440.0 * 2.0 ** ((semis - 69.0) / 12.0)
    sig = _harmonic_tone(f0, sr) * amp
    sig /= max(1e-9, np.max(np.abs(sig)))
    noise_rms = np.sqrt(np.mean(sig ** 2)) * 10 ** (-style.snr_db / 20)
    sig += rng.normal(0.0, noise_rms, n)
    for _ in range(rng.poisson(style.clicks_per_s * duration_s)):
        a = int(rng.uniform(0, n - 40))
        sig[a:a + 40] += rng.uniform(-0.8, 0.8) * np.exp(-np.arange(40) / 8.0)
    sig *= 0.8 / max(1e-9, np.max(np.abs(sig)))
    return SampledAudio(sr, sig)


def synthesize_corpus(root, n_songs: int = 10, queries_per_song: int = 15, seed: int = 0,
                      style: HumStyle = HumStyle(), duration_s: float = 8.0,
                      sample_rate: int = 8000) -> Path:
    """Write a synthetic MIR-QBSH style corpus and return its root."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    (root / "midiFile").mkdir(parents=True, exist_ok=True)
    songs = {}
    for s in range(n_songs):
        song_id = f"{s + 1:05d}"
        notes = random_melody(rng, duration_s=duration_s * 1.5)
        songs[song_id] = notes
        (root / "midiFile" / f"{song_id}.mid").write_bytes(encode_midi(notes))
    for person in range(queries_per_song):
        folder = root / "waveFile" / f"person{person + 1:03d}"
        folder.mkdir(parents=True, exist_ok=True)
        register = float(rng.uniform(48.0, 64.0))
        for song_id, notes in songs.items():
            audio = hum(notes, rng, style, duration_s, sample_rate, register)
            (folder / f"{song_id}.wav").write_bytes(encode_wav(audio))
    return root
