"""Per-query melody extraction over a whole catalog."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .contour import Extraction, SlopeConfig, extract_melody
from .corpus import Catalog, Query, read_wav
from .dataset import DatasetConfig, QueryContours, frame_query, normalize_frame
from .pitch import PitchConfig, PitchVector, estimate_f0, read_pitch_file, resample_pitch
from .tvr import TvrConfig

# MIR-QBSH bundles pitch vectors of 256-sample frames at 8 kHz
BUNDLED_PV_RATE = 31.25


@dataclass(frozen=True)
class PipelineConfig:
    pitch: PitchConfig = field(default_factory=PitchConfig)
    tvr: TvrConfig = field(default_factory=TvrConfig)
    slope: SlopeConfig = field(default_factory=SlopeConfig)
    use_bundled_pitch: bool = False
    pv_frame_rate: float = BUNDLED_PV_RATE


def default_threads() -> int:
    return os.cpu_count() or 1


def query_pitch(query: Query, cfg: PipelineConfig = PipelineConfig()) -> PitchVector:
    if cfg.use_bundled_pitch and query.pv_path is not None:
        return read_pitch_file(query.pv_path, cfg.pv_frame_rate)
    return estimate_f0(read_wav(query.wav_path), cfg.pitch)


def extract_query(query: Query, cfg: PipelineConfig = PipelineConfig()) -> Extraction:
    return extract_melody(query_pitch(query, cfg), cfg.tvr, cfg.slope)


def contours_from_extraction(ext: Extraction, frame_rate: float) -> QueryContours:
    """Raw (gap-filled) and denoised frame-wise contours at ``frame_rate``."""
    raw = resample_pitch(ext.filled, frame_rate).values
    den = resample_pitch(PitchVector(ext.filled.frame_rate, ext.contour.expand()), frame_rate).values
    return QueryContours(raw, den)


def extract_catalog(catalog: Catalog, cfg: PipelineConfig = PipelineConfig(),
                    frame_rate: float = 100.0, threads: int | None = None) -> dict[str, QueryContours]:
    """Contours for every query, keyed by query id; order-independent of ``threads``."""
    def work(q):
        return q.query_id, contours_from_extraction(extract_query(q, cfg), frame_rate)

    threads = threads or default_threads()
    if threads == 1:
        return dict(map(work, catalog.queries))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return dict(pool.map(work, catalog.queries))


def query_frames(contour_values, cfg: DatasetConfig = DatasetConfig()) -> np.ndarray:
    """Normalized model input frames for one query contour."""
    return np.stack([normalize_frame(w) for w in frame_query(contour_values, cfg)])
