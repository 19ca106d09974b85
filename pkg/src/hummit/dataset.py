"""Windowed, key-normalized training frames and the query-level split.

Cache file layout (all integers little-endian)::

    b"HUMDS1"
    u32 n_classes, u32 n_frames, u32 frame_len
    n_classes x (u32 byte length, UTF-8 class name)
    n_frames  x (u32 label, u8 variant, u8 split, frame_len x f32 values)
    b"QRY1"                                         -- query table
    u32 n_queries
    n_queries x (u32 byte length, UTF-8 query id)
    n_frames  x u32 query index

The query table lets training and evaluation score whole queries; readers
that stop after the frame records still see a valid dataset.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .corpus import Catalog
from .errors import CorruptFile, EmptyContour, MissingContour, SingleClassDataset

RAW, DENOISED = "raw", "denoised"
TRAIN, VALIDATION = "train", "validation"
_VARIANT_CODES = {RAW: 0, DENOISED: 1}
_SPLIT_CODES = {TRAIN: 0, VALIDATION: 1}
_MAGIC = b"HUMDS1"
_QUERY_MAGIC = b"QRY1"


@dataclass(frozen=True)
class DatasetConfig:
    window_s: float = 5.0
    hop_s: float = 2.0
    frame_rate: float = 100.0
    augment_with_denoised: bool = False
    include_mtg: bool = False
    seed: int = 0
    validation_fraction: float = 0.25

    def __post_init__(self):
        if not 0 < self.hop_s <= self.window_s:
            raise ValueError("need 0 < hop_s <= window_s")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    @property
    def window_frames(self) -> int:
        return int(round(self.window_s * self.frame_rate))

    @property
    def hop_frames(self) -> int:
        return int(round(self.hop_s * self.frame_rate))


@dataclass(frozen=True)
class QueryContours:
    """Frame-wise contours of one query at the dataset frame rate."""

    raw: np.ndarray
    denoised: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class QueryFrame:
    values: np.ndarray
    label: int
    source_query: str
    variant: str = RAW


@dataclass(eq=False)
class LabeledDataset:
    frames: list[QueryFrame]
    n_classes: int
    class_names: list[str]
    split: list[str]
    frame_len: int = field(default=0)

    def __post_init__(self):
        if len(self.split) != len(self.frames):
            raise ValueError("one split entry per frame required")
        if not self.frame_len and self.frames:
            self.frame_len = self.frames[0].values.size
        for fr in self.frames:
            if fr.values.size != self.frame_len:
                raise ValueError("frames must share one length")
            if not 0 <= fr.label < self.n_classes:
                raise ValueError(f"label {fr.label} outside [0, {self.n_classes})")

    def indices(self, side: str, variant: str | None = None) -> np.ndarray:
        return np.array([i for i, (fr, s) in enumerate(zip(self.frames, self.split))
                         if s == side and (variant is None or fr.variant == variant)], dtype=int)

    def arrays(self, side: str, variant: str | None = None):
        """``(X, y, query_ids)`` for one split side."""
        idx = self.indices(side, variant)
        if idx.size == 0:
            return np.zeros((0, self.frame_len), np.float32), np.zeros(0, int), []
        x = np.stack([self.frames[i].values for i in idx]).astype(np.float32)
        y = np.array([self.frames[i].label for i in idx], dtype=int)
        return x, y, [self.frames[i].source_query for i in idx]

    def queries(self, side: str) -> list[str]:
        seen = dict.fromkeys(fr.source_query for fr, s in zip(self.frames, self.split) if s == side)
        return list(seen)

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<III", self.n_classes, len(self.frames), self.frame_len))
        for name in self.class_names:
            raw = name.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)) + raw)
        for fr, side in zip(self.frames, self.split):
            buf.write(struct.pack("<IBB", fr.label, _VARIANT_CODES[fr.variant], _SPLIT_CODES[side]))
            buf.write(np.asarray(fr.values, dtype="<f4").tobytes())
        query_ids = list(dict.fromkeys(fr.source_query for fr in self.frames))
        qindex = {q: i for i, q in enumerate(query_ids)}
        buf.write(_QUERY_MAGIC + struct.pack("<I", len(query_ids)))
        for q in query_ids:
            raw = q.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(np.array([qindex[fr.source_query] for fr in self.frames], dtype="<u4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "LabeledDataset":
        view = memoryview(data)
        if bytes(view[:6]) != _MAGIC:
            raise CorruptFile("not a hummit dataset (bad magic)")
        try:
            n_classes, n_frames, frame_len = struct.unpack_from("<III", view, 6)
            pos = 18
            names = []
            for _ in range(n_classes):
                (length,) = struct.unpack_from("<I", view, pos)
                names.append(bytes(view[pos + 4:pos + 4 + length]).decode("utf-8"))
                pos += 4 + length
            records = []
            for _ in range(n_frames):
                label, variant, side = struct.unpack_from("<IBB", view, pos)
                pos += 6
                values = np.frombuffer(view, dtype="<f4", count=frame_len, offset=pos).astype(np.float32)
                pos += 4 * frame_len
                records.append((label, variant, side, values))
            qids = [f"frame{i}" for i in range(n_frames)]
            if bytes(view[pos:pos + 4]) == _QUERY_MAGIC:
                (n_q,) = struct.unpack_from("<I", view, pos + 4)
                pos += 8
                table = []
                for _ in range(n_q):
                    (length,) = struct.unpack_from("<I", view, pos)
                    table.append(bytes(view[pos + 4:pos + 4 + length]).decode("utf-8"))
                    pos += 4 + length
                idx = np.frombuffer(view, dtype="<u4", count=n_frames, offset=pos)
                qids = [table[i] for i in idx]
        except (struct.error, ValueError, IndexError) as exc:
            raise CorruptFile(f"truncated or inconsistent dataset: {exc}") from exc
        variants = {v: k for k, v in _VARIANT_CODES.items()}
        sides = {v: k for k, v in _SPLIT_CODES.items()}
        try:
            frames = [QueryFrame(v, label, q, variants[var])
                      for (label, var, _, v), q in zip(records, qids)]
            split = [sides[s] for (_, _, s, _) in records]
            return cls(frames, n_classes, names, split, frame_len)
        except (KeyError, ValueError) as exc:
            raise CorruptFile(f"invalid dataset record: {exc}") from exc


def frame_query(contour_values, cfg: DatasetConfig = DatasetConfig()) -> list[np.ndarray]:
    """Cut a contour into windows of ``window_s`` every ``hop_s``.

    Only windows that fit entirely are kept; a contour shorter than one
    window yields a single window padded with its last value.
    """
    x = np.asarray(contour_values, dtype=np.float64)
    if x.size == 0:
        raise EmptyContour("cannot frame an empty contour")
    w, h = cfg.window_frames, cfg.hop_frames
    if x.size < w:
        return [np.concatenate([x, np.full(w - x.size, x[-1])])]
    return [x[s:s + w].copy() for s in range(0, x.size - w + 1, h)]


def normalize_frame(values) -> np.ndarray:
    """Subtract the frame mean (transposition invariance)."""
    x = np.asarray(values, dtype=np.float64)
    return x - x.mean()


def split_queries(query_ids, fraction: float, seed: int) -> set[str]:
    """Seeded choice of ``round(fraction * n)`` validation queries."""
    ordered = sorted(query_ids)
    n_val = int(round(fraction * len(ordered)))
    perm = np.random.default_rng(seed).permutation(len(ordered))
    return {ordered[i] for i in perm[:n_val]}


def build_dataset(catalog: Catalog, contours: Mapping[str, QueryContours],
                  cfg: DatasetConfig = DatasetConfig()) -> LabeledDataset:
    """Assemble frames, labels and the query-level 75/25 split.

    Raw frames of every query are included; with ``augment_with_denoised``
    the denoised frames of *training* queries are appended as well, so the
    validation side only ever holds raw hums.
    """
    class_names = sorted(s.song_id for s in catalog.songs)
    if len(class_names) < 2:
        raise SingleClassDataset(f"need at least two songs, found {len(class_names)}")
    label_of = {name: i for i, name in enumerate(class_names)}

    for q in catalog.queries:
        qc = contours.get(q.query_id)
        if qc is None:
            raise MissingContour(f"no contour for query {q.query_id}")
        if cfg.augment_with_denoised and qc.denoised is None:
            raise MissingContour(f"no denoised contour for query {q.query_id}")

    validation = split_queries([q.query_id for q in catalog.queries],
                               cfg.validation_fraction, cfg.seed)
    queries = sorted(catalog.queries, key=lambda q: q.query_id)
    frames: list[QueryFrame] = []
    split: list[str] = []
    for q in queries:
        side = VALIDATION if q.query_id in validation else TRAIN
        for window in frame_query(contours[q.query_id].raw, cfg):
            frames.append(QueryFrame(normalize_frame(window), label_of[q.song_id], q.query_id, RAW))
            split.append(side)
    if cfg.augment_with_denoised:
        for q in queries:
            if q.query_id in validation:
                continue
            for window in frame_query(contours[q.query_id].denoised, cfg):
                frames.append(QueryFrame(normalize_frame(window), label_of[q.song_id],
                                         q.query_id, DENOISED))
                split.append(TRAIN)
    return LabeledDataset(frames, len(class_names), class_names, split, cfg.window_frames)
