"""Corpus ingestion: WAV queries, ground-truth MIDI and directory catalogs.

Three layouts are understood by :func:`scan_corpus`:

``mir-qbsh``
    ``*.mid`` files anywhere under the root name the songs (file stem is
    the song id); every ``*.wav`` under the root is a query for the song
    whose id equals the wav file stem, e.g.
    ``waveFile/year2003/person00001/00013.wav``.  A sibling ``.pv`` file is
    recorded as the query's bundled pitch vector.
``mtg-qbh``
    ``*.mid`` files name the songs; ``groundtruth.csv`` at the root maps
    query wav stems to song ids (header ``query,song_id``).
``flat-manifest``
    ``*.mid`` files name the songs; ``manifest.csv`` at the root lists
    ``query_path,song_id`` with paths relative to the root.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AmbiguousMapping,
    EmptyCorpus,
    HummitError,
    MalformedContainer,
    MalformedMidi,
    PolyphonyError,
    UnsupportedFormat,
)

log = logging.getLogger(__name__)

LAYOUTS = ("mir-qbsh", "mtg-qbh", "flat-manifest")

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE
# first two bytes of the KSDATAFORMAT_SUBTYPE_PCM GUID
_PCM_SUBFORMAT = b"\x01\x00"


@dataclass(frozen=True, eq=False)
class SampledAudio:
    """Mono PCM audio with samples scaled to [-1, 1]."""

    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if samples.size and (samples.min() < -1.0 or samples.max() > 1.0):
            raise ValueError("samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    def __eq__(self, other):
        if not isinstance(other, SampledAudio):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(
            self.samples, other.samples
        )

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class Note:
    onset: float
    duration: float
    pitch: int


@dataclass(frozen=True)
class NoteSequence:
    """Monophonic note list in seconds."""

    notes: tuple[Note, ...]

    def __post_init__(self):
        notes = tuple(self.notes)
        object.__setattr__(self, "notes", notes)
        for prev, cur in zip(notes, notes[1:]):
            if cur.onset <= prev.onset:
                raise ValueError("onsets must be strictly increasing")
            if prev.onset + prev.duration > cur.onset + 1e-9:
                raise ValueError("notes overlap")
        for note in notes:
            if note.duration <= 0:
                raise ValueError("note durations must be positive")
            if not 0 <= note.pitch <= 127:
                raise ValueError("midi pitch out of range")

    def __len__(self):
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)


# ---------------------------------------------------------------------------
# WAV


def _iter_chunks(data: bytes, start: int):
    pos = start
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        yield cid, body
        pos += 8 + size + (size & 1)


def decode_wav(data: bytes) -> SampledAudio:
    """Decode a mono 8- or 16-bit PCM RIFF/WAVE byte string.

    A data chunk that claims more bytes than the file holds is truncated to
    the whole samples actually present.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer("missing RIFF/WAVE header")

    fmt = None
    pcm = None
    for cid, body in _iter_chunks(data, 12):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            pcm = body
            break
    if fmt is None or len(fmt) < 16:
        raise MalformedContainer("missing or short fmt chunk")
    if pcm is None:
        raise MalformedContainer("missing data chunk")

    tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26 or fmt[24:26] != _PCM_SUBFORMAT:
            raise UnsupportedFormat("extensible WAV with non-PCM subformat")
    elif tag != _WAVE_FORMAT_PCM:
        raise UnsupportedFormat(f"compressed WAV (format tag 0x{tag:04x})")
    if channels != 1:
        raise UnsupportedFormat(f"{channels}-channel WAV; only mono is accepted")
    if rate == 0:
        raise MalformedContainer("zero sample rate")

    if bits == 16:
        n = len(pcm) // 2
        raw = np.frombuffer(pcm[:2 * n], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif bits == 8:
        raw = np.frombuffer(pcm, dtype=np.uint8)
        samples = (raw.astype(np.float64) - 128.0) / 128.0
    else:
        raise UnsupportedFormat(f"{bits}-bit WAV; only 8 and 16 bit are accepted")
    return SampledAudio(int(rate), samples)


def encode_wav(audio: SampledAudio) -> bytes:
    """Encode as 16-bit mono PCM; exact inverse of :func:`decode_wav`."""
    ints = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    pcm = ints.tobytes()
    fmt = struct.pack("<HHIIHH", _WAVE_FORMAT_PCM, 1, audio.sample_rate,
                      audio.sample_rate * 2, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(pcm)) + pcm
    if len(pcm) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def read_wav(path) -> SampledAudio:
    return decode_wav(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# MIDI

_DEFAULT_TEMPO = 500_000  # microseconds per quarter note, i.e. 120 bpm
_DATA_BYTES = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _read_vlq(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise MalformedMidi("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MalformedMidi("variable-length quantity longer than 4 bytes")


def _parse_track(data: bytes, start: int, end: int, track_no: int):
    """Yield (tick, track_no, seq, kind, value) events of one MTrk chunk."""
    pos = start
    tick = 0
    status = None
    seq = 0
    while pos < end:
        delta, pos = _read_vlq(data, pos, end)
        tick += delta
        if pos >= end:
            raise MalformedMidi("event truncated after delta time")
        byte = data[pos]
        if byte == 0xFF:
            if pos + 2 > end:
                raise MalformedMidi("truncated meta event")
            mtype = data[pos + 1]
            length, pos = _read_vlq(data, pos + 2, end)
            payload = data[pos:pos + length]
            if len(payload) != length:
                raise MalformedMidi("meta event overruns track")
            pos += length
            if mtype == 0x51 and length == 3:
                yield tick, track_no, seq, "tempo", int.from_bytes(payload, "big")
            elif mtype == 0x2F:
                yield tick, track_no, seq, "end", 0
                return
            seq += 1
            continue
        if byte in (0xF0, 0xF7):
            length, pos = _read_vlq(data, pos + 1, end)
            pos += length
            if pos > end:
                raise MalformedMidi("sysex overruns track")
            continue
        if byte & 0x80:
            status = byte
            pos += 1
        elif status is None:
            raise MalformedMidi("running status without a prior status byte")
        kind = status & 0xF0
        nbytes = _DATA_BYTES.get(kind)
        if nbytes is None:
            raise MalformedMidi(f"unexpected status byte 0x{status:02x}")
        if pos + nbytes > end:
            raise MalformedMidi("channel event overruns track")
        args = data[pos:pos + nbytes]
        pos += nbytes
        if kind == 0x90 and args[1] > 0:
            yield tick, track_no, seq, "on", args[0]
        elif kind == 0x80 or kind == 0x90:
            yield tick, track_no, seq, "off", args[0]
        seq += 1
    yield tick, track_no, seq, "end", 0


class _TempoMap:
    def __init__(self, division: int, tempos: Sequence[tuple[int, int]]):
        self.smpte = bool(division & 0x8000)
        if self.smpte:
            fps = 256 - (division >> 8)
            tpf = division & 0xFF
            if fps <= 0 or tpf == 0:
                raise MalformedMidi("bad SMPTE division")
            self.tick_seconds = 1.0 / (fps * tpf)
            return
        if division == 0:
            raise MalformedMidi("zero ticks per quarter note")
        self.division = division
        # (tick, seconds at tick, microseconds per quarter from tick on)
        self.segments = [(0, 0.0, _DEFAULT_TEMPO)]
        for tick, tempo in sorted(tempos):
            t0, s0, q0 = self.segments[-1]
            s = s0 + (tick - t0) * q0 / (1e6 * division)
            if tick == t0:
                self.segments[-1] = (tick, s0, tempo)
            else:
                self.segments.append((tick, s, tempo))

    def seconds(self, tick: int) -> float:
        if self.smpte:
            return tick * self.tick_seconds
        seg = self.segments[0]
        for cand in self.segments:
            if cand[0] > tick:
                break
            seg = cand
        t0, s0, q0 = seg
        return s0 + (tick - t0) * q0 / (1e6 * self.division)


def parse_midi(data: bytes) -> NoteSequence:
    """Parse a format 0/1 Standard MIDI File into a monophonic note list.

    Notes from all tracks are merged.  A note-on that arrives while another
    note sounds truncates the sounding note at the new onset; two different
    pitches starting on the same tick cannot be ordered and raise
    :class:`PolyphonyError`.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedMidi("missing MThd header")
    (hlen,) = struct.unpack_from(">I", data, 4)
    if hlen < 6 or 8 + hlen > len(data):
        raise MalformedMidi("bad header length")
    fmt, ntracks, division = struct.unpack_from(">HHH", data, 8)
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"SMF format {fmt} is not supported")

    events = []
    pos = 8 + hlen
    track_no = 0
    while pos + 8 <= len(data) and track_no < ntracks:
        cid = data[pos:pos + 4]
        (clen,) = struct.unpack_from(">I", data, pos + 4)
        start, end = pos + 8, pos + 8 + clen
        if end > len(data):
            raise MalformedMidi("chunk length overruns file")
        if cid == b"MTrk":
            events.extend(_parse_track(data, start, end, track_no))
            track_no += 1
        pos = end
    if track_no < ntracks:
        raise MalformedMidi(f"expected {ntracks} tracks, found {track_no}")

    tempo_map = _TempoMap(division, [(e[0], e[4]) for e in events if e[3] == "tempo"])
    # note-offs sort before note-ons on the same tick
    order = {"off": 0, "end": 1, "tempo": 1, "on": 2}
    events.sort(key=lambda e: (e[0], order[e[3]], e[1], e[2]))

    spans: list[tuple[int, int, int]] = []
    current = None  # (onset_tick, pitch)
    last_tick = 0
    for tick, _, _, kind, value in events:
        last_tick = max(last_tick, tick)
        if kind == "on":
            if current is not None:
                onset, pitch = current
                if onset == tick:
                    if pitch != value:
                        raise PolyphonyError(
                            f"pitches {pitch} and {value} both start at tick {tick}")
                    continue
                spans.append((onset, tick, pitch))
            current = (tick, value)
        elif kind == "off" and current is not None and current[1] == value:
            if tick > current[0]:
                spans.append((current[0], tick, current[1]))
            current = None
    if current is not None and last_tick > current[0]:
        spans.append((current[0], last_tick, current[1]))

    notes = []
    for on, off, pitch in spans:
        t0 = tempo_map.seconds(on)
        notes.append(Note(t0, tempo_map.seconds(off) - t0, int(pitch)))
    return NoteSequence(tuple(notes))


def read_midi(path) -> NoteSequence:
    return parse_midi(Path(path).read_bytes())


def _vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def encode_midi(notes: Iterable[tuple[float, float, int]], *, ticks_per_quarter: int = 480,
                bpm: float = 120.0, velocity: int = 96) -> bytes:
    """Write ``(onset_s, duration_s, pitch)`` notes as a format-0 SMF."""
    tempo = int(round(60e6 / bpm))
    ticks_per_second = ticks_per_quarter * 1e6 / tempo
    timed = []
    for onset, duration, pitch in notes:
        on = int(round(onset * ticks_per_second))
        off = int(round((onset + duration) * ticks_per_second))
        timed.append((off, 0, pitch))
        timed.append((on, 1, pitch))
    timed.sort()
    track = bytearray(b"\x00\xff\x51\x03" + tempo.to_bytes(3, "big"))
    now = 0
    for tick, is_on, pitch in timed:
        track += _vlq(tick - now)
        now = tick
        track += bytes([0x90, pitch, velocity]) if is_on else bytes([0x80, pitch, 0])
    track += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, ticks_per_quarter)
    return header + b"MTrk" + struct.pack(">I", len(track)) + bytes(track)


# ---------------------------------------------------------------------------
# Catalog


@dataclass(frozen=True)
class Song:
    song_id: str
    title: str
    midi_path: Path


@dataclass(frozen=True)
class Query:
    query_id: str
    wav_path: Path
    song_id: str
    corpus_tag: str
    pv_path: Path | None = None


@dataclass(frozen=True)
class Catalog:
    songs: tuple[Song, ...]
    queries: tuple[Query, ...]
    skipped: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        song_ids = [s.song_id for s in self.songs]
        if len(set(song_ids)) != len(song_ids):
            raise AmbiguousMapping("duplicate song ids")
        query_ids = [q.query_id for q in self.queries]
        if len(set(query_ids)) != len(query_ids):
            raise AmbiguousMapping("duplicate query ids")
        known = set(song_ids)
        for q in self.queries:
            if q.song_id not in known:
                raise AmbiguousMapping(f"query {q.query_id} references unknown song {q.song_id}")

    @property
    def song_ids(self) -> list[str]:
        return [s.song_id for s in self.songs]

    def song(self, song_id: str) -> Song:
        for s in self.songs:
            if s.song_id == song_id:
                return s
        raise KeyError(song_id)


def merge_catalogs(primary: Catalog, extra: Catalog, prefix: str) -> Catalog:
    """Append ``extra`` to ``primary``, namespacing its ids with ``prefix``."""
    songs = primary.songs + tuple(
        Song(prefix + s.song_id, s.title, s.midi_path) for s in extra.songs)
    queries = primary.queries + tuple(
        Query(prefix + q.query_id, q.wav_path, prefix + q.song_id, q.corpus_tag, q.pv_path)
        for q in extra.queries)
    return Catalog(songs, queries, primary.skipped + extra.skipped)


def _scan_songs(root: Path) -> dict[str, Song]:
    songs: dict[str, Song] = {}
    for path in sorted(p for p in root.rglob("*") if p.suffix.lower() in (".mid", ".midi")):
        if path.stem in songs:
            raise AmbiguousMapping(f"song id {path.stem} defined by more than one MIDI file")
        songs[path.stem] = Song(path.stem, path.stem, path)
    return songs


def _read_mapping(path: Path, key_field: str) -> list[tuple[str, str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or key_field not in reader.fieldnames \
                or "song_id" not in reader.fieldnames:
            raise AmbiguousMapping(f"{path.name} needs header {key_field},song_id")
        return [(row[key_field].strip(), row["song_id"].strip()) for row in reader]


def _probe_wav(path: Path) -> str | None:
    """Return None if the file decodes, else the reason it does not."""
    try:
        decode_wav(path.read_bytes())
    except (HummitError, OSError) as exc:
        return f"{type(exc).__name__}: {exc}"
    return None


def scan_corpus(root, layout: str = "mir-qbsh") -> Catalog:
    """Index songs and queries under ``root`` following ``layout``.

    Query wav files that fail to decode are left out of the catalog and
    listed in ``Catalog.skipped``.
    """
    root = Path(root)
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if not root.is_dir():
        raise EmptyCorpus(f"{root} is not a directory")

    songs = _scan_songs(root)
    if not songs:
        raise EmptyCorpus(f"no MIDI songs under {root}")

    if layout == "mir-qbsh":
        pairs = [(p, p.stem) for p in sorted(root.rglob("*")) if p.suffix.lower() == ".wav"]
    elif layout == "mtg-qbh":
        by_stem: dict[str, list[Path]] = {}
        for p in sorted(root.rglob("*")):
            if p.suffix.lower() == ".wav":
                by_stem.setdefault(p.stem, []).append(p)
        pairs = []
        for stem, song_id in _read_mapping(root / "groundtruth.csv", "query"):
            matches = by_stem.get(stem, [])
            if len(matches) != 1:
                raise AmbiguousMapping(f"query {stem} matches {len(matches)} wav files")
            pairs.append((matches[0], song_id))
    else:
        pairs = [(root / rel, song_id)
                 for rel, song_id in _read_mapping(root / "manifest.csv", "query_path")]

    queries = []
    skipped = []
    for path, song_id in pairs:
        if song_id not in songs:
            raise AmbiguousMapping(f"{path} maps to unknown song {song_id!r}")
        reason = _probe_wav(path)
        if reason is not None:
            log.warning("skipping %s: %s", path, reason)
            skipped.append((str(path), reason))
            continue
        pv = path.with_suffix(".pv")
        qid = path.relative_to(root).with_suffix("").as_posix()
        queries.append(Query(qid, path, song_id, layout, pv if pv.is_file() else None))
    return Catalog(tuple(songs.values()), tuple(queries), tuple(skipped))
