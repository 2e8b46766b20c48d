"""
Core domain types and file I/O.

Binary formats:

* ESEQ: ``b"ESEQ"``, 4-byte little-endian header length, UTF-8 JSON header
  ``{"t", "d", "hop_seconds", "label"}``, then ``t*d`` little-endian float32
  values in row-major order.
* CBNK: ``b"CBNK"``, 4-byte little-endian header length, UTF-8 JSON header
  ``{"d", "n_kw", "n_pos", "n_c", "keyword_names"}``, then the centers as
  little-endian float32, keyword-major, then position, clusters contiguous.

Annotations and detections are tab separated text files.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import soundfile as sf

from kws.exceptions import (
    AnnotationError,
    DegenerateInputError,
    FormatError,
    ParameterError,
    UnsupportedFormatError,
)

logger = logging.getLogger(__name__)

ESEQ_MAGIC = b'ESEQ'
CBNK_MAGIC = b'CBNK'
HEADER_LENGTH = struct.Struct('<I')
FLOAT32_LE = np.dtype('<f4')

SUPPORTED_SAMPLE_RATES = (8000, 16000, 22050, 32000, 44100, 48000)
SUPPORTED_WAV_SUBTYPES = ('PCM_16', 'FLOAT')

UNIT_NORM_TOLERANCE = 1e-5
RENORMALIZE_WARNING = 1e-3
ZERO_NORM = 1e-8

OPEN_SET_LABEL = '_unknown'


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class EmbeddingSequence:
    """A T x D sequence of float32 embeddings with a fixed frame hop."""
    frames: np.ndarray
    hop_seconds: float
    label: str | None = None

    def __post_init__(self):
        frames = _frozen(self.frames, np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ParameterError(f"Embedding frames must be a non-empty T x D matrix, got shape {frames.shape}.")
        if not np.all(np.isfinite(frames)):
            raise DegenerateInputError("Embedding frames contain non-finite values.")
        if not self.hop_seconds > 0:
            raise ParameterError(f"Frame hop must be positive, got {self.hop_seconds}.")
        object.__setattr__(self, 'frames', frames)
        object.__setattr__(self, 'hop_seconds', float(self.hop_seconds))

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]

    @property
    def duration_seconds(self):
        return self.num_frames * self.hop_seconds

    def replace(self, frames=None, label=None):
        """Return a copy with new frames and/or label and the same hop."""
        return EmbeddingSequence(
            frames=self.frames if frames is None else frames,
            hop_seconds=self.hop_seconds,
            label=self.label if label is None else label,
        )


@dataclass(frozen=True)
class CenterBank:
    """Centers indexed by (keyword, position, cluster), stored flat."""
    centers: np.ndarray
    n_kw: int
    n_pos: int
    n_c: int
    keyword_names: tuple
    renormalized_rows: tuple = ()

    def __post_init__(self):
        centers = _frozen(self.centers, np.float32)
        expected = self.n_kw * self.n_pos * self.n_c
        if centers.ndim != 2 or centers.shape[0] != expected:
            raise FormatError(
                f"Center bank holds {centers.shape[0] if centers.ndim == 2 else 0} centers, "
                f"expected n_kw*n_pos*n_c = {expected}."
            )
        if len(self.keyword_names) != self.n_kw:
            raise FormatError(f"Center bank names {len(self.keyword_names)} keywords, expected {self.n_kw}.")
        object.__setattr__(self, 'centers', centers)
        object.__setattr__(self, 'keyword_names', tuple(str(name) for name in self.keyword_names))
        object.__setattr__(self, 'renormalized_rows', tuple(self.renormalized_rows))

    @property
    def dim(self):
        return self.centers.shape[1]

    def __len__(self):
        return self.centers.shape[0]

    def keyword_id(self, keyword):
        """Zero-based keyword index for a keyword name or index."""
        if isinstance(keyword, str):
            try:
                return self.keyword_names.index(keyword)
            except ValueError:
                raise ParameterError(f"Unknown keyword '{keyword}'.")
        if not 0 <= keyword < self.n_kw:
            raise ParameterError(f"Keyword index {keyword} outside 0..{self.n_kw - 1}.")
        return int(keyword)

    def cell_indices(self, keyword, position):
        """Flat indices of the n_c centers in one (keyword, position) cell."""
        kw = self.keyword_id(keyword)
        if not 0 <= position < self.n_pos:
            raise ParameterError(f"Position index {position} outside 0..{self.n_pos - 1}.")
        start = (kw * self.n_pos + position) * self.n_c
        return np.arange(start, start + self.n_c)

    def cell(self, keyword, position):
        return self.centers[self.cell_indices(keyword, position)]

    def index(self):
        """Map (keyword index, position index) to flat center indices."""
        return {
            (kw, pos): tuple(self.cell_indices(kw, pos).tolist())
            for kw in range(self.n_kw)
            for pos in range(self.n_pos)
        }


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio; ``silent`` and ``clipped`` record pre-processing outcomes."""
    samples: np.ndarray
    sample_rate_hz: int
    silent: bool = False
    clipped: int = 0

    def __post_init__(self):
        samples = _frozen(self.samples, np.float64)
        if samples.ndim != 1:
            raise ParameterError(f"Audio must be mono, got shape {samples.shape}.")
        if not np.all(np.isfinite(samples)):
            raise DegenerateInputError("Audio contains non-finite samples.")
        if self.sample_rate_hz not in SUPPORTED_SAMPLE_RATES:
            raise UnsupportedFormatError(
                f"Sample rate {self.sample_rate_hz} Hz is not one of {SUPPORTED_SAMPLE_RATES}."
            )
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate_hz', int(self.sample_rate_hz))

    @property
    def duration_seconds(self):
        return len(self.samples) / self.sample_rate_hz

    def replace(self, samples, sample_rate_hz=None, silent=None, clipped=None):
        return AudioBuffer(
            samples=samples,
            sample_rate_hz=self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz,
            silent=self.silent if silent is None else silent,
            clipped=self.clipped if clipped is None else clipped,
        )


@dataclass(frozen=True)
class AnnotationEvent:
    file_id: str
    keyword: str
    onset_seconds: float
    offset_seconds: float

    def __post_init__(self):
        if self.onset_seconds < 0:
            raise AnnotationError(f"Negative onset {self.onset_seconds} in '{self.file_id}'.")
        if not self.onset_seconds < self.offset_seconds:
            raise AnnotationError(
                f"Onset {self.onset_seconds} is not before offset {self.offset_seconds} in '{self.file_id}'."
            )

    @property
    def duration_seconds(self):
        return self.offset_seconds - self.onset_seconds


@dataclass(frozen=True)
class AnnotationSet:
    events: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'events', tuple(self.events))

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def file_ids(self):
        return sorted({event.file_id for event in self.events})

    @property
    def keywords(self):
        return sorted({event.keyword for event in self.events})

    def for_file(self, file_id):
        return AnnotationSet(event for event in self.events if event.file_id == file_id)

    def check_keywords(self, keyword_names, open_set_label=OPEN_SET_LABEL):
        """Raise if an event names a keyword outside the bank vocabulary."""
        allowed = set(keyword_names) | {open_set_label}
        unknown = sorted({event.keyword for event in self.events} - allowed)
        if unknown:
            raise AnnotationError(f"Annotations name keywords missing from the center bank: {', '.join(unknown)}.")


@dataclass(frozen=True)
class DetectionEvent:
    """A detected keyword occurrence."""
    file_id: str
    keyword: str
    onset_seconds: float
    offset_seconds: float
    score: float
    template_seconds: float = 0.0

    def __post_init__(self):
        if not self.onset_seconds < self.offset_seconds:
            raise ParameterError(
                f"Detection onset {self.onset_seconds} is not before offset {self.offset_seconds}."
            )
        if not np.isfinite(self.score):
            raise ParameterError(f"Detection score must be finite, got {self.score}.")

    @property
    def duration_seconds(self):
        return self.offset_seconds - self.onset_seconds


# Binary containers

def _write_container(path, magic, header, payload):
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as handle:
        handle.write(magic)
        handle.write(HEADER_LENGTH.pack(len(header_bytes)))
        handle.write(header_bytes)
        handle.write(payload)


def _read_container(path, magic):
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {data[:4]!r}.")
    if len(data) < 8:
        raise FormatError(f"{path}: truncated header length.")
    (header_length,) = HEADER_LENGTH.unpack_from(data, 4)
    header_end = 8 + header_length
    if len(data) < header_end:
        raise FormatError(f"{path}: header length {header_length} exceeds file size.")
    try:
        header = json.loads(data[8:header_end].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable JSON header ({e}).")
    if not isinstance(header, dict):
        raise FormatError(f"{path}: JSON header must be an object.")
    return header, data[header_end:]


def _header_int(header, key, path):
    value = header.get(key)
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise FormatError(f"{path}: header field '{key}' must be a positive integer, got {value!r}.")
    return value


def _payload_matrix(payload, rows, cols, path):
    expected = rows * cols * FLOAT32_LE.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}.")
    return np.frombuffer(payload, dtype=FLOAT32_LE).reshape(rows, cols).astype(np.float32)


def write_embedding_sequence(seq, path):
    header = {
        't': seq.num_frames,
        'd': seq.dim,
        'hop_seconds': seq.hop_seconds,
        'label': seq.label,
    }
    _write_container(path, ESEQ_MAGIC, header, seq.frames.astype(FLOAT32_LE).tobytes())


def read_embedding_sequence(path):
    header, payload = _read_container(path, ESEQ_MAGIC)
    t = _header_int(header, 't', path)
    d = _header_int(header, 'd', path)
    hop = header.get('hop_seconds')
    if not isinstance(hop, (int, float)) or not hop > 0:
        raise FormatError(f"{path}: header field 'hop_seconds' must be positive, got {hop!r}.")
    label = header.get('label')
    if label is not None and not isinstance(label, str):
        raise FormatError(f"{path}: header field 'label' must be a string or null.")
    frames = _payload_matrix(payload, t, d, path)
    if not np.all(np.isfinite(frames)):
        raise FormatError(f"{path}: payload contains non-finite values.")
    return EmbeddingSequence(frames=frames, hop_seconds=hop, label=label)


def write_center_bank(bank, path):
    header = {
        'd': bank.dim,
        'n_kw': bank.n_kw,
        'n_pos': bank.n_pos,
        'n_c': bank.n_c,
        'keyword_names': list(bank.keyword_names),
    }
    _write_container(path, CBNK_MAGIC, header, bank.centers.astype(FLOAT32_LE).tobytes())


def read_center_bank(path):
    header, payload = _read_container(path, CBNK_MAGIC)
    d = _header_int(header, 'd', path)
    n_kw = _header_int(header, 'n_kw', path)
    n_pos = _header_int(header, 'n_pos', path)
    n_c = _header_int(header, 'n_c', path)
    names = header.get('keyword_names')
    if not isinstance(names, list) or len(names) != n_kw or not all(isinstance(n, str) and n for n in names):
        raise FormatError(f"{path}: 'keyword_names' must list {n_kw} non-empty names.")
    if len(set(names)) != len(names):
        raise FormatError(f"{path}: duplicate keyword names.")
    total = n_kw * n_pos * n_c
    if len(payload) != total * d * FLOAT32_LE.itemsize:
        raise FormatError(
            f"{path}: payload does not hold {n_c} centers for each of the {n_kw * n_pos} cells."
        )
    centers = _payload_matrix(payload, total, d, path)
    if not np.all(np.isfinite(centers)):
        raise FormatError(f"{path}: payload contains non-finite values.")

    # Rows off the unit sphere are re-normalized; rows already on it keep their bits
    norms = np.linalg.norm(centers.astype(np.float64), axis=1)
    if np.any(norms < ZERO_NORM):
        raise FormatError(f"{path}: center {int(np.argmax(norms < ZERO_NORM))} is the zero vector.")
    off = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE)
    if off.size:
        centers = centers.copy()
        centers[off] = (centers[off].astype(np.float64) / norms[off, None]).astype(np.float32)
    far = np.flatnonzero(np.abs(norms - 1.0) > RENORMALIZE_WARNING)
    if far.size:
        logger.warning(f"{path}: re-normalized {far.size} center rows with norms off by more than {RENORMALIZE_WARNING}")

    return CenterBank(
        centers=centers,
        n_kw=n_kw,
        n_pos=n_pos,
        n_c=n_c,
        keyword_names=tuple(names),
        renormalized_rows=tuple(far.tolist()),
    )


def normalize_rows(seq):
    """Divide every row by its Euclidean norm."""
    frames = seq.frames.astype(np.float64)
    norms = np.linalg.norm(frames, axis=1)
    zero = np.flatnonzero(norms < ZERO_NORM)
    if zero.size:
        raise DegenerateInputError(f"Embedding row {int(zero[0])} is the zero vector.")
    return seq.replace(frames=(frames / norms[:, None]).astype(np.float32))


# Audio

def read_wav(path):
    """Read a PCM16 or float32 WAV file as mono float samples."""
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise FormatError(f"{path}: not a readable WAV file ({e}).")
    if info.format != 'WAV':
        raise UnsupportedFormatError(f"{path}: container {info.format} is not RIFF/WAVE.")
    if info.subtype not in SUPPORTED_WAV_SUBTYPES:
        raise UnsupportedFormatError(f"{path}: codec {info.subtype} is not PCM 16-bit or IEEE float 32-bit.")
    if info.channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {info.channels} channels, only mono or stereo are read.")
    try:
        data, rate = sf.read(str(path), dtype='float32', always_2d=True)
    except RuntimeError as e:
        raise FormatError(f"{path}: corrupt WAV payload ({e}).")
    samples = data.astype(np.float64).mean(axis=1) if data.shape[1] > 1 else data[:, 0].astype(np.float64)
    return AudioBuffer(samples=samples, sample_rate_hz=rate)


def write_wav(buf, path, subtype='PCM_16'):
    if subtype not in SUPPORTED_WAV_SUBTYPES:
        raise UnsupportedFormatError(f"Cannot write WAV subtype {subtype}.")
    samples = buf.samples
    if subtype == 'PCM_16':
        samples = np.clip(samples, -1.0, 1.0)
    else:
        samples = samples.astype(np.float32)
    sf.write(str(path), samples, buf.sample_rate_hz, subtype=subtype, format='WAV')


# Tab separated files

ANNOTATION_COLUMNS = ['file_id', 'onset', 'offset', 'keyword']
DETECTION_COLUMNS = ANNOTATION_COLUMNS + ['score']
TEMPLATE_COLUMN = 'template'
NUMERIC_COLUMNS = ('onset', 'offset', 'score', TEMPLATE_COLUMN)


def _read_table(path, columns, optional=()):
    """Required columns in order, then as many ``optional`` ones as the file has."""
    try:
        frame = pd.read_csv(path, sep='\t', header=None, dtype=str, keep_default_na=False, comment=None)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=list(columns) + list(optional))
    if frame.shape[1] < len(columns):
        raise FormatError(f"{path}: expected {len(columns)} tab separated columns, found {frame.shape[1]}.")
    columns = list(columns) + list(optional)[:frame.shape[1] - len(columns)]
    frame = frame.iloc[:, :len(columns)].copy()
    frame.columns = columns

    # Header line detected by a non-numeric second field
    if len(frame) and pd.isna(pd.to_numeric(frame.iloc[0]['onset'], errors='coerce')):
        frame = frame.iloc[1:].copy()

    numeric = [column for column in columns if column in NUMERIC_COLUMNS]
    for column in numeric:
        values = pd.to_numeric(frame[column], errors='coerce')
        if values.isna().any():
            bad = int(values.isna().to_numpy().argmax())
            raise FormatError(f"{path}: non-numeric {column} on data line {bad + 1}.")
        frame[column] = frame[column].astype(float)
    return frame.reset_index(drop=True)


def read_annotations(path):
    frame = _read_table(path, ANNOTATION_COLUMNS)
    return AnnotationSet(
        AnnotationEvent(
            file_id=row.file_id,
            keyword=row.keyword,
            onset_seconds=float(row.onset),
            offset_seconds=float(row.offset),
        )
        for row in frame.itertuples(index=False)
    )


def write_annotations(annotations, path, header=True):
    frame = pd.DataFrame(
        [(e.file_id, e.onset_seconds, e.offset_seconds, e.keyword) for e in annotations],
        columns=ANNOTATION_COLUMNS,
    )
    frame.to_csv(path, sep='\t', index=False, header=header, float_format='%.6f')


def write_detections(events, path):
    """Full float precision, so a detections file reads back to the same events."""
    frame = pd.DataFrame(
        [(e.file_id, e.onset_seconds, e.offset_seconds, e.keyword, e.score, e.template_seconds) for e in events],
        columns=DETECTION_COLUMNS + [TEMPLATE_COLUMN],
    )
    frame.to_csv(path, sep='\t', index=False, float_format='%.17g')


def read_detections(path):
    frame = _read_table(path, DETECTION_COLUMNS, optional=[TEMPLATE_COLUMN])
    templates = frame[TEMPLATE_COLUMN] if TEMPLATE_COLUMN in frame else [0.0] * len(frame)
    return [
        DetectionEvent(
            file_id=row.file_id,
            keyword=row.keyword,
            onset_seconds=float(row.onset),
            offset_seconds=float(row.offset),
            score=float(row.score),
            template_seconds=float(template),
        )
        for row, template in zip(frame.itertuples(index=False), templates)
    ]


def write_cost_matrix(values, path, **metadata):
    """Dump a cost matrix as raw float32 with a JSON sidecar describing it."""
    path = Path(path)
    values = np.asarray(values, dtype=FLOAT32_LE)
    values.tofile(path)
    sidecar = {'shape': list(values.shape), 'dtype': 'float32', 'byte_order': 'little', **metadata}
    path.with_name(path.name + '.json').write_text(json.dumps(sidecar, indent=2, sort_keys=True))
