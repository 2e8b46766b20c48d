"""
Quantization-based score calibration.

``kappa`` replaces each embedding by its nearest center, ``nu`` scales it by
the quantization error, ``gamma`` sums the two. Because the DTW costs are
inner products, the score of a ``gamma`` row is the sum of the ``kappa`` and
``nu`` scores; ``gamma`` rows are therefore never re-normalized.
"""

import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from kws.exceptions import CoverageError, ParameterError
from kws.tensorio import CenterBank, EmbeddingSequence, normalize_rows

logger = logging.getLogger(__name__)

MODE_NONE = 'none'
MODE_QUANTIZE = 'quantize'
MODE_NORMALIZE = 'normalize'
MODE_COMBINED = 'combined'

CALIBRATION_MODE_CHOICES = [
    (MODE_NONE, 'No calibration'),
    (MODE_QUANTIZE, 'Step 1 only (quantization)'),
    (MODE_NORMALIZE, 'Step 2 only (error normalization)'),
    (MODE_COMBINED, 'Both steps'),
]
CALIBRATION_MODES = [mode for mode, _ in CALIBRATION_MODE_CHOICES]

SIDES_BOTH = 'both'
SIDES_QUERY = 'query'
SIDES_CHOICES = [
    (SIDES_BOTH, 'Templates and test recordings'),
    (SIDES_QUERY, 'Templates only'),
]


@dataclass(frozen=True)
class SegmentLayout:
    segment_length_frames: int
    segment_hop_frames: int

    def __post_init__(self):
        if self.segment_length_frames < 1 or self.segment_hop_frames < 1:
            raise ParameterError("Segment length and hop must be positive.")
        if self.segment_hop_frames > self.segment_length_frames:
            raise ParameterError(
                f"Segment hop {self.segment_hop_frames} exceeds segment length {self.segment_length_frames}."
            )

    def offset(self, segment_index):
        return segment_index * self.segment_hop_frames


def _center_matrix(bank):
    centers = bank.centers if isinstance(bank, CenterBank) else np.asarray(bank, dtype=np.float32)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ParameterError("Center bank is empty.")
    return centers


def nearest_centers(frames, bank):
    """Index and similarity of the nearest center for every row.

    Ties go to the lowest flat center index.
    """
    centers = _center_matrix(bank)
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[1] != centers.shape[1]:
        raise ParameterError(f"Embedding dimension {frames.shape[1]} does not match center dimension {centers.shape[1]}.")
    similarities = frames @ centers.astype(np.float64).T
    indices = np.argmax(similarities, axis=1)
    return indices, similarities[np.arange(len(indices)), indices]


def nearest_center(e, bank):
    """Nearest center of one unit vector and the attained similarity."""
    e = np.asarray(e, dtype=np.float64)
    norm = np.linalg.norm(e)
    if abs(norm - 1.0) > settings.KWS['UNIT_NORM_TOLERANCE']:
        raise ParameterError(f"Expected a unit-norm embedding, got norm {norm:.6f}.")
    indices, similarities = nearest_centers(e[None, :], bank)
    return _center_matrix(bank)[indices[0]], float(similarities[0])


def kappa(seq, bank):
    indices, _ = nearest_centers(seq.frames, bank)
    return seq.replace(frames=_center_matrix(bank)[indices])


def _nu_frames(seq, bank):
    _, best = nearest_centers(seq.frames, bank)
    denominator = np.maximum(1.0 + best, settings.KWS['CALIBRATION_EPSILON'])
    return (seq.frames.astype(np.float64) / denominator[:, None]).astype(np.float32)


def nu(seq, bank):
    return seq.replace(frames=_nu_frames(seq, bank))


def gamma(seq, bank):
    quantized = kappa(seq, bank).frames.astype(np.float64)
    normalized = _nu_frames(seq, bank).astype(np.float64)
    return seq.replace(frames=(quantized + normalized).astype(np.float32))


def apply_calibration(seq, bank, mode):
    """Calibrate individual embeddings; call before combine_segments."""
    if mode == MODE_NONE:
        return seq
    if bank is None:
        raise ParameterError(f"Calibration mode '{mode}' needs a center bank.")
    if mode == MODE_QUANTIZE:
        return kappa(seq, bank)
    if mode == MODE_NORMALIZE:
        return nu(seq, bank)
    if mode == MODE_COMBINED:
        return gamma(seq, bank)
    raise ParameterError(f"Unknown calibration mode '{mode}'; expected one of {', '.join(CALIBRATION_MODES)}.")


def calibrate_pair(queries, tests, bank, mode, sides=SIDES_BOTH):
    """Calibrate templates and, for ``sides='both'``, the test recordings too."""
    if sides not in (SIDES_BOTH, SIDES_QUERY):
        raise ParameterError(f"Unknown calibration sides '{sides}'.")
    calibrated_queries = [apply_calibration(q, bank, mode) for q in queries]
    if sides == SIDES_QUERY:
        return calibrated_queries, list(tests)
    return calibrated_queries, [apply_calibration(t, bank, mode) for t in tests]


def combine_segments(segments, layout, total_frames):
    """Average the rows of overlapping segments per absolute frame, then unit-normalize."""
    if not segments:
        raise CoverageError("No segments to combine.")
    dim = segments[0].dim
    sums = np.zeros((total_frames, dim), dtype=np.float64)
    counts = np.zeros(total_frames, dtype=np.int64)
    for i, segment in enumerate(segments):
        start = layout.offset(i)
        stop = min(start + segment.num_frames, total_frames)
        if stop <= start:
            continue
        sums[start:stop] += segment.frames[:stop - start]
        counts[start:stop] += 1
    uncovered = np.flatnonzero(counts == 0)
    if uncovered.size:
        raise CoverageError(f"Frame {int(uncovered[0])} is not covered by any segment.")
    combined = EmbeddingSequence(
        frames=sums / counts[:, None],
        hop_seconds=segments[0].hop_seconds,
        label=segments[0].label,
    )
    return normalize_rows(combined)


def cossim_sets(seq, cell):
    """Mean over frames of the best cosine similarity to any center of a cell."""
    cell = np.asarray(cell, dtype=np.float64)
    if cell.ndim != 2 or cell.shape[0] == 0:
        raise ParameterError("Cannot compare against an empty center cell.")
    frames = seq.frames.astype(np.float64)
    frames = frames / np.linalg.norm(frames, axis=1, keepdims=True)
    cell = cell / np.linalg.norm(cell, axis=1, keepdims=True)
    return float(np.mean(np.max(frames @ cell.T, axis=1)))
