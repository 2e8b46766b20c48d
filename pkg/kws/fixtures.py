"""
Synthetic embedding worlds for end-to-end tests.

A keyword occurrence walks through the keyword's positional centers in order
(one cluster per occurrence), so DTW sees real temporal structure. Every
recording gets its own noise exposure on top of ``noise_sigma``. Near-miss
segments copy the first half of a keyword's walk and then drift to other
centers; they are not annotated.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kws.channel import stable_hash
from kws.exceptions import ParameterError
from kws.tensorio import (
    AnnotationEvent,
    AnnotationSet,
    CenterBank,
    EmbeddingSequence,
    write_annotations,
    write_center_bank,
    write_embedding_sequence,
)

logger = logging.getLogger(__name__)

MAX_SIMILARITY = 0.8
MAX_ATTEMPTS_PER_CENTER = 1000

BANK_STREAM = 0
TEMPLATE_STREAM = 1
SPLIT_STREAMS = {'validation': 2, 'test': 3}


@dataclass(frozen=True)
class ToyWorldConfig:
    n_keywords: int = 3
    n_pos: int = 4
    n_clusters: int = 2
    dim: int = 64
    frames_per_keyword: int = 16
    noise_sigma: float = 0.0
    seed: int = 0
    exposure_max: float = 0.0
    near_misses_per_file: int = 0
    shots: int = 5
    files_per_split: int = 4
    recording_frames: int = 200
    keywords_per_file: int = 3
    hop_seconds: float = 0.016

    def __post_init__(self):
        positive = ('n_keywords', 'n_pos', 'n_clusters', 'dim', 'frames_per_keyword', 'shots',
                    'files_per_split', 'recording_frames')
        for name in positive:
            if getattr(self, name) < 1:
                raise ParameterError(f"ToyWorldConfig.{name} must be positive.")
        if self.noise_sigma < 0 or self.exposure_max < 0:
            raise ParameterError("Noise sigma and exposure must be non-negative.")
        if self.keywords_per_file < 0 or self.near_misses_per_file < 0:
            raise ParameterError("Occurrence counts must be non-negative.")
        if self.frames_per_keyword < self.n_pos:
            raise ParameterError("A keyword needs at least one frame per position.")
        segments = self.keywords_per_file + self.near_misses_per_file
        if segments * self.frames_per_keyword > self.recording_frames:
            raise ParameterError("Planted segments do not fit into a recording.")

    @property
    def keyword_names(self):
        return [f"kw{k}" for k in range(self.n_keywords)]


def _rng(cfg, *stream):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, *stream]))


def _unit_rows(rng, count, dim):
    rows = rng.standard_normal((count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def make_center_bank(cfg):
    """Random unit centers with pairwise similarity below MAX_SIMILARITY."""
    rng = _rng(cfg, BANK_STREAM)
    total = cfg.n_keywords * cfg.n_pos * cfg.n_clusters
    centers = np.empty((total, cfg.dim), dtype=np.float32)
    for index in range(total):
        for _ in range(MAX_ATTEMPTS_PER_CENTER):
            candidate = _unit_rows(rng, 1, cfg.dim)[0].astype(np.float32)
            if index == 0 or np.max(centers[:index] @ candidate) < MAX_SIMILARITY:
                centers[index] = candidate
                break
        else:
            raise ParameterError(
                f"Could not place {total} centers with similarity below {MAX_SIMILARITY} in {cfg.dim} dimensions."
            )
    return CenterBank(
        centers=centers,
        n_kw=cfg.n_keywords,
        n_pos=cfg.n_pos,
        n_c=cfg.n_clusters,
        keyword_names=tuple(cfg.keyword_names),
    )


def _walk(cfg, bank, keyword, cluster):
    """Center of every frame of one occurrence: positions in order, one cluster."""
    positions = [k * cfg.n_pos // cfg.frames_per_keyword for k in range(cfg.frames_per_keyword)]
    return np.stack([bank.cell(keyword, p)[cluster] for p in positions]), positions


def _near_miss_walk(cfg, bank, keyword, rng):
    walk, positions = _walk(cfg, bank, keyword, int(rng.integers(cfg.n_clusters)))
    shared = math.ceil(cfg.n_pos / 2)
    own = set(np.concatenate([bank.cell_indices(keyword, p) for p in range(cfg.n_pos)]).tolist())
    others = [i for i in range(len(bank)) if i not in own]
    if not others:
        return walk
    substitutes = {p: bank.centers[others[int(rng.integers(len(others)))]] for p in range(shared, cfg.n_pos)}
    for k, p in enumerate(positions):
        if p >= shared:
            walk[k] = substitutes[p]
    return walk


def _plant(frames, walk, start, level, rng):
    span = slice(start, start + len(walk))
    if level == 0:
        frames[span] = walk
        return
    noisy = walk.astype(np.float64) + level * rng.standard_normal(walk.shape) / math.sqrt(walk.shape[1])
    frames[span] = noisy / np.linalg.norm(noisy, axis=1, keepdims=True)


def _check_spans(cfg, spans, num_frames):
    ordered = sorted(spans)
    for start, stop in ordered:
        if start < 0 or stop > num_frames:
            raise ParameterError(f"Planted span {start}-{stop} outside a {num_frames}-frame recording.")
    for (_, stop), (start, _) in zip(ordered, ordered[1:]):
        if start < stop:
            raise ParameterError(f"Planted spans overlap at frame {start}.")


def make_recording(cfg, bank, script, num_frames=None, rng=None, file_id='recording', exposure=0.0,
                   near_misses=(), clusters=None):
    """Random background with keywords planted at the scripted start frames.

    ``script`` and ``near_misses`` are lists of ``(keyword, start_frame)``.
    Returns the sequence and frame-accurate annotations of the keywords.
    """
    length = cfg.frames_per_keyword
    if num_frames is None:
        ends = [start + length for _, start in list(script) + list(near_misses)]
        num_frames = max(ends + [cfg.recording_frames])
    rng = rng if rng is not None else _rng(cfg, stable_hash(file_id))
    _check_spans(cfg, [(s, s + length) for _, s in list(script) + list(near_misses)], num_frames)

    level = cfg.noise_sigma + exposure
    frames = _unit_rows(rng, num_frames, cfg.dim)
    if level > 0:
        frames += level * rng.standard_normal(frames.shape) / math.sqrt(cfg.dim)
        frames /= np.linalg.norm(frames, axis=1, keepdims=True)
    frames = frames.astype(np.float32)

    events = []
    for n, (keyword, start) in enumerate(script):
        cluster = clusters[n] if clusters is not None else int(rng.integers(cfg.n_clusters))
        walk, _ = _walk(cfg, bank, keyword, cluster)
        _plant(frames, walk, start, level, rng)
        events.append(AnnotationEvent(
            file_id=file_id,
            keyword=bank.keyword_names[bank.keyword_id(keyword)],
            onset_seconds=start * cfg.hop_seconds,
            offset_seconds=(start + length) * cfg.hop_seconds,
        ))
    for keyword, start in near_misses:
        _plant(frames, _near_miss_walk(cfg, bank, keyword, rng), start, level, rng)

    seq = EmbeddingSequence(frames=frames, hop_seconds=cfg.hop_seconds)
    return seq, AnnotationSet(sorted(events, key=lambda e: e.onset_seconds))


@dataclass(frozen=True)
class Split:
    recordings: dict
    truth: AnnotationSet


@dataclass(frozen=True)
class ToyWorld:
    cfg: ToyWorldConfig
    bank: CenterBank
    templates: dict
    validation: Split
    test: Split
    exposures: dict = field(default_factory=dict)


def _exposure(cfg, rng):
    return float(rng.uniform(0.0, cfg.exposure_max)) if cfg.exposure_max > 0 else 0.0


def make_templates(cfg, bank):
    """``shots`` templates per keyword; clusters rotate so every cluster is covered."""
    rng = _rng(cfg, TEMPLATE_STREAM)
    templates, exposures = {}, {}
    for keyword in bank.keyword_names:
        shots = []
        for shot in range(cfg.shots):
            exposure = _exposure(cfg, rng)
            seq, _ = make_recording(
                cfg, bank, [(keyword, 0)], num_frames=cfg.frames_per_keyword, rng=rng,
                file_id=f"{keyword}_{shot:02d}", exposure=exposure, clusters=[shot % cfg.n_clusters],
            )
            shots.append(seq.replace(label=keyword))
            exposures[f"{keyword}_{shot:02d}"] = exposure
        templates[keyword] = shots
    return templates, exposures


def make_split(cfg, bank, name):
    rng = _rng(cfg, SPLIT_STREAMS[name])
    length = cfg.frames_per_keyword
    recordings, events, exposures = {}, [], {}
    for index in range(cfg.files_per_split):
        file_id = f"{name}_{index:03d}"
        count = cfg.keywords_per_file + cfg.near_misses_per_file
        free = cfg.recording_frames - count * length
        offsets = np.sort(rng.integers(0, free + 1, size=count))
        starts = [int(offset) + n * length for n, offset in enumerate(offsets)]
        kinds = rng.permutation([True] * cfg.keywords_per_file + [False] * cfg.near_misses_per_file)
        keywords = rng.integers(cfg.n_keywords, size=count)
        script = [(int(kw), s) for kw, s, planted in zip(keywords, starts, kinds) if planted]
        near = [(int(kw), s) for kw, s, planted in zip(keywords, starts, kinds) if not planted]
        exposure = _exposure(cfg, rng)
        seq, truth = make_recording(
            cfg, bank, script, num_frames=cfg.recording_frames, rng=rng, file_id=file_id,
            exposure=exposure, near_misses=near,
        )
        recordings[file_id] = seq
        events.extend(truth)
        exposures[file_id] = exposure
    return Split(recordings=recordings, truth=AnnotationSet(events)), exposures


def make_world(cfg):
    bank = make_center_bank(cfg)
    templates, exposures = make_templates(cfg, bank)
    validation, val_exposures = make_split(cfg, bank, 'validation')
    test, test_exposures = make_split(cfg, bank, 'test')
    logger.debug(f"Built toy world seed={cfg.seed} with {len(validation.truth)} + {len(test.truth)} planted keywords")
    return ToyWorld(
        cfg=cfg,
        bank=bank,
        templates=templates,
        validation=validation,
        test=test,
        exposures={**exposures, **val_exposures, **test_exposures},
    )


def write_world(world, root):
    """Write the world in the directory layout the pipeline reads."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_center_bank(world.bank, root / 'bank.cbnk')
    for keyword, shots in world.templates.items():
        folder = root / 'queries' / keyword
        folder.mkdir(parents=True, exist_ok=True)
        for n, seq in enumerate(shots):
            write_embedding_sequence(seq, folder / f"{keyword}_{n:02d}.eseq")
    for name in ('validation', 'test'):
        split = getattr(world, name)
        folder = root / name
        folder.mkdir(parents=True, exist_ok=True)
        for file_id, seq in split.recordings.items():
            write_embedding_sequence(seq, folder / f"{file_id}.eseq")
        write_annotations(split.truth, root / f"{name}.tsv")
    logger.info(f"Wrote toy world to {root}")
    return root
