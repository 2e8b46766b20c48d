"""
Detection events from score curves, event-based evaluation and threshold
selection.

Curves are passed around as ``{file_id: {keyword: KeywordScores}}``.
"""

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from django.conf import settings

from kws.exceptions import AnnotationError, ParameterError
from kws.tensorio import OPEN_SET_LABEL, DetectionEvent

logger = logging.getLogger(__name__)

OFFSET_PATH = 'path'
OFFSET_RUN = 'run'
OFFSET_MODES = (OFFSET_RUN, OFFSET_PATH)

OVERLAP_TRIM = 'trim'
OVERLAP_SPLIT = 'split'
OVERLAP_MODES = (OVERLAP_TRIM, OVERLAP_SPLIT)

SWEEP_GLOBAL = 'global'
SWEEP_PER_KEYWORD = 'per_keyword'
SWEEP_MODES = (SWEEP_GLOBAL, SWEEP_PER_KEYWORD)

# Slack for comparing times built from frame counts
TIME_EPSILON = 1e-9


@dataclass(frozen=True)
class MatchingConfig:
    collar_seconds: float = 0.25
    offset_ratio: float = 0.5

    def __post_init__(self):
        if self.collar_seconds < 0 or self.offset_ratio < 0:
            raise ParameterError("Collar and offset ratio must be non-negative.")

    @classmethod
    def from_settings(cls):
        return cls(
            collar_seconds=settings.KWS['COLLAR_SECONDS'],
            offset_ratio=settings.KWS['OFFSET_RATIO'],
        )

    def offset_tolerance(self, truth_duration):
        return max(self.collar_seconds, self.offset_ratio * truth_duration)


@dataclass(frozen=True)
class Threshold:
    """A global threshold, optionally overridden per keyword."""
    global_value: float | None = None
    per_keyword: dict = field(default_factory=dict)

    def __post_init__(self):
        values = list(self.per_keyword.values())
        if self.global_value is not None:
            values.append(self.global_value)
        if not values:
            raise ParameterError("A threshold needs a global value or per-keyword values.")
        if not all(np.isfinite(v) for v in values):
            raise ParameterError("Thresholds must be finite.")
        object.__setattr__(self, 'per_keyword', dict(self.per_keyword))

    def value_for(self, keyword):
        value = self.per_keyword.get(keyword, self.global_value)
        if value is None:
            raise ParameterError(f"No threshold for keyword '{keyword}'.")
        return value

    def with_keyword(self, keyword, value):
        return Threshold(global_value=self.global_value, per_keyword={**self.per_keyword, keyword: value})

    def to_dict(self):
        return {'global': self.global_value, 'per_keyword': dict(sorted(self.per_keyword.items()))}

    @classmethod
    def from_dict(cls, data):
        return cls(global_value=data.get('global'), per_keyword=data.get('per_keyword') or {})


@dataclass(frozen=True)
class KeywordCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f_score(self):
        denominator = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denominator if denominator else 0.0

    def to_dict(self):
        return {
            'tp': self.tp,
            'fp': self.fp,
            'fn': self.fn,
            'precision': self.precision,
            'recall': self.recall,
            'f_score': self.f_score,
        }


@dataclass(frozen=True)
class EvalReport:
    """Per-keyword counts; micro-F pools the counts, macro-F averages per-keyword F."""
    per_keyword: dict
    threshold: Threshold | None = None

    @property
    def totals(self):
        return KeywordCounts(
            tp=sum(c.tp for c in self.per_keyword.values()),
            fp=sum(c.fp for c in self.per_keyword.values()),
            fn=sum(c.fn for c in self.per_keyword.values()),
        )

    @property
    def micro_f(self):
        return self.totals.f_score

    @property
    def macro_f(self):
        if not self.per_keyword:
            return 0.0
        return float(np.mean([c.f_score for c in self.per_keyword.values()]))

    def with_threshold(self, threshold):
        return replace(self, threshold=threshold)

    def to_dict(self):
        totals = self.totals
        return {
            'threshold': self.threshold.to_dict() if self.threshold else None,
            'micro_f': self.micro_f,
            'macro_f': self.macro_f,
            'tp': totals.tp,
            'fp': totals.fp,
            'fn': totals.fn,
            'per_keyword': {kw: counts.to_dict() for kw, counts in sorted(self.per_keyword.items())},
        }


def _runs(mask):
    """Start and end (inclusive) of every maximal run of True values."""
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2] - 1))


def threshold_scores(curves, thr, file_id='', offset_mode=None):
    """Turn every run of frames scoring at least the threshold into one event.

    The winning frame is the highest-scoring frame of the run. The onset is
    the start of its warp path; the offset is the end of the run (``run``)
    or the winning frame itself (``path``).
    """
    offset_mode = offset_mode or settings.KWS['OFFSET_MODE']
    if offset_mode not in OFFSET_MODES:
        raise ParameterError(f"Unknown offset mode '{offset_mode}'; expected one of {OFFSET_MODES}.")
    curves = curves.values() if isinstance(curves, dict) else curves
    events = []
    for curve in curves:
        hop = curve.hop_seconds
        mask = curve.scores >= thr.value_for(curve.keyword)
        for first, last in _runs(mask):
            winner = first + int(np.argmax(curve.scores[first:last + 1]))
            onset = int(curve.onsets[winner])
            if onset < 0:
                continue
            end = last if offset_mode == OFFSET_RUN else winner
            events.append(DetectionEvent(
                file_id=file_id,
                keyword=curve.keyword,
                onset_seconds=onset * hop,
                offset_seconds=(end + 1) * hop,
                score=float(curve.scores[winner]),
                template_seconds=float(curve.template_frames[winner]) * hop,
            ))
    return events


def _resolve_overlaps(events, overlap_mode):
    """Give every stretch of time to the highest-scoring event claiming it.

    An event left with several disjoint stretches keeps the longest one
    (``trim``, earliest on ties) or becomes one event per stretch (``split``).
    """
    if len(events) < 2:
        return list(events)
    priority = sorted(
        range(len(events)),
        key=lambda k: (-events[k].score, events[k].onset_seconds, events[k].offset_seconds, events[k].keyword),
    )
    rank = {k: r for r, k in enumerate(priority)}
    bounds = sorted({e.onset_seconds for e in events} | {e.offset_seconds for e in events})

    owned = defaultdict(list)
    for index, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        claimants = [k for k, e in enumerate(events) if e.onset_seconds <= a and e.offset_seconds >= b]
        if claimants:
            owned[min(claimants, key=rank.get)].append(index)

    kept = []
    for k, event in enumerate(events):
        intervals = owned.get(k)
        if not intervals:
            continue
        spans, first = [], intervals[0]
        for previous, current in zip(intervals, intervals[1:] + [None]):
            if current != previous + 1:
                spans.append((bounds[first], bounds[previous + 1]))
                first = current
        if overlap_mode == OVERLAP_TRIM:
            spans = [max(spans, key=lambda span: (span[1] - span[0], -span[0]))]
        kept.extend(replace(event, onset_seconds=onset, offset_seconds=offset) for onset, offset in spans)
    return kept


def postprocess(events, min_duration_ratio=None, overlap_mode=None):
    """Resolve overlaps in favour of the higher score, then drop short events."""
    if min_duration_ratio is None:
        min_duration_ratio = settings.KWS['MIN_DURATION_RATIO']
    overlap_mode = overlap_mode or settings.KWS['OVERLAP_MODE']
    if overlap_mode not in OVERLAP_MODES:
        raise ParameterError(f"Unknown overlap mode '{overlap_mode}'; expected one of {OVERLAP_MODES}.")
    by_file = defaultdict(list)
    for event in events:
        by_file[event.file_id].append(event)

    result = []
    for file_id in sorted(by_file):
        for event in _resolve_overlaps(by_file[file_id], overlap_mode):
            if event.duration_seconds + TIME_EPSILON < min_duration_ratio * event.template_seconds:
                continue
            result.append(event)
    return sorted(result, key=lambda e: (e.file_id, e.onset_seconds, e.keyword))


def detect_file(curves, thr, file_id='', offset_mode=None, min_duration_ratio=None, overlap_mode=None):
    events = threshold_scores(curves, thr, file_id=file_id, offset_mode=offset_mode)
    return postprocess(events, min_duration_ratio, overlap_mode)


def detect_all(curves_by_file, thr, offset_mode=None, min_duration_ratio=None, overlap_mode=None):
    events = []
    for file_id in sorted(curves_by_file):
        events.extend(detect_file(curves_by_file[file_id], thr, file_id, offset_mode, min_duration_ratio, overlap_mode))
    return events


def event_f_score(detections, truth, matching=None):
    """Greedy one-to-one event matching per file and keyword.

    A pair matches when the onsets differ by at most the collar and the
    offsets by at most max(collar, offset_ratio * truth duration). Candidate
    pairs are taken in order of onset difference.
    """
    matching = matching or MatchingConfig.from_settings()
    truths = [t for t in truth if t.keyword != OPEN_SET_LABEL]

    seen = set()
    for t in truths:
        key = (t.file_id, t.keyword, t.onset_seconds, t.offset_seconds)
        if key in seen:
            raise AnnotationError(
                f"Duplicate annotation of '{t.keyword}' at {t.onset_seconds}-{t.offset_seconds} s in '{t.file_id}'."
            )
        seen.add(key)

    truth_groups = defaultdict(list)
    for t in truths:
        truth_groups[(t.file_id, t.keyword)].append(t)
    detection_groups = defaultdict(list)
    for d in detections:
        detection_groups[(d.file_id, d.keyword)].append(d)

    counts = defaultdict(lambda: [0, 0, 0])
    for key in sorted(set(truth_groups) | set(detection_groups)):
        group_truths = truth_groups.get(key, [])
        group_detections = detection_groups.get(key, [])
        pairs = []
        for ti, t in enumerate(group_truths):
            tolerance = matching.offset_tolerance(t.duration_seconds) + TIME_EPSILON
            for di, d in enumerate(group_detections):
                onset_gap = abs(d.onset_seconds - t.onset_seconds)
                offset_gap = abs(d.offset_seconds - t.offset_seconds)
                if onset_gap <= matching.collar_seconds + TIME_EPSILON and offset_gap <= tolerance:
                    pairs.append((onset_gap, offset_gap, ti, di))
        matched_truths, matched_detections = set(), set()
        for _, _, ti, di in sorted(pairs):
            if ti in matched_truths or di in matched_detections:
                continue
            matched_truths.add(ti)
            matched_detections.add(di)
        tp = len(matched_truths)
        tally = counts[key[1]]
        tally[0] += tp
        tally[1] += len(group_detections) - tp
        tally[2] += len(group_truths) - tp

    return EvalReport(per_keyword={kw: KeywordCounts(*tally) for kw, tally in sorted(counts.items())})


def all_scores(curves_by_file):
    values = [curve.scores for curves in curves_by_file.values() for curve in curves.values()]
    if not values:
        return np.empty(0)
    scores = np.concatenate(values)
    return scores[np.isfinite(scores)]


def default_grid(scores, n=None):
    """n points spanning the finite observed scores."""
    n = n or settings.KWS['GRID_POINTS']
    scores = np.asarray(scores, dtype=np.float64)
    scores = scores[np.isfinite(scores)]
    if scores.size == 0:
        return [0.0]
    low, high = float(scores.min()), float(scores.max())
    if low == high:
        return [low]
    return np.linspace(low, high, n).tolist()


@dataclass(frozen=True)
class SweepResult:
    threshold: Threshold
    report: EvalReport
    curve: list

    @property
    def best_f(self):
        return self.report.micro_f


def _check_grid(grid):
    grid = [float(g) for g in grid]
    if not grid:
        raise ParameterError("Threshold grid is empty.")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ParameterError("Threshold grid must be sorted in ascending order.")
    return grid


def sweep_threshold(curves_by_file, truth, grid=None, matching=None, mode=SWEEP_GLOBAL,
                    offset_mode=None, min_duration_ratio=None, threads=None, overlap_mode=None):
    """Pick the threshold maximizing micro-F; ties go to the lowest threshold.

    ``per_keyword`` starts from the best global threshold and then sweeps
    each keyword once, in name order, holding the others fixed.
    """
    if mode not in SWEEP_MODES:
        raise ParameterError(f"Unknown sweep mode '{mode}'; expected one of {SWEEP_MODES}.")
    matching = matching or MatchingConfig.from_settings()
    grid = _check_grid(default_grid(all_scores(curves_by_file)) if grid is None else grid)
    threads = threads or settings.KWS['THREADS']

    def evaluate(thr):
        detections = detect_all(curves_by_file, thr, offset_mode, min_duration_ratio, overlap_mode)
        return event_f_score(detections, truth, matching).with_threshold(thr)

    thresholds = [Threshold(global_value=g) for g in grid]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = list(pool.map(evaluate, thresholds))
    curve = list(zip(grid, reports))

    best = reports[0]
    for report in reports[1:]:
        if report.micro_f > best.micro_f:
            best = report

    if mode == SWEEP_PER_KEYWORD:
        keywords = sorted(
            {kw for curves in curves_by_file.values() for kw in curves}
            | {t.keyword for t in truth if t.keyword != OPEN_SET_LABEL}
        )
        for keyword in keywords:
            current = best
            for g in grid:
                report = evaluate(best.threshold.with_keyword(keyword, g))
                value = current.threshold.value_for(keyword)
                if report.micro_f > current.micro_f or (report.micro_f == current.micro_f and g < value):
                    current = report
            best = current

    logger.info(f"Best threshold {best.threshold.to_dict()} with micro-F {best.micro_f:.4f}")
    return SweepResult(threshold=best.threshold, report=best, curve=curve)


@dataclass(frozen=True)
class GapResult:
    estimated_threshold: float
    oracle_threshold: float
    estimated_f: float
    oracle_f: float

    @property
    def delta_threshold(self):
        return self.oracle_threshold - self.estimated_threshold

    @property
    def delta_f(self):
        return self.oracle_f - self.estimated_f

    def to_dict(self):
        return {
            'estimated_threshold': self.estimated_threshold,
            'oracle_threshold': self.oracle_threshold,
            'estimated_f': self.estimated_f,
            'oracle_f': self.oracle_f,
            'delta_threshold': self.delta_threshold,
            'delta_f': self.delta_f,
        }


def threshold_gap_analysis(validation, test, grid=None, matching=None, offset_mode=None,
                           min_duration_ratio=None, threads=None, overlap_mode=None):
    """Compare the validation-estimated threshold with the test-optimal one.

    ``validation`` and ``test`` are ``(curves_by_file, truth)`` pairs; both
    sweeps share one grid.
    """
    val_curves, val_truth = validation
    test_curves, test_truth = test
    if grid is None:
        grid = default_grid(np.concatenate([all_scores(val_curves), all_scores(test_curves)]))
    options = dict(
        matching=matching, offset_mode=offset_mode, min_duration_ratio=min_duration_ratio, threads=threads,
        overlap_mode=overlap_mode,
    )

    estimated = sweep_threshold(val_curves, val_truth, grid, **options)
    oracle = sweep_threshold(test_curves, test_truth, grid, **options)
    thr = estimated.threshold
    test_at_estimate = event_f_score(
        detect_all(test_curves, thr, offset_mode, min_duration_ratio, overlap_mode), test_truth, matching
    )
    return GapResult(
        estimated_threshold=thr.global_value,
        oracle_threshold=oracle.threshold.global_value,
        estimated_f=test_at_estimate.micro_f,
        oracle_f=oracle.best_f,
    )
