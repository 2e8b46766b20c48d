"""
Subsequence DTW over embedding sequences.

Costs are ``1 - <q_i, t_j>``. A path may start at query row 0 in any test
column and must end at the last query row; every step advances both axes.
At each cell the predecessor minimizing the length-normalized cost
``(acc + cost) / (len + 1)`` wins, ties resolved by step order. This
per-position rule is not a global optimum over all paths; ``exact=True``
runs a length-indexed DP that is.
"""

import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from kws.exceptions import ParameterError, TooShortError

logger = logging.getLogger(__name__)

CLAMP_TOLERANCE = 1e-6

AGGREGATE_MAX = 'max'
AGGREGATE_MEAN = 'mean'
AGGREGATES = (AGGREGATE_MAX, AGGREGATE_MEAN)


def default_steps():
    return tuple(tuple(step) for step in settings.KWS['STEP_SIZES'])


def validate_steps(steps):
    steps = tuple((int(di), int(dj)) for di, dj in steps)
    if not steps:
        raise ParameterError("At least one step size is required.")
    if any(di < 1 or dj < 1 for di, dj in steps):
        raise ParameterError(f"Step sizes must advance both axes by at least 1, got {steps}.")
    if len(set(steps)) != len(steps):
        raise ParameterError(f"Duplicate step sizes in {steps}.")
    return steps


@dataclass(frozen=True)
class CostMatrix:
    """Query x test costs with the range they are guaranteed to lie in."""
    values: np.ndarray
    lower_bound: float = 0.0
    upper_bound: float = 2.0

    @property
    def shape(self):
        return self.values.shape


def cost_matrix(query, test, calibrated=False):
    """``1 - <q_i, t_j>`` for every pair of rows.

    For unit-norm inputs values below zero within CLAMP_TOLERANCE are clamped
    and anything lower is an error. Calibrated inputs may exceed unit norm, so
    their costs are only bounded by the declared range.
    """
    if query.dim != test.dim:
        raise ParameterError(f"Query dimension {query.dim} does not match test dimension {test.dim}.")
    q = query.frames.astype(np.float64)
    t = test.frames.astype(np.float64)
    values = 1.0 - q @ t.T
    bound = float(np.max(np.linalg.norm(q, axis=1)) * np.max(np.linalg.norm(t, axis=1)))

    if calibrated:
        return CostMatrix(values=values, lower_bound=1.0 - bound, upper_bound=1.0 + bound)

    lowest = float(values.min())
    if lowest < -CLAMP_TOLERANCE:
        raise ParameterError(
            f"Negative cost {lowest:.3g}: inputs are not unit-norm. Normalize rows or mark them calibrated."
        )
    if lowest < 0.0:
        values = np.maximum(values, 0.0)
    return CostMatrix(values=values, lower_bound=0.0, upper_bound=2.0 + CLAMP_TOLERANCE)


@dataclass(frozen=True)
class Match:
    onset_frame: int
    offset_frame: int
    normalized_cost: float
    path: tuple


class WarpResult:
    """Per test column: best normalized cost of a path ending there, its onset and length."""

    def __init__(self, cost, steps, end_costs, onsets, path_lengths, back, end_layers=None):
        self.cost = cost
        self.steps = steps
        self.end_costs = end_costs
        self.onsets = onsets
        self.path_lengths = path_lengths
        self._back = back
        self._end_layers = end_layers

    @property
    def test_length(self):
        return self.end_costs.shape[0]

    def path(self, j):
        """Backtrack the warp path ending at the last query row in column j."""
        if not np.isfinite(self.end_costs[j]):
            raise ParameterError(f"No warp path ends in test column {j}.")
        i = self._back.shape[0] - 1
        cells = [(i, j)]
        if self._end_layers is None:
            while self._back[i, j] >= 0:
                di, dj = self.steps[self._back[i, j]]
                i, j = i - di, j - dj
                cells.append((i, j))
        else:
            layer = int(self._end_layers[j])
            while self._back[i, j, layer] >= 0:
                di, dj = self.steps[self._back[i, j, layer]]
                i, j, layer = i - di, j - dj, layer - 1
                cells.append((i, j))
        return tuple(reversed(cells))

    @property
    def matches(self):
        """Local minima of the end-cost curve, materialized with their paths."""
        ends = self.end_costs
        found = []
        for j in np.flatnonzero(np.isfinite(ends)):
            left = ends[j - 1] if j > 0 else np.inf
            right = ends[j + 1] if j + 1 < len(ends) else np.inf
            if ends[j] < left and ends[j] <= right:
                found.append(Match(
                    onset_frame=int(self.onsets[j]),
                    offset_frame=int(j),
                    normalized_cost=float(ends[j]),
                    path=self.path(j),
                ))
        return found

    def best_match(self):
        j = int(np.argmin(self.end_costs))
        if not np.isfinite(self.end_costs[j]):
            return None
        return Match(int(self.onsets[j]), j, float(self.end_costs[j]), self.path(j))


def _rule_dp(costs, steps):
    """Per-position normalized DP over a batch of cost matrices (B, Tq, Tt)."""
    batch, tq, tt = costs.shape
    acc = np.full((batch, tq, tt), np.inf)
    length = np.zeros((batch, tq, tt), dtype=np.int64)
    start = np.full((batch, tq, tt), -1, dtype=np.int64)
    back = np.full((batch, tq, tt), -1, dtype=np.int8)

    # Row 0 only starts fresh paths: no step reaches it
    acc[:, 0, :] = costs[:, 0, :]
    length[:, 0, :] = 1
    start[:, 0, :] = np.arange(tt)

    if tq > 1:
        k = len(steps)
        for j in range(tt):
            cand_score = np.full((k, batch, tq - 1), np.inf)
            cand_acc = np.full((k, batch, tq - 1), np.inf)
            cand_len = np.zeros((k, batch, tq - 1), dtype=np.int64)
            cand_start = np.full((k, batch, tq - 1), -1, dtype=np.int64)
            for s, (di, dj) in enumerate(steps):
                if j - dj < 0 or di >= tq:
                    continue
                prev_acc = acc[:, :tq - di, j - dj]
                prev_len = length[:, :tq - di, j - dj]
                total = prev_acc + costs[:, di:, j]
                cand_acc[s, :, di - 1:] = total
                cand_len[s, :, di - 1:] = prev_len + 1
                cand_start[s, :, di - 1:] = start[:, :tq - di, j - dj]
                cand_score[s, :, di - 1:] = total / (prev_len + 1)
            chosen = np.argmin(cand_score, axis=0)[None]
            best = np.take_along_axis(cand_score, chosen, axis=0)[0]
            reachable = np.isfinite(best)
            acc[:, 1:, j] = np.where(reachable, np.take_along_axis(cand_acc, chosen, axis=0)[0], np.inf)
            length[:, 1:, j] = np.where(reachable, np.take_along_axis(cand_len, chosen, axis=0)[0], 0)
            start[:, 1:, j] = np.where(reachable, np.take_along_axis(cand_start, chosen, axis=0)[0], -1)
            back[:, 1:, j] = np.where(reachable, chosen[0], -1)

    with np.errstate(invalid='ignore', divide='ignore'):
        ends = np.where(length[:, -1, :] > 0, acc[:, -1, :] / np.maximum(length[:, -1, :], 1), np.inf)
    return ends, start[:, -1, :], length[:, -1, :], back


def _exact_dp(costs, steps):
    """Length-indexed DP: global minimum of sum/len over all admissible paths."""
    batch, tq, tt = costs.shape
    layers = tq + 1
    acc = np.full((batch, tq, tt, layers), np.inf)
    start = np.full((batch, tq, tt, layers), -1, dtype=np.int64)
    back = np.full((batch, tq, tt, layers), -1, dtype=np.int8)

    acc[:, 0, :, 1] = costs[:, 0, :]
    start[:, 0, :, 1] = np.arange(tt)

    if tq > 1:
        k = len(steps)
        for j in range(tt):
            cand = np.full((k, batch, tq - 1, layers), np.inf)
            cand_start = np.full((k, batch, tq - 1, layers), -1, dtype=np.int64)
            for s, (di, dj) in enumerate(steps):
                if j - dj < 0 or di >= tq:
                    continue
                cand[s, :, di - 1:, 1:] = acc[:, :tq - di, j - dj, :-1] + costs[:, di:, j, None]
                cand_start[s, :, di - 1:, 1:] = start[:, :tq - di, j - dj, :-1]
            chosen = np.argmin(cand, axis=0)[None]
            best = np.take_along_axis(cand, chosen, axis=0)[0]
            reachable = np.isfinite(best)
            acc[:, 1:, j, :] = best
            start[:, 1:, j, :] = np.where(reachable, np.take_along_axis(cand_start, chosen, axis=0)[0], -1)
            back[:, 1:, j, :] = np.where(reachable, chosen[0], -1)

    sizes = np.arange(layers, dtype=np.float64)
    sizes[0] = np.inf
    with np.errstate(invalid='ignore'):
        normalized = acc[:, -1, :, :] / sizes
    normalized[~np.isfinite(acc[:, -1, :, :])] = np.inf
    best_layer = np.argmin(normalized, axis=2)
    ends = np.take_along_axis(normalized, best_layer[..., None], axis=2)[..., 0]
    onsets = np.take_along_axis(start[:, -1, :, :], best_layer[..., None], axis=2)[..., 0]
    lengths = np.where(np.isfinite(ends), best_layer, 0)
    return ends, onsets, lengths, back, best_layer


def _batched(costs, steps, exact):
    if exact:
        return _exact_dp(costs, steps)
    return (*_rule_dp(costs, steps), None)


def subsequence_dtw(cost, steps=None, exact=False):
    """Align the whole query against every end column of the test axis."""
    steps = validate_steps(steps or default_steps())
    values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if not isinstance(cost, CostMatrix):
        cost = CostMatrix(values=values, lower_bound=float(values.min()), upper_bound=float(values.max()))
    if values.ndim != 2 or 0 in values.shape:
        raise ParameterError(f"Cost matrix must be a non-empty 2-D array, got shape {values.shape}.")
    if not np.all(np.isfinite(values)):
        raise ParameterError("Cost matrix contains non-finite values.")

    ends, onsets, lengths, back, layers = _batched(values[None].astype(np.float64), steps, exact)
    if not np.any(np.isfinite(ends[0])):
        raise TooShortError(
            f"A {values.shape[0]}-frame query cannot be aligned within {values.shape[1]} test frames "
            f"using steps {steps}."
        )
    return WarpResult(
        cost=cost,
        steps=steps,
        end_costs=ends[0],
        onsets=onsets[0],
        path_lengths=lengths[0],
        back=back[0],
        end_layers=None if layers is None else layers[0],
    )


def score_curve(result, test_len=None):
    """``1 - cost`` per end column; columns no path ends in score ``-inf``."""
    scores = np.where(np.isfinite(result.end_costs), 1.0 - result.end_costs, -np.inf)
    if test_len is not None and test_len != len(scores):
        raise ParameterError(f"Warp result covers {len(scores)} test frames, expected {test_len}.")
    return scores


@dataclass(frozen=True)
class KeywordScores:
    """Score curve of one keyword over one test recording.

    ``onsets`` and ``template_frames`` describe the winning template at every
    frame; onsets are -1 where no path ends.
    """
    keyword: str
    scores: np.ndarray
    onsets: np.ndarray
    template_frames: np.ndarray
    hop_seconds: float

    def __len__(self):
        return len(self.scores)


def multi_sample_scores(queries, test, steps=None, aggregate=AGGREGATE_MAX, calibrated=False, exact=False):
    """Combine the score curves of several templates of one keyword.

    ``max`` keeps the best template per frame together with its onset;
    ``mean`` averages the curves and keeps the onset of the best template.
    """
    if not queries:
        raise ParameterError("Multi-sample scoring needs at least one query.")
    labels = {q.label for q in queries}
    if len(labels) > 1:
        raise ParameterError(f"Queries of one keyword carry different labels: {sorted(map(str, labels))}.")
    if aggregate not in AGGREGATES:
        raise ParameterError(f"Unknown aggregation '{aggregate}'; expected one of {AGGREGATES}.")
    steps = validate_steps(steps or default_steps())

    tt = test.num_frames
    curves = np.full((len(queries), tt), -np.inf)
    onsets = np.full((len(queries), tt), -1, dtype=np.int64)

    # Templates of equal length share one DP pass
    by_length = {}
    for index, query in enumerate(queries):
        by_length.setdefault(query.num_frames, []).append(index)
    for tq, indices in sorted(by_length.items()):
        costs = np.stack([cost_matrix(queries[i], test, calibrated=calibrated).values for i in indices])
        ends, starts, _, _, _ = _batched(costs, steps, exact)
        for row, i in enumerate(indices):
            reachable = np.isfinite(ends[row])
            curves[i] = np.where(reachable, 1.0 - ends[row], -np.inf)
            onsets[i] = np.where(reachable, starts[row], -1)
        logger.debug(f"Scored {len(indices)} templates of {tq} frames against {tt} test frames")

    winner = np.argmax(curves, axis=0)
    columns = np.arange(tt)
    if aggregate == AGGREGATE_MAX:
        scores = curves[winner, columns]
    else:
        scores = curves.mean(axis=0)
    lengths = np.array([q.num_frames for q in queries])
    return KeywordScores(
        keyword=next(iter(labels)) or '',
        scores=scores,
        onsets=onsets[winner, columns],
        template_frames=lengths[winner],
        hop_seconds=test.hop_seconds,
    )
