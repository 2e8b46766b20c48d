"""
Tests for quantization-based calibration and segment recombination.
"""

import numpy as np
from django.test import SimpleTestCase

from kws.calib import (
    SegmentLayout,
    apply_calibration,
    calibrate_pair,
    combine_segments,
    cossim_sets,
    gamma,
    kappa,
    nearest_center,
    nearest_centers,
    nu,
)
from kws.exceptions import CoverageError, ParameterError
from kws.fixtures import ToyWorldConfig, make_center_bank
from kws.tensorio import EmbeddingSequence


def unit_sequence(rows, dim, seed=0, label='kw0'):
    rng = np.random.default_rng(seed)
    frames = rng.standard_normal((rows, dim))
    frames /= np.linalg.norm(frames, axis=1, keepdims=True)
    return EmbeddingSequence(frames=frames, hop_seconds=0.01, label=label)


class CalibrationTestCase(SimpleTestCase):

    def setUp(self):
        self.bank = make_center_bank(ToyWorldConfig(n_keywords=2, n_pos=2, n_clusters=2, dim=16))
        self.seq = unit_sequence(1000, 16)

    def test_quantization_is_idempotent(self):
        once = kappa(self.seq, self.bank)
        twice = kappa(once, self.bank)
        np.testing.assert_array_equal(once.frames, twice.frames)
        self.assertEqual(once.label, 'kw0')

    def test_quantized_rows_are_bank_centers(self):
        quantized = kappa(self.seq, self.bank)
        indices, _ = nearest_centers(self.seq.frames, self.bank)
        np.testing.assert_array_equal(quantized.frames, self.bank.centers[indices])

    def test_normalized_norm_is_inverse_of_one_plus_similarity(self):
        _, best = nearest_centers(self.seq.frames, self.bank)
        norms = np.linalg.norm(nu(self.seq, self.bank).frames.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0 / (1.0 + best), atol=1e-6)

    def test_combined_is_the_sum_of_both_steps(self):
        combined = gamma(self.seq, self.bank).frames.astype(np.float64)
        parts = kappa(self.seq, self.bank).frames.astype(np.float64) + nu(self.seq, self.bank).frames
        np.testing.assert_allclose(combined, parts, atol=1e-6)

        query = unit_sequence(1, 16, seed=9).frames[0].astype(np.float64)
        np.testing.assert_allclose(
            combined @ query,
            kappa(self.seq, self.bank).frames @ query + nu(self.seq, self.bank).frames @ query,
            atol=1e-6,
        )

    def test_quantization_contracts_noise(self):
        bank = make_center_bank(ToyWorldConfig())
        center = bank.centers[0].astype(np.float64)
        rng = np.random.default_rng(1)
        for sigma in (0.1, 0.3):
            noisy = center + sigma * rng.standard_normal((500, bank.dim)) / np.sqrt(bank.dim)
            noisy /= np.linalg.norm(noisy, axis=1, keepdims=True)
            seq = EmbeddingSequence(frames=noisy, hop_seconds=0.01)
            raw = seq.frames.astype(np.float64) @ center
            quantized = kappa(seq, bank).frames.astype(np.float64) @ center
            self.assertLessEqual(float(np.var(quantized)), float(np.var(raw)))

    def test_nearest_center_ties_go_to_lowest_index(self):
        center = self.bank.centers[3]
        duplicated = np.vstack([self.bank.centers[:2], center, center])
        indices, similarities = nearest_centers(center[None, :], duplicated)
        self.assertEqual(int(indices[0]), 2)
        self.assertAlmostEqual(float(similarities[0]), 1.0, places=6)

    def test_nearest_center_needs_unit_norm(self):
        match, similarity = nearest_center(self.bank.centers[5], self.bank)
        np.testing.assert_array_equal(match, self.bank.centers[5])
        self.assertAlmostEqual(similarity, 1.0, places=6)
        with self.assertRaises(ParameterError):
            nearest_center(2 * self.bank.centers[5], self.bank)

    def test_dimension_mismatch(self):
        with self.assertRaises(ParameterError):
            kappa(unit_sequence(3, 8), self.bank)

    def test_modes(self):
        self.assertIs(apply_calibration(self.seq, None, 'none'), self.seq)
        with self.assertRaises(ParameterError):
            apply_calibration(self.seq, None, 'combined')
        with self.assertRaises(ParameterError):
            apply_calibration(self.seq, self.bank, 'whiten')

    def test_query_side_only(self):
        tests = [unit_sequence(10, 16, seed=2)]
        queries, untouched = calibrate_pair([self.seq], tests, self.bank, 'quantize', sides='query')
        self.assertIs(untouched[0], tests[0])
        np.testing.assert_array_equal(queries[0].frames, kappa(self.seq, self.bank).frames)

        _, calibrated = calibrate_pair([self.seq], tests, self.bank, 'quantize', sides='both')
        np.testing.assert_array_equal(calibrated[0].frames, kappa(tests[0], self.bank).frames)
        with self.assertRaises(ParameterError):
            calibrate_pair([self.seq], tests, self.bank, 'quantize', sides='test')

    def test_cell_similarity(self):
        cell = self.bank.cell('kw1', 0)
        seq = EmbeddingSequence(frames=np.vstack([cell[0], cell[1]]), hop_seconds=0.01)
        self.assertAlmostEqual(cossim_sets(seq, cell), 1.0, places=6)
        with self.assertRaises(ParameterError):
            cossim_sets(seq, np.empty((0, 16)))


class CombineSegmentsTestCase(SimpleTestCase):

    def setUp(self):
        self.layout = SegmentLayout(segment_length_frames=4, segment_hop_frames=2)
        self.segments = [unit_sequence(4, 6, seed=s) for s in range(3)]

    def test_overlaps_are_averaged_then_normalized(self):
        combined = combine_segments(self.segments, self.layout, total_frames=8)
        self.assertEqual(combined.num_frames, 8)
        np.testing.assert_allclose(np.linalg.norm(combined.frames, axis=1), 1.0, atol=1e-6)

        overlap = (self.segments[0].frames[2].astype(np.float64) + self.segments[1].frames[0]) / 2
        np.testing.assert_allclose(combined.frames[2], overlap / np.linalg.norm(overlap), atol=1e-6)
        np.testing.assert_allclose(combined.frames[0], self.segments[0].frames[0], atol=1e-6)
        np.testing.assert_allclose(combined.frames[7], self.segments[2].frames[3], atol=1e-6)

    def test_uncovered_frame(self):
        with self.assertRaisesMessage(CoverageError, 'Frame 8'):
            combine_segments(self.segments, self.layout, total_frames=10)

    def test_no_segments(self):
        with self.assertRaises(CoverageError):
            combine_segments([], self.layout, total_frames=4)

    def test_hop_longer_than_segment(self):
        with self.assertRaises(ParameterError):
            SegmentLayout(segment_length_frames=4, segment_hop_frames=5)
