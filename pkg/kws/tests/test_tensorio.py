"""
Tests for the binary containers, WAV and TSV I/O and the core domain types.
"""

import json
import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from kws.exceptions import AnnotationError, DegenerateInputError, FormatError, UnsupportedFormatError
from kws.tensorio import (
    AnnotationEvent,
    AnnotationSet,
    AudioBuffer,
    CenterBank,
    DetectionEvent,
    EmbeddingSequence,
    normalize_rows,
    read_annotations,
    read_center_bank,
    read_detections,
    read_embedding_sequence,
    read_wav,
    write_annotations,
    write_center_bank,
    write_cost_matrix,
    write_detections,
    write_embedding_sequence,
    write_wav,
)


def unit_rows(rng, count, dim):
    rows = rng.standard_normal((count, dim))
    return (rows / np.linalg.norm(rows, axis=1, keepdims=True)).astype(np.float32)


class TempDirTestCase(SimpleTestCase):
    def setUp(self):
        """Create a scratch directory for written files."""
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        """Remove the scratch directory."""
        self._tmp.cleanup()


class EmbeddingSequenceTestCase(TempDirTestCase):
    """ESEQ container and the sequence type."""

    def test_write_then_read_is_bit_exact(self):
        rng = np.random.default_rng(0)
        seq = EmbeddingSequence(frames=unit_rows(rng, 7, 5), hop_seconds=0.016, label='kw0')
        write_embedding_sequence(seq, self.tmp / 'a.eseq')
        back = read_embedding_sequence(self.tmp / 'a.eseq')
        self.assertEqual(back.frames.tobytes(), seq.frames.tobytes())
        self.assertEqual(back.hop_seconds, 0.016)
        self.assertEqual(back.label, 'kw0')

    def test_header_layout(self):
        seq = EmbeddingSequence(frames=np.ones((2, 3)), hop_seconds=0.01)
        write_embedding_sequence(seq, self.tmp / 'a.eseq')
        data = (self.tmp / 'a.eseq').read_bytes()
        self.assertEqual(data[:4], b'ESEQ')
        (length,) = struct.unpack('<I', data[4:8])
        header = json.loads(data[8:8 + length])
        self.assertEqual(header, {'t': 2, 'd': 3, 'hop_seconds': 0.01, 'label': None})
        self.assertEqual(len(data), 8 + length + 2 * 3 * 4)

    def test_bad_magic_is_a_format_error(self):
        (self.tmp / 'bad.eseq').write_bytes(b'NOPE' + b'\0' * 16)
        with self.assertRaises(FormatError):
            read_embedding_sequence(self.tmp / 'bad.eseq')

    def test_truncated_payload_is_a_format_error(self):
        seq = EmbeddingSequence(frames=np.ones((4, 3)), hop_seconds=0.01)
        write_embedding_sequence(seq, self.tmp / 'a.eseq')
        data = (self.tmp / 'a.eseq').read_bytes()
        (self.tmp / 'short.eseq').write_bytes(data[:-4])
        with self.assertRaises(FormatError):
            read_embedding_sequence(self.tmp / 'short.eseq')

    def test_header_length_past_end_of_file(self):
        (self.tmp / 'a.eseq').write_bytes(b'ESEQ' + struct.pack('<I', 1000) + b'{}')
        with self.assertRaises(FormatError):
            read_embedding_sequence(self.tmp / 'a.eseq')

    def test_frames_are_read_only(self):
        seq = EmbeddingSequence(frames=np.ones((2, 2)), hop_seconds=0.01)
        with self.assertRaises(ValueError):
            seq.frames[0, 0] = 5.0

    def test_non_finite_frames_rejected(self):
        with self.assertRaises(DegenerateInputError):
            EmbeddingSequence(frames=np.array([[np.nan, 1.0]]), hop_seconds=0.01)

    def test_normalize_rows(self):
        seq = EmbeddingSequence(frames=np.array([[3.0, 4.0], [0.0, 2.0]]), hop_seconds=0.01)
        np.testing.assert_allclose(normalize_rows(seq).frames, [[0.6, 0.8], [0.0, 1.0]], atol=1e-7)

    def test_normalize_zero_row_names_the_row(self):
        seq = EmbeddingSequence(frames=np.array([[1.0, 0.0], [0.0, 0.0]]), hop_seconds=0.01)
        with self.assertRaisesMessage(DegenerateInputError, 'row 1'):
            normalize_rows(seq)


class CenterBankTestCase(TempDirTestCase):
    """CBNK container, cell indexing and re-normalization on load."""

    def make_bank(self, n_kw=2, n_pos=3, n_c=2, dim=8, seed=0):
        rng = np.random.default_rng(seed)
        return CenterBank(
            centers=unit_rows(rng, n_kw * n_pos * n_c, dim),
            n_kw=n_kw,
            n_pos=n_pos,
            n_c=n_c,
            keyword_names=tuple(f"kw{k}" for k in range(n_kw)),
        )

    def test_unit_rows_survive_bit_exactly(self):
        bank = self.make_bank()
        write_center_bank(bank, self.tmp / 'b.cbnk')
        back = read_center_bank(self.tmp / 'b.cbnk')
        self.assertEqual(back.centers.tobytes(), bank.centers.tobytes())
        self.assertEqual(back.keyword_names, ('kw0', 'kw1'))
        self.assertEqual(back.renormalized_rows, ())

    def test_off_unit_rows_are_renormalized_and_reported(self):
        bank = self.make_bank()
        centers = np.array(bank.centers)
        centers[3] *= 2.0
        skewed = CenterBank(centers, bank.n_kw, bank.n_pos, bank.n_c, bank.keyword_names)
        write_center_bank(skewed, self.tmp / 'b.cbnk')
        with self.assertLogs('kws.tensorio', level='WARNING'):
            back = read_center_bank(self.tmp / 'b.cbnk')
        self.assertAlmostEqual(float(np.linalg.norm(back.centers[3])), 1.0, places=6)
        self.assertEqual(back.renormalized_rows, (3,))
        self.assertEqual(back.centers[0].tobytes(), bank.centers[0].tobytes())

    def test_cell_layout_is_keyword_major(self):
        bank = self.make_bank(n_kw=2, n_pos=3, n_c=2)
        np.testing.assert_array_equal(bank.cell_indices(1, 2), [10, 11])
        np.testing.assert_array_equal(bank.cell_indices('kw0', 1), [2, 3])
        self.assertEqual(bank.index()[(1, 0)], (6, 7))
        np.testing.assert_array_equal(bank.cell('kw1', 2), bank.centers[10:12])

    def test_wrong_payload_size_is_a_format_error(self):
        bank = self.make_bank()
        write_center_bank(bank, self.tmp / 'b.cbnk')
        data = (self.tmp / 'b.cbnk').read_bytes()
        (self.tmp / 'short.cbnk').write_bytes(data[:-8 * 4])
        with self.assertRaises(FormatError):
            read_center_bank(self.tmp / 'short.cbnk')

    def test_keyword_name_count_must_match(self):
        with self.assertRaises(FormatError):
            CenterBank(np.eye(4, dtype=np.float32), n_kw=2, n_pos=1, n_c=2, keyword_names=('only',))

    def test_zero_center_is_a_format_error(self):
        bank = self.make_bank()
        centers = np.array(bank.centers)
        centers[0] = 0.0
        write_center_bank(CenterBank(centers, 2, 3, 2, bank.keyword_names), self.tmp / 'b.cbnk')
        with self.assertRaises(FormatError):
            read_center_bank(self.tmp / 'b.cbnk')


class WavTestCase(TempDirTestCase):
    """WAV reading and writing."""

    def test_float_wav_round_trip(self):
        samples = 0.5 * np.sin(np.linspace(0, 20, 1600))
        write_wav(AudioBuffer(samples, 16000), self.tmp / 'a.wav', subtype='FLOAT')
        back = read_wav(self.tmp / 'a.wav')
        self.assertEqual(back.sample_rate_hz, 16000)
        np.testing.assert_allclose(back.samples, samples, atol=1e-7)

    def test_pcm16_write_clips(self):
        write_wav(AudioBuffer(np.array([2.0, -2.0, 0.25] * 100), 8000), self.tmp / 'a.wav')
        back = read_wav(self.tmp / 'a.wav')
        self.assertLessEqual(float(np.max(np.abs(back.samples))), 1.0)
        self.assertAlmostEqual(float(back.samples[2]), 0.25, places=3)

    def test_stereo_is_averaged(self):
        import soundfile as sf
        stereo = np.stack([np.full(100, 0.5), np.full(100, -0.25)], axis=1)
        sf.write(str(self.tmp / 's.wav'), stereo, 16000, subtype='FLOAT')
        np.testing.assert_allclose(read_wav(self.tmp / 's.wav').samples, 0.125, atol=1e-7)

    def test_garbage_is_a_format_error(self):
        (self.tmp / 'x.wav').write_bytes(b'definitely not audio')
        with self.assertRaises(FormatError):
            read_wav(self.tmp / 'x.wav')

    def test_unsupported_codec(self):
        import soundfile as sf
        sf.write(str(self.tmp / 'a.wav'), np.zeros(100), 16000, subtype='PCM_24')
        with self.assertRaises(UnsupportedFormatError):
            read_wav(self.tmp / 'a.wav')

    def test_unsupported_sample_rate(self):
        with self.assertRaises(UnsupportedFormatError):
            AudioBuffer(np.zeros(10), 11025)


class TableTestCase(TempDirTestCase):
    """Annotation and detection TSV files."""

    def test_annotations_with_and_without_header(self):
        events = AnnotationSet([
            AnnotationEvent('f1', 'hello', 0.5, 1.0),
            AnnotationEvent('f2', 'world', 1.25, 2.0),
        ])
        write_annotations(events, self.tmp / 'h.tsv')
        write_annotations(events, self.tmp / 'n.tsv', header=False)
        for name in ('h.tsv', 'n.tsv'):
            back = read_annotations(self.tmp / name)
            self.assertEqual(list(back), list(events))
        self.assertEqual(back.file_ids, ['f1', 'f2'])
        self.assertEqual(back.keywords, ['hello', 'world'])

    def test_empty_annotation_file(self):
        (self.tmp / 'e.tsv').write_text('')
        self.assertEqual(len(read_annotations(self.tmp / 'e.tsv')), 0)

    def test_non_numeric_onset_is_a_format_error(self):
        (self.tmp / 'bad.tsv').write_text('file_id\tonset\toffset\tkeyword\nf1\t0.1\t0.5\tkw\nf1\tsoon\t0.9\tkw\n')
        with self.assertRaises(FormatError):
            read_annotations(self.tmp / 'bad.tsv')

    def test_onset_after_offset_is_an_annotation_error(self):
        (self.tmp / 'bad.tsv').write_text('f1\t0.9\t0.5\tkw\n')
        with self.assertRaises(AnnotationError):
            read_annotations(self.tmp / 'bad.tsv')

    def test_unknown_keyword_check(self):
        events = AnnotationSet([AnnotationEvent('f', 'kw9', 0.0, 1.0), AnnotationEvent('f', '_unknown', 2.0, 3.0)])
        with self.assertRaisesMessage(AnnotationError, 'kw9'):
            events.check_keywords(['kw0', 'kw1'])
        AnnotationSet([AnnotationEvent('f', '_unknown', 2.0, 3.0)]).check_keywords(['kw0'])

    def test_detections_round_trip(self):
        detections = [DetectionEvent('f1', 'kw0', 0.128, 0.384, 0.93)]
        write_detections(detections, self.tmp / 'd.tsv')
        back = read_detections(self.tmp / 'd.tsv')
        self.assertEqual(len(back), 1)
        self.assertAlmostEqual(back[0].onset_seconds, 0.128)
        self.assertAlmostEqual(back[0].score, 0.93)

    def test_detections_keep_full_precision(self):
        detections = [
            DetectionEvent('f1', 'kw0', 0.1 + 0.2, 1 / 3 + 1, 2 / 3, template_seconds=0.256),
            DetectionEvent('f2', 'kw1', 1e-7, 0.016 * 7, 0.1234567891234, template_seconds=0.0),
        ]
        write_detections(detections, self.tmp / 'd.tsv')
        self.assertEqual(read_detections(self.tmp / 'd.tsv'), detections)

    def test_detections_without_template_column(self):
        (self.tmp / 'd.tsv').write_text('f1\t0.5\t1.0\tkw0\t0.9\n')
        event, = read_detections(self.tmp / 'd.tsv')
        self.assertEqual(event.template_seconds, 0.0)
        self.assertEqual(event.score, 0.9)

    def test_cost_matrix_dump_has_sidecar(self):
        write_cost_matrix(np.arange(6).reshape(2, 3), self.tmp / 'c.f32', keyword='kw0')
        sidecar = json.loads((self.tmp / 'c.f32.json').read_text())
        self.assertEqual(sidecar['shape'], [2, 3])
        self.assertEqual(sidecar['keyword'], 'kw0')
        values = np.fromfile(self.tmp / 'c.f32', dtype='<f4').reshape(2, 3)
        np.testing.assert_array_equal(values, np.arange(6).reshape(2, 3))
