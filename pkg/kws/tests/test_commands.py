"""
Management command tests: success paths and the exit code of every error class.
"""

import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from kws.fixtures import ToyWorldConfig, make_world, write_world
from kws.models import ExperimentRun
from kws.tensorio import (
    AudioBuffer,
    EmbeddingSequence,
    read_center_bank,
    read_embedding_sequence,
    read_wav,
    write_embedding_sequence,
    write_wav,
)


class CommandTestCase(TestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._tmp = tempfile.TemporaryDirectory()
        world = make_world(ToyWorldConfig(files_per_split=2, keywords_per_file=1, shots=2))
        cls.root = write_world(world, Path(cls._tmp.name) / 'world')

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        super().tearDownClass()

    def setUp(self):
        self._out = tempfile.TemporaryDirectory()
        self.out = Path(self._out.name)

    def tearDown(self):
        self._out.cleanup()

    def call(self, *args, **options):
        stdout = StringIO()
        call_command(*args, stdout=stdout, stderr=StringIO(), **options)
        return stdout.getvalue()

    def assertExitCode(self, code, *args, **options):
        with self.assertRaises(CommandError) as raised:
            self.call(*args, **options)
        self.assertEqual(raised.exception.returncode, code)

    def tone(self, name, amplitude=0.5, seconds=1.0):
        t = np.arange(int(16000 * seconds)) / 16000
        rng = np.random.default_rng(0)
        samples = amplitude * np.sin(2 * np.pi * 440 * t) + 0.1 * amplitude * rng.standard_normal(len(t))
        path = self.out / name
        write_wav(AudioBuffer(samples, 16000), path)
        return path


class FixtureCommandTestCase(CommandTestCase):

    def test_make_fixtures(self):
        output = self.call('make_fixtures', str(self.out / 'toy'), seed=3, shots=2, files_per_split=1)
        self.assertIn('Wrote 3 keywords x 2 templates', output)
        self.assertTrue((self.out / 'toy' / 'bank.cbnk').is_file())
        self.assertEqual(len(list((self.out / 'toy' / 'queries' / 'kw0').glob('*.eseq'))), 2)

    def test_invalid_world(self):
        self.assertExitCode(2, 'make_fixtures', str(self.out / 'toy'), dim=0)


class AudioCommandTestCase(CommandTestCase):

    def test_features(self):
        path = self.tone('speech.wav')
        output = self.call('features', str(path), out_dir=str(self.out / 'feat'))
        self.assertIn('97 x 13 hfcc', output)
        seq = read_embedding_sequence(self.out / 'feat' / 'speech.eseq')
        np.testing.assert_allclose(np.linalg.norm(seq.frames, axis=1), 1.0, atol=1e-5)

        self.call('features', str(path), out_dir=str(self.out / 'raw'), kind='log_mel', raw=True)
        self.assertEqual(read_embedding_sequence(self.out / 'raw' / 'speech.eseq').label, 'log_mel')

    def test_silent_recording_is_degenerate(self):
        path = self.out / 'silence.wav'
        write_wav(AudioBuffer(np.zeros(16000), 16000), path)
        self.assertExitCode(4, 'features', str(path), out_dir=str(self.out / 'feat'))

    def test_too_short_recording(self):
        path = self.tone('blip.wav', seconds=0.02)
        self.assertExitCode(4, 'features', str(path), out_dir=str(self.out / 'feat'))

    def test_unreadable_wav(self):
        path = self.out / 'broken.wav'
        path.write_bytes(b'RIFF0000WAVEjunk')
        self.assertExitCode(3, 'features', str(path), out_dir=str(self.out / 'feat'))

    def test_simulate_channel(self):
        path = self.tone('speech.wav')
        self.call('simulate_channel', str(path), out_dir=str(self.out / 'noisy'), snrs=['6'], clean=True, seed=1,
                  delay_ms=2.0, doppler_hz=1.0)
        clean = read_wav(self.out / 'noisy' / 'clean' / 'speech.wav')
        noisy = read_wav(self.out / 'noisy' / 'snr6' / 'speech.wav')
        self.assertEqual(len(clean.samples), 16000)
        self.assertFalse(np.allclose(clean.samples, noisy.samples))

    def test_simulate_channel_bad_snr(self):
        path = self.tone('speech.wav')
        self.assertExitCode(2, 'simulate_channel', str(path), out_dir=str(self.out / 'noisy'), snrs=['loud'])

    def test_simulate_channel_rejects_zero_doppler(self):
        path = self.tone('speech.wav')
        self.assertExitCode(2, 'simulate_channel', str(path), out_dir=str(self.out / 'noisy'), snrs=['6'], doppler_hz=0.0)


class CalibrateCommandTestCase(CommandTestCase):

    def test_calibrate_files(self):
        template = self.root / 'queries' / 'kw0' / 'kw0_00.eseq'
        self.call('calibrate', str(template), bank=str(self.root / 'bank.cbnk'), mode='quantize',
                  out_dir=str(self.out / 'cal'))
        calibrated = read_embedding_sequence(self.out / 'cal' / 'kw0_00.eseq')
        np.testing.assert_array_equal(calibrated.frames, read_embedding_sequence(template).frames)

    def test_query_side_only(self):
        bank = read_center_bank(self.root / 'bank.cbnk')
        rng = np.random.default_rng(4)
        frames = rng.standard_normal((20, bank.dim))
        frames /= np.linalg.norm(frames, axis=1, keepdims=True)
        recording = self.out / 'rec.eseq'
        write_embedding_sequence(EmbeddingSequence(frames=frames, hop_seconds=0.016), recording)
        template = str(self.root / 'queries' / 'kw0' / 'kw0_00.eseq')

        self.call('calibrate', str(recording), bank=str(self.root / 'bank.cbnk'), mode='quantize',
                  queries=[template], sides='query', out_dir=str(self.out / 'query'))
        passed = read_embedding_sequence(self.out / 'query' / 'rec.eseq')
        np.testing.assert_array_equal(passed.frames, read_embedding_sequence(recording).frames)
        self.assertTrue((self.out / 'query' / 'queries' / 'kw0_00.eseq').is_file())

        self.call('calibrate', str(recording), bank=str(self.root / 'bank.cbnk'), mode='quantize',
                  queries=[template], sides='both', out_dir=str(self.out / 'both'))
        quantized = read_embedding_sequence(self.out / 'both' / 'rec.eseq')
        self.assertFalse(np.array_equal(quantized.frames, passed.frames))

    def test_combine_segments(self):
        segments = [str(self.root / 'queries' / 'kw0' / f"kw0_0{n}.eseq") for n in range(2)]
        output = self.out / 'merged.eseq'
        self.call('calibrate', *segments, bank=str(self.root / 'bank.cbnk'), mode='combined',
                  combine_hop=8, output=str(output))
        self.assertEqual(read_embedding_sequence(output).num_frames, 24)

    def test_combine_needs_output(self):
        template = str(self.root / 'queries' / 'kw0' / 'kw0_00.eseq')
        self.assertExitCode(2, 'calibrate', template, bank=str(self.root / 'bank.cbnk'), combine_hop=8)

    def test_uncovered_frames(self):
        template = str(self.root / 'queries' / 'kw0' / 'kw0_00.eseq')
        self.assertExitCode(4, 'calibrate', template, bank=str(self.root / 'bank.cbnk'), combine_hop=8,
                            total_frames=40, output=str(self.out / 'merged.eseq'))

    def test_bad_bank(self):
        bank = self.out / 'bank.cbnk'
        bank.write_bytes(b'NOPE' + b'\0' * 16)
        template = str(self.root / 'queries' / 'kw0' / 'kw0_00.eseq')
        self.assertExitCode(3, 'calibrate', template, bank=str(bank), out_dir=str(self.out / 'cal'))


class ScoringCommandTestCase(CommandTestCase):

    def scoring_options(self, **extra):
        options = {
            'queries': str(self.root / 'queries'),
            'recordings': str(self.root / 'validation'),
            'bank': str(self.root / 'bank.cbnk'),
            'mode': 'combined',
        }
        options.update(extra)
        return options

    def test_sweep_detect_evaluate(self):
        threshold_file = self.out / 'threshold.json'
        self.call('sweep_threshold', annotations=str(self.root / 'validation.tsv'), out=str(threshold_file),
                  **self.scoring_options())
        swept = json.loads(threshold_file.read_text())
        self.assertEqual(swept['report']['micro_f'], 1.0)
        self.assertEqual(len(swept['curve']), 101)

        detections = self.out / 'detections.tsv'
        self.call('detect', threshold_file=str(threshold_file), out=str(detections),
                  dump_costs=str(self.out / 'costs'), **self.scoring_options())
        self.assertTrue((self.out / 'costs' / 'validation_000__kw1_01.f32').is_file())
        self.assertTrue((self.out / 'costs' / 'validation_000__kw1_01.f32.json').is_file())

        report = self.out / 'report.json'
        output = self.call('evaluate', str(detections), str(self.root / 'validation.tsv'), out=str(report))
        self.assertIn('micro-F 1.0000', output)
        self.assertEqual(json.loads(report.read_text())['fn'], 0)

    def test_detect_needs_a_threshold(self):
        self.assertExitCode(2, 'detect', out=str(self.out / 'd.tsv'), **self.scoring_options())

    def test_calibration_needs_a_bank(self):
        self.assertExitCode(2, 'detect', threshold=0.5, out=str(self.out / 'd.tsv'),
                            **self.scoring_options(bank=None))

    def test_unknown_annotation_keyword(self):
        annotations = self.out / 'other.tsv'
        annotations.write_text('validation_000\t0.5\t1.0\tkw9\n')
        self.assertExitCode(3, 'sweep_threshold', annotations=str(annotations), out=str(self.out / 't.json'),
                            **self.scoring_options())

    def test_malformed_detections(self):
        detections = self.out / 'bad.tsv'
        detections.write_text('validation_000\t0.5\n')
        self.assertExitCode(3, 'evaluate', str(detections), str(self.root / 'validation.tsv'))


class PipelineCommandTestCase(CommandTestCase):

    def test_end_to_end_and_rerun_from_manifest(self):
        out = self.out / 'run'
        output = self.call('end_to_end', root=str(self.root), out=str(out), test=str(self.root / 'validation'),
                           test_annotations=str(self.root / 'validation.tsv'), modes=['none'])
        self.assertIn('100.0 ± 0.0', output)

        rerun = self.out / 'rerun'
        self.call('end_to_end', config=str(out / 'manifest.json'), out=str(rerun))
        self.assertEqual(
            (out / 'all' / 'none' / 'test_report.json').read_text(),
            (rerun / 'all' / 'none' / 'test_report.json').read_text(),
        )
        self.assertEqual(ExperimentRun.objects.count(), 2)

    def test_manifest_with_other_constants_is_refused(self):
        out = self.out / 'run'
        self.call('end_to_end', root=str(self.root), out=str(out), test=str(self.root / 'validation'),
                  test_annotations=str(self.root / 'validation.tsv'), modes=['none'], overlap_mode='split')
        manifest = json.loads((out / 'manifest.json').read_text())
        self.assertEqual(manifest['config']['overlap_mode'], 'split')
        manifest['constants']['HIGHPASS_HZ'] = 100.0
        edited = self.out / 'edited.json'
        edited.write_text(json.dumps(manifest))
        self.assertExitCode(2, 'end_to_end', config=str(edited), out=str(self.out / 'rerun'))

    def test_missing_output(self):
        self.assertExitCode(2, 'end_to_end', root=str(self.root))

    def test_config_file_must_be_json(self):
        config = self.out / 'config.json'
        config.write_text('{not json')
        self.assertExitCode(2, 'end_to_end', config=str(config))

    def test_gap_analysis(self):
        out = self.out / 'gap'
        output = self.call('gap_analysis', root=str(self.root), out=str(out), ablation=True, json=True)
        self.assertIn('Wrote gap.tsv with 4 rows', output)
        self.assertTrue((out / 'gap.json').is_file())
