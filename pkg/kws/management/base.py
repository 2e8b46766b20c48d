"""
Shared plumbing of the kws management commands: error to exit-code mapping,
the config file plus flag handling of the pipeline commands and the
scoring options of detect and sweep_threshold.
"""

import argparse
import json
import logging
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from kws.calib import CALIBRATION_MODES
from kws.detect import OFFSET_MODES, OVERLAP_MODES, SWEEP_MODES
from kws.exceptions import ConfigurationError, exit_code_for
from kws.forms import FEATURE_CHOICES, PipelineConfigForm
from kws.pipeline import check_constants, read_recordings, read_templates, score_split
from kws.tensorio import read_center_bank

logger = logging.getLogger(__name__)

# Exit code for unreadable input files
IO_EXIT_CODE = 3


class KwsCommand(BaseCommand):
    """Runs ``execute_command`` and turns domain errors into exit codes."""

    def handle(self, *args, **options):
        try:
            return self.execute_command(*args, **options)
        except ValidationError as e:
            message = '; '.join(e.messages)
            logger.error(f"{self.name()} failed: {message}")
            raise CommandError(message, returncode=exit_code_for(e))
        except OSError as e:
            logger.error(f"{self.name()} failed: {e}")
            raise CommandError(str(e), returncode=IO_EXIT_CODE)

    def execute_command(self, *args, **options):
        raise NotImplementedError('subclasses of KwsCommand must provide an execute_command() method')

    def name(self):
        return self.__class__.__module__.rsplit('.', 1)[-1]

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))


def _json_list(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise argparse.ArgumentTypeError(f"cannot parse '{text}' as JSON ({e})")


class PipelineCommand(KwsCommand):
    """A command configured by a JSON file plus flag overrides, validated by PipelineConfigForm."""

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON config file; a run manifest works too')
        parser.add_argument('--root', help='Data root with queries/, validation/, test/, *.tsv and bank.cbnk')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--queries')
        parser.add_argument('--validation')
        parser.add_argument('--test')
        parser.add_argument('--validation-annotations')
        parser.add_argument('--test-annotations')
        parser.add_argument('--bank')
        parser.add_argument('--mode', dest='modes', action='append', choices=CALIBRATION_MODES,
                            help='Calibration mode; repeat for several')
        parser.add_argument('--ablation', action='store_true', default=None, help='Run all four calibration modes')
        parser.add_argument('--sides', choices=['both', 'query'])
        parser.add_argument('--steps', type=_json_list, help='JSON list of [di, dj] step sizes')
        parser.add_argument('--aggregate', choices=['max', 'mean'])
        parser.add_argument('--exact', action='store_true', default=None, help='Globally optimal DTW normalization')
        parser.add_argument('--collar', type=float)
        parser.add_argument('--offset-ratio', type=float)
        parser.add_argument('--grid', type=_json_list, help='JSON list of thresholds')
        parser.add_argument('--grid-points', type=int)
        parser.add_argument('--sweep-mode', choices=SWEEP_MODES)
        parser.add_argument('--offset-mode', choices=OFFSET_MODES)
        parser.add_argument('--overlap-mode', choices=OVERLAP_MODES)
        parser.add_argument('--min-duration-ratio', type=float)
        parser.add_argument('--snr', dest='snrs', action='append', help="SNR in dB or 'clean'; repeat for several")
        parser.add_argument('--seed', type=int)
        parser.add_argument('--trials', type=int)
        parser.add_argument('--features', choices=[kind for kind, _ in FEATURE_CHOICES])
        parser.add_argument('--delay', type=float, help='Differential delay in seconds')
        parser.add_argument('--doppler', type=float, help='Doppler spread in Hz')
        parser.add_argument('--paths', type=int, help='Number of propagation paths')
        parser.add_argument('--highpass', type=float, help='High-pass cutoff in Hz of audio inputs')
        parser.add_argument('--threads', type=int)

    def load_config(self, options):
        data = {}
        if options.get('config'):
            path = Path(options['config'])
            try:
                data = json.loads(path.read_text())
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{path}: not valid JSON ({e}).")
            if not isinstance(data, dict):
                raise ConfigurationError(f"{path}: the config must be a JSON object.")
            if isinstance(data.get('constants'), dict):
                check_constants(data['constants'])
            data = dict(data.get('config', data))
        for name in PipelineConfigForm.base_fields:
            if options.get(name) is not None:
                data[name] = options[name]
        data = {key: str(value) if isinstance(value, Path) else value for key, value in data.items()}

        form = PipelineConfigForm(data=data)
        if not form.is_valid():
            errors = '; '.join(f"{field}: {' '.join(messages)}" for field, messages in form.errors.items())
            raise ConfigurationError(f"Invalid pipeline configuration: {errors}")
        return form.to_config()


class ScoringCommand(KwsCommand):
    """A command that scores one directory of recordings against keyword templates."""

    def add_arguments(self, parser):
        parser.add_argument('--queries', required=True, help='Directory with one subdirectory of templates per keyword')
        parser.add_argument('--recordings', required=True, help='Directory of ESEQ or WAV recordings')
        parser.add_argument('--bank', help='Center bank (CBNK), required for calibration')
        parser.add_argument('--mode', choices=CALIBRATION_MODES, default='none')
        parser.add_argument('--sides', choices=['both', 'query'], default='both')
        parser.add_argument('--steps', type=_json_list, help='JSON list of [di, dj] step sizes')
        parser.add_argument('--aggregate', choices=['max', 'mean'], default='max')
        parser.add_argument('--exact', action='store_true', help='Globally optimal DTW normalization')
        parser.add_argument('--features', choices=[kind for kind, _ in FEATURE_CHOICES], default='hfcc',
                            help='Features of WAV inputs')
        parser.add_argument('--offset-mode', choices=OFFSET_MODES)
        parser.add_argument('--overlap-mode', choices=OVERLAP_MODES)
        parser.add_argument('--min-duration-ratio', type=float)

    def load_bank(self, options):
        if options['mode'] == 'none':
            return None
        if not options['bank']:
            raise ConfigurationError(f"Calibration mode '{options['mode']}' needs --bank.")
        return read_center_bank(options['bank'])

    def score(self, options):
        """Return ``(templates, recordings, bank, curves)``."""
        bank = self.load_bank(options)
        templates = read_templates(options['queries'], options['features'])
        recordings = read_recordings(options['recordings'], options['features'])
        curves = score_split(
            templates, recordings, bank, options['mode'], options['sides'], options['steps'],
            options['aggregate'], options['exact'],
        )
        return templates, recordings, bank, curves
