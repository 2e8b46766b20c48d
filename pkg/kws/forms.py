from pathlib import Path

from django import forms
from django.conf import settings
from django.core.exceptions import ValidationError

from kws.calib import CALIBRATION_MODE_CHOICES, CALIBRATION_MODES, MODE_COMBINED, SIDES_BOTH, SIDES_CHOICES
from kws.detect import OFFSET_MODES, OVERLAP_MODES, SWEEP_GLOBAL, SWEEP_MODES
from kws.dtw import AGGREGATE_MAX, AGGREGATES, validate_steps
from kws.pipeline import PipelineConfig, parse_snr

FEATURE_CHOICES = [
    ('hfcc', 'HFCC baseline'),
    ('log_mel', 'Standardized log-mel spectrogram'),
]

PATH_FIELDS = ('queries', 'validation', 'test', 'validation_annotations', 'test_annotations', 'bank')

# Where each input lives below a data root
ROOT_LAYOUT = {
    'queries': 'queries',
    'validation': 'validation',
    'test': 'test',
    'validation_annotations': 'validation.tsv',
    'test_annotations': 'test.tsv',
    'bank': 'bank.cbnk',
}


def _choices(values):
    return [(value, value) for value in values]


class PipelineConfigForm(forms.Form):
    """Validates a merged pipeline configuration (config file plus command-line flags)."""
    root = forms.CharField(required=False, help_text="Data root laid out as queries/, validation/, test/, *.tsv, bank.cbnk")
    queries = forms.CharField(required=False)
    validation = forms.CharField(required=False)
    test = forms.CharField(required=False)
    validation_annotations = forms.CharField(required=False)
    test_annotations = forms.CharField(required=False)
    bank = forms.CharField(required=False)
    out = forms.CharField(help_text="Output directory")

    modes = forms.MultipleChoiceField(choices=CALIBRATION_MODE_CHOICES, required=False)
    ablation = forms.BooleanField(required=False, help_text="Run all four calibration modes")
    sides = forms.ChoiceField(choices=SIDES_CHOICES, required=False)
    steps = forms.JSONField(required=False)
    aggregate = forms.ChoiceField(choices=_choices(AGGREGATES), required=False)
    exact = forms.BooleanField(required=False)

    collar = forms.FloatField(min_value=0, required=False)
    offset_ratio = forms.FloatField(min_value=0, required=False)
    grid = forms.JSONField(required=False)
    grid_points = forms.IntegerField(min_value=2, required=False)
    sweep_mode = forms.ChoiceField(choices=_choices(SWEEP_MODES), required=False)
    offset_mode = forms.ChoiceField(choices=_choices(OFFSET_MODES), required=False)
    overlap_mode = forms.ChoiceField(choices=_choices(OVERLAP_MODES), required=False)
    min_duration_ratio = forms.FloatField(min_value=0, required=False)

    snrs = forms.JSONField(required=False)
    seed = forms.IntegerField(min_value=0, required=False)
    trials = forms.IntegerField(min_value=1, required=False)
    features = forms.ChoiceField(choices=FEATURE_CHOICES, required=False)
    highpass = forms.FloatField(required=False)
    delay = forms.FloatField(min_value=0, required=False)
    doppler = forms.FloatField(required=False)
    paths = forms.IntegerField(min_value=1, required=False)
    threads = forms.IntegerField(min_value=1, required=False)

    @staticmethod
    def defaults():
        kws = settings.KWS
        return {
            'modes': [MODE_COMBINED],
            'sides': SIDES_BOTH,
            'steps': [list(step) for step in kws['STEP_SIZES']],
            'aggregate': AGGREGATE_MAX,
            'collar': kws['COLLAR_SECONDS'],
            'offset_ratio': kws['OFFSET_RATIO'],
            'grid_points': kws['GRID_POINTS'],
            'sweep_mode': SWEEP_GLOBAL,
            'offset_mode': kws['OFFSET_MODE'],
            'overlap_mode': kws['OVERLAP_MODE'],
            'min_duration_ratio': kws['MIN_DURATION_RATIO'],
            'seed': 0,
            'trials': 1,
            'features': 'hfcc',
            'highpass': kws['HIGHPASS_HZ'],
            'delay': kws['CHANNEL_DELAY_SECONDS'],
            'doppler': kws['CHANNEL_DOPPLER_HZ'],
            'paths': kws['CHANNEL_PATHS'],
            'threads': kws['THREADS'],
        }

    def clean(self):
        cleaned_data = super().clean()
        for name, value in self.defaults().items():
            if cleaned_data.get(name) in (None, '', []):
                cleaned_data[name] = value
        if cleaned_data.get('ablation'):
            cleaned_data['modes'] = list(CALIBRATION_MODES)

        root = cleaned_data.get('root')
        for name in PATH_FIELDS:
            if not cleaned_data.get(name) and root:
                candidate = Path(root) / ROOT_LAYOUT[name]
                if name != 'bank' or candidate.exists():
                    cleaned_data[name] = str(candidate)
            if name == 'bank' and not cleaned_data.get(name):
                cleaned_data[name] = None
                continue
            if not cleaned_data.get(name):
                self.add_error(name, ValidationError(f"'{name}' is required when no data root is given."))
            elif not Path(cleaned_data[name]).exists():
                self.add_error(name, ValidationError(f"Path {cleaned_data[name]} does not exist."))

        if cleaned_data.get('highpass') is not None and not 0 < cleaned_data['highpass'] < settings.KWS['SAMPLE_RATE'] / 2:
            self.add_error('highpass', ValidationError("High-pass cutoff must lie between 0 Hz and Nyquist."))
        if cleaned_data.get('doppler') is not None and cleaned_data['doppler'] <= 0:
            self.add_error('doppler', ValidationError("Doppler spread must be positive."))

        try:
            cleaned_data['steps'] = [list(step) for step in validate_steps(cleaned_data['steps'])]
        except (TypeError, ValueError) as e:
            self.add_error('steps', ValidationError(f"Steps must be a list of [di, dj] pairs ({e})."))
        except ValidationError as e:
            self.add_error('steps', e)

        grid = cleaned_data.get('grid')
        if grid is not None:
            if not isinstance(grid, list) or not grid or not all(isinstance(g, (int, float)) for g in grid):
                self.add_error('grid', ValidationError("Grid must be a non-empty list of numbers."))
            elif any(b < a for a, b in zip(grid, grid[1:])):
                self.add_error('grid', ValidationError("Grid must be sorted in ascending order."))

        snrs = cleaned_data.get('snrs')
        if snrs is not None:
            if not isinstance(snrs, list) or not snrs:
                self.add_error('snrs', ValidationError("SNRs must be a non-empty list."))
            else:
                try:
                    [parse_snr(value) for value in snrs]
                except ValidationError as e:
                    self.add_error('snrs', e)
        return cleaned_data

    def to_config(self):
        return PipelineConfig.from_cleaned_data(self.cleaned_data)
