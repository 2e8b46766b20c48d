import json
from pathlib import Path

from kws.detect import SWEEP_GLOBAL, SWEEP_MODES, MatchingConfig, all_scores, default_grid, sweep_threshold
from kws.management.base import ScoringCommand, _json_list
from kws.tensorio import read_annotations


class Command(ScoringCommand):
    help = 'Choose the detection threshold that maximizes the event-based micro F-score on annotated recordings'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--annotations', required=True, help='Annotation TSV of the recordings')
        parser.add_argument('--sweep-mode', choices=SWEEP_MODES, default=SWEEP_GLOBAL)
        parser.add_argument('--grid', type=_json_list, help='JSON list of thresholds')
        parser.add_argument('--grid-points', type=int)
        parser.add_argument('--collar', type=float)
        parser.add_argument('--offset-ratio', type=float)
        parser.add_argument('--out', required=True, help='Threshold JSON')

    def execute_command(self, *args, **options):
        truth = read_annotations(options['annotations'])
        templates, recordings, bank, curves = self.score(options)
        truth.check_keywords(bank.keyword_names if bank else sorted(templates))

        defaults = MatchingConfig.from_settings()
        matching = MatchingConfig(
            collar_seconds=defaults.collar_seconds if options['collar'] is None else options['collar'],
            offset_ratio=defaults.offset_ratio if options['offset_ratio'] is None else options['offset_ratio'],
        )
        grid = options['grid'] or default_grid(all_scores(curves), options['grid_points'])
        result = sweep_threshold(
            curves, truth, grid, matching, options['sweep_mode'], options['offset_mode'], options['min_duration_ratio'],
            overlap_mode=options['overlap_mode'],
        )
        data = {
            'threshold': result.threshold.to_dict(),
            'report': result.report.to_dict(),
            'curve': [[g, report.micro_f] for g, report in result.curve],
        }
        Path(options['out']).write_text(json.dumps(data, indent=2, sort_keys=True) + '\n')
        self.success(f"Threshold {result.threshold.to_dict()} reaches micro-F {result.best_f:.4f}")
