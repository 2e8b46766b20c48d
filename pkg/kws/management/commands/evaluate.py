import json
from pathlib import Path

from kws.detect import MatchingConfig, event_f_score
from kws.management.base import KwsCommand
from kws.tensorio import read_annotations, read_detections


class Command(KwsCommand):
    help = 'Score a detections TSV against annotations with event-based precision, recall and F'

    def add_arguments(self, parser):
        parser.add_argument('detections', help='Detections TSV')
        parser.add_argument('annotations', help='Annotation TSV')
        parser.add_argument('--collar', type=float)
        parser.add_argument('--offset-ratio', type=float)
        parser.add_argument('--out', help='Report JSON')

    def execute_command(self, *args, **options):
        defaults = MatchingConfig.from_settings()
        matching = MatchingConfig(
            collar_seconds=defaults.collar_seconds if options['collar'] is None else options['collar'],
            offset_ratio=defaults.offset_ratio if options['offset_ratio'] is None else options['offset_ratio'],
        )
        report = event_f_score(read_detections(options['detections']), read_annotations(options['annotations']), matching)

        for keyword, counts in sorted(report.per_keyword.items()):
            self.stdout.write(
                f"{keyword}\ttp={counts.tp}\tfp={counts.fp}\tfn={counts.fn}\tF={counts.f_score:.4f}"
            )
        if options['out']:
            Path(options['out']).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + '\n')
        self.success(f"micro-F {report.micro_f:.4f}, macro-F {report.macro_f:.4f}")
