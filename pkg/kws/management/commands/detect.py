import json
from pathlib import Path

from kws.calib import calibrate_pair
from kws.detect import Threshold, detect_all
from kws.dtw import cost_matrix
from kws.exceptions import ConfigurationError
from kws.management.base import ScoringCommand
from kws.tensorio import write_cost_matrix, write_detections


class Command(ScoringCommand):
    help = 'Detect keywords in a directory of recordings with a fixed or previously swept threshold'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--threshold', type=float, help='Global threshold')
        parser.add_argument('--threshold-file', help='JSON written by sweep_threshold')
        parser.add_argument('--out', required=True, help='Detections TSV')
        parser.add_argument('--dump-costs', help='Directory for float32 cost matrices of every template/recording pair')

    def threshold(self, options):
        if options['threshold_file']:
            data = json.loads(Path(options['threshold_file']).read_text())
            return Threshold.from_dict(data.get('threshold', data))
        if options['threshold'] is None:
            raise ConfigurationError("Give --threshold or --threshold-file.")
        return Threshold(global_value=options['threshold'])

    def execute_command(self, *args, **options):
        thr = self.threshold(options)
        templates, recordings, bank, curves = self.score(options)
        detections = detect_all(
            curves, thr, options['offset_mode'], options['min_duration_ratio'], options['overlap_mode'],
        )
        write_detections(detections, options['out'])

        if options['dump_costs']:
            self.dump_costs(Path(options['dump_costs']), templates, recordings, bank, options)
        self.success(f"Wrote {len(detections)} detections from {len(recordings)} recordings to {options['out']}")

    def dump_costs(self, folder, templates, recordings, bank, options):
        folder.mkdir(parents=True, exist_ok=True)
        names = sorted(recordings)
        shots = [(keyword, n, q) for keyword in sorted(templates) for n, q in enumerate(templates[keyword])]
        queries, tests = calibrate_pair(
            [q for _, _, q in shots], [recordings[name] for name in names], bank, options['mode'], options['sides'],
        )
        for name, test in zip(names, tests):
            for (keyword, n, _), query in zip(shots, queries):
                cost = cost_matrix(query, test, calibrated=options['mode'] != 'none')
                write_cost_matrix(
                    cost.values, folder / f"{name}__{keyword}_{n:02d}.f32",
                    recording=name, keyword=keyword, template=n, mode=options['mode'],
                    lower_bound=cost.lower_bound, upper_bound=cost.upper_bound,
                )
