from pathlib import Path

from kws.calib import (
    CALIBRATION_MODES,
    MODE_COMBINED,
    SIDES_BOTH,
    SIDES_QUERY,
    SegmentLayout,
    calibrate_pair,
    combine_segments,
)
from kws.exceptions import ConfigurationError
from kws.management.base import KwsCommand
from kws.tensorio import read_center_bank, read_embedding_sequence, write_embedding_sequence


class Command(KwsCommand):
    help = 'Calibrate ESEQ files against a center bank; optionally merge them as overlapping segments'

    def add_arguments(self, parser):
        parser.add_argument('inputs', nargs='+', help='Test ESEQ files (segments in order when combining)')
        parser.add_argument('--bank', required=True)
        parser.add_argument('--mode', choices=CALIBRATION_MODES, default=MODE_COMBINED)
        parser.add_argument('--queries', nargs='*', default=[], help='Template ESEQ files, written to <out-dir>/queries')
        parser.add_argument('--sides', choices=(SIDES_BOTH, SIDES_QUERY), default=SIDES_BOTH,
                            help="'query' calibrates the templates only and passes the test inputs through")
        parser.add_argument('--out-dir', help='Write one calibrated file per input')
        parser.add_argument('--combine-hop', type=int, help='Segment hop in frames; merge all inputs into --output')
        parser.add_argument('--total-frames', type=int, help='Frames of the merged recording')
        parser.add_argument('--output', help='Merged ESEQ file')

    def execute_command(self, *args, **options):
        bank = read_center_bank(options['bank'])
        paths = [Path(name) for name in options['inputs']]
        query_paths = [Path(name) for name in options['queries']]
        queries, calibrated = calibrate_pair(
            [read_embedding_sequence(path) for path in query_paths],
            [read_embedding_sequence(path) for path in paths],
            bank, options['mode'], options['sides'],
        )

        out_dir = Path(options['out_dir'] or '.')
        if queries:
            (out_dir / 'queries').mkdir(parents=True, exist_ok=True)
            for path, seq in zip(query_paths, queries):
                write_embedding_sequence(seq, out_dir / 'queries' / path.name)

        if options['combine_hop']:
            if not options['output']:
                raise ConfigurationError("--combine-hop needs --output.")
            layout = SegmentLayout(calibrated[0].num_frames, options['combine_hop'])
            total = options['total_frames'] or layout.offset(len(calibrated) - 1) + calibrated[-1].num_frames
            merged = combine_segments(calibrated, layout, total)
            write_embedding_sequence(merged, options['output'])
            self.success(f"Merged {len(calibrated)} segments into {merged.num_frames} frames at {options['output']}")
            return

        out_dir.mkdir(parents=True, exist_ok=True)
        for path, seq in zip(paths, calibrated):
            write_embedding_sequence(seq, out_dir / path.name)
        self.success(f"Calibrated {len(calibrated)} sequences with mode '{options['mode']}' "
                     f"({options['sides']} sides) into {out_dir}")
