from kws.management.base import PipelineCommand
from kws.pipeline import run_gap_analysis


class Command(PipelineCommand):
    help = 'Compare validation-estimated and test-optimal thresholds per SNR and calibration mode'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--json', action='store_true', help='Also write gap.json with the series per mode')

    def execute_command(self, *args, **options):
        config = self.load_config(options)
        table = run_gap_analysis(config, write_plot_data=options['json'])
        self.stdout.write(table.to_string(index=False))
        self.success(f"Wrote gap.tsv with {len(table)} rows to {config.out}")
