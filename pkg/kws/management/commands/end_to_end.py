from kws.management.base import PipelineCommand
from kws.pipeline import run_end_to_end


class Command(PipelineCommand):
    help = ('Run the experiment grid: per trial, SNR and calibration mode, sweep the threshold on validation, '
            'apply it to test and write reports plus table.tsv')

    def execute_command(self, *args, **options):
        config = self.load_config(options)
        result = run_end_to_end(config)
        self.stdout.write(result.table.to_string())
        self.success(f"Run #{result.run.pk}: {len(result.cells)} cells written to {config.out}")
