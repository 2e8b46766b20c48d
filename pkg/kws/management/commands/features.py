from pathlib import Path

from kws.dsp import features, spectrogram_to_sequence
from kws.forms import FEATURE_CHOICES
from kws.management.base import KwsCommand
from kws.tensorio import read_wav, write_embedding_sequence


class Command(KwsCommand):
    help = 'Extract standardized HFCC or log-mel sequences from WAV files into ESEQ files'

    def add_arguments(self, parser):
        parser.add_argument('inputs', nargs='+', help='WAV files')
        parser.add_argument('--out-dir', required=True)
        parser.add_argument('--kind', choices=[kind for kind, _ in FEATURE_CHOICES], default='hfcc')
        parser.add_argument('--raw', action='store_true', help='Write the spectrogram without standardization')

    def execute_command(self, *args, **options):
        out_dir = Path(options['out_dir'])
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in options['inputs']:
            path = Path(name)
            spec = features(read_wav(path), options['kind'])
            seq = spec.to_sequence() if options['raw'] else spectrogram_to_sequence(spec)
            write_embedding_sequence(seq, out_dir / f"{path.stem}.eseq")
            self.stdout.write(f"{path.name}: {seq.num_frames} x {seq.dim} {options['kind']} frames")
        self.success(f"Wrote {len(options['inputs'])} sequences to {out_dir}")
