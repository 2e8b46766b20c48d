from pathlib import Path

from kws.channel import ChannelConfig, SnrSpec, measure_snr_db, simulate, snr_grid
from kws.management.base import KwsCommand
from kws.pipeline import parse_snr
from kws.tensorio import SUPPORTED_WAV_SUBTYPES, read_wav, write_wav


class Command(KwsCommand):
    help = 'Pass WAV files through the Watterson fading channel and AWGN, one snr<v>/ directory per SNR'

    def add_arguments(self, parser):
        parser.add_argument('inputs', nargs='+', help='WAV files')
        parser.add_argument('--out-dir', required=True)
        parser.add_argument('--snr-db', dest='snrs', action='append',
                            help='Target SNR in dB; repeat for several (default: -12 to 30 dB in 3 dB steps)')
        parser.add_argument('--clean', action='store_true', help='Also write the faded signal without noise')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--delay-ms', type=float, default=1.0, help='Differential delay in milliseconds')
        parser.add_argument('--doppler-hz', type=float, help='Doppler spread in Hz')
        parser.add_argument('--paths', type=int, help='Number of propagation paths')
        parser.add_argument('--subtype', choices=SUPPORTED_WAV_SUBTYPES, default='PCM_16')

    def execute_command(self, *args, **options):
        cfg = ChannelConfig.from_settings(
            seed=options['seed'],
            differential_delay_seconds=options['delay_ms'] / 1000.0,
            doppler_spread_hz=options['doppler_hz'],
            num_paths=options['paths'],
        )
        snrs = [parse_snr(value) for value in options['snrs']] if options['snrs'] else snr_grid()
        if options['clean']:
            snrs = [SnrSpec.clean()] + [snr for snr in snrs if not snr.is_clean]
        out_dir = Path(options['out_dir'])
        for name in options['inputs']:
            path = Path(name)
            audio = read_wav(path)
            for snr in snrs:
                noisy = simulate(audio, cfg, snr, file_id=path.stem)
                folder = out_dir / snr.tag
                folder.mkdir(parents=True, exist_ok=True)
                write_wav(noisy, folder / path.name, subtype=options['subtype'])
                if options['verbosity'] > 1 and not snr.is_clean:
                    faded = simulate(audio, cfg, snr.clean(), file_id=path.stem)
                    self.stdout.write(f"{path.name} @ {snr.label} dB: measured {measure_snr_db(faded, noisy):.2f} dB")
        self.success(f"Simulated {len(options['inputs'])} files at {len(snrs)} SNRs into {out_dir}")
