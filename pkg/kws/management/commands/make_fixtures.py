from kws.fixtures import ToyWorldConfig, make_world, write_world
from kws.management.base import KwsCommand


class Command(KwsCommand):
    help = 'Write a synthetic embedding world (bank, templates, validation and test splits)'

    def add_arguments(self, parser):
        defaults = ToyWorldConfig()
        parser.add_argument('out', help='Data root to create')
        parser.add_argument('--seed', type=int, default=defaults.seed)
        parser.add_argument('--keywords', type=int, default=defaults.n_keywords)
        parser.add_argument('--positions', type=int, default=defaults.n_pos)
        parser.add_argument('--clusters', type=int, default=defaults.n_clusters)
        parser.add_argument('--dim', type=int, default=defaults.dim)
        parser.add_argument('--frames-per-keyword', type=int, default=defaults.frames_per_keyword)
        parser.add_argument('--noise-sigma', type=float, default=defaults.noise_sigma)
        parser.add_argument('--exposure-max', type=float, default=defaults.exposure_max)
        parser.add_argument('--near-misses', type=int, default=defaults.near_misses_per_file)
        parser.add_argument('--shots', type=int, default=defaults.shots)
        parser.add_argument('--files-per-split', type=int, default=defaults.files_per_split)
        parser.add_argument('--recording-frames', type=int, default=defaults.recording_frames)
        parser.add_argument('--keywords-per-file', type=int, default=defaults.keywords_per_file)

    def execute_command(self, *args, **options):
        cfg = ToyWorldConfig(
            n_keywords=options['keywords'],
            n_pos=options['positions'],
            n_clusters=options['clusters'],
            dim=options['dim'],
            frames_per_keyword=options['frames_per_keyword'],
            noise_sigma=options['noise_sigma'],
            seed=options['seed'],
            exposure_max=options['exposure_max'],
            near_misses_per_file=options['near_misses'],
            shots=options['shots'],
            files_per_split=options['files_per_split'],
            recording_frames=options['recording_frames'],
            keywords_per_file=options['keywords_per_file'],
        )
        world = make_world(cfg)
        root = write_world(world, options['out'])
        self.success(
            f"Wrote {cfg.n_keywords} keywords x {cfg.shots} templates and "
            f"{len(world.validation.truth)} + {len(world.test.truth)} annotated occurrences to {root}"
        )
