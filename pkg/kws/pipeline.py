"""
Experiment orchestration.

Loads a data root (templates, validation and test splits with annotations,
optionally a center bank), scores every split per trial, SNR and calibration
mode, picks the threshold on validation and reports on test. Every run writes
a manifest next to its artifacts; the manifest's ``config`` block can be fed
back as a config file to rerun the experiment.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from scipy import stats

import kws
from kws.calib import CALIBRATION_MODES, MODE_NONE, SIDES_BOTH, calibrate_pair
from kws.channel import ChannelConfig, SnrSpec, simulate
from kws.detect import (
    OFFSET_RUN,
    OVERLAP_TRIM,
    SWEEP_GLOBAL,
    MatchingConfig,
    all_scores,
    default_grid,
    detect_all,
    event_f_score,
    sweep_threshold,
    threshold_gap_analysis,
)
from kws.dsp import audio_to_sequence
from kws.dtw import AGGREGATE_MAX, multi_sample_scores
from kws.exceptions import AnnotationError, ConfigurationError, FormatError
from kws.models import EvaluationRecord, ExperimentRun, ThresholdGapRecord
from kws.tensorio import (
    read_annotations,
    read_center_bank,
    read_embedding_sequence,
    read_wav,
    write_detections,
)

logger = logging.getLogger(__name__)

SPLITS = ('validation', 'test')
EMBEDDING_SUFFIX = '.eseq'
AUDIO_SUFFIX = '.wav'
INPUT_SUFFIXES = (EMBEDDING_SUFFIX, AUDIO_SUFFIX)

# Row label of runs without SNR variants
ALL_SNR_LABEL = 'all'


def snr_label(snr):
    return ALL_SNR_LABEL if snr is None else snr.label


def snr_dirname(snr):
    return ALL_SNR_LABEL if snr is None else snr.tag


def parse_snr(value):
    """``6``, ``"6"``, ``"snr6"`` or ``"clean"`` to an SnrSpec."""
    if isinstance(value, SnrSpec):
        return value
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ('clean', 'inf', '+inf'):
            return SnrSpec.clean()
        if text.startswith('snr'):
            text = text[3:]
        try:
            return SnrSpec(float(text))
        except ValueError:
            raise ConfigurationError(f"Cannot read SNR '{value}'.")
    return SnrSpec(float(value))


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved configuration of one experiment."""
    queries: Path
    validation: Path
    test: Path
    validation_annotations: Path
    test_annotations: Path
    out: Path
    bank: Path | None = None
    modes: tuple = (MODE_NONE,)
    sides: str = SIDES_BOTH
    steps: tuple = ((1, 1), (2, 1), (1, 2))
    aggregate: str = AGGREGATE_MAX
    collar: float = 0.25
    offset_ratio: float = 0.5
    grid: tuple | None = None
    grid_points: int = 101
    snrs: tuple | None = None
    seed: int = 0
    trials: int = 1
    sweep_mode: str = SWEEP_GLOBAL
    offset_mode: str = OFFSET_RUN
    overlap_mode: str = OVERLAP_TRIM
    min_duration_ratio: float = 0.5
    exact: bool = False
    features: str = 'hfcc'
    highpass: float = 50.0
    delay: float = 0.001
    doppler: float = 0.5
    paths: int = 2
    threads: int = 1

    @classmethod
    def from_cleaned_data(cls, data):
        values = {name: data[name] for name in cls.__dataclass_fields__ if name in data}
        for name in ('queries', 'validation', 'test', 'validation_annotations', 'test_annotations', 'out', 'bank'):
            if values.get(name) is not None:
                values[name] = Path(values[name])
        values['modes'] = tuple(values.get('modes') or (MODE_NONE,))
        values['steps'] = tuple(tuple(step) for step in values['steps'])
        if values.get('grid') is not None:
            values['grid'] = tuple(float(g) for g in values['grid'])
        if values.get('snrs') is not None:
            values['snrs'] = tuple(parse_snr(v) for v in values['snrs'])
        return cls(**values)

    @property
    def matching(self):
        return MatchingConfig(collar_seconds=self.collar, offset_ratio=self.offset_ratio)

    def channel(self, trial):
        return ChannelConfig.from_settings(
            seed=self.seed + trial,
            differential_delay_seconds=self.delay,
            doppler_spread_hz=self.doppler,
            num_paths=self.paths,
        )

    def to_dict(self):
        """Plain JSON values under the names the config file uses."""
        data = asdict(self)
        for name in ('queries', 'validation', 'test', 'validation_annotations', 'test_annotations', 'out', 'bank'):
            if data[name] is not None:
                data[name] = str(data[name])
        data['modes'] = list(self.modes)
        data['steps'] = [list(step) for step in self.steps]
        data['grid'] = None if self.grid is None else list(self.grid)
        data['snrs'] = None if self.snrs is None else [
            'clean' if snr.is_clean else snr.snr_db for snr in self.snrs
        ]
        return data


def input_files(folder):
    folder = Path(folder)
    if not folder.is_dir():
        raise ConfigurationError(f"Missing directory {folder}.")
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in INPUT_SUFFIXES)


def input_kind(config):
    """``embeddings`` for ESEQ templates, ``audio`` for WAV templates."""
    suffixes = {p.suffix.lower() for _, paths in template_files(config.queries).items() for p in paths}
    if len(suffixes) > 1:
        raise FormatError(f"Templates under {config.queries} mix ESEQ and WAV files.")
    return 'embeddings' if suffixes == {EMBEDDING_SUFFIX} else 'audio'


def template_files(queries_dir):
    queries_dir = Path(queries_dir)
    if not queries_dir.is_dir():
        raise ConfigurationError(f"Missing query directory {queries_dir}.")
    found = {}
    for folder in sorted(p for p in queries_dir.iterdir() if p.is_dir()):
        files = input_files(folder)
        if files:
            found[folder.name] = files
    if not found:
        raise ConfigurationError(f"No query templates under {queries_dir}.")
    return found


def discover_snrs(split_dir):
    """SNR variants present as ``snr<v>`` or ``clean`` subdirectories."""
    split_dir = Path(split_dir)
    if not split_dir.is_dir():
        raise ConfigurationError(f"Missing split directory {split_dir}.")
    found = [
        parse_snr(p.name) for p in split_dir.iterdir()
        if p.is_dir() and (p.name == 'clean' or p.name.startswith('snr'))
    ]
    return sorted(found, key=lambda s: s.snr_db) or [None]


def variant_dir(base, snr):
    base = Path(base)
    if snr is not None and (base / snr.tag).is_dir():
        return base / snr.tag, False
    return base, snr is not None


def load_sequence(path, config=None, snr=None, trial=0, file_id=None, simulate_channel=False, features=None):
    """Read an ESEQ file, or read a WAV file, simulate the channel and extract features."""
    path = Path(path)
    if path.suffix.lower() == EMBEDDING_SUFFIX:
        if simulate_channel:
            raise ConfigurationError(f"{path}: cannot simulate a channel on embeddings; provide {snr.tag}/ variants.")
        return read_embedding_sequence(path)
    audio = read_wav(path)
    if simulate_channel:
        audio = simulate(audio, config.channel(trial), snr, file_id=file_id or path.stem)
    return audio_to_sequence(
        audio,
        kind=features or (config.features if config else 'hfcc'),
        cutoff_hz=config.highpass if config else None,
    )


def read_templates(queries_dir, features=None):
    """Templates per keyword directory, read as they are."""
    return {
        keyword: [load_sequence(path, features=features).replace(label=keyword) for path in paths]
        for keyword, paths in template_files(queries_dir).items()
    }


def read_recordings(folder, features=None):
    files = input_files(folder)
    if not files:
        raise ConfigurationError(f"No recordings in {folder}.")
    return {path.stem: load_sequence(path, features=features) for path in files}


def load_templates(config, snr=None, trial=0):
    """Templates per keyword; a ``<kw>/<snr tag>/`` copy wins over channel simulation."""
    templates = {}
    for keyword, paths in template_files(config.queries).items():
        shots = []
        for path in paths:
            variant = path.parent / snr.tag / path.name if snr is not None else None
            if variant is not None and variant.is_file():
                seq = load_sequence(variant, config)
            else:
                simulated = snr is not None and path.suffix.lower() == AUDIO_SUFFIX
                seq = load_sequence(
                    path, config, snr, trial, file_id=f"queries/{keyword}/{path.stem}", simulate_channel=simulated,
                )
            shots.append(seq.replace(label=keyword))
        templates[keyword] = shots
    return templates


def load_split(config, split, snr=None, trial=0):
    folder, simulated = variant_dir(getattr(config, split), snr)
    files = input_files(folder)
    if not files:
        raise ConfigurationError(f"No recordings in {folder}.")
    return {
        path.stem: load_sequence(path, config, snr, trial, file_id=path.stem, simulate_channel=simulated)
        for path in files
    }


def load_truth(path, vocabulary):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Missing annotation file {path}.")
    truth = read_annotations(path)
    truth.check_keywords(vocabulary)
    return truth


def score_split(templates, recordings, bank=None, mode=MODE_NONE, sides=SIDES_BOTH, steps=None,
                aggregate=AGGREGATE_MAX, exact=False, threads=None):
    """Score curves ``{file_id: {keyword: KeywordScores}}`` of one split."""
    threads = threads or settings.KWS['THREADS']
    keywords = sorted(templates)
    flat = [q.replace(label=keyword) for keyword in keywords for q in templates[keyword]]
    names = sorted(recordings)
    queries, tests = calibrate_pair(flat, [recordings[name] for name in names], bank, mode, sides)
    by_keyword = {keyword: [q for q in queries if q.label == keyword] for keyword in keywords}
    calibrated = mode != MODE_NONE

    def score(index):
        test = tests[index]
        return names[index], {
            keyword: multi_sample_scores(shots, test, steps, aggregate, calibrated=calibrated, exact=exact)
            for keyword, shots in by_keyword.items()
        }

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return dict(pool.map(score, range(len(names))))


def world_curves(world, mode, sides=SIDES_BOTH, steps=None, aggregate=AGGREGATE_MAX, exact=False, threads=None):
    """``(curves, truth)`` of the validation and test split of a toy world."""
    return tuple(
        (score_split(world.templates, split.recordings, world.bank, mode, sides, steps, aggregate, exact, threads),
         split.truth)
        for split in (world.validation, world.test)
    )


def mean_and_half_width(values, confidence=0.95):
    """Mean and half-width of the Student-t confidence interval; 0 for one value."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if len(values) < 2:
        return mean, 0.0
    sem = float(values.std(ddof=1)) / math.sqrt(len(values))
    return mean, float(stats.t.ppf(0.5 + confidence / 2.0, len(values) - 1)) * sem


def format_cell(values):
    mean, half = mean_and_half_width(values)
    return f"{mean:.1f} ± {half:.1f}"


def write_json(data, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + '\n')


@dataclass
class Experiment:
    """Loaded inputs shared by every cell of a run."""
    config: PipelineConfig
    kind: str
    bank: object = None
    modes: tuple = ()
    snrs: list = field(default_factory=list)
    truth: dict = field(default_factory=dict)

    @classmethod
    def load(cls, config):
        kind = input_kind(config)
        bank = None
        if kind == 'embeddings':
            modes = tuple(config.modes)
            unknown = [m for m in modes if m not in CALIBRATION_MODES]
            if unknown:
                raise ConfigurationError(f"Unknown calibration modes: {', '.join(unknown)}.")
            if any(m != MODE_NONE for m in modes):
                if config.bank is None:
                    raise ConfigurationError("Calibration modes other than 'none' need a center bank.")
                bank = read_center_bank(config.bank)
            vocabulary = bank.keyword_names if bank else sorted(template_files(config.queries))
        else:
            # Audio inputs run the feature baseline only
            modes = (config.features,)
            vocabulary = sorted(template_files(config.queries))

        missing = sorted(set(template_files(config.queries)) - set(vocabulary))
        if missing:
            raise AnnotationError(f"Template keywords missing from the center bank: {', '.join(missing)}.")
        truth = {split: load_truth(getattr(config, f"{split}_annotations"), vocabulary) for split in SPLITS}
        snrs = list(config.snrs) if config.snrs else discover_snrs(config.validation)
        logger.info(f"Loaded {kind} inputs: {len(snrs)} SNR variants, modes {', '.join(modes)}")
        return cls(config=config, kind=kind, bank=bank, modes=modes, snrs=snrs, truth=truth)

    def calibration_mode(self, mode):
        return mode if self.kind == 'embeddings' else MODE_NONE

    def cells(self):
        """Yield ``(trial, snr, mode, validation, test)`` with ``(curves, truth)`` pairs."""
        config = self.config
        for trial in range(config.trials):
            for snr in self.snrs:
                templates = load_templates(config, snr, trial)
                recordings = {split: load_split(config, split, snr, trial) for split in SPLITS}
                for mode in self.modes:
                    logger.info(f"Trial {trial}, SNR {snr_label(snr)}, mode {mode}")
                    pairs = [
                        (score_split(
                            templates, recordings[split], self.bank, self.calibration_mode(mode), config.sides,
                            config.steps, config.aggregate, config.exact, config.threads,
                        ), self.truth[split])
                        for split in SPLITS
                    ]
                    yield trial, snr, mode, pairs[0], pairs[1]


def result_constants():
    """Fixed pipeline settings that shape results, as plain JSON values."""
    constants = {key: value for key, value in settings.KWS.items() if key != 'THREADS'}
    return json.loads(json.dumps(constants, sort_keys=True))


def check_constants(recorded):
    """Refuse to rerun a manifest written under different fixed settings."""
    current = result_constants()
    changed = sorted(key for key in set(recorded) | set(current) if recorded.get(key) != current.get(key))
    if changed:
        raise ConfigurationError(f"Manifest was written with different settings: {', '.join(changed)}.")


def write_manifest(config, command):
    manifest = {
        'command': command,
        'config': config.to_dict(),
        'constants': result_constants(),
        'seeds': [config.seed + trial for trial in range(config.trials)],
        'version': kws.__version__,
    }
    write_json(manifest, Path(config.out) / 'manifest.json')
    return manifest


def _cell_dir(config, trial, snr, mode):
    folder = Path(config.out) / snr_dirname(snr) / mode
    return folder / f"trial{trial}" if config.trials > 1 else folder


@dataclass(frozen=True)
class CellResult:
    trial: int
    snr: SnrSpec | None
    mode: str
    validation: object
    test: object
    detections: list


@dataclass(frozen=True)
class EndToEndResult:
    run: object
    cells: list
    table: pd.DataFrame


def evaluate_cell(config, validation, test):
    """Sweep the threshold on validation and apply it to test."""
    val_curves, val_truth = validation
    test_curves, test_truth = test
    grid = config.grid or default_grid(all_scores(val_curves), config.grid_points)
    sweep = sweep_threshold(
        val_curves, val_truth, grid, config.matching, config.sweep_mode,
        config.offset_mode, config.min_duration_ratio, config.threads, config.overlap_mode,
    )
    detections = detect_all(
        test_curves, sweep.threshold, config.offset_mode, config.min_duration_ratio, config.overlap_mode,
    )
    test_report = event_f_score(detections, test_truth, config.matching).with_threshold(sweep.threshold)
    return sweep.report, test_report, detections


def result_table(cells, snrs, modes):
    """Rows are SNRs, columns ``<split>/<mode>``, cells micro-F in percent."""
    rows = []
    for snr in snrs:
        row = {'snr': snr_label(snr)}
        for split in SPLITS:
            for mode in modes:
                values = [
                    100.0 * getattr(c, split).micro_f for c in cells
                    if c.mode == mode and snr_label(c.snr) == snr_label(snr)
                ]
                row[f"{split}/{mode}"] = format_cell(values) if values else ''
        rows.append(row)
    return pd.DataFrame(rows).set_index('snr')


def run_end_to_end(config, command='end_to_end'):
    """Run every (trial, SNR, mode) cell and write reports, detections and the table."""
    experiment = Experiment.load(config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = write_manifest(config, command)

    cells = []
    for trial, snr, mode, validation, test in experiment.cells():
        val_report, test_report, detections = evaluate_cell(config, validation, test)
        folder = _cell_dir(config, trial, snr, mode)
        write_json(val_report.to_dict(), folder / 'validation_report.json')
        write_json(test_report.to_dict(), folder / 'test_report.json')
        write_detections(detections, folder / 'test_detections.tsv')
        logger.info(
            f"SNR {snr_label(snr)} mode {mode}: validation F {val_report.micro_f:.4f}, test F {test_report.micro_f:.4f}"
        )
        cells.append(CellResult(trial, snr, mode, val_report, test_report, detections))

    table = result_table(cells, experiment.snrs, experiment.modes)
    table.to_csv(out / 'table.tsv', sep='\t')

    run = ExperimentRun.objects.create(
        command=command,
        manifest=manifest,
        seed=config.seed,
        version=kws.__version__,
        output_dir=str(out),
    )
    EvaluationRecord.objects.bulk_create([
        EvaluationRecord.from_report(run, cell.trial, cell.snr, cell.mode, split, getattr(cell, split))
        for cell in cells
        for split in SPLITS
    ])
    return EndToEndResult(run=run, cells=cells, table=table)


def gap_table(results, snrs, modes):
    rows = []
    for snr in snrs:
        for mode in modes:
            group = [g for trial, s, m, g in results if m == mode and snr_label(s) == snr_label(snr)]
            if not group:
                continue
            delta_threshold, threshold_ci = mean_and_half_width([g.delta_threshold for g in group])
            delta_f, f_ci = mean_and_half_width([g.delta_f for g in group])
            rows.append({
                'snr': snr_label(snr),
                'mode': mode,
                'delta_threshold': delta_threshold,
                'delta_threshold_ci': threshold_ci,
                'delta_f': delta_f,
                'delta_f_ci': f_ci,
                'estimated_f': float(np.mean([g.estimated_f for g in group])),
                'oracle_f': float(np.mean([g.oracle_f for g in group])),
            })
    return pd.DataFrame(rows, columns=[
        'snr', 'mode', 'delta_threshold', 'delta_threshold_ci', 'delta_f', 'delta_f_ci', 'estimated_f', 'oracle_f',
    ])


def plot_data(table):
    """Per mode, the series of the gap table keyed by column."""
    return {
        mode: {column: group[column].tolist() for column in group.columns if column != 'mode'}
        for mode, group in table.groupby('mode', sort=True)
    }


def run_gap_analysis(config, write_plot_data=False, command='gap_analysis'):
    """Oracle-vs-estimated threshold gap per SNR and mode, written to gap.tsv."""
    experiment = Experiment.load(config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = write_manifest(config, command)

    results = []
    for trial, snr, mode, validation, test in experiment.cells():
        grid = config.grid or default_grid(
            np.concatenate([all_scores(validation[0]), all_scores(test[0])]), config.grid_points,
        )
        gap = threshold_gap_analysis(
            validation, test, grid, config.matching, config.offset_mode,
            config.min_duration_ratio, config.threads, config.overlap_mode,
        )
        logger.info(f"SNR {snr_label(snr)} mode {mode}: dF {gap.delta_f:.4f}, dThreshold {gap.delta_threshold:.4f}")
        results.append((trial, snr, mode, gap))

    table = gap_table(results, experiment.snrs, experiment.modes)
    table.to_csv(out / 'gap.tsv', sep='\t', index=False, float_format='%.6f')
    if write_plot_data:
        write_json(plot_data(table), out / 'gap.json')

    run = ExperimentRun.objects.create(
        command=command,
        manifest=manifest,
        seed=config.seed,
        version=kws.__version__,
        output_dir=str(out),
    )
    ThresholdGapRecord.objects.bulk_create([
        ThresholdGapRecord.from_gap(run, trial, snr, mode, gap) for trial, snr, mode, gap in results
    ])
    return table
