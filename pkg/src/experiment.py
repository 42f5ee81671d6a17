import yaml
import numpy as np
import pandas as pd
import multiprocessing
from pathlib import Path
from config import Config
from logger import LoggerSetup
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple
from src.losses import LossKind
from src.data_handler import DataHandler
from src.sequencer import SequenceDataset
from src.signal_simulator import SignalSimulator, corrupt_feed
from src.exceptions import ConfigError
from src.trainer import TrainConfig, Trainer
from src.intersection import IntersectionConfig, IntersectionLoader, parse_time, day_bounds
from src.preprocessor import Declaration, Preprocessor, SchemaManifest
from src.evaluation import Comparison, Evaluator, HorizonReport, compare_models, majority_verdict, trend_checks


RECORD_SUFFIX  = '.jsonl'
ENCODED_SUFFIX = '.spd'


@dataclass(frozen = True)
class ExperimentConfig:
    intersection     : str
    output_dir       : str
    dates            : Tuple[str, ...]
    simulation_seed  : int
    train_days       : Tuple[str, ...]
    validation_days  : Tuple[str, ...]
    test_days        : Tuple[str, ...]
    schema_days      : Tuple[str, ...]
    losses           : Tuple[LossKind, ...]
    seeds            : Tuple[int, ...]
    training         : TrainConfig
    operating_span   : Optional[Tuple[int, int]] = None
    dropout_prob     : Optional[float]           = None
    duplicate_prob   : Optional[float]           = None
    declarations     : Optional[str]             = None
    workers          : int                       = 1


def _dates(values) -> Tuple[str, ...]:
    return tuple(str(pd.Timestamp(value).date()) for value in values)


def load_experiment_config(path : str) -> ExperimentConfig:
    """
    Reads the experiment YAML file. The simulated days are `simulation.days` consecutive days from
    `simulation.start_date`; `split` gives either day counts (taken chronologically: training, then validation, then
    test) or explicit date lists.
    Arguments:
    ----------
        - path (str) : experiment YAML file.
    Returns:
    --------
        - ExperimentConfig : the validated configuration.
    """
    try:
        with open(path, 'r', encoding = 'utf-8') as handle:
            raw = yaml.safe_load(handle) or {}
    except OSError as e:
        raise ConfigError(f'cannot read experiment config {path}: {e}') from e
    except yaml.YAMLError as e:
        raise ConfigError(f'experiment config {path} is not valid YAML: {e}') from e

    try:
        simulation = raw['simulation']
        dates      = _dates(pd.date_range(pd.Timestamp(simulation['start_date']), periods = int(simulation['days']), freq = 'D'))
        split      = raw['split']
        if isinstance(split.get('train'), list):
            train, validation, test = _dates(split['train']), _dates(split['validation']), _dates(split['test'])
        else:
            n_train, n_val, n_test  = int(split['train']), int(split['validation']), int(split['test'])
            if n_train + n_val + n_test > len(dates):
                raise ConfigError(f'split: {n_train + n_val + n_test} days requested, {len(dates)} simulated')
            train      = dates[:n_train]
            validation = dates[n_train:n_train + n_val]
            test       = dates[n_train + n_val:n_train + n_val + n_test]

        schema     = raw.get('schema_days', 'train')
        schema     = train if schema == 'train' else _dates(schema)
        span       = raw.get('operating_span')
        corruption = raw.get('corruption') or {}
        training   = raw.get('training') or {}
        base       = TrainConfig(learning_rate   = float(training.get('learning_rate', Config.LEARNING_RATE)),
                                 hidden_units    = int(training.get('hidden_units', 12)),
                                 epochs          = int(training.get('epochs', Config.EPOCHS)),
                                 batch_size      = int(training.get('batch_size', Config.BATCH_SIZE)),
                                 output_peephole = str(training.get('output_peephole', 'previous')),
                                 workers         = int(training.get('loader_workers', 0)))
        config     = ExperimentConfig(intersection    = str(raw['intersection']),
                                      output_dir      = str(raw.get('output_dir', Config.RUNS_DIR)),
                                      dates           = dates,
                                      simulation_seed = int(simulation.get('seed', 0)),
                                      train_days      = train,
                                      validation_days = validation,
                                      test_days       = test,
                                      schema_days     = schema,
                                      losses          = tuple(LossKind(kind) for kind in training.get('losses', [k.value for k in LossKind])),
                                      seeds           = tuple(int(seed) for seed in training.get('seeds', [0])),
                                      training        = base,
                                      operating_span  = None if span is None else (parse_time(span['start']), parse_time(span['end'])),
                                      dropout_prob    = corruption.get('dropout_prob'),
                                      duplicate_prob  = corruption.get('duplicate_prob'),
                                      declarations    = raw.get('declarations'),
                                      workers         = int(raw.get('workers', 1)))
    except KeyError as e:
        raise ConfigError(f'experiment config is missing key {e}') from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f'experiment config has an invalid value: {e}') from e

    validate_experiment(config)
    return config


def validate_experiment(config : ExperimentConfig):
    """
    Training, validation and test days must be disjoint, simulated, and validation and test days must come after
    every training day.
    """
    train, validation, test = set(config.train_days), set(config.validation_days), set(config.test_days)
    if not train or not validation or not test:
        raise ConfigError('split: training, validation and test days must all be non-empty')
    if train & validation or train & test or validation & test:
        raise ConfigError('split: training, validation and test days must be disjoint')
    unknown = (train | validation | test | set(config.schema_days)) - set(config.dates)
    if unknown:
        raise ConfigError(f'split: days {sorted(unknown)} are not simulated')
    if min(validation | test) <= max(train):
        raise ConfigError('split: validation and test days must follow every training day')
    if not config.losses or not config.seeds:
        raise ConfigError('training: at least one loss and one seed are required')
    if config.workers < 1:
        raise ConfigError('workers must be at least 1')


def corruption_seed(seed : int, date) -> int:
    """
    Seed of the feed corruption of one day, independent of the traffic generator of that day.
    """
    ordinal = pd.Timestamp(date).toordinal()
    return int(np.random.SeedSequence([int(seed), int(ordinal), 1]).generate_state(1)[0])


def simulate_to_file(config : IntersectionConfig, date, seed : int, output_file : str, corrupt : bool = True,
                     dropout_prob : float = None, duplicate_prob : float = None) -> int:
    """
    Simulates one day and writes its (optionally corrupted) record stream, one JSON object per line.
    Returns the number of records written.
    """
    simulator = SignalSimulator(config)
    records   = simulator.simulate_day(date, seed)
    if corrupt:
        records = corrupt_feed(records,
                               config.dropout_prob if dropout_prob is None else dropout_prob,
                               config.duplicate_prob if duplicate_prob is None else duplicate_prob,
                               corruption_seed(seed, date))
    return DataHandler().write_records(records, output_file)


def day_span(config : IntersectionConfig, date) -> Tuple[int, int]:
    """
    Inclusive Unix-second span of the operating hours of `date`.
    """
    midnight, _ = day_bounds(date)
    start, end  = config.operating_span
    return midnight + start, midnight + end - 1


def load_record_frame(path : str, preprocessor : Preprocessor = None, handler : DataHandler = None) -> pd.DataFrame:
    handler      = handler or DataHandler()
    preprocessor = preprocessor or Preprocessor()
    return preprocessor.flatten_day(handler.read_record_lines(path))


def build_manifest(record_files : Sequence[str], declarations : Sequence[Declaration],
                   preprocessor : Preprocessor = None) -> SchemaManifest:
    preprocessor = preprocessor or Preprocessor()
    frames       = [load_record_frame(path, preprocessor) for path in record_files]
    return preprocessor.build_schema(frames, declarations)


def prepare_file(config : IntersectionConfig, record_file : str, manifest : SchemaManifest, output_file : str,
                 date = None, preprocessor : Preprocessor = None) -> str:
    """
    Encodes one record file into an encoded-day container. The day is taken from the file name (YYYY-MM-DD) unless
    given.
    """
    preprocessor = preprocessor or Preprocessor()
    date         = date or Path(record_file).name.split('.')[0]
    frame        = load_record_frame(record_file, preprocessor)
    day          = preprocessor.prepare_day(frame, day_span(config, date), manifest, phase_ids = config.phase_ids)
    DataHandler().save_day(day, output_file)
    return output_file


def _simulate_job(job : tuple) -> int:
    config, date, seed, output_file, dropout_prob, duplicate_prob = job
    return simulate_to_file(config, date, seed, output_file, True, dropout_prob, duplicate_prob)


def _train_job(job : tuple) -> str:
    train_config, manifest_hash, feature_count, train_files, val_files, out_dir = job
    train_set = SequenceDataset(train_files, feature_count = feature_count, manifest_hash = manifest_hash)
    val_set   = SequenceDataset(val_files, feature_count = feature_count, manifest_hash = manifest_hash)
    report    = Trainer(train_config, manifest_hash).train(train_set, val_set, out_dir)
    return report.best_checkpoint


@dataclass
class ExperimentResult:
    manifest    : SchemaManifest
    checkpoints : Dict[int, Dict[str, str]]           = field(default_factory = dict)
    reports     : Dict[int, Dict[str, HorizonReport]] = field(default_factory = dict)
    comparisons : Dict[int, Comparison]               = field(default_factory = dict)
    verdict     : Optional[pd.DataFrame]              = None


class Experiment:
    def __init__(self, config : ExperimentConfig):
        """
        The Experiment reproduces the loss-function study end to end: it simulates the configured days, builds the
        manifest from the schema days, encodes every day, trains one model per (seed, loss), evaluates each on the
        test days, compares the losses per seed and aggregates the trend checks over seeds.
        Everything is written under `config.output_dir`:
            records/<day>.jsonl, encoded/<day>.spd, manifest.json,
            seed_<s>/<loss>/{epoch_XX.ckpt, best.ckpt, train_report.csv, sample_index.csv, report/},
            seed_<s>/comparison_*.csv, verdict.csv
        """
        self.config       = config
        self.root         = Path(config.output_dir)
        self.handler      = DataHandler()
        self.preprocessor = Preprocessor()
        self.log          = LoggerSetup(logger_name = 'experiment',
                                        logger_file = 'experiment').get_logger()

    def _map(self, function, jobs : list) -> list:
        # Pool.map keeps submission order so outputs do not depend on scheduling
        if self.config.workers > 1 and len(jobs) > 1:
            with multiprocessing.get_context('spawn').Pool(processes = min(self.config.workers, len(jobs))) as pool:
                return pool.map(function, jobs)
        return [function(job) for job in jobs]

    def intersection(self) -> IntersectionConfig:
        config = IntersectionLoader().load(self.config.intersection)
        if self.config.operating_span is not None:
            config = config.with_operating_span(*self.config.operating_span)
            IntersectionLoader().validate(config)
        return config

    def record_file(self, date : str) -> str:
        return str(self.root / 'records' / f'{date}{RECORD_SUFFIX}')

    def encoded_file(self, date : str) -> str:
        return str(self.root / 'encoded' / f'{date}{ENCODED_SUFFIX}')

    def simulate(self, intersection : IntersectionConfig):
        jobs   = [(intersection, date, self.config.simulation_seed, self.record_file(date),
                   self.config.dropout_prob, self.config.duplicate_prob) for date in self.config.dates]
        counts = self._map(_simulate_job, jobs)
        self.log.info(f'Simulated {len(counts)} days, {sum(counts)} records written')

    def prepare(self, intersection : IntersectionConfig) -> SchemaManifest:
        if self.config.declarations:
            declarations = self.preprocessor.load_declarations(self.config.declarations)
        else:
            declarations = self.preprocessor.default_declarations(intersection)
        manifest = build_manifest([self.record_file(d) for d in self.config.schema_days], declarations, self.preprocessor)
        self.handler.save_text(manifest.to_json(), str(self.root / 'manifest.json'))
        self.log.info(f'Manifest {manifest.content_hash[:12]}: {len(manifest.variables)} variables, '
                      f'{manifest.feature_count} features')
        for date in self.config.train_days + self.config.validation_days + self.config.test_days:
            prepare_file(intersection, self.record_file(date), manifest, self.encoded_file(date), date, self.preprocessor)
        return manifest

    def train(self, manifest : SchemaManifest) -> Dict[int, Dict[str, str]]:
        train_files = [self.encoded_file(d) for d in self.config.train_days]
        val_files   = [self.encoded_file(d) for d in self.config.validation_days]
        training    = self.config.training
        if self.config.workers > 1:
            # pool processes are daemonic and cannot start loader workers of their own
            training = replace(training, workers = 0)
        keys = [(seed, kind) for seed in self.config.seeds for kind in self.config.losses]
        jobs = [(replace(training, loss = kind, seed = seed), manifest.content_hash, manifest.feature_count,
                 train_files, val_files, str(self.root / f'seed_{seed}' / kind.value)) for seed, kind in keys]
        best = self._map(_train_job, jobs)

        checkpoints = {}
        for (seed, kind), checkpoint in zip(keys, best):
            checkpoints.setdefault(seed, {})[kind.value] = checkpoint
        return checkpoints

    def evaluate(self, manifest : SchemaManifest, checkpoints : Dict[int, Dict[str, str]]) -> ExperimentResult:
        test_set  = SequenceDataset([self.encoded_file(d) for d in self.config.test_days], feature_count = manifest.feature_count,
                                    manifest_hash = manifest.content_hash)
        evaluator = Evaluator(batch_size = self.config.training.batch_size)
        result    = ExperimentResult(manifest = manifest, checkpoints = checkpoints)
        checks    = []
        for seed, by_loss in checkpoints.items():
            reports = {}
            for loss, checkpoint in by_loss.items():
                reports[loss] = evaluator.evaluate_model(checkpoint, test_set, manifest.content_hash)
                reports[loss].write(str(Path(checkpoint).parent / 'report'), self.handler)
            comparison = compare_models(reports)
            comparison.write(str(self.root / f'seed_{seed}'), self.handler)
            seed_checks = trend_checks(comparison)
            self.log.info(f'Seed {seed}: overall ranking {list(comparison.overall.index)}, checks {seed_checks}')
            for finding, holds in seed_checks.items():
                if not holds:
                    self.log.warning(f'Seed {seed}: finding {finding} does not hold')
            result.reports[seed]     = reports
            result.comparisons[seed] = comparison
            checks.append(seed_checks)

        result.verdict         = majority_verdict(checks)
        result.verdict.columns = ['passes', 'runs', 'holds'] + [f'seed_{s}' for s in checkpoints]
        self.handler.save_data(result.verdict, str(self.root / 'verdict.csv'), index = True)
        return result

    def run(self) -> ExperimentResult:
        """
        Runs every stage in order.
        Returns:
        --------
            - ExperimentResult : manifest, checkpoints, reports, per-seed comparisons and the majority verdict.
        """
        intersection = self.intersection()
        self.log.info(f'Experiment: {len(self.config.dates)} days, losses {[k.value for k in self.config.losses]}, '
                      f'seeds {list(self.config.seeds)}, output {self.root}')
        self.simulate(intersection)
        manifest    = self.prepare(intersection)
        checkpoints = self.train(manifest)
        result      = self.evaluate(manifest, checkpoints)
        self.log.info(f'Verdict:\n{result.verdict[["passes", "runs", "holds"]]}')
        return result
