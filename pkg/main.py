import sys
import argparse
import numpy as np
import pandas as pd
from pathlib import Path
from config import Config
from logger import LoggerSetup
from dataclasses import replace
from typing import List, Sequence
from src.losses import LossKind
from src.data_handler import DataHandler
from src.lstm_network import LstmNetwork
from src.sequencer import SequenceDataset, index_from_frame
from src.intersection import IntersectionLoader
from src.trainer import TrainConfig, Trainer, grid_search
from src.preprocessor import Preprocessor, SchemaManifest
from src.exceptions import HashMismatch, ShapeMismatch, SpatError
from src.evaluation import Evaluator, HorizonReport, compare_models, trend_checks
from src.experiment import (Experiment, build_manifest, load_experiment_config, prepare_file, simulate_to_file,
                            RECORD_SUFFIX, ENCODED_SUFFIX)


def build_parser() -> argparse.ArgumentParser:
    parser      = argparse.ArgumentParser(prog        = 'main.py',
                                          description = 'Switching-time prediction for coordinated-actuated signals')
    subcommands = parser.add_subparsers(dest = 'command', required = True)

    simulate = subcommands.add_parser('simulate', help = 'simulate per-second record streams')
    simulate.add_argument('--config', default = Config.REFERENCE_CONFIG, help = 'intersection YAML')
    simulate.add_argument('--date', required = True, help = 'first day, YYYY-MM-DD')
    simulate.add_argument('--days', type = int, default = 1, help = 'number of consecutive days')
    simulate.add_argument('--seed', type = int, default = 0)
    simulate.add_argument('--out', default = Config.RAW_RECORDS, help = 'directory receiving <day>.jsonl')
    simulate.add_argument('--clean', action = 'store_true', help = 'skip feed dropout and duplication')

    prepare = subcommands.add_parser('prepare', help = 'build the manifest and encode record files')
    prepare.add_argument('--config', default = Config.REFERENCE_CONFIG, help = 'intersection YAML')
    prepare.add_argument('--records', nargs = '+', required = True, help = 'record files named <day>.jsonl')
    prepare.add_argument('--out', default = Config.ENCODED_DAYS, help = 'directory receiving <day>.spd')
    prepare.add_argument('--manifest', help = 'reuse this manifest instead of building one')
    prepare.add_argument('--schema', nargs = '+', help = 'record files the manifest is built from (default: --records)')
    prepare.add_argument('--declarations', help = 'variable declarations YAML')

    train = subcommands.add_parser('train', help = 'train one model')
    train.add_argument('--loss', choices = [k.value for k in LossKind], default = LossKind.MSE.value)
    train.add_argument('--lr', type = float, default = Config.LEARNING_RATE)
    train.add_argument('--neurons', type = int, default = 12)
    train.add_argument('--epochs', type = int, default = Config.EPOCHS)
    train.add_argument('--seed', type = int, default = 0)
    train.add_argument('--batch-size', type = int, default = Config.BATCH_SIZE)
    train.add_argument('--peephole', choices = ['previous', 'current'], default = 'previous')
    train.add_argument('--workers', type = int, default = 0, help = 'background batch loader processes')
    train.add_argument('--data', nargs = '+', required = True, help = 'encoded training days')
    train.add_argument('--val', nargs = '+', required = True, help = 'encoded validation days')
    train.add_argument('--manifest', required = True)
    train.add_argument('--out', required = True)
    train.add_argument('--sample-index', help = 'sample_index.csv of an earlier run over the same --data files')

    grid = subcommands.add_parser('grid-search', help = 'MAPE grid over learning rates and neuron counts')
    grid.add_argument('--lrs', type = float, nargs = '+', required = True)
    grid.add_argument('--neurons', type = int, nargs = '+', required = True)
    grid.add_argument('--budget', type = int, required = True, help = 'training samples per cell')
    grid.add_argument('--check-every', type = int, default = Config.GRID_CHECK_EVERY)
    grid.add_argument('--seed', type = int, default = 0)
    grid.add_argument('--data', nargs = '+', required = True)
    grid.add_argument('--val', nargs = '+', required = True)
    grid.add_argument('--manifest', required = True)
    grid.add_argument('--out', required = True, help = 'CSV file receiving the grid')

    evaluate = subcommands.add_parser('evaluate', help = 'horizon report of a checkpoint on test days')
    evaluate.add_argument('--checkpoint', required = True)
    evaluate.add_argument('--data', nargs = '+', required = True)
    evaluate.add_argument('--manifest', required = True)
    evaluate.add_argument('--out', required = True)

    compare = subcommands.add_parser('compare', help = 'rank horizon reports computed on one test set')
    compare.add_argument('--reports', nargs = '+', required = True, help = 'report directories')
    compare.add_argument('--out', required = True)

    predict = subcommands.add_parser('predict', help = 'remaining seconds for one encoded window')
    predict.add_argument('--checkpoint', required = True)
    predict.add_argument('--window-file', required = True, help = f'{Config.WINDOW_SECONDS} comma-separated rows of encoded features')
    predict.add_argument('--manifest')

    experiment = subcommands.add_parser('experiment', help = 'run the loss-function study end to end')
    experiment.add_argument('--config', default = Config.EXPERIMENT_CONFIG)
    experiment.add_argument('--workers', type = int, help = 'overrides the configured worker count')
    return parser


class Main:
    def __init__(self):
        """
        Command-line entry point; every subcommand is a pure function of its flags, its input files and its seed.
        """
        self.handler      = DataHandler()
        self.preprocessor = Preprocessor()
        self.log          = LoggerSetup(logger_name = 'main',
                                        logger_file = 'main').get_logger()

    def load_manifest(self, path : str) -> SchemaManifest:
        return SchemaManifest.from_json(self.handler.load_text(path))

    def simulate(self, args : argparse.Namespace):
        config = IntersectionLoader().load(args.config)
        for date in pd.date_range(pd.Timestamp(args.date), periods = args.days, freq = 'D'):
            day    = str(date.date())
            output = str(Path(args.out) / f'{day}{RECORD_SUFFIX}')
            count  = simulate_to_file(config, day, args.seed, output, corrupt = not args.clean)
            self.log.info(f'{count} records written to {output}')

    def prepare(self, args : argparse.Namespace):
        config = IntersectionLoader().load(args.config)
        if args.manifest:
            manifest = self.load_manifest(args.manifest)
        else:
            if args.declarations:
                declarations = self.preprocessor.load_declarations(args.declarations)
            else:
                declarations = self.preprocessor.default_declarations(config)
            manifest = build_manifest(args.schema or args.records, declarations, self.preprocessor)
            self.handler.save_text(manifest.to_json(), str(Path(args.out) / 'manifest.json'))
        for record_file in args.records:
            day = Path(record_file).name.split('.')[0]
            prepare_file(config, record_file, manifest, str(Path(args.out) / f'{day}{ENCODED_SUFFIX}'),
                         preprocessor = self.preprocessor)

    def datasets(self, args : argparse.Namespace):
        manifest = self.load_manifest(args.manifest)
        index    = None
        if getattr(args, 'sample_index', None):
            index = index_from_frame(self.handler.load_data(args.sample_index), sources = args.data)
        train    = SequenceDataset(args.data, feature_count = manifest.feature_count, index = index,
                                   manifest_hash = manifest.content_hash)
        val      = SequenceDataset(args.val, feature_count = manifest.feature_count, manifest_hash = manifest.content_hash)
        return manifest, train, val

    def train(self, args : argparse.Namespace):
        manifest, train_set, val_set = self.datasets(args)
        config = TrainConfig(loss            = LossKind(args.loss),
                             learning_rate   = args.lr,
                             hidden_units    = args.neurons,
                             epochs          = args.epochs,
                             batch_size      = args.batch_size,
                             seed            = args.seed,
                             output_peephole = args.peephole,
                             workers         = args.workers)
        report = Trainer(config, manifest.content_hash).train(train_set, val_set, args.out)
        self.log.info(f'\n{report.to_frame().to_string(index = False)}')

    def grid_search(self, args : argparse.Namespace):
        _, train_set, val_set = self.datasets(args)
        table = grid_search(train_set, val_set, args.lrs, args.neurons, args.budget, args.check_every,
                            base = TrainConfig(seed = args.seed))
        self.handler.save_data(table, args.out, index = True)
        self.log.info(f'\n{table}')

    def evaluate(self, args : argparse.Namespace):
        manifest = self.load_manifest(args.manifest)
        test_set = SequenceDataset(args.data, feature_count = manifest.feature_count, manifest_hash = manifest.content_hash)
        report   = Evaluator().evaluate_model(args.checkpoint, test_set, manifest.content_hash)
        report.write(args.out, self.handler)
        self.log.info(f'\n{report.buckets.to_string(index = False)}')

    def compare(self, args : argparse.Namespace):
        reports = {}
        for directory in args.reports:
            report = HorizonReport.load(directory, self.handler)
            name   = report.loss if report.loss and report.loss not in reports else Path(directory).name
            reports[name] = report
        comparison = compare_models(reports)
        comparison.write(args.out, self.handler)
        self.log.info(f'\n{comparison.mae}\noverall:\n{comparison.overall}')
        self.log.info(f'Trend checks: {trend_checks(comparison)}')

    def predict(self, args : argparse.Namespace) -> List[int]:
        network, header = LstmNetwork.load(args.checkpoint)
        window          = pd.read_csv(args.window_file, header = None).to_numpy(dtype = np.float64)
        if args.manifest:
            manifest = self.load_manifest(args.manifest)
            if manifest.content_hash != header.get('manifest_hash'):
                raise HashMismatch(f'{args.checkpoint} was not trained on manifest {args.manifest}')
        if window.shape != (Config.WINDOW_SECONDS, network.feature_count):
            raise ShapeMismatch(f'window is {window.shape}, expected ({Config.WINDOW_SECONDS}, {network.feature_count})')
        seconds = [int(s) for s in network.predict_seconds(window)]
        print(' '.join(str(s) for s in seconds))
        return seconds

    def experiment(self, args : argparse.Namespace):
        config = load_experiment_config(args.config)
        if args.workers is not None:
            config = replace(config, workers = args.workers)
        result = Experiment(config).run()
        print(result.verdict[['passes', 'runs', 'holds']].to_string())

    def run(self, argv : Sequence[str]) -> int:
        """
        Parses `argv` and runs the named subcommand.
        Returns:
        --------
            - int : 0 on success, 1 on a runtime failure, 2 on a usage error.
        """
        try:
            args = build_parser().parse_args(list(argv))
        except SystemExit as e:
            return Config.EXIT_SUCCESS if e.code in (0, None) else Config.EXIT_USAGE

        try:
            getattr(self, args.command.replace('-', '_'))(args)
        except (SpatError, OSError, ValueError) as e:
            self.log.error(f'{args.command} failed: {type(e).__name__}: {e}')
            return Config.EXIT_FAILURE
        return Config.EXIT_SUCCESS


def run_subcommand(argv : Sequence[str]) -> int:
    return Main().run(argv)


if __name__ == '__main__':
    sys.exit(run_subcommand(sys.argv[1:]))
