import shutil
import numpy as np
import pandas as pd
from pathlib import Path
from config import Config
from logger import LoggerSetup
from dataclasses import dataclass, field, replace
from sklearn.model_selection import ParameterGrid
from typing import List, Optional, Sequence, Tuple
from src.sequencer import Sequencer, SequenceBatch, SequenceDataset, sample_index_frame
from src.losses import LossKind, compute_loss, loss_terms
from src.lstm_network import LstmNetwork, LstmParams
from src.optimizer import AdamMoments, PlateauScheduler, adam_step
from src.data_handler import DataHandler
from src.exceptions import HashMismatch, NonFiniteActivation, NoValidEntries, SpatError


@dataclass(frozen = True)
class TrainConfig:
    loss             : LossKind            = LossKind.MSE
    learning_rate    : float               = Config.LEARNING_RATE
    hidden_units     : int                 = 12
    epochs           : int                 = Config.EPOCHS
    batch_size       : int                 = Config.BATCH_SIZE
    seed             : int                 = 0
    mape_floor       : float               = Config.MAPE_FLOOR
    betas            : Tuple[float, float] = Config.ADAM_BETAS
    epsilon          : float               = Config.ADAM_EPSILON
    plateau_factor   : float               = Config.PLATEAU_FACTOR
    plateau_patience : int                 = Config.PLATEAU_PATIENCE
    output_peephole  : str                 = 'previous'
    workers          : int                 = 0
    prefetch         : int                 = 2


@dataclass(frozen = True)
class EpochRecord:
    epoch           : int
    train_loss      : float
    validation_loss : float
    learning_rate   : float
    checkpoint      : str


@dataclass
class TrainReport:
    loss                     : str
    baseline_validation_loss : float
    epochs                   : List[EpochRecord] = field(default_factory = list)
    best_epoch               : Optional[int]     = None
    best_checkpoint          : Optional[str]     = None

    def to_frame(self) -> pd.DataFrame:
        frame         = pd.DataFrame([record.__dict__ for record in self.epochs],
                                     columns = ['epoch', 'train_loss', 'validation_loss', 'learning_rate', 'checkpoint'])
        frame['best'] = frame['epoch'] == self.best_epoch
        return frame

    @property
    def learning_rates(self) -> List[float]:
        return [record.learning_rate for record in self.epochs]


class Trainer:
    def __init__(self, config : TrainConfig, manifest_hash : str = ''):
        """
        The Trainer fits an LstmNetwork with Adam on shuffled batches, measures the validation loss after every epoch,
        decays the learning rate on plateaus and keeps the checkpoint with the best validation loss.
        Arguments:
        ----------
            - config        (TrainConfig) : loss kind and optimization settings.
            - manifest_hash (str)         : hash of the manifest the datasets were encoded with; both datasets are
                                            checked against it and it is stored in every checkpoint.
        """
        self.config        = config
        self.kind          = LossKind(config.loss)
        self.manifest_hash = manifest_hash
        self.handler       = DataHandler()
        self.sequencer     = Sequencer(batch_size = config.batch_size,
                                       workers    = config.workers,
                                       prefetch   = config.prefetch)
        self.log           = LoggerSetup(logger_name = 'trainer',
                                         logger_file = 'trainer').get_logger()

    def check_manifest(self, train_set : SequenceDataset, val_set : SequenceDataset):
        if not self.manifest_hash:
            return
        for name, dataset in (('training', train_set), ('validation', val_set)):
            try:
                dataset.require_manifest(self.manifest_hash)
            except HashMismatch as e:
                self.log.error(f'{name} data does not match manifest {self.manifest_hash[:12]}: {e}')
                raise

    def initial_network(self, feature_count : int) -> LstmNetwork:
        return LstmNetwork.initialize(feature_count, self.config.hidden_units, self.config.seed, self.config.output_peephole)

    def validation_loss(self, network : LstmNetwork, dataset : SequenceDataset, kind : LossKind = None) -> float:
        """
        Mean loss over every valid (second, phase) entry of the dataset, read in order.
        """
        kind         = LossKind(kind or self.kind)
        total, count = 0.0, 0
        for batch in self.sequencer.iterate_in_order(dataset):
            prediction, _ = network.forward(batch.windows)
            values, _     = loss_terms(kind, prediction, batch.targets, batch.masks, self.config.mape_floor)
            total        += float(values.sum())
            count        += int(np.count_nonzero(batch.masks))
        if count == 0:
            raise NoValidEntries('validation data holds no valid target entry')
        return total / count

    def train_step(self, network : LstmNetwork, moments : AdamMoments, step : int, lr : float,
                   batch : SequenceBatch, kind : LossKind = None) -> Tuple[float, AdamMoments]:
        """
        Forward, loss, backward and one Adam update on a batch; `network.params` is replaced in place.
        """
        prediction, cache = network.forward(batch.windows)
        loss, d_pred      = compute_loss(kind or self.kind, prediction, batch.targets, batch.masks, self.config.mape_floor)
        grads             = network.backward(cache, d_pred).to_dict()
        params, moments   = adam_step(network.params.to_dict(), grads, moments, step, lr,
                                      self.config.betas, self.config.epsilon)
        network.params    = LstmParams.from_dict(params)
        return loss, moments

    def train(self, train_set : SequenceDataset, val_set : SequenceDataset, out_dir : str,
              network : LstmNetwork = None) -> TrainReport:
        """
        Runs the full training schedule.
        Arguments:
        ----------
            - train_set (SequenceDataset) : training samples.
            - val_set   (SequenceDataset) : validation samples.
            - out_dir   (str)             : receives epoch_XX.ckpt, best.ckpt, train_report.csv and the training
                                            sample index sample_index.csv.
            - network   (LstmNetwork)     : starting point; a freshly seeded network when omitted.
        Returns:
        --------
            - TrainReport : per-epoch losses and learning rates, and the best epoch.
        """
        self.check_manifest(train_set, val_set)
        if len(train_set) == 0:
            raise NoValidEntries('training data holds no sample')
        out_dir   = Path(out_dir)
        self.handler.save_data(sample_index_frame(train_set), str(out_dir / 'sample_index.csv'))
        network   = network or self.initial_network(train_set.day(0).feature_count)
        moments   = AdamMoments.zeros(network.params.to_dict())
        scheduler = PlateauScheduler(self.config.learning_rate, self.config.plateau_factor, self.config.plateau_patience)
        baseline  = self.validation_loss(network, val_set)
        scheduler.reference(baseline)
        report    = TrainReport(loss = self.kind.value, baseline_validation_loss = baseline)
        self.log.info(f'Training {self.kind.value}: {len(train_set)} samples, N={network.hidden_units}, '
                      f'seed {self.config.seed}, baseline validation loss {baseline:.6f}')

        step = 0
        for epoch in range(self.config.epochs):
            lr           = scheduler.learning_rate
            total, count = 0.0, 0
            for batch_id, batch in enumerate(self.sequencer.make_batches(train_set, self.config.seed, epoch)):
                step += 1
                try:
                    loss, moments = self.train_step(network, moments, step, lr, batch)
                except NonFiniteActivation as e:
                    self.log.error(f'Non-finite activation in epoch {epoch}, batch {batch_id}')
                    raise NonFiniteActivation(f'epoch {epoch}, batch {batch_id}: {e}') from e
                valid  = int(np.count_nonzero(batch.masks))
                total += loss * valid
                count += valid

            validation = self.validation_loss(network, val_set)
            scheduler.step(validation)
            checkpoint = out_dir / f'epoch_{epoch:02d}.ckpt'
            network.save(str(checkpoint), manifest_hash = self.manifest_hash, loss = self.kind.value,
                         epoch = epoch, validation_loss = validation, handler = self.handler)
            report.epochs.append(EpochRecord(epoch           = epoch,
                                             train_loss      = total / count,
                                             validation_loss = validation,
                                             learning_rate   = lr,
                                             checkpoint      = checkpoint.name))
            self.log.info(f'Epoch {epoch}: train {total / count:.6f}, validation {validation:.6f}, lr {lr:.6g}')

        if report.epochs:
            best                   = min(report.epochs, key = lambda record : (record.validation_loss, record.epoch))
            report.best_epoch      = best.epoch
            report.best_checkpoint = str(out_dir / 'best.ckpt')
            shutil.copyfile(out_dir / best.checkpoint, report.best_checkpoint)
            self.handler.save_data(report.to_frame(), str(out_dir / 'train_report.csv'))
            self.log.info(f'Best epoch {best.epoch} with validation loss {best.validation_loss:.6f}')
        return report


def grid_search(train_set     : SequenceDataset,
                val_set       : SequenceDataset,
                lrs           : Sequence[float],
                neuron_counts : Sequence[int],
                budget        : int,
                check_every   : int         = Config.GRID_CHECK_EVERY,
                base          : TrainConfig = None) -> pd.DataFrame:
    """
    Trains one MAPE model per (learning rate, neurons) cell at a constant learning rate, checks the validation MAPE
    every `check_every` processed samples until `budget` samples are spent, and keeps the lowest value reached.
    A failing cell is reported as NaN without stopping the others.
    Returns:
    --------
        - pd.DataFrame : rows = hidden units, columns = learning rates, values = best validation MAPE.
    """
    base  = replace(base or TrainConfig(), loss = LossKind.MAPE)
    log   = LoggerSetup(logger_name = 'trainer', logger_file = 'trainer').get_logger()
    cells = []
    for cell in ParameterGrid({'learning_rate' : list(lrs), 'hidden_units' : list(neuron_counts)}):
        config  = replace(base, learning_rate = cell['learning_rate'], hidden_units = cell['hidden_units'])
        trainer = Trainer(config)
        try:
            best = _grid_cell(trainer, train_set, val_set, budget, check_every)
        except SpatError as e:
            log.warning(f'Grid cell lr={config.learning_rate}, N={config.hidden_units} failed: {e}')
            best = np.nan
        log.info(f'Grid cell lr={config.learning_rate}, N={config.hidden_units}: validation MAPE {best:.4f}')
        cells.append({'hidden_units' : config.hidden_units, 'learning_rate' : config.learning_rate, 'mape' : best})

    table = pd.DataFrame(cells).pivot(index = 'hidden_units', columns = 'learning_rate', values = 'mape')
    return table.sort_index().sort_index(axis = 1, ascending = False)


def _grid_cell(trainer : Trainer, train_set : SequenceDataset, val_set : SequenceDataset, budget : int, check_every : int) -> float:
    if len(train_set) == 0:
        raise NoValidEntries('training data holds no sample')
    network    = trainer.initial_network(train_set.day(0).feature_count)
    moments    = AdamMoments.zeros(network.params.to_dict())
    best       = np.inf
    processed  = 0
    next_check = check_every
    step       = 0
    epoch      = 0
    while processed < budget:
        for batch in trainer.sequencer.make_batches(train_set, trainer.config.seed, epoch):
            step      += 1
            _, moments = trainer.train_step(network, moments, step, trainer.config.learning_rate, batch)
            processed += len(batch)
            if processed >= next_check or processed >= budget:
                best = min(best, trainer.validation_loss(network, val_set))
                while next_check <= processed:
                    next_check += check_every
            if processed >= budget:
                break
        epoch += 1
    return float(best)
