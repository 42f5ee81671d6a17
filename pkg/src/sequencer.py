import numpy as np
import pandas as pd
from config import Config
from logger import LoggerSetup
from dataclasses import dataclass
from torch.utils.data import DataLoader, Dataset
from typing import Dict, Iterator, List, Optional, Sequence, Union
from src.exceptions import ConfigError, HashMismatch, WidthMismatch
from src.data_handler import DataHandler, EncodedDay


@dataclass(frozen = True)
class SequenceSample:
    window : np.ndarray
    target : np.ndarray
    mask   : np.ndarray


@dataclass(frozen = True)
class SequenceBatch:
    windows : np.ndarray
    targets : np.ndarray
    masks   : np.ndarray
    indices : np.ndarray

    def __len__(self) -> int:
        return self.windows.shape[0]


def _check_width(day : EncodedDay, feature_count : Optional[int], name : str = 'day'):
    if feature_count is not None and day.feature_count != feature_count:
        raise WidthMismatch(f'{name} has {day.feature_count} features, the manifest declares {feature_count}')


def _check_manifest(day : EncodedDay, manifest_hash : Optional[str], name : str = 'day'):
    if manifest_hash and bytes(day.manifest_digest).hex() != manifest_hash:
        raise HashMismatch(f'{name} was encoded with manifest {bytes(day.manifest_digest).hex()[:12]}, '
                           f'expected {manifest_hash[:12]}')


def sample_rows(day : EncodedDay, window : int = Config.WINDOW_SECONDS) -> np.ndarray:
    """
    Rows of a day that end a full window and carry at least one valid target.
    """
    valid = np.asarray(day.mask).any(axis = 1)
    rows  = np.nonzero(valid)[0]
    return rows[rows >= window - 1]


def make_sequences(day : EncodedDay, window : int = Config.WINDOW_SECONDS, feature_count : int = None) -> Iterator[SequenceSample]:
    """
    Yields the samples of one day in time order.
    Arguments:
    ----------
        - day           (EncodedDay) : a day on the gapless grid.
        - window        (int)        : timesteps per sample, ending at the prediction second.
        - feature_count (int)        : width the manifest declares; checked when given.
    Returns:
    --------
        - iterator of SequenceSample : windows never reach across the day's first second.
    """
    _check_width(day, feature_count)
    targets = day.normalized
    for row in sample_rows(day, window):
        yield SequenceSample(window = np.asarray(day.features[row - window + 1:row + 1], dtype = np.float64),
                             target = targets[row].astype(np.float64),
                             mask   = np.asarray(day.mask[row]) > 0)


def build_sample_index(days : Sequence[EncodedDay], window : int = Config.WINDOW_SECONDS) -> np.ndarray:
    """
    (day id, row) pairs of every sample over a list of days, day-major.
    """
    blocks = [np.column_stack([np.full(len(rows), day_id, dtype = np.int64), rows.astype(np.int64)])
              for day_id, rows in ((i, sample_rows(day, window)) for i, day in enumerate(days))]
    return np.vstack(blocks) if blocks else np.zeros((0, 2), dtype = np.int64)


def _identity(batch):
    return batch


class SequenceDataset(Dataset):
    def __init__(self,
                 days          : Sequence[Union[str, EncodedDay]],
                 window        : int        = Config.WINDOW_SECONDS,
                 feature_count : int        = None,
                 index         : np.ndarray = None,
                 manifest_hash : str        = None):
        """
        Map-style dataset of sliding windows over encoded days. Windows are sliced on demand from the (memory-mapped)
        day matrices through an index of (day, row) pairs, so memory stays bounded by the batch size.
        Indexing with a list of positions returns a whole SequenceBatch.
        Arguments:
        ----------
            - days          (list)       : encoded day container paths or EncodedDay objects.
            - window        (int)        : timesteps per sample.
            - feature_count (int)        : expected width; WidthMismatch otherwise.
            - index         (np.ndarray) : precomputed sample index; built from the days when omitted.
            - manifest_hash (str)        : content hash every day must have been encoded with; HashMismatch otherwise.
        """
        self.sources       = list(days)
        self.window        = window
        self.feature_count = feature_count
        self.manifest_hash = manifest_hash
        self._days         = {}
        self.offsets       = np.arange(-window + 1, 1)
        self.index         = np.asarray(index, dtype = np.int64) if index is not None else \
                             build_sample_index([self.day(i) for i in range(len(self.sources))], window)

    def __getstate__(self) -> dict:
        state          = self.__dict__.copy()
        state['_days'] = {k : v for k, v in self._days.items() if not isinstance(self.sources[k], str)}
        return state

    def source_name(self, day_id : int) -> str:
        source = self.sources[day_id]
        return source if isinstance(source, str) else f'day-{day_id}'

    def day(self, day_id : int) -> EncodedDay:
        if day_id not in self._days:
            source = self.sources[day_id]
            day    = DataHandler().load_day(source) if isinstance(source, str) else source
            _check_width(day, self.feature_count, name = self.source_name(day_id))
            _check_manifest(day, self.manifest_hash, name = self.source_name(day_id))
            self._days[day_id] = day
        return self._days[day_id]

    def require_manifest(self, manifest_hash : str) -> 'SequenceDataset':
        """
        Checks every day against `manifest_hash`, including days already loaded, and keeps checking days loaded later.
        """
        self.manifest_hash = manifest_hash
        for day_id in range(len(self.sources)):
            _check_manifest(self.day(day_id), manifest_hash, name = self.source_name(day_id))
        return self

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, item):
        if isinstance(item, (list, tuple, np.ndarray)):
            return self.take(item)
        day_id, row = self.index[item]
        day         = self.day(int(day_id))
        return SequenceSample(window = np.asarray(day.features[row + self.offsets], dtype = np.float64),
                              target = day.normalized[row].astype(np.float64),
                              mask   = np.asarray(day.mask[row]) > 0)

    def take(self, positions) -> SequenceBatch:
        positions = np.asarray(positions, dtype = np.int64)
        pairs     = self.index[positions]
        width     = self.day(int(pairs[0, 0])).feature_count if len(pairs) else (self.feature_count or 0)
        windows   = np.empty((len(pairs), self.window, width), dtype = np.float64)
        targets   = np.empty((len(pairs), Config.N_PHASES), dtype = np.float64)
        masks     = np.empty((len(pairs), Config.N_PHASES), dtype = bool)
        for day_id in np.unique(pairs[:, 0]):
            selected          = pairs[:, 0] == day_id
            rows              = pairs[selected, 1]
            day               = self.day(int(day_id))
            windows[selected] = day.features[rows[:, None] + self.offsets[None, :]]
            remaining         = np.asarray(day.remaining[rows], dtype = np.float64)
            valid             = np.asarray(day.mask[rows]) > 0
            targets[selected] = np.where(valid, remaining / Config.HORIZON_SECONDS, Config.MISSING)
            masks[selected]   = valid
        return SequenceBatch(windows = windows, targets = targets, masks = masks, indices = positions)


class Sequencer:
    def __init__(self, batch_size : int = Config.BATCH_SIZE, workers : int = 0, prefetch : int = 2):
        """
        Streams SequenceBatches out of a SequenceDataset through a torch DataLoader. With `workers` > 0 the batches
        are produced by background processes, at most `prefetch` batches ahead per worker; order is fixed by the
        sampler, so concurrency never changes what a step sees.
        """
        self.batch_size = batch_size
        self.workers    = workers
        self.prefetch   = prefetch
        self.log        = LoggerSetup(logger_name = 'sequencer',
                                      logger_file = 'sequencer').get_logger()

    def _loader(self, dataset : SequenceDataset, chunks : List[List[int]]) -> DataLoader:
        options = {'sampler'     : chunks,
                   'batch_size'  : None,
                   'collate_fn'  : _identity,
                   'num_workers' : self.workers}
        if self.workers > 0:
            options['prefetch_factor'] = self.prefetch
        return DataLoader(dataset, **options)

    def _chunks(self, order : np.ndarray) -> List[List[int]]:
        return [order[i:i + self.batch_size].tolist() for i in range(0, len(order), self.batch_size)]

    @staticmethod
    def permutation(n_samples : int, seed : int, epoch : int) -> np.ndarray:
        return np.random.default_rng([int(seed), int(epoch)]).permutation(n_samples)

    def make_batches(self, dataset : SequenceDataset, seed : int, epoch : int) -> Iterator[SequenceBatch]:
        """
        Shuffled batches of one epoch.
        Arguments:
        ----------
            - dataset (SequenceDataset) : the samples.
            - seed    (int)             : run seed.
            - epoch   (int)             : epoch number; (seed, epoch) fixes the permutation.
        Returns:
        --------
            - iterator of SequenceBatch : every sample exactly once; the last batch may be short.
        """
        order = self.permutation(len(dataset), seed, epoch)
        self.log.debug(f'Epoch {epoch}: {len(order)} samples in batches of {self.batch_size}')
        yield from self._loader(dataset, self._chunks(order))

    def iterate_in_order(self, dataset : SequenceDataset) -> Iterator[SequenceBatch]:
        yield from self._loader(dataset, self._chunks(np.arange(len(dataset))))


def make_batches(dataset : SequenceDataset, batch_size : int = Config.BATCH_SIZE, seed : int = 0, epoch : int = 0,
                 workers : int = 0, prefetch : int = 2) -> Iterator[SequenceBatch]:
    return Sequencer(batch_size, workers, prefetch).make_batches(dataset, seed, epoch)


def iterate_in_order(dataset : SequenceDataset, batch_size : int = Config.BATCH_SIZE, workers : int = 0) -> Iterator[SequenceBatch]:
    return Sequencer(batch_size, workers).iterate_in_order(dataset)


def sample_index_frame(dataset : SequenceDataset) -> pd.DataFrame:
    sources = [dataset.source_name(i) for i in range(len(dataset.sources))]
    return pd.DataFrame({'day'    : [sources[int(d)] for d in dataset.index[:, 0]],
                         'day_id' : dataset.index[:, 0],
                         'row'    : dataset.index[:, 1]})


def index_from_frame(frame : pd.DataFrame, sources : Sequence[str] = None) -> np.ndarray:
    """
    Sample index stored by `sample_index_frame`. With `sources`, every row must name the day file found at its day_id.
    """
    if sources is not None:
        named = [str(s) for s in sources]
        bad   = [day for day, day_id in zip(frame['day'], frame['day_id'])
                 if not 0 <= int(day_id) < len(named) or named[int(day_id)] != str(day)]
        if bad:
            raise ConfigError(f'sample index names {len(bad)} rows of days not given in this order, first {bad[0]}')
    return frame[['day_id', 'row']].to_numpy(dtype = np.int64)
