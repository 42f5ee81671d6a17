import hashlib
import numpy as np
import pandas as pd
from pathlib import Path
from config import Config
from logger import LoggerSetup
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
from src.data_handler import DataHandler
from src.lstm_network import LstmNetwork
from src.sequencer import SequenceDataset, Sequencer
from src.exceptions import HashMismatch, MismatchedTestSets


N_BUCKETS      = Config.HORIZON_SECONDS // Config.BUCKET_SECONDS
BUCKET_LABELS  = [f'{k * Config.BUCKET_SECONDS}-{(k + 1) * Config.BUCKET_SECONDS}' for k in range(N_BUCKETS)]
BUCKET_COLUMNS = ['bucket', 'count', 'mae', 'q1', 'median', 'q3', 'whisker_low', 'whisker_high', 'outliers']


def truth_seconds(targets : np.ndarray, horizon : int = Config.HORIZON_SECONDS) -> np.ndarray:
    return np.rint(np.asarray(targets, dtype = np.float64) * horizon).astype(np.int64)


def bucket_of(truth : np.ndarray) -> np.ndarray:
    """
    Horizon bucket of a true remaining time; 200 s falls in the last bucket.
    """
    return np.minimum(np.asarray(truth) // Config.BUCKET_SECONDS, N_BUCKETS - 1).astype(np.int64)


def box_statistics(errors : pd.Series) -> dict:
    """
    Quartiles, 1.5 IQR whiskers (most extreme data inside the fences) and the number of points beyond them.
    """
    if errors.empty:
        return {'count' : 0, 'mae' : np.nan, 'q1' : np.nan, 'median' : np.nan, 'q3' : np.nan,
                'whisker_low' : np.nan, 'whisker_high' : np.nan, 'outliers' : 0}
    q1          = errors.quantile(0.25)
    q3          = errors.quantile(0.75)
    iqr         = q3 - q1
    lower_bound = q1 - 1.5 * iqr
    upper_bound = q3 + 1.5 * iqr
    inside      = errors[(errors >= lower_bound) & (errors <= upper_bound)]
    return {'count'        : int(errors.size),
            'mae'          : float(errors.mean()),
            'q1'           : float(q1),
            'median'       : float(errors.median()),
            'q3'           : float(q3),
            'whisker_low'  : float(inside.min()),
            'whisker_high' : float(inside.max()),
            'outliers'     : int(((errors < lower_bound) | (errors > upper_bound)).sum())}


@dataclass
class HorizonReport:
    loss                 : str
    buckets              : pd.DataFrame
    cdf                  : pd.DataFrame
    points               : pd.DataFrame
    overall_mae          : float
    total_absolute_error : float
    count                : int
    fingerprint          : str

    def summary(self) -> dict:
        return {'loss'                 : self.loss,
                'count'                : int(self.count),
                'overall_mae'          : None if np.isnan(self.overall_mae) else float(self.overall_mae),
                'total_absolute_error' : float(self.total_absolute_error),
                'fingerprint'          : self.fingerprint}

    def write(self, out_dir : str, handler : DataHandler = None):
        handler = handler or DataHandler()
        out_dir = Path(out_dir)
        handler.save_data(self.points, str(out_dir / 'bucket_points.csv'))
        handler.save_data(self.buckets, str(out_dir / 'buckets.csv'))
        handler.save_data(self.cdf, str(out_dir / 'cdf.csv'))
        handler.save_json(self.summary(), str(out_dir / 'summary.json'))

    @classmethod
    def load(cls, out_dir : str, handler : DataHandler = None) -> 'HorizonReport':
        handler = handler or DataHandler()
        out_dir = Path(out_dir)
        summary = handler.load_json(str(out_dir / 'summary.json'))
        return cls(loss                 = summary['loss'],
                   buckets              = handler.load_data(str(out_dir / 'buckets.csv')),
                   cdf                  = handler.load_data(str(out_dir / 'cdf.csv')),
                   points               = handler.load_data(str(out_dir / 'bucket_points.csv')),
                   overall_mae          = np.nan if summary['overall_mae'] is None else summary['overall_mae'],
                   total_absolute_error = summary['total_absolute_error'],
                   count                = summary['count'],
                   fingerprint          = summary['fingerprint'])


@dataclass
class Comparison:
    mae                : pd.DataFrame
    ranks              : pd.DataFrame
    overall            : pd.DataFrame
    first_bucket_best  : Optional[str]
    last_bucket_best   : Optional[str]

    def write(self, out_dir : str, handler : DataHandler = None):
        handler = handler or DataHandler()
        out_dir = Path(out_dir)
        handler.save_data(self.mae, str(out_dir / 'comparison_mae.csv'), index = True)
        handler.save_data(self.ranks, str(out_dir / 'comparison_ranks.csv'), index = True)
        handler.save_data(self.overall, str(out_dir / 'comparison_overall.csv'), index = True)
        handler.save_json({'first_bucket_best' : self.first_bucket_best,
                           'last_bucket_best'  : self.last_bucket_best,
                           'overall_ranking'   : list(self.overall.index)},
                          str(out_dir / 'comparison.json'))


class Evaluator:
    def __init__(self, batch_size : int = Config.BATCH_SIZE, workers : int = 0):
        """
        The Evaluator scores a trained network on test data by horizon: every valid (second, phase) entry is assigned
        to the 20 s bucket of its true remaining time, and per-bucket error statistics plus the cumulative
        distribution of absolute errors are reported.
        """
        self.sequencer = Sequencer(batch_size = batch_size, workers = workers)
        self.log       = LoggerSetup(logger_name = 'evaluation',
                                     logger_file = 'evaluation').get_logger()

    def evaluate_model(self, checkpoint : str, dataset : SequenceDataset, manifest_hash : str) -> HorizonReport:
        """
        Evaluates a checkpoint on the test samples.
        Arguments:
        ----------
            - checkpoint    (str)             : checkpoint path.
            - dataset       (SequenceDataset) : test samples.
            - manifest_hash (str)             : hash of the manifest; checkpoint and every test day must carry it.
        Returns:
        --------
            - HorizonReport
        """
        network, header = LstmNetwork.load(checkpoint)
        if header.get('manifest_hash') != manifest_hash:
            self.log.error(f'{checkpoint} was trained on manifest {header.get("manifest_hash")}, test data uses {manifest_hash}')
            raise HashMismatch(f'{checkpoint}: manifest hash differs from the test data')
        try:
            dataset.require_manifest(manifest_hash)
        except HashMismatch as e:
            self.log.error(f'Test data does not match manifest {manifest_hash[:12]}: {e}')
            raise

        predictions, truths, masks = [], [], []
        for batch in self.sequencer.iterate_in_order(dataset):
            predictions.append(network.predict_seconds(batch.windows))
            truths.append(truth_seconds(batch.targets))
            masks.append(batch.masks)
        if not predictions:
            empty = np.zeros((0, Config.N_PHASES), dtype = np.int64)
            return self.horizon_report(empty, empty, empty.astype(bool), header.get('loss', ''), manifest_hash)
        report = self.horizon_report(np.vstack(predictions), np.vstack(truths), np.vstack(masks),
                                     header.get('loss', ''), manifest_hash)
        self.log.info(f'Evaluated {checkpoint}: {report.count} entries, overall MAE {report.overall_mae:.3f} s')
        return report

    def horizon_report(self, predictions : np.ndarray, truths : np.ndarray, mask : np.ndarray, loss : str = '',
                       manifest_hash : str = '') -> HorizonReport:
        """
        Builds the report from predicted and true seconds (samples x phases) and the validity mask.
        """
        mask           = np.asarray(mask, dtype = bool)
        truths         = np.asarray(truths, dtype = np.int64)
        samples, phase = np.nonzero(mask)
        truth          = truths[mask]
        error          = np.abs(np.asarray(predictions, dtype = np.int64)[mask] - truth)
        points         = pd.DataFrame({'sample'     : samples,
                                       'phase'      : phase + 1,
                                       'truth'      : truth,
                                       'prediction' : np.asarray(predictions, dtype = np.int64)[mask],
                                       'error'      : error,
                                       'bucket'     : [BUCKET_LABELS[b] for b in bucket_of(truth)]})

        rows = []
        for label in BUCKET_LABELS:
            stats = box_statistics(points.loc[points['bucket'] == label, 'error'].astype(np.float64))
            rows.append({'bucket' : label, **stats})
        buckets = pd.DataFrame(rows, columns = BUCKET_COLUMNS)

        if error.size:
            values, counts = np.unique(error, return_counts = True)
            cdf            = pd.DataFrame({'error' : values, 'fraction' : np.cumsum(counts) / error.size})
        else:
            cdf            = pd.DataFrame({'error' : pd.Series(dtype = np.int64), 'fraction' : pd.Series(dtype = np.float64)})

        fingerprint = hashlib.sha256()
        fingerprint.update(manifest_hash.encode('utf-8'))
        fingerprint.update(np.where(mask, truths, -1).astype('<i4').tobytes())
        return HorizonReport(loss                 = loss,
                             buckets              = buckets,
                             cdf                  = cdf,
                             points               = points,
                             overall_mae          = float(error.mean()) if error.size else np.nan,
                             total_absolute_error = float(error.sum()),
                             count                = int(error.size),
                             fingerprint          = fingerprint.hexdigest())


def compare_models(reports : Dict[str, HorizonReport]) -> Comparison:
    """
    Ranks models evaluated on the identical test set, per bucket by MAE and overall by total absolute error.
    Arguments:
    ----------
        - reports (dict) : loss kind -> HorizonReport.
    Returns:
    --------
        - Comparison : MAE table, rank table (ties share the lower rank), overall ranking and the models with the
                       lowest MAE in the first and the last horizon bucket.
    """
    fingerprints = {report.fingerprint for report in reports.values()}
    if len(fingerprints) > 1:
        raise MismatchedTestSets('reports were computed on different test sets')

    mae   = pd.DataFrame({name : report.buckets.set_index('bucket')['mae'] for name, report in reports.items()})
    mae   = mae.reindex(BUCKET_LABELS)
    ranks = mae.rank(axis = 1, method = 'min')

    overall         = pd.DataFrame({'total_absolute_error' : {n : r.total_absolute_error for n, r in reports.items()},
                                    'overall_mae'          : {n : r.overall_mae for n, r in reports.items()}})
    overall['rank'] = overall['total_absolute_error'].rank(method = 'min')
    overall         = overall.sort_values(['rank', 'total_absolute_error'], kind = 'mergesort')

    def best(label : str) -> Optional[str]:
        row = mae.loc[label]
        return None if row.isna().all() else str(row.idxmin())

    return Comparison(mae               = mae,
                      ranks             = ranks,
                      overall           = overall,
                      first_bucket_best = best(BUCKET_LABELS[0]),
                      last_bucket_best  = best(BUCKET_LABELS[-1]))


def trend_checks(comparison : Comparison) -> Dict[str, bool]:
    """
    The three qualitative findings of the loss study, evaluated on one comparison:
    MAPE is best on the shortest horizons, TDSE has the lowest mean MAE below 100 s and MSE beats MAPE on every
    bucket from 100 s on.
    """
    mae    = comparison.mae
    checks = {'mape_wins_first_bucket'    : False,
              'tdse_best_below_100'       : False,
              'mse_beats_mape_from_100'   : False}
    if 'mape' in mae.columns:
        checks['mape_wins_first_bucket'] = bool(comparison.ranks.loc[BUCKET_LABELS[0], 'mape'] == 1)
    if 'tdse' in mae.columns:
        short = mae.loc[BUCKET_LABELS[:5]].mean(axis = 0)
        checks['tdse_best_below_100'] = bool(not np.isnan(short['tdse']) and short['tdse'] <= short.min())
    if {'mse', 'mape'} <= set(mae.columns):
        long  = mae.loc[BUCKET_LABELS[5:], ['mse', 'mape']].dropna()
        checks['mse_beats_mape_from_100'] = bool(len(long) > 0 and (long['mse'] < long['mape']).all())
    return checks


def majority_verdict(runs : Sequence[Dict[str, bool]]) -> pd.DataFrame:
    """
    Aggregates trend checks over repeated runs; a finding holds when more than half of the runs show it.
    """
    frame   = pd.DataFrame(list(runs))
    verdict = pd.DataFrame({'passes' : frame.sum(axis = 0).astype(int),
                            'runs'   : len(frame)})
    verdict['holds'] = verdict['passes'] * 2 > verdict['runs']
    for k in range(len(frame)):
        verdict[f'run_{k}'] = frame.iloc[k].astype(bool)
    verdict.index.name = 'finding'
    return verdict
