import numpy as np
from enum import Enum
from config import Config
from typing import Tuple
from src.exceptions import NoValidEntries


class LossKind(str, Enum):
    MSE  = 'mse'
    MAE  = 'mae'
    MAPE = 'mape'
    TDSE = 'tdse'


def loss_terms(kind : LossKind, pred : np.ndarray, true : np.ndarray, mask : np.ndarray,
               mape_floor : float = Config.MAPE_FLOOR) -> Tuple[np.ndarray, np.ndarray]:
    """
    Elementwise loss values and their derivatives with respect to `pred`; both are 0 at masked entries.
    Masked targets are replaced by 0 before any arithmetic so their content never reaches the result.
    """
    kind = LossKind(kind)
    mask = np.asarray(mask, dtype = bool)
    pred = np.asarray(pred, dtype = np.float64)
    true = np.where(mask, np.asarray(true, dtype = np.float64), 0.0)
    diff = np.where(mask, pred - true, 0.0)

    if kind is LossKind.MSE:
        values, slopes = diff ** 2, 2.0 * diff
    elif kind is LossKind.MAE:
        values, slopes = np.abs(diff), np.sign(diff)
    elif kind is LossKind.MAPE:
        scale          = 100.0 / np.maximum(true, mape_floor)
        values, slopes = scale * np.abs(diff), scale * np.sign(diff)
    else:
        # squared error discounted towards the end of the horizon
        discount       = (1.0 - true) ** 2
        values, slopes = diff ** 2 * discount, 2.0 * diff * discount
    return np.where(mask, values, 0.0), np.where(mask, slopes, 0.0)


def compute_loss(kind : LossKind, pred : np.ndarray, true : np.ndarray, mask : np.ndarray,
                 mape_floor : float = Config.MAPE_FLOOR) -> Tuple[float, np.ndarray]:
    """
    Mean loss over the valid entries of a batch.
    Arguments:
    ----------
        - kind       (LossKind)   : mse, mae, mape or tdse.
        - pred       (np.ndarray) : normalized predictions.
        - true       (np.ndarray) : normalized targets, in [0, 1] where valid.
        - mask       (np.ndarray) : True for valid entries.
        - mape_floor (float)      : smallest target MAPE divides by.
    Returns:
    --------
        - (float, np.ndarray) : the loss and its gradient with respect to `pred`.
    """
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise NoValidEntries('batch holds no valid target entry')
    values, slopes = loss_terms(kind, pred, true, mask, mape_floor)
    return float(values.sum() / count), slopes / count
