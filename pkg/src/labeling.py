import numpy as np
import pandas as pd
from config import Config
from dataclasses import dataclass
from typing import Sequence


GREEN     = 1
NOT_GREEN = 0
MISSING   = -1


@dataclass(frozen = True)
class PhaseTargets:
    """
    Remaining seconds until each phase switches between green and not-green, per second of a day.
    `remaining` and `normalized` hold -1 where `mask` is False.
    """
    remaining  : np.ndarray
    mask       : np.ndarray
    normalized : np.ndarray


def phase_state_code(label) -> int:
    """
    Folds the displayed indication into the two-state target convention: yellow counts as not green.
    """
    if label is None or (isinstance(label, float) and np.isnan(label)):
        return MISSING
    return GREEN if label == 'green' else NOT_GREEN


def phase_states(grid : pd.DataFrame, phase_ids : Sequence[int], column : str = 'signal.phases.{}.state') -> np.ndarray:
    """
    State codes (seconds x phases) read from a flattened frame already laid on the one-second grid.
    """
    codes = np.full((len(grid), len(phase_ids)), MISSING, dtype = np.int8)
    for k, phase_id in enumerate(phase_ids):
        name = column.format(phase_id)
        if name in grid.columns:
            codes[:, k] = [phase_state_code(value) for value in grid[name].to_numpy(dtype = object)]
    return codes


def normalize_targets(remaining : np.ndarray, mask : np.ndarray, horizon : int = Config.HORIZON_SECONDS) -> PhaseTargets:
    remaining  = np.asarray(remaining)
    mask       = np.asarray(mask, dtype = bool)
    normalized = np.where(mask, remaining / float(horizon), Config.MISSING)
    return PhaseTargets(remaining = np.where(mask, remaining, -1).astype(np.int64),
                        mask       = mask,
                        normalized = normalized)


def compute_targets(states : np.ndarray, horizon : int = Config.HORIZON_SECONDS) -> PhaseTargets:
    """
    Rolling backward recurrence over the day: a second whose successor shows a different state switches in 1 s,
    otherwise it switches one second later than its successor. Missing states, the day end and switches beyond the
    horizon leave the entry masked.
    Arguments:
    ----------
        - states  (np.ndarray) : (seconds, phases) codes GREEN / NOT_GREEN / MISSING on a gapless grid.
        - horizon (int)        : longest countdown kept, in seconds.
    Returns:
    --------
        - PhaseTargets : remaining seconds, validity mask and values normalized by the horizon.
    """
    states    = np.asarray(states)
    n_seconds = states.shape[0]
    remaining = np.full(states.shape, -1, dtype = np.int64)
    for t in range(n_seconds - 2, -1, -1):
        current   = states[t]
        following = states[t + 1]
        carried   = np.where(remaining[t + 1] > 0, remaining[t + 1] + 1, -1)
        carried   = np.where(carried <= horizon, carried, -1)
        step      = np.where(following != current, 1, carried)
        remaining[t] = np.where((current == MISSING) | (following == MISSING), -1, step)
    return normalize_targets(remaining, remaining > 0, horizon)


def scan(states : np.ndarray, horizon : int = Config.HORIZON_SECONDS) -> PhaseTargets:
    """
    Direct forward scan: looks ahead one offset at a time until the state changes, a missing second blocks the
    look-ahead, or the horizon is exhausted. Must agree exactly with `compute_targets`.
    """
    states    = np.asarray(states)
    n_seconds = states.shape[0]
    remaining = np.full(states.shape, -1, dtype = np.int64)
    pending   = states != MISSING
    for k in range(1, horizon + 1):
        if not pending.any():
            break
        ahead            = np.full(states.shape, MISSING, dtype = states.dtype)
        if k < n_seconds:
            ahead[:n_seconds - k] = states[k:]
        blocked          = pending & (ahead == MISSING)
        switched         = pending & ~blocked & (ahead != states)
        remaining[switched] = k
        pending         &= ~(blocked | switched)
    return normalize_targets(remaining, remaining > 0, horizon)


def masked_fraction(targets : PhaseTargets) -> float:
    return float(1.0 - np.mean(targets.mask)) if targets.mask.size else 0.0
