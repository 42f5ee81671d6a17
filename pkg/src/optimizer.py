import numpy as np
from config import Config
from logger import LoggerSetup
from dataclasses import dataclass
from typing import Dict, Tuple


@dataclass
class AdamMoments:
    first  : Dict[str, np.ndarray]
    second : Dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params : Dict[str, np.ndarray]) -> 'AdamMoments':
        return cls(first  = {name : np.zeros_like(value) for name, value in params.items()},
                   second = {name : np.zeros_like(value) for name, value in params.items()})


def adam_step(params  : Dict[str, np.ndarray],
              grads   : Dict[str, np.ndarray],
              moments : AdamMoments,
              t       : int,
              lr      : float,
              betas   : Tuple[float, float] = Config.ADAM_BETAS,
              eps     : float               = Config.ADAM_EPSILON) -> Tuple[Dict[str, np.ndarray], AdamMoments]:
    """
    One Adam update; returns new parameter and moment dictionaries and leaves the inputs untouched.
    Arguments:
    ----------
        - params  (dict)        : name -> parameter array.
        - grads   (dict)        : name -> gradient array, same shapes.
        - moments (AdamMoments) : running first and second moments.
        - t       (int)         : step number, starting at 1.
        - lr      (float)       : learning rate.
    Returns:
    --------
        - (dict, AdamMoments)
    """
    if t < 1:
        raise ValueError('Adam step numbers start at 1')
    beta1, beta2  = betas
    correction1   = 1.0 - beta1 ** t
    correction2   = 1.0 - beta2 ** t
    updated       = {}
    first, second = {}, {}
    for name, value in params.items():
        g            = grads[name]
        first[name]  = beta1 * moments.first[name] + (1.0 - beta1) * g
        second[name] = beta2 * moments.second[name] + (1.0 - beta2) * g * g
        m_hat        = first[name] / correction1
        v_hat        = second[name] / correction2
        updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated, AdamMoments(first = first, second = second)


class PlateauScheduler:
    def __init__(self, learning_rate : float = Config.LEARNING_RATE, factor : float = Config.PLATEAU_FACTOR,
                 patience : int = Config.PLATEAU_PATIENCE):
        """
        Multiplies the learning rate by `factor` after every `patience` consecutive epochs whose validation loss does
        not improve on the best seen so far. The rate is recomputed from the initial value, so k decays give exactly
        learning_rate * factor ** k.
        """
        self.initial  = learning_rate
        self.factor   = factor
        self.patience = patience
        self.best     = np.inf
        self.stale    = 0
        self.decays   = 0
        self.log      = LoggerSetup(logger_name = 'optimizer',
                                    logger_file = 'optimizer').get_logger()

    @property
    def learning_rate(self) -> float:
        return self.initial * self.factor ** self.decays

    def reference(self, loss : float):
        """
        Sets the loss the next epoch has to improve on without counting an epoch.
        """
        self.best = float(loss)

    def step(self, loss : float) -> bool:
        """
        Records one epoch's validation loss; returns True when it improved.
        """
        if loss < self.best:
            self.best  = float(loss)
            self.stale = 0
            return True
        self.stale += 1
        if self.stale >= self.patience:
            self.decays += 1
            self.stale   = 0
            self.log.info(f'Validation loss did not improve, learning rate now {self.learning_rate:.6g}')
        return False
