import numpy as np
from config import Config
from logger import LoggerSetup
from scipy.special import expit
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Tuple
from src.data_handler import DataHandler
from src.exceptions import NonFiniteActivation, ShapeMismatch


CHECKPOINT_VERSION = 1
OUTPUT_PEEPHOLES   = ('previous', 'current')


@dataclass
class LstmParams:
    """
    Every weight of the network: the peephole LSTM cell (11 weight groups, 4 biases), the dense ReLU layer and the
    linear head. Row-vector convention: a pre-activation is x @ w_x + h @ w_h + c * w_c + b.
    """
    w_xi    : np.ndarray
    w_xf    : np.ndarray
    w_xc    : np.ndarray
    w_xo    : np.ndarray
    w_hi    : np.ndarray
    w_hf    : np.ndarray
    w_hc    : np.ndarray
    w_ho    : np.ndarray
    w_ci    : np.ndarray
    w_cf    : np.ndarray
    w_co    : np.ndarray
    b_i     : np.ndarray
    b_f     : np.ndarray
    b_c     : np.ndarray
    b_o     : np.ndarray
    w_dense : np.ndarray
    b_dense : np.ndarray
    w_head  : np.ndarray
    b_head  : np.ndarray

    @classmethod
    def names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> Dict[str, np.ndarray]:
        return {name : getattr(self, name) for name in self.names()}

    @classmethod
    def from_dict(cls, arrays : Dict[str, np.ndarray]) -> 'LstmParams':
        return cls(**{name : np.asarray(arrays[name], dtype = np.float64) for name in cls.names()})

    def zeros_like(self) -> 'LstmParams':
        return LstmParams(**{name : np.zeros_like(value) for name, value in self.to_dict().items()})

    @property
    def feature_count(self) -> int:
        return self.w_xi.shape[0]

    @property
    def hidden_units(self) -> int:
        return self.w_xi.shape[1]

    def size(self) -> int:
        return int(sum(value.size for value in self.to_dict().values()))


@dataclass
class GateCache:
    h_prev : np.ndarray
    c_prev : np.ndarray
    i      : np.ndarray
    f      : np.ndarray
    g      : np.ndarray
    o      : np.ndarray
    c      : np.ndarray
    tanh_c : np.ndarray


@dataclass
class ForwardCache:
    inputs    : np.ndarray
    steps     : List[GateCache]
    h_last    : np.ndarray
    dense_pre : np.ndarray
    dense_out : np.ndarray
    single    : bool = False


def _glorot(rng : np.random.Generator, shape : Tuple[int, ...], fan_in : int, fan_out : int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size = shape)


def init_params(feature_count : int, hidden_units : int, seed : int) -> LstmParams:
    """
    Glorot-uniform weights per group, zero biases except the forget-gate bias, set to 1.
    Arguments:
    ----------
        - feature_count (int) : input width.
        - hidden_units  (int) : N, the width of the LSTM and dense layers.
        - seed          (int) : initialization seed.
    Returns:
    --------
        - LstmParams
    """
    if hidden_units < 1 or feature_count < 1:
        raise ShapeMismatch(f'cannot build a network with {feature_count} inputs and {hidden_units} units')
    rng    = np.random.default_rng(seed)
    f, n   = feature_count, hidden_units
    arrays = {}
    for name in ('w_xi', 'w_xf', 'w_xc', 'w_xo'):
        arrays[name] = _glorot(rng, (f, n), f, n)
    for name in ('w_hi', 'w_hf', 'w_hc', 'w_ho'):
        arrays[name] = _glorot(rng, (n, n), n, n)
    # diagonal peepholes drawn with the bounds of the full n x n matrix they stand for
    for name in ('w_ci', 'w_cf', 'w_co'):
        arrays[name] = _glorot(rng, (n,), n, n)
    arrays['b_i']     = np.zeros(n)
    arrays['b_f']     = np.ones(n)
    arrays['b_c']     = np.zeros(n)
    arrays['b_o']     = np.zeros(n)
    arrays['w_dense'] = _glorot(rng, (n, n), n, n)
    arrays['b_dense'] = np.zeros(n)
    arrays['w_head']  = _glorot(rng, (n, Config.N_PHASES), n, Config.N_PHASES)
    arrays['b_head']  = np.zeros(Config.N_PHASES)
    return LstmParams(**arrays)


def _input_weights(params : LstmParams) -> np.ndarray:
    return np.hstack([params.w_xi, params.w_xf, params.w_xc, params.w_xo])


def _recurrent_weights(params : LstmParams) -> np.ndarray:
    return np.hstack([params.w_hi, params.w_hf, params.w_hc, params.w_ho])


def _biases(params : LstmParams) -> np.ndarray:
    return np.concatenate([params.b_i, params.b_f, params.b_c, params.b_o])


def _cell(pre_input : np.ndarray, h_prev : np.ndarray, c_prev : np.ndarray, params : LstmParams,
          w_h : np.ndarray, output_peephole : str) -> Tuple[np.ndarray, np.ndarray, GateCache]:
    n   = h_prev.shape[-1]
    pre = pre_input + h_prev @ w_h
    i   = expit(pre[:, :n] + c_prev * params.w_ci)
    f   = expit(pre[:, n:2 * n] + c_prev * params.w_cf)
    g   = np.tanh(pre[:, 2 * n:3 * n])
    c   = f * c_prev + i * g
    o   = expit(pre[:, 3 * n:] + (c_prev if output_peephole == 'previous' else c) * params.w_co)
    tc  = np.tanh(c)
    h   = o * tc
    return h, c, GateCache(h_prev = h_prev, c_prev = c_prev, i = i, f = f, g = g, o = o, c = c, tanh_c = tc)


def lstm_step(x_t : np.ndarray, h_prev : np.ndarray, c_prev : np.ndarray, params : LstmParams,
              output_peephole : str = 'previous') -> Tuple[np.ndarray, np.ndarray, GateCache]:
    """
    One timestep of the peephole cell; accepts a single vector or a batch of row vectors.
    """
    x_t, h_prev, c_prev = (np.asarray(a, dtype = np.float64) for a in (x_t, h_prev, c_prev))
    single = x_t.ndim == 1
    if single:
        x_t, h_prev, c_prev = x_t[None], h_prev[None], c_prev[None]
    n = params.hidden_units
    if x_t.shape[-1] != params.feature_count or h_prev.shape[-1] != n or c_prev.shape[-1] != n:
        raise ShapeMismatch(f'step inputs {x_t.shape}, {h_prev.shape}, {c_prev.shape} do not fit '
                            f'{params.feature_count} inputs and {n} units')
    pre     = x_t @ _input_weights(params) + _biases(params)
    h, c, s = _cell(pre, h_prev, c_prev, params, _recurrent_weights(params), output_peephole)
    if single:
        return h[0], c[0], GateCache(**{k : v[0] for k, v in s.__dict__.items()})
    return h, c, s


class LstmNetwork:
    def __init__(self, params : LstmParams, output_peephole : str = 'previous'):
        """
        Input layer, peephole LSTM layer of N units, dense ReLU layer of N units and a linear six-unit head.
        The LSTM reads a window oldest row first from a zero state; its last hidden state feeds the dense layer.
        Arguments:
        ----------
            - params          (LstmParams) : the weights.
            - output_peephole (str)        : 'previous' feeds c(t-1) to the output gate, 'current' feeds c(t).
        """
        if output_peephole not in OUTPUT_PEEPHOLES:
            raise ValueError(f'output_peephole must be one of {OUTPUT_PEEPHOLES}')
        self.params          = params
        self.output_peephole = output_peephole
        self.log             = LoggerSetup(logger_name = 'lstm_network',
                                           logger_file = 'lstm_network').get_logger()

    @classmethod
    def initialize(cls, feature_count : int, hidden_units : int, seed : int, output_peephole : str = 'previous') -> 'LstmNetwork':
        return cls(init_params(feature_count, hidden_units, seed), output_peephole)

    @property
    def feature_count(self) -> int:
        return self.params.feature_count

    @property
    def hidden_units(self) -> int:
        return self.params.hidden_units

    def parameter_count(self) -> int:
        return self.params.size()

    @staticmethod
    def expected_parameter_count(feature_count : int, hidden_units : int) -> int:
        f, n = feature_count, hidden_units
        cell = 4 * f * n + 4 * n * n + 3 * n + 4 * n
        return cell + (n * n + n) + (Config.N_PHASES * n + Config.N_PHASES)

    def forward(self, windows : np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """
        Runs the network over one window (timesteps x features) or a batch (batch x timesteps x features).
        Returns:
        --------
            - (np.ndarray, ForwardCache) : normalized predictions, six per window, and what backward needs.
        """
        x      = np.asarray(windows, dtype = np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.feature_count:
            raise ShapeMismatch(f'window shape {np.shape(windows)} does not fit {self.feature_count} features')

        params     = self.params
        batch, steps_count, _ = x.shape
        pre_inputs = x @ _input_weights(params) + _biases(params)
        w_h        = _recurrent_weights(params)
        h          = np.zeros((batch, self.hidden_units))
        c          = np.zeros((batch, self.hidden_units))
        steps      = []
        for t in range(steps_count):
            h, c, cache = _cell(pre_inputs[:, t], h, c, params, w_h, self.output_peephole)
            steps.append(cache)

        dense_pre  = h @ params.w_dense + params.b_dense
        dense_out  = np.maximum(dense_pre, 0.0)
        prediction = dense_out @ params.w_head + params.b_head
        if not np.all(np.isfinite(prediction)):
            raise NonFiniteActivation('network produced a non-finite prediction')

        cache = ForwardCache(inputs = x, steps = steps, h_last = h, dense_pre = dense_pre,
                             dense_out = dense_out, single = single)
        return (prediction[0] if single else prediction), cache

    def backward(self, cache : ForwardCache, d_prediction : np.ndarray) -> LstmParams:
        """
        Backpropagation through time of the scalar loss whose gradient with respect to the predictions is
        `d_prediction`; gradients are summed over the batch. ReLU has gradient 0 at 0.
        Returns:
        --------
            - LstmParams : one gradient array per parameter.
        """
        params = self.params
        n      = self.hidden_units
        dy     = np.asarray(d_prediction, dtype = np.float64)
        if cache.single:
            dy = dy[None]

        grads         = {}
        grads['w_head']  = cache.dense_out.T @ dy
        grads['b_head']  = dy.sum(axis = 0)
        d_dense          = (dy @ params.w_head.T) * (cache.dense_pre > 0)
        grads['w_dense'] = cache.h_last.T @ d_dense
        grads['b_dense'] = d_dense.sum(axis = 0)

        w_h     = _recurrent_weights(params)
        d_pre   = np.empty(cache.inputs.shape[:2] + (4 * n,))
        d_w_h   = np.zeros_like(w_h)
        d_ci    = np.zeros(n)
        d_cf    = np.zeros(n)
        d_co    = np.zeros(n)
        dh      = d_dense @ params.w_dense.T
        dc_next = np.zeros_like(dh)
        current = self.output_peephole == 'current'

        for t in range(len(cache.steps) - 1, -1, -1):
            s    = cache.steps[t]
            da_o = dh * s.tanh_c * s.o * (1.0 - s.o)
            dc   = dc_next + dh * s.o * (1.0 - s.tanh_c ** 2)
            if current:
                dc = dc + da_o * params.w_co
            da_i = dc * s.g * s.i * (1.0 - s.i)
            da_f = dc * s.c_prev * s.f * (1.0 - s.f)
            da_c = dc * s.i * (1.0 - s.g ** 2)

            dc_next = dc * s.f + da_i * params.w_ci + da_f * params.w_cf
            if current:
                d_co += np.sum(da_o * s.c, axis = 0)
            else:
                dc_next = dc_next + da_o * params.w_co
                d_co   += np.sum(da_o * s.c_prev, axis = 0)
            d_ci += np.sum(da_i * s.c_prev, axis = 0)
            d_cf += np.sum(da_f * s.c_prev, axis = 0)

            da          = np.concatenate([da_i, da_f, da_c, da_o], axis = 1)
            d_pre[:, t] = da
            d_w_h      += s.h_prev.T @ da
            dh          = da @ w_h.T

        d_w_x = np.tensordot(cache.inputs, d_pre, axes = ([0, 1], [0, 1]))
        d_b   = d_pre.sum(axis = (0, 1))
        for k, gate in enumerate(('i', 'f', 'c', 'o')):
            block = slice(k * n, (k + 1) * n)
            grads[f'w_x{gate}'] = d_w_x[:, block]
            grads[f'w_h{gate}'] = d_w_h[:, block]
            grads[f'b_{gate}']  = d_b[block]
        grads['w_ci'], grads['w_cf'], grads['w_co'] = d_ci, d_cf, d_co
        return LstmParams(**{name : np.ascontiguousarray(grads[name]) for name in LstmParams.names()})

    def predict(self, windows : np.ndarray) -> np.ndarray:
        prediction, _ = self.forward(windows)
        return prediction

    def predict_seconds(self, windows : np.ndarray) -> np.ndarray:
        return predict_seconds(self.predict(windows))

    def save(self, path : str, manifest_hash : str = '', loss : str = '', epoch : int = -1,
             validation_loss : Optional[float] = None, handler : DataHandler = None):
        """
        Writes the weights and their provenance to a checkpoint.
        """
        header = {'version'         : CHECKPOINT_VERSION,
                  'feature_count'   : int(self.feature_count),
                  'hidden_units'    : int(self.hidden_units),
                  'output_peephole' : self.output_peephole,
                  'manifest_hash'   : manifest_hash,
                  'loss'            : loss,
                  'epoch'           : int(epoch),
                  'validation_loss' : None if validation_loss is None else float(validation_loss)}
        (handler or DataHandler()).save_checkpoint(header, self.params.to_dict(), path)
        self.log.info(f'Checkpoint written to {path}')

    @classmethod
    def load(cls, path : str, handler : DataHandler = None) -> Tuple['LstmNetwork', dict]:
        header, arrays = (handler or DataHandler()).load_checkpoint(path)
        if header.get('version') != CHECKPOINT_VERSION:
            raise ValueError(f'{path}: unsupported checkpoint version {header.get("version")}')
        network = cls(LstmParams.from_dict(arrays), header.get('output_peephole', 'previous'))
        return network, header


def predict_seconds(prediction : np.ndarray, horizon : int = Config.HORIZON_SECONDS) -> np.ndarray:
    """
    Clamps normalized predictions to [0, 1], rescales to seconds and rounds half up.
    """
    scaled = np.clip(np.asarray(prediction, dtype = np.float64), 0.0, 1.0) * horizon
    # 0.2525 * 200 is 50.499999999999993 in float64; six decimals restore the half before rounding up
    return np.floor(np.round(scaled, 6) + 0.5).astype(np.int64)
