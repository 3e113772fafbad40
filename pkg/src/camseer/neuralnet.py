"""From-scratch LSTM sequence classifier.

One or two LSTM layers, each followed by dropout, with optional batch
normalization after each LSTM-dropout block, a single-unit sigmoid head,
binary cross-entropy with L2 on the weights, Adam with per-epoch
exponential learning-rate decay, and early stopping on validation loss.
Everything is float64 numpy; gradients are exact analytic BPTT.

Gate layout in the stacked weight matrices is i, f, g, o (input, forget,
cell candidate, output), rows [0:H], [H:2H], [2H:3H], [3H:4H].
"""

from __future__ import annotations

import copy
import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (
    ContractViolationError,
    DataFormatError,
    InvalidParameterError,
    NumericFailureError,
)
from .signal import NormStats

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class NetworkConfig:
    hidden_sizes: tuple[int, ...] = (1100, 300)
    dropout_p: float = 0.2
    recurrent_dropout_p: float = 0.0
    num_batchnorm: int = 1
    l2_lambda: float = 0.001
    learning_rate: float = 0.0001
    lr_decay: float = 0.99
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 3
    seed: int = 0
    input_size: int = 21
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))

    @property
    def num_layers(self) -> int:
        return len(self.hidden_sizes)

    def validate(self) -> None:
        if self.num_layers not in (1, 2):
            raise InvalidParameterError("need one or two LSTM layers")
        if any(h < 1 for h in self.hidden_sizes):
            raise InvalidParameterError("hidden sizes must be positive")
        if not (0 <= self.dropout_p < 1 and 0 <= self.recurrent_dropout_p < 1):
            raise InvalidParameterError("dropout probabilities must lie in [0, 1)")
        if not 0 <= self.num_batchnorm <= self.num_layers:
            raise InvalidParameterError(
                f"num_batchnorm must lie in [0, {self.num_layers}]"
            )
        if self.l2_lambda < 0 or self.learning_rate <= 0:
            raise InvalidParameterError("need l2_lambda >= 0 and learning_rate > 0")
        if not 0 < self.lr_decay <= 1:
            raise InvalidParameterError("lr_decay must lie in (0, 1]")
        if min(self.batch_size, self.max_epochs, self.patience) < 1:
            raise InvalidParameterError("batch_size, max_epochs, patience must be >= 1")


@dataclass
class LstmLayerParams:
    W: np.ndarray  # (4H, D)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    epsilon: float = 1e-5


@dataclass
class NetworkParams:
    config: NetworkConfig
    lstm_layers: list[LstmLayerParams]
    batchnorms: list[BatchNormParams]
    dense_w: np.ndarray  # (H_last,)
    dense_b: np.ndarray  # (1,)


@dataclass
class BatchNormGrads:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class Gradients:
    lstm_layers: list[LstmLayerParams]
    batchnorms: list[BatchNormGrads]
    dense_w: np.ndarray
    dense_b: np.ndarray


def init_params(config: NetworkConfig, rng: np.random.Generator | None = None) -> NetworkParams:
    """Initialize parameters.

    LSTM and dense weights are drawn i.i.d. from N(0, sqrt(2/H)) where H
    is the layer's own neuron count; biases start at zero, batch-norm at
    identity. Deterministic given the generator state.
    """
    config.validate()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    lstm_layers = []
    d = config.input_size
    for h in config.hidden_sizes:
        std = math.sqrt(2.0 / h)
        lstm_layers.append(LstmLayerParams(
            W=rng.normal(0.0, std, size=(4 * h, d)),
            U=rng.normal(0.0, std, size=(4 * h, h)),
            b=np.zeros(4 * h),
        ))
        d = h
    batchnorms = [
        BatchNormParams(
            gamma=np.ones(config.hidden_sizes[l]),
            beta=np.zeros(config.hidden_sizes[l]),
            running_mean=np.zeros(config.hidden_sizes[l]),
            running_var=np.ones(config.hidden_sizes[l]),
            momentum=config.bn_momentum,
            epsilon=config.bn_epsilon,
        )
        for l in range(config.num_batchnorm)
    ]
    h_last = config.hidden_sizes[-1]
    return NetworkParams(
        config=config,
        lstm_layers=lstm_layers,
        batchnorms=batchnorms,
        dense_w=rng.normal(0.0, math.sqrt(2.0 / h_last), size=h_last),
        dense_b=np.zeros(1),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_cell_step(
    layer: LstmLayerParams,
    x_t: np.ndarray,
    h_prev: np.ndarray,
    c_prev: np.ndarray,
    rec_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM time step for a single sample (vectors, not batches).

    ``rec_mask`` (variational recurrent dropout) scales ``h_prev`` in the
    recurrent term only.
    """
    h = h_prev.shape[-1]
    if layer.U.shape != (4 * h, h) or layer.W.shape[1] != x_t.shape[-1]:
        raise ContractViolationError("lstm_cell_step shape mismatch")
    h_rec = h_prev if rec_mask is None else h_prev * rec_mask
    gates = layer.W @ x_t + layer.U @ h_rec + layer.b
    i = _sigmoid(gates[0:h])
    f = _sigmoid(gates[h:2 * h])
    g = np.tanh(gates[2 * h:3 * h])
    o = _sigmoid(gates[3 * h:4 * h])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def _lstm_layer_forward(layer: LstmLayerParams, x_seq: np.ndarray, rec_mask: np.ndarray | None) -> dict:
    """Run one LSTM layer over a (B, N, D) batch. Returns the BPTT cache."""
    b, n, _ = x_seq.shape
    h = layer.U.shape[1]
    i_s = np.empty((b, n, h)); f_s = np.empty((b, n, h))
    g_s = np.empty((b, n, h)); o_s = np.empty((b, n, h))
    c_s = np.empty((b, n, h)); tanh_c = np.empty((b, n, h))
    h_s = np.empty((b, n, h))
    h_prev = np.zeros((b, h))
    c_prev = np.zeros((b, h))
    wt = layer.W.T
    ut = layer.U.T
    for t in range(n):
        h_rec = h_prev if rec_mask is None else h_prev * rec_mask
        gates = x_seq[:, t] @ wt + h_rec @ ut + layer.b
        i = _sigmoid(gates[:, 0:h])
        f = _sigmoid(gates[:, h:2 * h])
        g = np.tanh(gates[:, 2 * h:3 * h])
        o = _sigmoid(gates[:, 3 * h:4 * h])
        c_prev = f * c_prev + i * g
        tc = np.tanh(c_prev)
        h_prev = o * tc
        i_s[:, t] = i; f_s[:, t] = f; g_s[:, t] = g; o_s[:, t] = o
        c_s[:, t] = c_prev; tanh_c[:, t] = tc; h_s[:, t] = h_prev
    return {
        "x_seq": x_seq, "i": i_s, "f": f_s, "g": g_s, "o": o_s,
        "c": c_s, "tanh_c": tanh_c, "h": h_s, "rec_mask": rec_mask,
    }


def _lstm_layer_backward(layer: LstmLayerParams, cache: dict, dh_seq: np.ndarray) -> tuple[LstmLayerParams, np.ndarray]:
    """BPTT through one layer; returns (gradients, d x_seq)."""
    x_seq = cache["x_seq"]
    b, n, d = x_seq.shape
    h = layer.U.shape[1]
    rec_mask = cache["rec_mask"]
    dW = np.zeros_like(layer.W)
    dU = np.zeros_like(layer.U)
    db = np.zeros_like(layer.b)
    dx_seq = np.empty_like(x_seq)
    dh_next = np.zeros((b, h))
    dc_next = np.zeros((b, h))
    i_s, f_s, g_s, o_s, c_s, tanh_c = (
        cache["i"], cache["f"], cache["g"], cache["o"], cache["c"], cache["tanh_c"]
    )
    h_s = cache["h"]
    dgates = np.empty((b, 4 * h))
    for t in range(n - 1, -1, -1):
        i, f, g, o = i_s[:, t], f_s[:, t], g_s[:, t], o_s[:, t]
        dh = dh_seq[:, t] + dh_next
        dc = dh * o * (1.0 - tanh_c[:, t] ** 2) + dc_next
        c_prev = c_s[:, t - 1] if t > 0 else np.zeros((b, h))
        dgates[:, 0:h] = dc * g * i * (1.0 - i)
        dgates[:, h:2 * h] = dc * c_prev * f * (1.0 - f)
        dgates[:, 2 * h:3 * h] = dc * i * (1.0 - g ** 2)
        dgates[:, 3 * h:4 * h] = dh * tanh_c[:, t] * o * (1.0 - o)
        h_prev = h_s[:, t - 1] if t > 0 else np.zeros((b, h))
        h_rec = h_prev if rec_mask is None else h_prev * rec_mask
        dW += dgates.T @ x_seq[:, t]
        dU += dgates.T @ h_rec
        db += dgates.sum(axis=0)
        dx_seq[:, t] = dgates @ layer.W
        dh_next = dgates @ layer.U
        if rec_mask is not None:
            dh_next = dh_next * rec_mask
        dc_next = dc * f
    return LstmLayerParams(W=dW, U=dU, b=db), dx_seq


def _batchnorm_forward(bn: BatchNormParams, x: np.ndarray, mode: str) -> tuple[np.ndarray, dict]:
    """Normalize each feature over (batch, time); running stats at inference."""
    if mode == "train":
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        bn.running_mean *= bn.momentum
        bn.running_mean += (1.0 - bn.momentum) * mean
        bn.running_var *= bn.momentum
        bn.running_var += (1.0 - bn.momentum) * var
    else:
        mean = bn.running_mean
        var = bn.running_var
    inv_std = 1.0 / np.sqrt(var + bn.epsilon)
    xhat = (x - mean) * inv_std
    out = bn.gamma * xhat + bn.beta
    return out, {"xhat": xhat, "inv_std": inv_std, "gamma": bn.gamma, "mode": mode}


def _batchnorm_backward(cache: dict, dout: np.ndarray) -> tuple[BatchNormGrads, np.ndarray]:
    xhat = cache["xhat"]
    dgamma = (dout * xhat).sum(axis=(0, 1))
    dbeta = dout.sum(axis=(0, 1))
    dxhat = dout * cache["gamma"]
    if cache["mode"] == "train":
        m = xhat.shape[0] * xhat.shape[1]
        dx = (cache["inv_std"] / m) * (
            m * dxhat
            - dxhat.sum(axis=(0, 1))
            - xhat * (dxhat * xhat).sum(axis=(0, 1))
        )
    else:
        dx = dxhat * cache["inv_std"]
    return BatchNormGrads(gamma=dgamma, beta=dbeta), dx


def forward(
    params: NetworkParams,
    batch: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Run the network on a (B, N, 21) batch; returns (probabilities, cache).

    Train mode draws dropout masks from ``rng`` (one recurrent mask per
    sequence per layer, one inverted-dropout mask per hidden sequence) and
    normalizes with batch statistics; infer mode is deterministic.
    """
    cfg = params.config
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[2] != cfg.input_size:
        raise ContractViolationError(f"batch must have shape (B, N, {cfg.input_size})")
    if mode not in ("train", "infer"):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    train = mode == "train"
    needs_rng = train and (cfg.dropout_p > 0 or cfg.recurrent_dropout_p > 0)
    if needs_rng and rng is None:
        raise ContractViolationError("train-mode forward with dropout needs an rng")

    b = batch.shape[0]
    x = batch
    blocks = []
    for l, layer in enumerate(params.lstm_layers):
        h = cfg.hidden_sizes[l]
        rec_mask = None
        if train and cfg.recurrent_dropout_p > 0:
            keep = 1.0 - cfg.recurrent_dropout_p
            rec_mask = (rng.random((b, h)) < keep) / keep
        lstm_cache = _lstm_layer_forward(layer, x, rec_mask)
        x = lstm_cache["h"]
        if not np.all(np.isfinite(x[:, -1])):
            raise NumericFailureError(f"non-finite activations in LSTM layer {l + 1}")
        drop_mask = None
        if train and cfg.dropout_p > 0:
            keep = 1.0 - cfg.dropout_p
            drop_mask = (rng.random(x.shape) < keep) / keep
            x = x * drop_mask
        bn_cache = None
        if l < cfg.num_batchnorm:
            x, bn_cache = _batchnorm_forward(params.batchnorms[l], x, mode)
            if not np.all(np.isfinite(x[:, -1])):
                raise NumericFailureError(f"non-finite activations in batchnorm {l + 1}")
        blocks.append({"lstm": lstm_cache, "drop_mask": drop_mask, "bn": bn_cache})
    h_last = x[:, -1, :]
    logits = h_last @ params.dense_w + params.dense_b[0]
    probs = _sigmoid(logits)
    if not np.all(np.isfinite(probs)):
        raise NumericFailureError("non-finite activations in dense head")
    cache = {"blocks": blocks, "out_seq_shape": x.shape, "h_last": h_last,
             "probs": probs, "params": params, "mode": mode}
    return probs, cache


def loss(
    probs: np.ndarray,
    labels: np.ndarray,
    params: NetworkParams,
    l2_lambda: float,
) -> float:
    """Mean binary cross-entropy plus L2 on the weights (biases excluded)."""
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    bce = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))
    if l2_lambda == 0:
        return bce
    return bce + l2_lambda * weight_squared_sum(params)


def weight_squared_sum(params: NetworkParams) -> float:
    total = float(np.dot(params.dense_w, params.dense_w))
    for layer in params.lstm_layers:
        total += float(np.sum(layer.W ** 2) + np.sum(layer.U ** 2))
    return total


def backward(cache: dict, labels: np.ndarray) -> Gradients:
    """Exact gradients of ``loss`` (including the L2 term) from a train-mode cache."""
    if cache.get("mode") != "train":
        raise ContractViolationError("backward needs a train-mode forward cache")
    params: NetworkParams = cache["params"]
    cfg = params.config
    y = np.asarray(labels, dtype=np.float64)
    probs = cache["probs"]
    b = probs.shape[0]

    dlogits = (probs - y) / b
    h_last = cache["h_last"]
    dense_w_grad = h_last.T @ dlogits
    dense_b_grad = np.array([dlogits.sum()])
    dout_seq = np.zeros(cache["out_seq_shape"])
    dout_seq[:, -1, :] = np.outer(dlogits, params.dense_w)

    lstm_grads: list[LstmLayerParams | None] = [None] * cfg.num_layers
    bn_grads: list[BatchNormGrads | None] = [None] * cfg.num_batchnorm
    dx = dout_seq
    for l in range(cfg.num_layers - 1, -1, -1):
        block = cache["blocks"][l]
        if block["bn"] is not None:
            bn_grads[l], dx = _batchnorm_backward(block["bn"], dx)
        if block["drop_mask"] is not None:
            dx = dx * block["drop_mask"]
        lstm_grads[l], dx = _lstm_layer_backward(params.lstm_layers[l], block["lstm"], dx)

    if cfg.l2_lambda:
        for l, layer in enumerate(params.lstm_layers):
            lstm_grads[l].W += 2.0 * cfg.l2_lambda * layer.W
            lstm_grads[l].U += 2.0 * cfg.l2_lambda * layer.U
        dense_w_grad += 2.0 * cfg.l2_lambda * params.dense_w
    return Gradients(
        lstm_layers=lstm_grads, batchnorms=bn_grads,
        dense_w=dense_w_grad, dense_b=dense_b_grad,
    )


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

def _tensor_items(obj) -> list[tuple[str, np.ndarray]]:
    """Named trainable tensors of a NetworkParams or Gradients object."""
    items = []
    for l, layer in enumerate(obj.lstm_layers):
        items += [(f"lstm{l}.W", layer.W), (f"lstm{l}.U", layer.U), (f"lstm{l}.b", layer.b)]
    for l, bn in enumerate(obj.batchnorms):
        items += [(f"bn{l}.gamma", bn.gamma), (f"bn{l}.beta", bn.beta)]
    items += [("dense_w", obj.dense_w), ("dense_b", obj.dense_b)]
    return items


@dataclass
class TrainState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    initial_lr: float
    lr_decay: float
    current_lr: float
    epoch: int = 0
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0


def init_train_state(params: NetworkParams) -> TrainState:
    cfg = params.config
    return TrainState(
        m={k: np.zeros_like(a) for k, a in _tensor_items(params)},
        v={k: np.zeros_like(a) for k, a in _tensor_items(params)},
        step=0,
        initial_lr=cfg.learning_rate,
        lr_decay=cfg.lr_decay,
        current_lr=cfg.learning_rate,
    )


def adam_step(params: NetworkParams, grads: Gradients, state: TrainState) -> tuple[NetworkParams, TrainState]:
    """In-place Adam update with bias correction at ``state.current_lr``."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    grad_map = dict(_tensor_items(grads))
    for key, p in _tensor_items(params):
        g = grad_map[key]
        if g.shape != p.shape:
            raise ContractViolationError(f"gradient shape mismatch for {key}")
        m = state.m[key]
        v = state.v[key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= state.current_lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params, state


def decay_lr(state: TrainState) -> TrainState:
    """Per-epoch exponential decay; closed form keeps lr = lr0 * decay^epoch exact."""
    state.epoch += 1
    state.current_lr = state.initial_lr * state.lr_decay ** state.epoch
    return state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def segments_to_arrays(segments) -> tuple[np.ndarray, np.ndarray]:
    """Stack LabeledSegment values/labels into (X, y) float64 arrays."""
    x = np.stack([np.asarray(s.values, dtype=np.float64) for s in segments])
    y = np.array([float(s.label) for s in segments])
    return x, y


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        return np.asarray(data[0], dtype=np.float64), np.asarray(data[1], dtype=np.float64)
    return segments_to_arrays(data)


def train_network(
    config: NetworkConfig,
    train_set,
    val_set,
    rng: np.random.Generator | None = None,
) -> tuple[NetworkParams, dict]:
    """Train one network with Adam, shuffled epochs and early stopping.

    ``train_set``/``val_set`` are lists of LabeledSegment or (X, y) tuples.
    Stops when the validation loss has not improved for ``patience``
    consecutive epochs; returns the best-validation parameters and a log
    with per-epoch losses and learning rates.
    """
    config.validate()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    x_train, y_train = _as_arrays(train_set)
    x_val, y_val = _as_arrays(val_set)
    if x_val.shape[0] == 0:
        raise InvalidParameterError("validation set must be non-empty")

    params = init_params(config, rng)
    state = init_train_state(params)
    best_params = copy.deepcopy(params)
    log = {"seed": config.seed, "epochs": [], "stopped_epoch": None, "best_epoch": None}

    n_train = x_train.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n_train)
        batch_losses = []
        for lo in range(0, n_train, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            try:
                probs, cache = forward(params, x_train[idx], "train", rng)
                batch_losses.append(loss(probs, y_train[idx], params, config.l2_lambda))
                grads = backward(cache, y_train[idx])
                adam_step(params, grads, state)
            except NumericFailureError as exc:
                raise NumericFailureError(
                    f"epoch {epoch}, batch {lo // config.batch_size}: {exc}"
                ) from exc
        decay_lr(state)
        val_probs, _ = forward(params, x_val, "infer")
        val_loss = loss(val_probs, y_val, params, 0.0)
        log["epochs"].append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_loss": val_loss,
            "lr": state.current_lr,
        })
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.epochs_since_improvement = 0
            best_params = copy.deepcopy(params)
            log["best_epoch"] = epoch
        else:
            state.epochs_since_improvement += 1
        if state.epochs_since_improvement >= config.patience:
            log["stopped_epoch"] = epoch
            break
    return best_params, log


def predict(params: NetworkParams, segment: np.ndarray) -> tuple[float, int]:
    """Probability and class for one (N, 21) segment; ties at 0.5 go to class 1."""
    probs, _ = forward(params, np.asarray(segment)[None, :, :], "infer")
    p = float(probs[0])
    return p, int(p >= 0.5)


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"CNET"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sII")  # magic, version, config length


def save_network(path, params: NetworkParams, norm_stats: list[NormStats] | None = None) -> None:
    """Versioned binary container; round-trips bit-exactly.

    Layout: header, config JSON, then per block LSTM W/U/b followed by its
    batch-norm gamma/beta/running_mean/running_var, then dense_w/dense_b,
    then the optional per-channel normalization statistics.
    """
    cfg_bytes = json.dumps(asdict(params.config), sort_keys=True).encode()
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(tmp_fd, "wb") as fh:
            fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(cfg_bytes)))
            fh.write(cfg_bytes)
            for tensor in _serialization_order(params):
                fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
            if norm_stats is None:
                fh.write(struct.pack("<B", 0))
            else:
                fh.write(struct.pack("<BI", 1, len(norm_stats)))
                for s in norm_stats:
                    fh.write(struct.pack("<ddB", s.mean, s.std, int(s.degenerate)))
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _serialization_order(params: NetworkParams):
    for l, layer in enumerate(params.lstm_layers):
        yield layer.W
        yield layer.U
        yield layer.b
        if l < len(params.batchnorms):
            bn = params.batchnorms[l]
            yield bn.gamma
            yield bn.beta
            yield bn.running_mean
            yield bn.running_var
    yield params.dense_w
    yield params.dense_b


def load_network(path) -> tuple[NetworkParams, list[NormStats] | None]:
    with open(path, "rb") as fh:
        header = fh.read(_MODEL_HEADER.size)
        if len(header) != _MODEL_HEADER.size:
            raise DataFormatError(f"{path}: truncated model header")
        magic, version, cfg_len = _MODEL_HEADER.unpack(header)
        if magic != MODEL_MAGIC or version != MODEL_VERSION:
            raise DataFormatError(f"{path}: not a supported model file")
        cfg_dict = json.loads(fh.read(cfg_len).decode())
        config = NetworkConfig(**cfg_dict)
        config.validate()

        def read_array(shape) -> np.ndarray:
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise DataFormatError(f"{path}: truncated tensor data")
            return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

        lstm_layers = []
        batchnorms = []
        d = config.input_size
        for l, h in enumerate(config.hidden_sizes):
            lstm_layers.append(LstmLayerParams(
                W=read_array((4 * h, d)), U=read_array((4 * h, h)), b=read_array((4 * h,)),
            ))
            if l < config.num_batchnorm:
                batchnorms.append(BatchNormParams(
                    gamma=read_array((h,)), beta=read_array((h,)),
                    running_mean=read_array((h,)), running_var=read_array((h,)),
                    momentum=config.bn_momentum, epsilon=config.bn_epsilon,
                ))
            d = h
        dense_w = read_array((config.hidden_sizes[-1],))
        dense_b = read_array((1,))
        flag = struct.unpack("<B", fh.read(1))[0]
        norm_stats = None
        if flag:
            count = struct.unpack("<I", fh.read(4))[0]
            norm_stats = []
            for _ in range(count):
                mean, std, degenerate = struct.unpack("<ddB", fh.read(17))
                norm_stats.append(NormStats(mean=mean, std=std, degenerate=bool(degenerate)))
    return NetworkParams(
        config=config, lstm_layers=lstm_layers, batchnorms=batchnorms,
        dense_w=dense_w, dense_b=dense_b,
    ), norm_stats
