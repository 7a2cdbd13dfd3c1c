"""From-scratch 1-D CNN and LSTM classifiers with hand-derived backprop.

Everything is float64 numpy so analytic gradients can be checked
tightly against central finite differences. The CNN is
conv(16, k5) -> ReLU -> maxpool(2) -> conv(32, k5) -> ReLU -> global
average pool -> dense(4); the LSTM feeds the final hidden state (size
32) through dense(4). Both train by mini-batch SGD with momentum on
mean cross-entropy, with seeded init and seeded epoch shuffles, so a
(data, config, seed) triple always yields the same model.

Input tensors are (batch, 9 channels, time). Channels are z-scored by
training-set statistics by default; raw accelerometer, gyro, and
magnetometer units differ by two orders of magnitude, which a fixed
learning rate handles poorly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ..core import LABEL_ORDER, TrajectoryLabel, TrajectoryWindow
from ..errors import DataError, TrainingDivergedError
from .features import label_vector
from .model_io import data_digest

N_CLASSES = len(LABEL_ORDER)
N_CHANNELS = 9


@dataclass(frozen=True)
class CnnConfig:
    filters1: int = 16
    filters2: int = 32
    kernel: int = 5
    pool: int = 2
    epochs: int = 60
    batch_size: int = 16
    lr: float = 1e-2
    momentum: float = 0.9
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        for name in ("filters1", "filters2", "kernel", "pool", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise DataError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise DataError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass(frozen=True)
class LstmConfig:
    hidden: int = 32
    epochs: int = 80
    batch_size: int = 16
    lr: float = 1e-2
    momentum: float = 0.9
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        for name in ("hidden", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise DataError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise DataError(f"momentum must be in [0, 1), got {self.momentum}")


NnConfig = Union[CnnConfig, LstmConfig]


@dataclass(frozen=True)
class NnModel:
    kind: str  # "cnn" or "lstm"
    config: NnConfig
    params: dict
    channel_mean: np.ndarray  # (9,)
    channel_scale: np.ndarray  # (9,)
    input_length: int
    history: tuple[tuple[int, float, float], ...]  # (epoch, loss, accuracy)
    manifest: dict

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": dict(self.config.__dict__),
            "params": {name: arr.tolist() for name, arr in self.params.items()},
            "channel_mean": self.channel_mean.tolist(),
            "channel_scale": self.channel_scale.tolist(),
            "input_length": self.input_length,
            "history": [list(row) for row in self.history],
            "manifest": self.manifest,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "NnModel":
        kind = obj["kind"]
        config_cls = CnnConfig if kind == "cnn" else LstmConfig
        return cls(
            kind=kind,
            config=config_cls(**obj["config"]),
            params={
                name: np.asarray(arr, dtype=np.float64)
                for name, arr in obj["params"].items()
            },
            channel_mean=np.asarray(obj["channel_mean"], dtype=np.float64),
            channel_scale=np.asarray(obj["channel_scale"], dtype=np.float64),
            input_length=int(obj["input_length"]),
            history=tuple(
                (int(e), float(l), float(a)) for e, l, a in obj["history"]
            ),
            manifest=dict(obj["manifest"]),
        )


# --------------------------------------------------------------------------
# parameter initialization


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def init_cnn_params(cfg: CnnConfig, length: int) -> dict:
    """Seeded uniform(-s, s) init, s = 1/sqrt(fan-in) per tensor.

    Bias tensors use their layer's weight fan-in.
    """
    _cnn_shape_check(cfg, length)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))
    k = cfg.kernel
    params = {}
    params["w1"] = _uniform(rng, (cfg.filters1, N_CHANNELS, k), N_CHANNELS * k)
    params["b1"] = _uniform(rng, (cfg.filters1,), N_CHANNELS * k)
    params["w2"] = _uniform(rng, (cfg.filters2, cfg.filters1, k), cfg.filters1 * k)
    params["b2"] = _uniform(rng, (cfg.filters2,), cfg.filters1 * k)
    params["wd"] = _uniform(rng, (N_CLASSES, cfg.filters2), cfg.filters2)
    params["bd"] = _uniform(rng, (N_CLASSES,), cfg.filters2)
    return params


def init_lstm_params(cfg: LstmConfig) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))
    h = cfg.hidden
    params = {}
    params["wx"] = _uniform(rng, (4 * h, N_CHANNELS), N_CHANNELS)
    params["wh"] = _uniform(rng, (4 * h, h), h)
    params["b"] = _uniform(rng, (4 * h,), N_CHANNELS + h)
    params["wd"] = _uniform(rng, (N_CLASSES, h), h)
    params["bd"] = _uniform(rng, (N_CLASSES,), h)
    return params


def _cnn_shape_check(cfg: CnnConfig, length: int) -> None:
    t1 = length - cfg.kernel + 1
    t_pool = t1 // cfg.pool if t1 > 0 else 0
    t2 = t_pool - cfg.kernel + 1
    if t1 < 1 or t_pool < 1 or t2 < 1:
        raise DataError(
            f"input length {length} is too short for kernel {cfg.kernel} and "
            f"pool {cfg.pool} (need both conv stages and the pool to output "
            f">= 1 step)"
        )


# --------------------------------------------------------------------------
# layers


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), y]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), y] -= 1.0
    return loss, dlogits / n


def _conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    # x (B,C,T), w (F,C,K), valid padding -> (B,F,T-K+1)
    k = w.shape[2]
    t_out = x.shape[2] - k + 1
    cols = np.stack([x[:, :, j:j + t_out] for j in range(k)], axis=2)  # (B,C,K,t)
    out = np.einsum("fck,bckt->bft", w, cols) + b[None, :, None]
    return out, cols

def _conv1d_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray):
    dw = np.einsum("bft,bckt->fck", dout, cols)
    db = dout.sum(axis=(0, 2))
    batch, channels, k, t_out = cols.shape
    dx = np.zeros((batch, channels, t_out + k - 1))
    for j in range(k):
        dx[:, :, j:j + t_out] += np.einsum("bft,fc->bct", dout, w[:, :, j])
    return dw, db, dx


def _maxpool(x: np.ndarray, pool: int):
    batch, filters, t = x.shape
    t_out = t // pool
    xr = x[:, :, : t_out * pool].reshape(batch, filters, t_out, pool)
    arg = xr.argmax(axis=3)
    out = np.take_along_axis(xr, arg[..., None], axis=3)[..., 0]
    return out, arg


def _maxpool_backward(dout: np.ndarray, arg: np.ndarray, pool: int, t_in: int):
    batch, filters, t_out = dout.shape
    dxr = np.zeros((batch, filters, t_out, pool))
    np.put_along_axis(dxr, arg[..., None], dout[..., None], axis=3)
    dx = np.zeros((batch, filters, t_in))
    dx[:, :, : t_out * pool] = dxr.reshape(batch, filters, t_out * pool)
    return dx


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --------------------------------------------------------------------------
# forward / backward


def cnn_forward(cfg: CnnConfig, params: dict, x: np.ndarray):
    z1, cols1 = _conv1d(x, params["w1"], params["b1"])
    a1 = np.maximum(z1, 0.0)
    p, arg = _maxpool(a1, cfg.pool)
    z2, cols2 = _conv1d(p, params["w2"], params["b2"])
    a2 = np.maximum(z2, 0.0)
    g = a2.mean(axis=2)
    logits = g @ params["wd"].T + params["bd"]
    cache = (z1, cols1, arg, a1.shape[2], cols2, z2, a2, g)
    return logits, cache


def cnn_backward(cfg: CnnConfig, params: dict, cache, dlogits: np.ndarray) -> dict:
    z1, cols1, arg, t1, cols2, z2, a2, g = cache
    grads = {}
    grads["wd"] = dlogits.T @ g
    grads["bd"] = dlogits.sum(axis=0)
    dg = dlogits @ params["wd"]
    t2 = a2.shape[2]
    da2 = np.repeat(dg[:, :, None], t2, axis=2) / t2
    dz2 = da2 * (z2 > 0)
    grads["w2"], grads["b2"], dp = _conv1d_backward(dz2, cols2, params["w2"])
    da1 = _maxpool_backward(dp, arg, cfg.pool, t1)
    dz1 = da1 * (z1 > 0)
    grads["w1"], grads["b1"], _ = _conv1d_backward(dz1, cols1, params["w1"])
    return grads


def lstm_forward(cfg: LstmConfig, params: dict, x: np.ndarray):
    wx, wh, b = params["wx"], params["wh"], params["b"]
    hidden = cfg.hidden
    batch, _, t_len = x.shape
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    steps = []
    for t in range(t_len):
        xt = x[:, :, t]
        pre = xt @ wx.T + h @ wh.T + b
        gi = _sigmoid(pre[:, :hidden])
        gf = _sigmoid(pre[:, hidden : 2 * hidden])
        gg = np.tanh(pre[:, 2 * hidden : 3 * hidden])
        go = _sigmoid(pre[:, 3 * hidden :])
        c_new = gf * c + gi * gg
        h_new = go * np.tanh(c_new)
        steps.append((xt, h, c, gi, gf, gg, go, c_new))
        h, c = h_new, c_new
    logits = h @ params["wd"].T + params["bd"]
    return logits, (steps, h)


def lstm_backward(cfg: LstmConfig, params: dict, cache, dlogits: np.ndarray) -> dict:
    steps, h_final = cache
    wh = params["wh"]
    hidden = cfg.hidden
    grads = {
        "wx": np.zeros_like(params["wx"]),
        "wh": np.zeros_like(wh),
        "b": np.zeros_like(params["b"]),
        "wd": dlogits.T @ h_final,
        "bd": dlogits.sum(axis=0),
    }
    dh = dlogits @ params["wd"]
    dc = np.zeros_like(dh)
    for xt, h_prev, c_prev, gi, gf, gg, go, c_new in reversed(steps):
        tanh_c = np.tanh(c_new)
        do = dh * tanh_c
        dc = dc + dh * go * (1.0 - tanh_c**2)
        dpre = np.concatenate(
            [
                dc * gg * gi * (1.0 - gi),
                dc * c_prev * gf * (1.0 - gf),
                dc * gi * (1.0 - gg**2),
                do * go * (1.0 - go),
            ],
            axis=1,
        )
        grads["wx"] += dpre.T @ xt
        grads["wh"] += dpre.T @ h_prev
        grads["b"] += dpre.sum(axis=0)
        dh = dpre @ wh
        dc = dc * gf
    return grads


def nn_loss_and_grads(
    kind: str, cfg: NnConfig, params: dict, x: np.ndarray, y: np.ndarray
) -> tuple[float, dict]:
    forward = cnn_forward if kind == "cnn" else lstm_forward
    backward = cnn_backward if kind == "cnn" else lstm_backward
    logits, cache = forward(cfg, params, x)
    loss, dlogits = cross_entropy(logits, y)
    return loss, backward(cfg, params, cache, dlogits)


def nn_loss(kind: str, cfg: NnConfig, params: dict, x: np.ndarray, y: np.ndarray) -> float:
    forward = cnn_forward if kind == "cnn" else lstm_forward
    logits, _ = forward(cfg, params, x)
    loss, _ = cross_entropy(logits, y)
    return loss


def sgd_step(params: dict, velocity: dict, grads: dict, lr: float, momentum: float) -> None:
    """In-place momentum update: v = mu*v - lr*g; p += v."""
    for name in params:
        velocity[name] = momentum * velocity[name] - lr * grads[name]
        params[name] += velocity[name]


def gradient_check(
    kind: str,
    cfg: NnConfig,
    params: dict,
    x: np.ndarray,
    y: np.ndarray,
    h: float = 1e-5,
    samples_per_tensor: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between analytic and central-difference grads.

    Checks every entry of every tensor by default; samples_per_tensor
    caps the entries per tensor (seeded choice) for speed. Relative
    error is |a - n| / max(|a| + |n|, 1e-12).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    _, grads = nn_loss_and_grads(kind, cfg, params, x, y)
    worst = 0.0
    for name in sorted(params):
        tensor = params[name]
        size = tensor.size
        if samples_per_tensor is None or samples_per_tensor >= size:
            indices = np.arange(size)
        else:
            indices = rng.choice(size, size=samples_per_tensor, replace=False)
        flat = tensor.reshape(-1)
        analytic = grads[name].reshape(-1)
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + h
            loss_plus = nn_loss(kind, cfg, params, x, y)
            flat[idx] = original - h
            loss_minus = nn_loss(kind, cfg, params, x, y)
            flat[idx] = original
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            denom = max(abs(analytic[idx]) + abs(numeric), 1e-12)
            worst = max(worst, abs(analytic[idx] - numeric) / denom)
    return worst


# --------------------------------------------------------------------------
# training


def _window_tensor(windows: Sequence[TrajectoryWindow]) -> np.ndarray:
    if not windows:
        raise DataError("cannot train on zero windows")
    lengths = {len(w) for w in windows}
    if len(lengths) != 1:
        raise DataError(f"all training windows must share one length, got {sorted(lengths)}")
    # samples are finite by ImuSample validation, no re-check here
    return np.stack([w.to_array().T for w in windows])  # (n, 9, T)


def _train(kind: str, windows: Sequence[TrajectoryWindow], cfg: NnConfig) -> NnModel:
    x = _window_tensor(windows)
    y = label_vector(windows)
    n, _, t_len = x.shape

    if cfg.standardize:
        channel_mean = x.mean(axis=(0, 2))
        sd = x.std(axis=(0, 2))
        channel_scale = np.where(sd > 0, sd, 1.0)
    else:
        channel_mean = np.zeros(N_CHANNELS)
        channel_scale = np.ones(N_CHANNELS)
    xs = (x - channel_mean[None, :, None]) / channel_scale[None, :, None]

    if kind == "cnn":
        params = init_cnn_params(cfg, t_len)
    else:
        params = init_lstm_params(cfg)
    velocity = {name: np.zeros_like(arr) for name, arr in params.items()}
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1)))

    history: list[tuple[int, float, float]] = []
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            _, grads = nn_loss_and_grads(kind, cfg, params, xs[batch], y[batch])
            sgd_step(params, velocity, grads, cfg.lr, cfg.momentum)
        forward = cnn_forward if kind == "cnn" else lstm_forward
        logits, _ = forward(cfg, params, xs)
        loss, _ = cross_entropy(logits, y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"{kind} training loss became non-finite at epoch {epoch}; "
                f"try a lower learning rate"
            )
        accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
        history.append((epoch, loss, accuracy))

    final_loss, final_accuracy = (history[-1][1], history[-1][2]) if history else (0.0, 0.0)
    manifest = {
        "config": dict(cfg.__dict__),
        "seed": cfg.seed,
        "data_sha256": data_digest(x, y),
        "n_samples": n,
        "input_length": t_len,
        "final_loss": final_loss,
        "train_accuracy": final_accuracy,
    }
    return NnModel(
        kind=kind,
        config=cfg,
        params=params,
        channel_mean=channel_mean,
        channel_scale=channel_scale,
        input_length=t_len,
        history=tuple(history),
        manifest=manifest,
    )


def train_cnn(windows: Sequence[TrajectoryWindow], cfg: Optional[CnnConfig] = None) -> NnModel:
    return _train("cnn", windows, cfg if cfg is not None else CnnConfig())


def train_lstm(windows: Sequence[TrajectoryWindow], cfg: Optional[LstmConfig] = None) -> NnModel:
    return _train("lstm", windows, cfg if cfg is not None else LstmConfig())


def predict_nn(model: NnModel, w: TrajectoryWindow) -> tuple[TrajectoryLabel, np.ndarray]:
    """Class probabilities and argmax label (first maximum on ties)."""
    labels, probs = predict_nn_batch(model, [w])
    return labels[0], probs[0]


def predict_nn_batch(
    model: NnModel, windows: Sequence[TrajectoryWindow]
) -> tuple[list[TrajectoryLabel], np.ndarray]:
    for w in windows:
        if len(w) != model.input_length:
            raise DataError(
                f"window {w.id!r} has {len(w)} samples, model expects {model.input_length}"
            )
    x = _window_tensor(windows)
    xs = (x - model.channel_mean[None, :, None]) / model.channel_scale[None, :, None]
    forward = cnn_forward if model.kind == "cnn" else lstm_forward
    logits, _ = forward(model.config, model.params, xs)
    probs = softmax(logits)
    labels = [LABEL_ORDER[int(np.argmax(row))] for row in probs]
    return labels, probs
