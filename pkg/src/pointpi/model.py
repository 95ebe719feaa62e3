"""Shared recurrent encoder with one feed-forward submodel per forecast step.

Each submodel emits a raw triple ``(y, a, b)`` and the interval is assembled as
``lower = y - softplus(a)`` and ``upper = y + softplus(b)``, so
``lower < y < upper`` holds for every parameter value.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import ParameterSet, Tensor, as_tensor, concat, relu, sigmoid, softplus, tanh

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
FORGET_BIAS = 1.0
CHECKPOINT_VERSION = 1
# relative half-width floor; far above float spacing, so u > y_hat > l survives rounding
WIDTH_FLOOR = 1e-12


@dataclass
class ModelConfig:
    lag_window: int = 16
    horizon: int = 16
    n_lag_features: int = 3
    n_future_features: int = 3
    encoder_hidden: int = 70
    encoder_cells: int = 1
    submodel_widths: list[int] = field(default_factory=lambda: [100, 100])
    seed: int = 0

    def __post_init__(self):
        self.submodel_widths = [int(w) for w in self.submodel_widths]
        extents = {
            "lag_window": self.lag_window,
            "horizon": self.horizon,
            "n_lag_features": self.n_lag_features,
            "n_future_features": self.n_future_features,
            "encoder_hidden": self.encoder_hidden,
            "encoder_cells": self.encoder_cells,
        }
        for name, value in extents.items():
            if int(value) < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if not self.submodel_widths or min(self.submodel_widths) < 1:
            raise ValueError(f"submodel_widths must be non-empty positive widths, got {self.submodel_widths}")

    def parameter_count(self) -> int:
        """Closed-form trainable parameter count for this layout."""
        h = self.encoder_hidden
        total = 0
        n_in = self.n_lag_features
        for _ in range(self.encoder_cells):
            total += (n_in + h) * 4 * h + 4 * h
            n_in = h
        total += 2 * h
        per_step = 0
        d = h + self.n_future_features
        for w in self.submodel_widths:
            per_step += d * w + w + 2 * w
            d = w
        per_step += d * 3 + 3
        return total + self.horizon * per_step


@dataclass
class ForecastBatch:
    """Lower bound, point forecast and upper bound, each N x H."""

    lower: Tensor
    point: Tensor
    upper: Tensor

    @property
    def width(self):
        return self.upper - self.lower

    def numpy(self):
        return self.lower.data, self.point.data, self.upper.data


def init_params(config: ModelConfig) -> ParameterSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(config.seed)
    h = config.encoder_hidden
    tensors, buffers = {}, {}

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def batchnorm(prefix, width):
        tensors[f"{prefix}.gamma"] = np.ones(width)
        tensors[f"{prefix}.beta"] = np.zeros(width)
        buffers[f"{prefix}.mean"] = np.zeros(width)
        buffers[f"{prefix}.var"] = np.ones(width)

    n_in = config.n_lag_features
    for layer in range(config.encoder_cells):
        tensors[f"enc.{layer}.w"] = uniform((n_in + h, 4 * h), h)
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = FORGET_BIAS
        tensors[f"enc.{layer}.b"] = bias
        n_in = h
    batchnorm("enc.bn", h)

    for k in range(config.horizon):
        d = h + config.n_future_features
        for j, w in enumerate(config.submodel_widths):
            tensors[f"sub{k}.{j}.w"] = uniform((d, w), d)
            tensors[f"sub{k}.{j}.b"] = np.zeros(w)
            batchnorm(f"sub{k}.{j}.bn", w)
            d = w
        tensors[f"sub{k}.head.w"] = uniform((d, 3), d)
        tensors[f"sub{k}.head.b"] = np.zeros(3)
    return ParameterSet(tensors, buffers)


class Model:
    """Forward pass over a :class:`ParameterSet` laid out by :func:`init_params`.

    ``weights`` optionally overrides the parameter arrays with tensors watched on
    a tape, which is how gradients are taken. Train mode normalizes with batch
    statistics and refreshes the running statistics in ``params.buffers``;
    calibrate mode does the same but replaces them outright.
    """

    def __init__(self, config: ModelConfig):
        self.config = config

    def _weights(self, params, weights):
        if weights is not None:
            return weights
        return {name: Tensor(value) for name, value in params.tensors.items()}

    def _batchnorm(self, x, w, params, prefix, mode):
        gamma, beta = w[f"{prefix}.gamma"], w[f"{prefix}.beta"]
        if mode in ("train", "calibrate"):
            n = x.shape[0]
            if n < 2:
                raise ValueError("train-mode batch normalization needs at least 2 samples")
            mean = x.mean(axis=0)
            centered = x - mean
            var = (centered * centered).mean(axis=0)
            xhat = centered * (var + BN_EPS) ** -0.5
            # calibrate overwrites the running statistics with this batch's
            m = BN_MOMENTUM if mode == "train" else 1.0
            buf = params.buffers
            buf[f"{prefix}.mean"] = (1 - m) * buf[f"{prefix}.mean"] + m * mean.data
            buf[f"{prefix}.var"] = (1 - m) * buf[f"{prefix}.var"] + m * var.data * n / (n - 1)
        elif mode == "infer":
            mean = params.buffers[f"{prefix}.mean"]
            scale = 1.0 / np.sqrt(params.buffers[f"{prefix}.var"] + BN_EPS)
            xhat = (x - mean) * scale
        else:
            raise ValueError(f"mode must be 'train', 'calibrate' or 'infer', got {mode!r}")
        return xhat * gamma + beta

    def _check(self, lag_inputs, future_regressors=None):
        cfg = self.config
        lag = np.asarray(lag_inputs, dtype=np.float64)
        if lag.ndim != 3 or lag.shape[1:] != (cfg.lag_window, cfg.n_lag_features):
            raise ValueError(
                f"lag inputs must be N x {cfg.lag_window} x {cfg.n_lag_features}, got {lag.shape}"
            )
        if not np.all(np.isfinite(lag)):
            raise ValueError("lag inputs contain non-finite values")
        if future_regressors is None:
            return lag, None
        fut = np.asarray(future_regressors, dtype=np.float64)
        if fut.shape != (lag.shape[0], cfg.horizon, cfg.n_future_features):
            raise ValueError(
                f"future regressors must be {lag.shape[0]} x {cfg.horizon} x "
                f"{cfg.n_future_features}, got {fut.shape}"
            )
        if not np.all(np.isfinite(fut)):
            raise ValueError("future regressors contain non-finite values")
        return lag, fut

    def encode(self, params: ParameterSet, lag_inputs, mode="infer", weights=None) -> Tensor:
        lag, _ = self._check(lag_inputs)
        return self._encode(params, lag, mode, self._weights(params, weights))

    def _encode(self, params, lag, mode, w):
        cfg = self.config
        n, steps, n_feat = lag.shape
        h = cfg.encoder_hidden
        seq = None
        for layer in range(cfg.encoder_cells):
            W, b = w[f"enc.{layer}.w"], w[f"enc.{layer}.b"]
            n_in = n_feat if layer == 0 else h
            # gate blocks in column order: input, forget, candidate, output
            blocks = [slice(j * h, (j + 1) * h) for j in range(4)]
            W_x = [W[:n_in, blk] for blk in blocks]
            W_h = [W[n_in:, blk] for blk in blocks]
            b_g = [b[blk] for blk in blocks]
            if layer == 0:
                # time-major so each step reads a contiguous block
                x_seq = Tensor(lag.transpose(1, 0, 2).reshape(steps * n, n_feat))
                proj = [(x_seq @ W_x[j] + b_g[j]).reshape(steps, n, h) for j in range(4)]
                inputs = [[proj[j][t] for j in range(4)] for t in range(steps)]
            else:
                inputs = [[x @ W_x[j] + b_g[j] for j in range(4)] for x in seq]
            hidden = Tensor(np.zeros((n, h)))
            cell = Tensor(np.zeros((n, h)))
            seq = []
            for t in range(steps):
                zi, zf, zg, zo = (inputs[t][j] + hidden @ W_h[j] for j in range(4))
                cell = sigmoid(zf) * cell + sigmoid(zi) * tanh(zg)
                hidden = sigmoid(zo) * tanh(cell)
                seq.append(hidden)
        return relu(self._batchnorm(seq[-1], w, params, "enc.bn", mode))

    def forward(self, params: ParameterSet, lag_inputs, future_regressors, mode="infer", weights=None) -> ForecastBatch:
        cfg = self.config
        lag, fut = self._check(lag_inputs, future_regressors)
        w = self._weights(params, weights)
        encoded = self._encode(params, lag, mode, w)
        n = lag.shape[0]
        heads = []
        for k in range(cfg.horizon):
            x = concat([encoded, as_tensor(fut[:, k, :])], axis=1)
            for j in range(len(cfg.submodel_widths)):
                x = x @ w[f"sub{k}.{j}.w"] + w[f"sub{k}.{j}.b"]
                x = relu(self._batchnorm(x, w, params, f"sub{k}.{j}.bn", mode))
            out = x @ w[f"sub{k}.head.w"] + w[f"sub{k}.head.b"]
            heads.append(out.reshape(n, 1, 3))
        raw = concat(heads, axis=1)
        point = raw[:, :, 0]
        floor = (abs(point) + 1.0) * WIDTH_FLOOR
        lower = point - (softplus(raw[:, :, 1]) + floor)
        upper = point + (softplus(raw[:, :, 2]) + floor)
        return ForecastBatch(lower, point, upper)


def predict(config: ModelConfig, params: ParameterSet, lag_inputs, future_regressors, chunk=8192):
    """Inference-mode forecasts as numpy arrays ``(lower, point, upper)``, evaluated in chunks."""
    model = Model(config)
    n = len(lag_inputs)
    parts = []
    for start in range(0, max(n, 1), chunk):
        sl = slice(start, start + chunk)
        fc = model.forward(params, lag_inputs[sl], future_regressors[sl], mode="infer")
        parts.append(fc.numpy())
    if n == 0:
        empty = np.zeros((0, config.horizon))
        return empty, empty.copy(), empty.copy()
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def calibrate_batchnorm(config: ModelConfig, params: ParameterSet, lag_inputs, future_regressors):
    """Set every batch-norm buffer to the population statistics of the given inputs.

    Parameters are left untouched. One full-batch pass is made, so layer by layer
    the stored mean and (unbiased) variance are those of the whole set. Returns
    the forecasts of that pass as ``(lower, point, upper)``; they agree with
    :func:`predict` on the same inputs afterwards up to the ``n / (n - 1)``
    variance correction.
    """
    fc = Model(config).forward(params, lag_inputs, future_regressors, mode="calibrate")
    return fc.numpy()


def save_checkpoint(path, params: ParameterSet, config: ModelConfig, meta: dict | None = None):
    """Write parameters, batch-norm buffers and JSON metadata to an ``.npz`` archive."""
    header = {"format_version": CHECKPOINT_VERSION, "model_config": asdict(config), "meta": meta or {}}
    arrays = {f"param/{k}": v for k, v in params.tensors.items()}
    arrays.update({f"buffer/{k}": v for k, v in params.buffers.items()})
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    path = Path(path)
    # same layout as np.savez, but with fixed entry timestamps so equal content gives equal bytes
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, value in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(value), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, config, meta)``."""
    with np.load(Path(path), allow_pickle=False) as archive:
        header = json.loads(str(archive["__header__"]))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        tensors, buffers = {}, {}
        for key in archive.files:
            if key.startswith("param/"):
                tensors[key[6:]] = archive[key]
            elif key.startswith("buffer/"):
                buffers[key[7:]] = archive[key]
    config = ModelConfig(**header["model_config"])
    # restore the insertion order used by init_params so flattening is stable
    layout = init_params(ModelConfig(**{**header["model_config"], "seed": 0}))
    tensors = {k: tensors[k] for k in layout.tensors}
    buffers = {k: buffers[k] for k in layout.buffers}
    return ParameterSet(tensors, buffers), config, header["meta"]
