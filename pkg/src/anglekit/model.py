"""Shallow regression head: repeated BatchNorm -> FullyConnected -> ReLU ->
Dropout modules and a final linear output, with exact analytic gradients.

All math runs in float64 so gradients can be checked against central
finite differences. Checkpoints quantize parameters to float32 (the
on-disk format), and freshly initialized parameters are snapped to the
float32 grid so a save/load round trip reproduces predictions bit for bit.

Targets are optimized on a [0, 1] scale (angle / target_scale); callers
rescale predictions to degrees at the API boundary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointError,
    InvalidArgumentError,
    InvalidStateError,
)

CHECKPOINT_MAGIC = b"AKPT"
CHECKPOINT_VERSION = 1

DEFAULT_WIDTHS = (4096, 256, 64)
DEFAULT_DROPOUT = (0.5, 0.5)
DEFAULT_BN_MOMENTUM = 0.9
DEFAULT_BN_EPSILON = 1e-5
DEFAULT_TARGET_SCALE = 180.0
# Midpoint of the [0, 1] optimization scale; starting the output bias here
# spares thousands of low-learning-rate steps spent walking it from zero.
DEFAULT_FINAL_BIAS_INIT = 0.5


@dataclass
class BatchNorm:
    """Per-feature scale/shift with running statistics.

    Running stats update as running <- momentum * running + (1 - momentum)
    * batch_stat; in-batch variance is the population (biased) estimate.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = DEFAULT_BN_MOMENTUM
    epsilon: float = DEFAULT_BN_EPSILON


@dataclass
class LayerModule:
    """One head unit: BatchNorm, fully connected (out x in), ReLU, dropout."""

    bn: BatchNorm
    weights: np.ndarray
    bias: np.ndarray
    dropout_p: float


@dataclass
class HeadModel:
    layers: list[LayerModule]
    final_weights: np.ndarray  # (1, last_width)
    final_bias: np.ndarray  # (1,)
    mode: str = "train"
    target_scale: float = DEFAULT_TARGET_SCALE
    seed: int = 0

    @property
    def widths(self) -> list[int]:
        return [lm.weights.shape[1] for lm in self.layers] + [self.final_weights.shape[1]]

    def train(self) -> "HeadModel":
        self.mode = "train"
        return self

    def eval(self) -> "HeadModel":
        self.mode = "eval"
        return self


def _f32_grid(arr: np.ndarray) -> np.ndarray:
    # float64 values exactly representable in float32, so checkpoint
    # quantization is lossless for freshly initialized models
    return arr.astype(np.float32).astype(np.float64)


def build_head(widths=DEFAULT_WIDTHS, dropout_p=DEFAULT_DROPOUT, seed: int = 0,
               momentum: float = DEFAULT_BN_MOMENTUM, epsilon: float = DEFAULT_BN_EPSILON,
               target_scale: float = DEFAULT_TARGET_SCALE) -> HeadModel:
    """He-initialized head; widths chain input -> hidden ... -> final linear -> 1."""
    widths = [int(w) for w in widths]
    dropout_p = [float(p) for p in dropout_p]
    if len(widths) < 1:
        raise InvalidArgumentError("need at least an input width")
    if len(dropout_p) != len(widths) - 1:
        raise InvalidArgumentError(
            f"need one dropout probability per layer module: "
            f"{len(widths) - 1} modules, got {len(dropout_p)}"
        )
    for p in dropout_p:
        if not 0.0 <= p < 1.0:
            raise InvalidArgumentError(f"dropout probability must be in [0, 1), got {p}")
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(widths) - 1):
        n_in, n_out = widths[i], widths[i + 1]
        bn = BatchNorm(
            gamma=np.ones(n_in),
            beta=np.zeros(n_in),
            running_mean=np.zeros(n_in),
            running_var=np.ones(n_in),
            momentum=momentum,
            epsilon=epsilon,
        )
        w = _f32_grid(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)))
        b = np.zeros(n_out)
        layers.append(LayerModule(bn=bn, weights=w, bias=b, dropout_p=dropout_p[i]))
    final_w = _f32_grid(rng.normal(0.0, np.sqrt(1.0 / widths[-1]), size=(1, widths[-1])))
    final_b = np.full(1, DEFAULT_FINAL_BIAS_INIT)
    return HeadModel(layers=layers, final_weights=final_w, final_bias=final_b,
                     target_scale=target_scale, seed=seed)


def batchnorm_forward(x: np.ndarray, bn: BatchNorm, mode: str,
                      update_running: bool = True):
    """Returns (output, cache); cache is None in eval mode."""
    x = np.asarray(x, dtype=np.float64)
    if mode == "train":
        if x.shape[0] < 2:
            raise InvalidArgumentError(
                f"BatchNorm needs a batch of at least 2 in train mode, got {x.shape[0]}"
            )
        mu = x.mean(axis=0)
        var = x.var(axis=0)  # population variance
        sigma = np.sqrt(var + bn.epsilon)
        xhat = (x - mu) / sigma
        if update_running:
            bn.running_mean = bn.momentum * bn.running_mean + (1 - bn.momentum) * mu
            bn.running_var = bn.momentum * bn.running_var + (1 - bn.momentum) * var
        return bn.gamma * xhat + bn.beta, (xhat, sigma)
    if mode == "eval":
        xhat = (x - bn.running_mean) / np.sqrt(bn.running_var + bn.epsilon)
        return bn.gamma * xhat + bn.beta, None
    raise InvalidArgumentError(f"unknown mode {mode!r}")


def batchnorm_backward(dy: np.ndarray, bn: BatchNorm, cache):
    """Gradients through train-mode normalization, including batch stats."""
    xhat, sigma = cache
    n = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * bn.gamma
    dx = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).sum(axis=0) / n) / sigma
    return dx, dgamma, dbeta


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0.0)


def dropout(x: np.ndarray, p: float, mode: str, rng: np.random.Generator | None):
    """Inverted dropout: train zeroes units w.p. p and scales survivors by
    1/(1-p); eval is the identity. Returns (output, scaled_mask_or_None)."""
    if not 0.0 <= p < 1.0:
        raise InvalidArgumentError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x, None
    if rng is None:
        raise InvalidArgumentError("train-mode dropout needs an rng_state")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


@dataclass
class ForwardCache:
    """Intermediates captured by a train-mode forward pass."""

    module_caches: list[dict] = field(default_factory=list)
    final_input: np.ndarray | None = None


def head_forward(model: HeadModel, x: np.ndarray,
                 rng: np.random.Generator | None = None):
    """Run the head over a feature batch.

    Returns (predictions, cache); predictions are on the optimization scale
    (multiply by model.target_scale for degrees). cache is None in eval
    mode and feeds head_backward in train mode.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError(f"expected a (batch, features) matrix, got {x.shape}")
    expected = model.widths[0]
    if x.shape[1] != expected:
        raise InvalidArgumentError(
            f"feature width {x.shape[1]} does not match model input width {expected}"
        )
    train = model.mode == "train"
    cache = ForwardCache() if train else None
    h = x
    for lm in model.layers:
        bn_out, bn_cache = batchnorm_forward(h, lm.bn, model.mode)
        z = bn_out @ lm.weights.T + lm.bias
        a = relu(z)
        out, mask = dropout(a, lm.dropout_p, model.mode, rng)
        if train:
            cache.module_caches.append(
                {"bn": bn_cache, "bn_out": bn_out, "z": z, "mask": mask}
            )
        h = out
    pred = (h @ model.final_weights.T + model.final_bias).ravel()
    if train:
        cache.final_input = h
    return pred, cache


def head_backward(model: HeadModel, cache: ForwardCache | None,
                  dpred: np.ndarray) -> list[np.ndarray]:
    """Exact parameter gradients for the cached train-mode forward pass.

    Order matches parameters_of(): per module gamma, beta, weights, bias;
    then final weights, bias.
    """
    if cache is None or cache.final_input is None:
        raise InvalidStateError("head_backward needs a cached train-mode forward pass")
    dpred = np.asarray(dpred, dtype=np.float64).reshape(-1, 1)
    d_final_w = dpred.T @ cache.final_input
    d_final_b = dpred.sum(axis=0)
    dh = dpred @ model.final_weights
    grads_rev: list[np.ndarray] = [d_final_b, d_final_w]
    for lm, mc in zip(reversed(model.layers), reversed(cache.module_caches)):
        if mc["mask"] is not None:
            dh = dh * mc["mask"]
        dz = dh * (mc["z"] > 0)
        dw = dz.T @ mc["bn_out"]
        db = dz.sum(axis=0)
        d_bn_out = dz @ lm.weights
        dh, dgamma, dbeta = batchnorm_backward(d_bn_out, lm.bn, mc["bn"])
        grads_rev.extend([db, dw, dbeta, dgamma])
    return list(reversed(grads_rev))


def parameters_of(model: HeadModel) -> list[np.ndarray]:
    """Trainable tensors in the fixed order used by gradients and Adam."""
    params: list[np.ndarray] = []
    for lm in model.layers:
        params.extend([lm.bn.gamma, lm.bn.beta, lm.weights, lm.bias])
    params.extend([model.final_weights, model.final_bias])
    return params


def set_parameters(model: HeadModel, values: list[np.ndarray]) -> None:
    """Replace trainable tensors, preserving the parameters_of() order."""
    current = parameters_of(model)
    if len(values) != len(current):
        raise InvalidArgumentError(f"expected {len(current)} tensors, got {len(values)}")
    it = iter(values)
    for lm in model.layers:
        lm.bn.gamma = np.asarray(next(it), dtype=np.float64)
        lm.bn.beta = np.asarray(next(it), dtype=np.float64)
        lm.weights = np.asarray(next(it), dtype=np.float64)
        lm.bias = np.asarray(next(it), dtype=np.float64)
    model.final_weights = np.asarray(next(it), dtype=np.float64)
    model.final_bias = np.asarray(next(it), dtype=np.float64)


def _blobs_of(model: HeadModel) -> list[np.ndarray]:
    blobs = []
    for lm in model.layers:
        blobs.extend(
            [lm.bn.gamma, lm.bn.beta, lm.bn.running_mean, lm.bn.running_var,
             lm.weights, lm.bias]
        )
    blobs.extend([model.final_weights, model.final_bias])
    return blobs


def save_checkpoint(model: HeadModel, path) -> None:
    """Write magic, a canonical JSON header, then float32 parameter blobs."""
    for blob in _blobs_of(model):
        if not np.all(np.isfinite(blob)):
            raise CheckpointError("model contains non-finite parameters")
    header = {
        "version": CHECKPOINT_VERSION,
        "widths": model.widths,
        "dropout_p": [lm.dropout_p for lm in model.layers],
        "momentum": model.layers[0].bn.momentum if model.layers else DEFAULT_BN_MOMENTUM,
        "epsilon": model.layers[0].bn.epsilon if model.layers else DEFAULT_BN_EPSILON,
        "target_scale": model.target_scale,
        "seed": model.seed,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes]
    for blob in _blobs_of(model):
        parts.append(np.ascontiguousarray(blob, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> HeadModel:
    """Rebuild a head (eval mode) from a checkpoint file."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    (header_len,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + header_len:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {header.get('version')!r}"
        )
    widths = [int(w) for w in header["widths"]]
    dropout_p = [float(p) for p in header["dropout_p"]]
    if len(dropout_p) != len(widths) - 1:
        raise CheckpointError(f"{path}: inconsistent widths/dropout lists")

    offset = 8 + header_len

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated parameter payload at offset {offset}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        offset = end
        return arr.astype(np.float64).reshape(shape)

    layers = []
    for i in range(len(widths) - 1):
        n_in, n_out = widths[i], widths[i + 1]
        bn = BatchNorm(
            gamma=take((n_in,)),
            beta=take((n_in,)),
            running_mean=take((n_in,)),
            running_var=take((n_in,)),
            momentum=float(header["momentum"]),
            epsilon=float(header["epsilon"]),
        )
        layers.append(
            LayerModule(bn=bn, weights=take((n_out, n_in)), bias=take((n_out,)),
                        dropout_p=dropout_p[i])
        )
    final_w = take((1, widths[-1]))
    final_b = take((1,))
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return HeadModel(layers=layers, final_weights=final_w, final_bias=final_b,
                     mode="eval", target_scale=float(header["target_scale"]),
                     seed=int(header["seed"]))
