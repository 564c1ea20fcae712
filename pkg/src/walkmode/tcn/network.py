"""Dilated causal convolutional network with a target-window head.

Activations are kept time-major, ``(batch, time, channels)``. Every
convolution is *valid* (no padding): a layer with kernel ``K`` and dilation
``d`` shortens its input by ``(K-1)*d`` samples, so an input of exactly
``receptive_field`` samples yields one output position and a longer input of
``T`` samples yields ``T - receptive_field + 1`` positions, one per window.
No position ever reads padding, which makes window-wise and sequence-wise
evaluation agree.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import (
    MASKED,
    N_CHANNELS,
    N_CLASSES,
    Sequence,
    TargetWindowEstimate,
    WarmupError,
    extract_window,
)


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class TcnConfig:
    n_blocks: int = 3
    convs_per_block: int = 2
    kernel_size: int = 5
    dilations: tuple[int, ...] = (1, 2, 4)
    channels: tuple[int, ...] = (16, 32, 64)
    input_channels: int = N_CHANNELS
    N: int = 60
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    l2_weight: float = 0.0
    dropout: float = 0.0
    seed: int = 0
    # windows per contiguous chunk; a minibatch is batch_size / chunk_len chunks
    chunk_len: int = 32
    class_balanced: bool = False
    finetune_epochs: int = 5
    finetune_lr_scale: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        self.validate()

    def validate(self) -> "TcnConfig":
        if self.n_blocks < 1 or self.convs_per_block < 1 or self.kernel_size < 1:
            raise ValueError("block count, convs per block and kernel size must be positive")
        if len(self.dilations) != self.n_blocks or len(self.channels) != self.n_blocks:
            raise ValueError("need one dilation and one channel width per block")
        if any(b <= a for a, b in zip(self.dilations, self.dilations[1:])) or self.dilations[0] < 1:
            raise ValueError("dilations must be positive and strictly increasing")
        if min(self.channels) < 1 or self.input_channels < 1 or self.N < 0:
            raise ValueError("channel counts must be positive and N non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.chunk_len < 1 or self.finetune_epochs < 0:
            raise ValueError("batch_size, chunk_len and epoch counts must be positive")
        if not self.learning_rate > 0 or self.l2_weight < 0 or not 0 <= self.dropout < 1:
            raise ValueError("invalid optimiser or regularisation settings")
        return self

    @property
    def window_size(self) -> int:
        return 2 * self.N + 1

    @property
    def M(self) -> int:
        return receptive_field(self) - 1

    def replace(self, **changes) -> "TcnConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dilations"] = list(self.dilations)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TcnConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown TCN config keys: {sorted(unknown)}")
        return cls(**data)


def receptive_field(config: TcnConfig) -> int:
    """Number of input samples seen by one output position."""
    return 1 + sum(
        (config.kernel_size - 1) * d * config.convs_per_block for d in config.dilations
    )


def parameter_shapes(config: TcnConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = config.input_channels
    for b, c_out in enumerate(config.channels):
        prev = c_in
        for c in range(config.convs_per_block):
            shapes[f"block{b}.conv{c}.w"] = (c_out, prev, config.kernel_size)
            shapes[f"block{b}.conv{c}.b"] = (c_out,)
            prev = c_out
        if c_in != c_out:
            shapes[f"block{b}.down.w"] = (c_out, c_in)
            shapes[f"block{b}.down.b"] = (c_out,)
        c_in = c_out
    shapes["head.w"] = (config.window_size * N_CLASSES, c_in)
    shapes["head.b"] = (config.window_size * N_CLASSES,)
    return shapes


def init_parameters(config: TcnConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        elif name == "head.w":
            params[name] = rng.normal(0.0, np.sqrt(1.0 / shape[1]), size=shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return params


@dataclass(eq=False)
class TcnModel:
    config: TcnConfig
    params: dict[str, np.ndarray]
    input_mean: np.ndarray
    input_std: np.ndarray

    @classmethod
    def initialize(cls, config: TcnConfig, seed: Optional[int] = None,
                   input_mean=None, input_std=None) -> "TcnModel":
        rng = np.random.default_rng(config.seed if seed is None else seed)
        mean = np.zeros(config.input_channels) if input_mean is None else np.asarray(input_mean, float)
        std = np.ones(config.input_channels) if input_std is None else np.asarray(input_std, float)
        return cls(config, init_parameters(config, rng), mean, std)

    def copy(self) -> "TcnModel":
        return TcnModel(self.config, {k: v.copy() for k, v in self.params.items()},
                        self.input_mean.copy(), self.input_std.copy())

    def check(self) -> None:
        expected = parameter_shapes(self.config)
        if list(expected) != list(self.params):
            raise ShapeError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.params[name].shape} != {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def M(self) -> int:
        return self.config.M

    @property
    def N(self) -> int:
        return self.config.N

    def normalize(self, angles: np.ndarray) -> np.ndarray:
        """Standardise ``(T, channels)`` raw angles with the training statistics."""
        return (angles - self.input_mean) / self.input_std

    # The predictor protocol shared with the forest baseline.
    warmup = property(lambda self: self.M)

    def current_probabilities(self, seq: Sequence) -> tuple[np.ndarray, np.ndarray]:
        probs = predict_sequence(self, seq)
        return np.arange(self.M, len(seq)), probs[:, self.N, :]


# ----------------------------------------------------------------------------
# building blocks


def _conv_forward(x, w, b, dilation):
    batch, t_in, c_in = x.shape
    c_out, _, k = w.shape
    t_out = t_in - (k - 1) * dilation
    cols = np.concatenate([x[:, j * dilation : j * dilation + t_out, :] for j in range(k)], axis=2)
    w2 = w.transpose(0, 2, 1).reshape(c_out, k * c_in)
    out = cols.reshape(-1, k * c_in) @ w2.T + b
    return out.reshape(batch, t_out, c_out), cols


def _conv_backward(dout, cols, w, dilation, t_in):
    batch, t_out, c_out = dout.shape
    _, c_in, k = w.shape
    d2 = dout.reshape(-1, c_out)
    cols2 = cols.reshape(-1, k * c_in)
    dw = (d2.T @ cols2).reshape(c_out, k, c_in).transpose(0, 2, 1)
    db = d2.sum(axis=0)
    w2 = w.transpose(0, 2, 1).reshape(c_out, k * c_in)
    dcols = (d2 @ w2).reshape(batch, t_out, k, c_in)
    dx = np.zeros((batch, t_in, c_in))
    for j in range(k):
        dx[:, j * dilation : j * dilation + t_out, :] += dcols[:, :, j, :]
    return dx, dw, db


def forward_batch(params, config: TcnConfig, x: np.ndarray, *, dropout_rng=None):
    """Scores for standardised inputs ``x`` of shape ``(B, T, channels)``.

    Returns ``(scores, cache)`` with scores shaped ``(B, T - M, 2N+1, 3)``;
    position ``i`` is the window ending at input sample ``i + M``. Dropout is
    active only when ``dropout_rng`` is given.
    """
    if x.ndim != 3 or x.shape[2] != config.input_channels:
        raise ShapeError(f"expected (B, T, {config.input_channels}) input, got {x.shape}")
    if x.shape[1] < receptive_field(config):
        raise ShapeError(f"input of {x.shape[1]} samples is shorter than the receptive field")
    p_drop = config.dropout if dropout_rng is not None else 0.0
    cache = {"blocks": []}
    h = x
    for b, d in enumerate(config.dilations):
        block_in = h
        layers = []
        for c in range(config.convs_per_block):
            z, cols = _conv_forward(h, params[f"block{b}.conv{c}.w"], params[f"block{b}.conv{c}.b"], d)
            a = np.maximum(z, 0.0)
            mask = None
            if p_drop > 0:
                mask = (dropout_rng.random(a.shape) >= p_drop) / (1.0 - p_drop)
                a = a * mask
            layers.append((h.shape[1], cols, z > 0, mask))
            h = a
        res = block_in[:, block_in.shape[1] - h.shape[1] :, :]
        if f"block{b}.down.w" in params:
            res = res @ params[f"block{b}.down.w"].T + params[f"block{b}.down.b"]
        pre = h + res
        h = np.maximum(pre, 0.0)
        cache["blocks"].append((block_in, layers, pre > 0))
    batch, t_out, c_last = h.shape
    scores = h.reshape(-1, c_last) @ params["head.w"].T + params["head.b"]
    cache["features"] = h
    return scores.reshape(batch, t_out, config.window_size, N_CLASSES), cache


def backward_batch(params, config: TcnConfig, cache, dscores: np.ndarray) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    h = cache["features"]
    batch, t_out, c_last = h.shape
    ds = dscores.reshape(-1, config.window_size * N_CLASSES)
    grads["head.w"] = ds.T @ h.reshape(-1, c_last)
    grads["head.b"] = ds.sum(axis=0)
    dh = (ds @ params["head.w"]).reshape(batch, t_out, c_last)

    for b in reversed(range(config.n_blocks)):
        d = config.dilations[b]
        block_in, layers, pre_pos = cache["blocks"][b]
        dpre = dh * pre_pos
        # residual branch
        t_blk = dpre.shape[1]
        offset = block_in.shape[1] - t_blk
        dx = np.zeros_like(block_in)
        if f"block{b}.down.w" in params:
            res_in = block_in[:, offset:, :]
            dp = dpre.reshape(-1, dpre.shape[2])
            grads[f"block{b}.down.w"] = dp.T @ res_in.reshape(-1, res_in.shape[2])
            grads[f"block{b}.down.b"] = dp.sum(axis=0)
            dx[:, offset:, :] += (dp @ params[f"block{b}.down.w"]).reshape(batch, t_blk, -1)
        else:
            dx[:, offset:, :] += dpre
        # convolution branch
        da = dpre
        for c in reversed(range(config.convs_per_block)):
            t_in, cols, pos, mask = layers[c]
            if mask is not None:
                da = da * mask
            dz = da * pos
            w = params[f"block{b}.conv{c}.w"]
            dprev, grads[f"block{b}.conv{c}.w"], grads[f"block{b}.conv{c}.b"] = _conv_backward(
                dz, cols, w, d, t_in
            )
            da = dprev
        dx += da
        dh = dx
    return {name: grads[name] for name in params}


# ----------------------------------------------------------------------------
# public operations


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def masked_cross_entropy(scores: np.ndarray, targets: np.ndarray, class_weights=None):
    """Summed cross-entropy over unmasked rows and its gradient.

    ``scores`` has shape ``(..., 3)`` and ``targets`` the matching leading
    shape, with :data:`MASKED` entries ignored. Returns
    ``(loss_sum, weight_sum, dloss_sum/dscores)``.
    """
    valid = targets != MASKED
    safe = np.where(valid, targets, 0)
    logp = log_softmax_rows(scores)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    weight = valid.astype(np.float64)
    if class_weights is not None:
        weight = weight * np.asarray(class_weights)[safe]
    loss_sum = float(-(picked * weight).sum())
    grad = np.exp(logp)
    grad[..., :] -= np.eye(N_CLASSES)[safe]
    grad *= weight[..., None]
    return loss_sum, float(weight.sum()), grad


def window_cross_entropy(scores, target) -> float:
    """Mean over the target-window offsets of the per-offset cross-entropy."""
    scores = scores.scores if isinstance(scores, TargetWindowEstimate) else np.asarray(scores, float)
    target = np.asarray(target, dtype=np.int64)
    if scores.shape != (len(target), N_CLASSES):
        raise ShapeError(f"scores {scores.shape} do not match {len(target)} targets")
    loss, count, _ = masked_cross_entropy(scores, target)
    return loss / count


def _check_window(model: TcnModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    expected = (model.config.input_channels, model.M + 1)
    if x.shape != expected:
        raise ShapeError(f"input window has shape {x.shape}, expected {expected}")
    return x


def forward(model: TcnModel, x: np.ndarray, anchor_k: int = -1) -> TargetWindowEstimate:
    """Unnormalised scores for one ``(channels, M+1)`` raw input window."""
    x = _check_window(model, x)
    xn = model.normalize(x.T)[None]
    scores, _ = forward_batch(model.params, model.config, xn)
    return TargetWindowEstimate(scores[0, -1], is_probabilities=False, anchor_k=anchor_k)


def backward(model: TcnModel, x: np.ndarray, target) -> dict[str, np.ndarray]:
    """Gradients of :func:`window_cross_entropy` for one window."""
    x = _check_window(model, x)
    target = np.asarray(target, dtype=np.int64)
    if target.shape != (model.config.window_size,):
        raise ShapeError(f"target has shape {target.shape}, expected ({model.config.window_size},)")
    scores, cache = forward_batch(model.params, model.config, model.normalize(x.T)[None])
    _, count, grad = masked_cross_entropy(scores[0, 0], target)
    return backward_batch(model.params, model.config, cache, grad[None, None] / count)


def predict(model: TcnModel, seq: Sequence, k: int) -> TargetWindowEstimate:
    if k < model.M:
        raise WarmupError(f"k={k} precedes the warm-up of {model.M} samples")
    return predict_window(model, extract_window(seq, k, model.M), anchor_k=k)


def predict_window(model: TcnModel, x: np.ndarray, anchor_k: int = -1) -> TargetWindowEstimate:
    """Probabilities for one ``(channels, M+1)`` raw input window."""
    est = forward(model, x, anchor_k=anchor_k)
    return TargetWindowEstimate(softmax_rows(est.scores), is_probabilities=True, anchor_k=anchor_k)


def predict_sequence(model: TcnModel, seq: Sequence | np.ndarray, block: int = 4096) -> np.ndarray:
    """Probabilities for every valid anchor ``k = M .. L-1``: ``(L-M, 2N+1, 3)``.

    Evaluates whole stretches of the sequence at once; results agree with
    :func:`predict` up to floating-point summation order.
    """
    angles = seq.angles if isinstance(seq, Sequence) else np.asarray(seq, float)
    M = model.M
    if len(angles) <= M:
        raise WarmupError(f"sequence of {len(angles)} samples is within the warm-up of {M}")
    xn = model.normalize(angles)
    out = []
    for start in range(M, len(angles), block):
        stop = min(start + block, len(angles))
        scores, _ = forward_batch(model.params, model.config, xn[None, start - M : stop])
        out.append(softmax_rows(scores[0]))
    return np.concatenate(out, axis=0)
