"""Minibatch training of the TCN with Adam.

Each epoch visits every window (stride 1) exactly once. Windows are grouped
into contiguous chunks of ``chunk_len`` anchors so that one forward pass over
``chunk_len + M`` samples produces all of a chunk's outputs; a minibatch is
``ceil(batch_size / chunk_len)`` randomly drawn chunks.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ..core import MASKED, N_CLASSES, Dataset, Sequence
from .network import TcnConfig, TcnModel, backward_batch, forward_batch, masked_cross_entropy

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class EmptyDatasetError(ValueError):
    pass


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    validation_loss: Optional[float] = None
    wall_clock_s: float = 0.0
    seed: int = 0
    n_windows: int = 0


@dataclass(frozen=True, eq=False)
class LabelTrack:
    """A sequence's frames paired with per-timestep supervision.

    ``labels`` uses :data:`MASKED` for unsupervised timesteps. With
    ``replicate_edges`` target offsets beyond the sequence repeat the nearest
    label; otherwise they are masked.
    """

    angles: np.ndarray
    labels: np.ndarray
    replicate_edges: bool = True

    @classmethod
    def from_sequence(cls, seq: Sequence) -> "LabelTrack":
        return cls(seq.angles, seq.ground_truth(), True)


def as_tracks(data: Dataset | Iterable) -> list[LabelTrack]:
    out = []
    for item in data:
        out.append(item if isinstance(item, LabelTrack) else LabelTrack.from_sequence(item))
    return out


def window_targets(track: LabelTrack, ks: np.ndarray, N: int) -> np.ndarray:
    """Targets ``(len(ks), 2N+1)`` for anchors ``ks``."""
    L = len(track.labels)
    idx = ks[:, None] + np.arange(-N, N + 1)[None, :]
    inside = (idx >= 0) & (idx < L)
    out = track.labels[np.clip(idx, 0, L - 1)].astype(np.int64)
    if not track.replicate_edges:
        out[~inside] = MASKED
    return out


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def input_statistics(tracks: list[LabelTrack]) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([t.angles for t in tracks], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std < 1e-8] = 1.0
    return mean, std


def _chunks(tracks: list[LabelTrack], M: int, chunk_len: int) -> list[tuple[int, int, int]]:
    out = []
    for i, tr in enumerate(tracks):
        L = len(tr.angles)
        for start in range(M, L, chunk_len):
            out.append((i, start, min(chunk_len, L - start)))
    return out


def _chunk_weights(tracks, chunks, N) -> np.ndarray:
    """Sampling weights that equalise the classes of chunk anchors."""
    anchor = np.array([tracks[i].labels[s] for i, s, _ in chunks])
    counts = np.bincount(anchor[anchor != MASKED], minlength=N_CLASSES).astype(float)
    w = np.where(anchor == MASKED, 0.0, 1.0 / np.maximum(counts[np.maximum(anchor, 0)], 1.0))
    return w / w.sum()


def _loss_and_grads(model: TcnModel, xs, tracks, batch, dropout_rng):
    cfg = model.config
    M, N = cfg.M, cfg.N
    groups: dict[int, list] = {}
    for item in batch:
        groups.setdefault(item[2], []).append(item)
    staged = []
    loss_sum, count = 0.0, 0.0
    for length in sorted(groups):
        items = groups[length]
        x = np.stack([xs[i][s - M : s + length] for i, s, _ in items])
        targets = np.stack([window_targets(tracks[i], np.arange(s, s + length), N) for i, s, _ in items])
        scores, cache = forward_batch(model.params, cfg, x, dropout_rng=dropout_rng)
        l, c, dscores = masked_cross_entropy(scores, targets)
        loss_sum += l
        count += c
        staged.append((cache, dscores))
    if count == 0:
        return 0.0, 0.0, None
    grads = None
    for cache, dscores in staged:
        g = backward_batch(model.params, cfg, cache, dscores / count)
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] += g[k]
    if cfg.l2_weight > 0:
        for k in grads:
            if not k.endswith(".b"):
                grads[k] += cfg.l2_weight * model.params[k]
    return loss_sum, count, grads


def evaluate_loss(model: TcnModel, data: Dataset | Iterable, block: int = 2048) -> float:
    """Mean masked cross-entropy over every window of ``data``."""
    tracks = as_tracks(data)
    cfg = model.config
    loss_sum, count = 0.0, 0.0
    for tr in tracks:
        xn = model.normalize(tr.angles)
        for start in range(cfg.M, len(xn), block):
            stop = min(start + block, len(xn))
            scores, _ = forward_batch(model.params, cfg, xn[None, start - cfg.M : stop])
            targets = window_targets(tr, np.arange(start, stop), cfg.N)[None]
            l, c, _ = masked_cross_entropy(scores, targets)
            loss_sum += l
            count += c
    if count == 0:
        raise EmptyDatasetError("no supervised windows to evaluate")
    return loss_sum / count


def fit(
    model: TcnModel,
    data: Dataset | Iterable,
    *,
    epochs: int,
    learning_rate: float,
    seed: int,
    report: Optional[TrainReport] = None,
) -> TrainReport:
    """Continue training ``model`` in place."""
    cfg = model.config
    tracks = as_tracks(data)
    xs = [model.normalize(t.angles) for t in tracks]
    chunks = _chunks(tracks, cfg.M, cfg.chunk_len)
    if not chunks:
        raise EmptyDatasetError("no windows after the warm-up; sequences are too short")
    n_windows = sum(c[2] for c in chunks)
    report = report or TrainReport(seed=seed)
    report.n_windows = n_windows

    rng = np.random.default_rng(seed)
    dropout_rng = rng if cfg.dropout > 0 else None
    weights = _chunk_weights(tracks, chunks, cfg.N) if cfg.class_balanced else None
    per_batch = max(1, math.ceil(cfg.batch_size / cfg.chunk_len))
    opt = Adam(model.params, learning_rate)
    for epoch in range(epochs):
        if weights is None:
            order = rng.permutation(len(chunks))
        else:
            order = rng.choice(len(chunks), size=len(chunks), replace=True, p=weights)
        ep_loss, ep_count = 0.0, 0.0
        for b in range(0, len(order), per_batch):
            batch = [chunks[j] for j in order[b : b + per_batch]]
            loss_sum, count, grads = _loss_and_grads(model, xs, tracks, batch, dropout_rng)
            if grads is None:
                continue
            opt.step(model.params, grads)
            ep_loss += loss_sum
            ep_count += count
        if ep_count == 0:
            raise EmptyDatasetError("every window is masked; nothing to learn")
        report.epoch_losses.append(ep_loss / ep_count)
        log.debug("epoch %d loss %.5f", epoch, report.epoch_losses[-1])
    return report


def train(
    dataset: Dataset | Iterable,
    config: TcnConfig,
    validation: Optional[Dataset] = None,
) -> tuple[TcnModel, TrainReport]:
    """Train a fresh model; deterministic given ``config.seed``."""
    start = time.perf_counter()
    tracks = as_tracks(dataset)
    if not tracks:
        raise EmptyDatasetError("empty dataset")
    mean, std = input_statistics(tracks)
    init_seed, fit_seed = np.random.SeedSequence(config.seed).generate_state(2)
    model = TcnModel.initialize(config, seed=int(init_seed), input_mean=mean, input_std=std)
    report = TrainReport(seed=config.seed)
    fit(model, tracks, epochs=config.epochs, learning_rate=config.learning_rate,
        seed=int(fit_seed), report=report)
    if validation is not None:
        report.validation_loss = evaluate_loss(model, validation)
    report.wall_clock_s = time.perf_counter() - start
    return model, report
