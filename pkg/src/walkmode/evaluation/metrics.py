"""Rank-based AUROC, confusion matrices and target-window curves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Protocol

import numpy as np
from scipy.stats import rankdata

from ..core import N_CLASSES, Dataset, Sequence, WalkingMode


class UndefinedMetricError(ValueError):
    pass


class CurrentTimePredictor(Protocol):
    warmup: int

    def current_probabilities(self, seq: Sequence) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class ScoredSample:
    true_class: WalkingMode
    probs: tuple[float, float, float]

    def __post_init__(self):
        if abs(sum(self.probs) - 1.0) > 1e-6:
            raise ValueError("probabilities must sum to 1")


def auroc_binary(scores, is_positive=None) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg) + P(equal)/2.

    Accepts either two parallel arrays or a single iterable of
    ``(score, is_positive)`` pairs.
    """
    if is_positive is None:
        pairs = list(scores)
        scores = [s for s, _ in pairs]
        is_positive = [p for _, p in pairs]
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_positive, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_multiclass(y_true, probs) -> float:
    """Unweighted mean of the one-vs-rest AUROCs of the three classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    missing = set(range(N_CLASSES)) - set(np.unique(y_true).tolist())
    if missing:
        names = ", ".join(WalkingMode(c).name for c in sorted(missing))
        raise UndefinedMetricError(f"class(es) {names} absent from the ground truth")
    return float(np.mean([auroc_binary(probs[:, c], y_true == c) for c in range(N_CLASSES)]))


def auroc_samples(samples: Iterable[ScoredSample]) -> float:
    samples = list(samples)
    return auroc_multiclass([s.true_class for s in samples], [s.probs for s in samples])


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # rows: ground truth, columns: prediction

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def format_table(self) -> str:
        names = [m.name for m in WalkingMode]
        lines = ["truth\\pred " + " ".join(f"{n:>8}" for n in names)]
        for name, row in zip(names, self.counts):
            lines.append(f"{name:>10} " + " ".join(f"{int(v):>8d}" for v in row))
        return "\n".join(lines)


def confusion(y_true, probs) -> ConfusionMatrix:
    """Argmax predictions (ties to the lowest class index) against truth."""
    y_true = np.asarray(y_true, dtype=np.int64)
    pred = np.argmax(np.asarray(probs), axis=1)
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (y_true, pred), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True, eq=False)
class WindowCurve:
    offsets: np.ndarray
    auroc: np.ndarray

    def __post_init__(self):
        if len(self.offsets) != len(self.auroc):
            raise ValueError("offsets and values differ in length")

    def at(self, offset: int) -> float:
        hit = np.nonzero(self.offsets == offset)[0]
        if not len(hit):
            raise KeyError(offset)
        return float(self.auroc[hit[0]])

    @staticmethod
    def mean(curves: list["WindowCurve"]) -> "WindowCurve":
        base = curves[0].offsets
        if any(not np.array_equal(c.offsets, base) for c in curves):
            raise ValueError("curves cover different offsets")
        return WindowCurve(base.copy(), np.mean([c.auroc for c in curves], axis=0))


@dataclass(frozen=True, eq=False)
class WindowPredictions:
    """Target-window probabilities for every valid anchor of one sequence."""

    ks: np.ndarray
    probs: np.ndarray  # (len(ks), 2N+1, 3)
    labels: np.ndarray

    @property
    def N(self) -> int:
        return (self.probs.shape[1] - 1) // 2


def window_predictions(model, dataset: Dataset | Iterable[Sequence]) -> list[WindowPredictions]:
    from ..tcn import predict_sequence

    out = []
    for seq in dataset:
        probs = predict_sequence(model, seq)
        out.append(WindowPredictions(np.arange(model.M, len(seq)), probs, seq.ground_truth()))
    return out


def _pool_offset(preds: list[WindowPredictions], offset: int, row: int):
    ys, ps = [], []
    for wp in preds:
        idx = wp.ks + offset
        ok = (idx >= 0) & (idx < len(wp.labels))  # padded edges excluded
        ys.append(wp.labels[idx[ok]])
        ps.append(wp.probs[ok, row])
    return np.concatenate(ys), np.concatenate(ps)


def window_curve_from_predictions(preds: list[WindowPredictions]) -> WindowCurve:
    N = preds[0].N
    offsets = np.arange(-N, N + 1)
    values = np.empty(len(offsets))
    for i, off in enumerate(offsets):
        y, p = _pool_offset(preds, int(off), i)
        values[i] = auroc_multiclass(y, p)
    return WindowCurve(offsets, values)


def window_curve(model, dataset: Dataset | Iterable[Sequence]) -> WindowCurve:
    """Multiclass AUROC at each target-window offset against ``c[k+offset]``."""
    return window_curve_from_predictions(window_predictions(model, dataset))


def repeat_baseline_from_predictions(current: list[WindowPredictions], N: int) -> WindowCurve:
    """Score the offset-0 estimate against future labels ``c[k+d]``, ``d = 0..N``."""
    offsets = np.arange(0, N + 1)
    values = np.empty(len(offsets))
    for i, off in enumerate(offsets):
        y, p = _pool_offset(current, int(off), 0)
        values[i] = auroc_multiclass(y, p)
    return WindowCurve(offsets, values)


def current_predictions(model_like: CurrentTimePredictor, dataset) -> list[WindowPredictions]:
    out = []
    for seq in dataset:
        ks, probs = model_like.current_probabilities(seq)
        out.append(WindowPredictions(ks, probs[:, None, :], seq.ground_truth()))
    return out


def repeat_baseline_curve(model_like: CurrentTimePredictor, dataset, N: int = 60) -> WindowCurve:
    return repeat_baseline_from_predictions(current_predictions(model_like, dataset), N)


def pick_delta(curve: WindowCurve) -> int:
    """Offset of the best AUROC; ties go to the offset nearest 0, then the negative one."""
    values = np.asarray(curve.auroc)
    if not np.all(np.isfinite(values)):
        raise ValueError("curve has non-finite values")
    best = values.max()
    candidates = [int(o) for o, v in zip(curve.offsets, values) if v == best]
    return min(candidates, key=lambda o: (abs(o), o))


def current_time_auroc(model_like: CurrentTimePredictor, dataset) -> tuple[float, ConfusionMatrix]:
    preds = current_predictions(model_like, dataset)
    y = np.concatenate([wp.labels[wp.ks] for wp in preds])
    p = np.concatenate([wp.probs[:, 0] for wp in preds])
    return auroc_multiclass(y, p), confusion(y, p)
