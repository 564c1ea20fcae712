"""Random-forest baseline on handcrafted window statistics.

Each of the two thigh-angle signals is summarised over the last 60 samples
by six statistics (first, last, min, max, mean, population std), giving 12
features. The forest predicts the current-time class only.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import N_CLASSES, Dataset, Sequence, WarmupError

FEATURE_NAMES = ("first", "last", "min", "max", "mean", "std")
N_FEATURES = 2 * len(FEATURE_NAMES)
RF_WINDOW = 60

_MAGIC = b"WALKRF\x00\x00"
_VERSION = 1


@dataclass(frozen=True)
class RfConfig:
    window: int = RF_WINDOW
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 5
    features_per_split: int = math.ceil(math.sqrt(N_FEATURES))
    seed: int = 0

    def __post_init__(self):
        for name in ("window", "n_trees", "max_depth", "min_samples_leaf", "features_per_split"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.features_per_split > N_FEATURES:
            raise ValueError(f"features_per_split cannot exceed {N_FEATURES}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RfConfig":
        return cls(**data)


def _window_features(windows: np.ndarray) -> np.ndarray:
    """``(n, channels, w)`` windows to ``(n, 6*channels)`` features."""
    stats = np.stack(
        [
            windows[..., 0],
            windows[..., -1],
            windows.min(axis=-1),
            windows.max(axis=-1),
            windows.mean(axis=-1),
            windows.std(axis=-1),
        ],
        axis=-1,
    )
    return stats.reshape(len(windows), -1)


def rf_features(seq: Sequence, k: int, window: int = RF_WINDOW) -> np.ndarray:
    """Features for the window ending at ``k``; left-signal features first."""
    if not 0 <= k < len(seq):
        raise IndexError(f"k={k} outside sequence of length {len(seq)}")
    if k < window - 1:
        raise WarmupError(f"k={k} precedes the {window}-sample feature window")
    w = seq.angles[k - window + 1 : k + 1].T[None]
    return _window_features(w)[0]


def sequence_features(seq: Sequence, window: int = RF_WINDOW) -> np.ndarray:
    """Features for every anchor ``k = window-1 .. L-1``."""
    if len(seq) < window:
        return np.empty((0, N_FEATURES))
    w = sliding_window_view(seq.angles, window, axis=0)  # (L-w+1, 2, w)
    return _window_features(w)


# ----------------------------------------------------------------------------
# trees


@dataclass(eq=False)
class DecisionTree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, 3) leaf class frequencies

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(np.asarray(X, dtype=np.float64))]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass(eq=False)
class RfModel:
    config: RfConfig
    trees: list[DecisionTree]

    warmup = property(lambda self: self.config.window - 1)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        acc = np.zeros((len(X), N_CLASSES))
        for tree in self.trees:
            acc += tree.predict_proba(X)
        return acc / len(self.trees)

    def current_probabilities(self, seq: Sequence) -> tuple[np.ndarray, np.ndarray]:
        X = sequence_features(seq, self.config.window)
        return np.arange(self.config.window - 1, len(seq)), self.predict_proba(X)


def split_score(left_counts: np.ndarray, right_counts: np.ndarray) -> float:
    """Sum of squared class counts over size, per side.

    Maximising it minimises the size-weighted Gini impurity of the children:
    ``n*G = n - sum(c**2)/n`` per side.
    """
    nl, nr = int(left_counts.sum()), int(right_counts.sum())
    return int((left_counts**2).sum()) / nl + int((right_counts**2).sum()) / nr


def best_split(
    X: np.ndarray, y: np.ndarray, features: Iterable[int], min_samples_leaf: int
) -> Optional[tuple[int, float, float]]:
    """Best Gini split among ``features`` as ``(feature, threshold, score)``.

    Thresholds are midpoints between consecutive distinct values; a sample
    goes left when ``x <= threshold``. Ties go to the lowest feature index,
    then the lowest threshold. Returns ``None`` if no split respects
    ``min_samples_leaf``.
    """
    n = len(y)
    onehot = np.eye(N_CLASSES, dtype=np.int64)[y]
    total = onehot.sum(axis=0)
    best = None
    for f in sorted(features):
        order = np.argsort(X[:, f])  # tied values never straddle a candidate
        xs = X[order, f]
        cum = np.cumsum(onehot[order], axis=0)  # left counts when splitting after i
        nl = np.arange(1, n + 1)
        ok = (xs[:-1] < xs[1:]) & (nl[:-1] >= min_samples_leaf) & (n - nl[:-1] >= min_samples_leaf)
        if not ok.any():
            continue
        cand = np.nonzero(ok)[0]
        lc = cum[cand]
        rc = total - lc
        nlc = nl[cand]
        # same arithmetic as split_score: integer numerators, one division each
        score = (lc**2).sum(axis=1) / nlc + (rc**2).sum(axis=1) / (n - nlc)
        i = int(np.argmax(score))  # first max = lowest threshold
        s = float(score[i])
        if best is None or s > best[2]:
            thr = 0.5 * (xs[cand[i]] + xs[cand[i] + 1])
            best = (f, float(thr), s)
    return best


def build_tree(X: np.ndarray, y: np.ndarray, config: RfConfig, rng: np.random.Generator) -> DecisionTree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=N_CLASSES).astype(np.float64)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yi = y[idx]
        if depth >= config.max_depth or len(idx) < 2 * config.min_samples_leaf or np.all(yi == yi[0]):
            continue
        feats = rng.choice(N_FEATURES, size=config.features_per_split, replace=False)
        found = best_split(X[idx], yi, feats, config.min_samples_leaf)
        if found is None:
            continue
        f, thr, score = found
        counts = np.bincount(yi, minlength=N_CLASSES)
        if score <= int((counts**2).sum()) / len(idx) + 1e-12:
            continue  # no impurity decrease
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = int(f), thr
        li, ri = idx[mask], idx[~mask]
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return DecisionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64).reshape(-1, N_CLASSES),
    )


def fit_forest(X: np.ndarray, y: np.ndarray, config: RfConfig) -> RfModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot train a forest on an empty feature set")
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        boot = rng.integers(0, len(y), size=len(y))
        trees.append(build_tree(X[boot], y[boot], config, rng))
    return RfModel(config, trees)


def dataset_features(dataset: Dataset | Iterable[Sequence], window: int = RF_WINDOW):
    Xs, ys = [], []
    for seq in dataset:
        X = sequence_features(seq, window)
        Xs.append(X)
        ys.append(seq.ground_truth()[window - 1 :])
    if not Xs:
        return np.empty((0, N_FEATURES)), np.empty(0, dtype=np.int64)
    return np.concatenate(Xs), np.concatenate(ys)


def rf_train(dataset: Dataset | Iterable[Sequence], config: RfConfig = RfConfig()) -> RfModel:
    X, y = dataset_features(dataset, config.window)
    return fit_forest(X, y, config)


def rf_predict(model: RfModel, features: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector (or a batch of them)."""
    features = np.asarray(features, dtype=np.float64)
    probs = model.predict_proba(features)
    return probs[0] if features.ndim == 1 else probs


# ----------------------------------------------------------------------------
# serialisation


def save_forest(model: RfModel, path, meta: Optional[dict] = None) -> None:
    header = {
        "format": "walkmode-rf",
        "config": model.config.to_dict(),
        "tree_sizes": [t.n_nodes for t in model.trees],
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, len(hb)) + hb)
        for t in model.trees:
            fh.write(t.feature.astype("<i8").tobytes())
            fh.write(t.threshold.astype("<f8").tobytes())
            fh.write(t.left.astype("<i8").tobytes())
            fh.write(t.right.astype("<i8").tobytes())
            fh.write(t.value.astype("<f8").tobytes())


def load_forest(path) -> RfModel:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a forest file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported forest version {version}")
    try:
        header = json.loads(data[16 : 16 + hlen])
    except ValueError:
        raise ValueError(f"{path}: corrupt header") from None
    config = RfConfig.from_dict(header["config"])
    pos = 16 + hlen
    trees = []

    def take(n, dtype):
        nonlocal pos
        size = n * 8
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated forest file")
        arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(dtype[1:])
        pos += size
        return arr

    for n in header["tree_sizes"]:
        trees.append(
            DecisionTree(take(n, "<i8"), take(n, "<f8"), take(n, "<i8"), take(n, "<i8"),
                         take(n * N_CLASSES, "<f8").reshape(n, N_CLASSES))
        )
    if pos != len(data) or len(trees) != config.n_trees:
        raise ValueError(f"{path}: size does not match header")
    return RfModel(config, trees)
