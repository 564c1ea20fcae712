"""Independent reference implementations used to check the package.

Each oracle is deliberately naive: pair counting, full enumeration, or
central differences, with no code shared with the implementation under test.
"""

import itertools

import numpy as np

from walkmode.tcn import TcnConfig, TcnModel, backward, forward, window_cross_entropy
from walkmode.tcn.network import forward_batch

SMALL_TCN = TcnConfig(n_blocks=1, convs_per_block=2, kernel_size=5, dilations=(1,), channels=(4,), N=1)
FD_EPS = 1e-4


def random_small_model(rng: np.random.Generator, config: TcnConfig = SMALL_TCN) -> TcnModel:
    """Small model with every parameter, biases included, drawn at random."""
    model = TcnModel.initialize(config, seed=int(rng.integers(2**31)))
    for name, value in model.params.items():
        model.params[name] = rng.normal(0.0, 0.7, size=value.shape)
    model.input_mean = rng.normal(0.0, 1.0, size=config.input_channels)
    model.input_std = rng.uniform(0.5, 2.0, size=config.input_channels)
    return model


def _relu_pattern(model: TcnModel, x: np.ndarray) -> np.ndarray:
    """Which ReLU units are active; only read, never used to compute a gradient."""
    _, cache = forward_batch(model.params, model.config, model.normalize(x.T)[None])
    masks = []
    for _, layers, block_mask in cache["blocks"]:
        masks += [m.ravel() for _, _, m, _ in layers] + [block_mask.ravel()]
    return np.concatenate(masks)


def fd_relative_errors(
    model: TcnModel, x: np.ndarray, target: np.ndarray, eps: float = FD_EPS
) -> tuple[dict[str, float], bool]:
    """Per-tensor ``|g_fd - g| / max(|g_fd| + |g|, 1e-12)`` in the Euclidean norm.

    Also reports whether any +-eps perturbation flips a ReLU, in which case
    the central difference straddles a kink and does not estimate a gradient.
    """
    analytic = backward(model, x, target)
    base = _relu_pattern(model, x)
    kink = False

    def loss() -> float:
        nonlocal kink
        kink = kink or not np.array_equal(_relu_pattern(model, x), base)
        return window_cross_entropy(forward(model, x), target)

    errors = {}
    for name, p in model.params.items():
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = loss()
            flat[i] = keep - eps
            down = loss()
            flat[i] = keep
            nflat[i] = (up - down) / (2 * eps)
        diff = np.linalg.norm(numeric - analytic[name])
        scale = max(np.linalg.norm(numeric) + np.linalg.norm(analytic[name]), 1e-12)
        errors[name] = float(diff / scale)
    return errors, kink


def gradient_check_draws(n_draws: int, seed: int = 0) -> tuple[list[float], int]:
    """Largest per-tensor relative error for each random (model, window, target) draw.

    Draws where a perturbation crosses a ReLU kink are replaced by fresh ones;
    the second return value counts them.
    """
    rng = np.random.default_rng(seed)
    worst, redrawn = [], 0
    while len(worst) < n_draws:
        model = random_small_model(rng)
        x = rng.normal(0.0, 2.0, size=(model.config.input_channels, model.M + 1))
        target = rng.integers(0, 3, size=model.config.window_size)
        errors, kink = fd_relative_errors(model, x, target)
        if kink:
            redrawn += 1
            continue
        worst.append(max(errors.values()))
    return worst, redrawn


def auroc_pairs(scores, positive) -> float:
    """P(score_pos > score_neg) + P(tie)/2 by explicit pair counting."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def wilcoxon_enumerate(diffs) -> float:
    """One-sided p = P(W+ >= observed) by trying all 2**n sign patterns."""
    d = [x for x in diffs if x != 0]
    absd = [abs(x) for x in d]
    # average ranks by direct counting
    ranks = []
    for a in absd:
        below = sum(1 for b in absd if b < a)
        equal = sum(1 for b in absd if b == a)
        ranks.append(below + (equal + 1) / 2.0)
    observed = sum(r for r, x in zip(ranks, d) if x > 0)
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        if sum(r for r, s in zip(ranks, signs) if s) >= observed - 1e-9:
            hits += 1
    return hits / 2 ** len(d)


def gini_gain_oracle(X, y, features, min_leaf):
    """Exhaustive split search: try every midpoint of every feature.

    Returns ``(feature, threshold, score)`` where score is the sum over both
    sides of (sum of squared class counts / side size), or ``None``.
    """
    best = None
    n = len(y)
    for f in sorted(features):
        values = sorted(set(X[:, f].tolist()))
        for lo, hi in zip(values, values[1:]):
            thr = 0.5 * (lo + hi)
            left = [y[i] for i in range(n) if X[i, f] <= thr]
            right = [y[i] for i in range(n) if X[i, f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            score = sum(left.count(c) ** 2 for c in range(3)) / len(left) + sum(
                right.count(c) ** 2 for c in range(3)
            ) / len(right)
            if best is None or score > best[2] + 1e-12:
                best = (f, thr, score)
    return best
