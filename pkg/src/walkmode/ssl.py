"""Hindsight self-labelling, user-tailored fine-tuning and the three-day protocol."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from .core import MASKED, Dataset, Sequence
from .evaluation import current_time_auroc, pick_delta, window_curve
from .evaluation.protocols import ProtocolError
from .tcn import LabelTrack, TcnConfig, TcnModel, fit, predict_sequence, train

log = logging.getLogger(__name__)

N_DAYS = 3
SEQS_PER_DAY = 2


class LabelingMode(str, Enum):
    GROUND_TRUTH = "ground_truth"
    SELF_LABEL = "self_label"


@dataclass(frozen=True, eq=False)
class PseudoDataset:
    """Labels attached to frames of a sequence whose ground truth is withheld."""

    source: Sequence
    indices: np.ndarray
    labels: np.ndarray
    delta: int
    M: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if len(idx) != len(self.labels):
            raise ValueError("indices and labels differ in length")
        if len(idx) and (np.any(np.diff(idx) <= 0) or idx[-1] >= len(self.source)):
            raise ValueError("pseudo-label indices must be increasing and inside the sequence")
        # a label for frame k+delta is produced at time k >= M
        if len(idx) and idx[0] < max(self.M + self.delta, 0):
            raise ValueError(f"index {idx[0]} precedes the first labelable frame {self.M + self.delta}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.indices)

    def to_track(self) -> LabelTrack:
        full = np.full(len(self.source), MASKED, dtype=np.int64)
        full[self.indices] = self.labels
        return LabelTrack(self.source.angles, full, replicate_edges=False)

    def accuracy_against(self, truth: np.ndarray) -> float:
        return float(np.mean(np.asarray(truth)[self.indices] == self.labels))


def _check_delta(model: TcnModel, seq: Sequence, delta: int) -> None:
    if delta > 0:
        raise ValueError("future estimates are never used as labels: delta must be <= 0")
    if delta < -model.N:
        raise ValueError(f"delta {delta} lies outside the target window")
    if len(seq) <= model.M + abs(delta):
        raise ValueError(f"sequence of {len(seq)} samples is too short to label at delta={delta}")


def self_label(model: TcnModel, seq: Sequence, delta: int) -> PseudoDataset:
    """Label frame ``k+delta`` with the model's estimate for that offset at time ``k``."""
    _check_delta(model, seq, delta)
    stripped = seq.without_labels()
    probs = predict_sequence(model, stripped)
    ks = np.arange(model.M, len(stripped))
    labels = np.argmax(probs[:, model.N + delta, :], axis=1)
    return PseudoDataset(stripped, ks + delta, labels, delta, model.M)


def ground_truth_labels(model: TcnModel, seq: Sequence, delta: int) -> PseudoDataset:
    """True labels on exactly the frames :func:`self_label` would cover."""
    _check_delta(model, seq, delta)
    idx = np.arange(model.M, len(seq)) + delta
    return PseudoDataset(seq.without_labels(), idx, seq.ground_truth()[idx], delta, model.M)


def fine_tune(
    model: TcnModel,
    base: Dataset | Iterable,
    pseudo: PseudoDataset | Iterable[PseudoDataset],
    config: Optional[TcnConfig] = None,
    seed: Optional[int] = None,
) -> TcnModel:
    """Warm-start training on ``base`` plus the pseudo-labelled frames.

    Only target offsets landing on a pseudo-labelled frame contribute to the
    loss. Returns a new model; ``model`` is left untouched.
    """
    pseudo_sets = [pseudo] if isinstance(pseudo, PseudoDataset) else list(pseudo)
    if not pseudo_sets or all(len(p) == 0 for p in pseudo_sets):
        raise ValueError("fine-tuning needs a non-empty pseudo-labelled set")
    cfg = config or model.config
    tuned = model.copy()
    tracks = [s if isinstance(s, LabelTrack) else LabelTrack.from_sequence(s) for s in base]
    tracks += [p.to_track() for p in pseudo_sets]
    fit(
        tuned,
        tracks,
        epochs=cfg.finetune_epochs,
        learning_rate=cfg.learning_rate * cfg.finetune_lr_scale,
        seed=cfg.seed if seed is None else seed,
    )
    return tuned


def select_delta(base: Dataset, config: TcnConfig) -> tuple[int, object]:
    """Pick the hindsight offset on a held-out user of ``base``, clamped to <= 0."""
    users = base.user_ids
    if len(users) < 2:
        raise ProtocolError("delta selection needs at least two base users")
    held = users[-1]
    model, _ = train(base.excluding_user(held), config)
    curve = window_curve(model, base.for_user(held))
    return min(pick_delta(curve), 0), curve


def day_pairs(new_user: Dataset) -> list[tuple[Sequence, Sequence]]:
    """Split a user's six sequences into three day-slots.

    Sequences are ordered by index and sequence ``i`` is paired with
    ``i + 3``, so each pair holds the same path walked with assistance off and
    on.
    """
    seqs = sorted(new_user.sequences, key=lambda s: s.seq_index)
    if len(seqs) != N_DAYS * SEQS_PER_DAY:
        raise ProtocolError(f"the day protocol needs exactly 6 sequences, got {len(seqs)}")
    return [(seqs[i], seqs[i + N_DAYS]) for i in range(N_DAYS)]


def pair_orders(n_permutations: int = 6, permutation_seed: int = 0) -> list[tuple[int, ...]]:
    """Orders of the three day-slots; all six, or a seeded subset."""
    orders = list(itertools.permutations(range(N_DAYS)))
    if n_permutations >= len(orders):
        return orders
    rng = np.random.default_rng(permutation_seed)
    keep = sorted(rng.choice(len(orders), size=n_permutations, replace=False))
    return [orders[i] for i in keep]


@dataclass
class DayReport:
    day: int
    labeling_mode: LabelingMode
    run_aurocs: list[float] = field(default_factory=list)
    label_accuracy: list[float] = field(default_factory=list)

    @property
    def mean_auroc(self) -> float:
        return float(np.mean(self.run_aurocs))


def _label(mode: LabelingMode, model: TcnModel, seq: Sequence, delta: int) -> PseudoDataset:
    if mode is LabelingMode.GROUND_TRUTH:
        return ground_truth_labels(model, seq, delta)
    return self_label(model, seq, delta)


def run_days(
    day0_model: TcnModel,
    others: Dataset,
    pairs: list[tuple[Sequence, Sequence]],
    order: tuple[int, ...],
    mode: LabelingMode,
    delta: int,
    config: TcnConfig,
    seed: int = 0,
) -> tuple[list[float], list[float]]:
    """One simulated run; returns per-day AUROC and per-day label accuracy."""
    model = day0_model
    labelled: list[PseudoDataset] = []
    aurocs, accuracies = [], []
    for day, slot in enumerate(order):
        test_pair = pairs[slot]
        auc, _ = current_time_auroc(model, Dataset(test_pair))
        aurocs.append(auc)
        if day == len(order) - 1:
            break
        new = [_label(mode, model, s, delta) for s in test_pair]
        accuracies.append(float(np.mean([p.accuracy_against(s.ground_truth()) for p, s in zip(new, test_pair)])))
        labelled.extend(new)
        # warm start from yesterday's model on everything labelled so far
        model = fine_tune(model, others, labelled, config, seed=seed + day)
    return aurocs, accuracies


def three_day_protocol(
    others: Dataset,
    new_user: Dataset,
    labeling_mode: LabelingMode | str,
    *,
    config: TcnConfig,
    delta: Optional[int] = None,
    day0_model: Optional[TcnModel] = None,
    n_permutations: int = 6,
    permutation_seed: int = 0,
) -> list[DayReport]:
    """Simulate a new user's three days of use over several slot orders."""
    mode = LabelingMode(labeling_mode)
    if len(others.user_ids) < 2:
        raise ProtocolError("the day protocol needs at least two other users")
    if set(others.user_ids) & set(new_user.user_ids):
        raise ProtocolError("the new user also appears in the base cohort")
    pairs = day_pairs(new_user)
    if delta is None:
        delta, _ = select_delta(others, config)
    if day0_model is None:
        day0_model, _ = train(others, config)
    reports = [DayReport(d, mode) for d in range(N_DAYS)]
    for r, order in enumerate(pair_orders(n_permutations, permutation_seed)):
        aurocs, accs = run_days(day0_model, others, pairs, order, mode, delta, config, seed=config.seed + 1000 * (r + 1))
        for d in range(N_DAYS):
            reports[d].run_aurocs.append(aurocs[d])
        for d, a in enumerate(accs):
            reports[d + 1].label_accuracy.append(a)
        log.info("run %s %s: %s", order, mode.value, np.round(aurocs, 4))
    return reports
