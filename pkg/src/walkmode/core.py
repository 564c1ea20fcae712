"""Domain types, dataset container and window extraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

SAMPLE_RATE_HZ = 30
N_CLASSES = 3
N_CHANNELS = 2

#: label value used for timesteps that carry no supervision
MASKED = -1


class WalkingMode(IntEnum):
    SA = 0
    LG = 1
    SD = 2

    @classmethod
    def parse(cls, text: str) -> "WalkingMode":
        try:
            return cls[text.strip()]
        except KeyError:
            raise ValueError(f"unknown walking mode {text!r}") from None


class PadPolicy(Enum):
    """How target offsets falling outside a sequence are filled."""

    REPLICATE = "replicate"
    MASK = "mask"


class FeatureFrame(NamedTuple):
    left_thigh_angle: float
    right_thigh_angle: float


class WarmupError(IndexError):
    """Raised when a window is requested before enough history exists."""


@dataclass(frozen=True, eq=False)
class Sequence:
    """One walking session sampled at 30 Hz.

    ``angles`` is an ``(L, 2)`` array of left/right thigh sagittal angles in
    degrees. ``labels`` is an ``(L,)`` integer array using the
    :class:`WalkingMode` encoding, or ``None`` for a label-stripped sequence.
    """

    user_id: int
    angles: np.ndarray
    labels: Optional[np.ndarray]
    seq_index: int = 0
    assist_on: bool = False
    sample_rate: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        angles = np.array(self.angles, dtype=np.float64)
        if angles.ndim != 2 or angles.shape[1] != N_CHANNELS or len(angles) == 0:
            raise ValueError(f"angles must have shape (L>0, 2), got {angles.shape}")
        if not np.all(np.isfinite(angles)):
            raise ValueError("angles must be finite")
        if self.sample_rate != SAMPLE_RATE_HZ:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE_HZ} Hz")
        angles.flags.writeable = False
        object.__setattr__(self, "angles", angles)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64)
            if labels.shape != (len(angles),):
                raise ValueError("labels and frames differ in length")
            if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
                raise ValueError("labels outside the SA/LG/SD encoding")
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.angles)

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @property
    def name(self) -> str:
        return f"user{self.user_id}_seq{self.seq_index}_{'on' if self.assist_on else 'off'}"

    def frame(self, i: int) -> FeatureFrame:
        left, right = self.angles[i]
        return FeatureFrame(float(left), float(right))

    def ground_truth(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError(f"sequence {self.name} carries no ground-truth labels")
        return self.labels

    def without_labels(self) -> "Sequence":
        return Sequence(self.user_id, self.angles, None, self.seq_index, self.assist_on)

    def equals(self, other: "Sequence", atol: float = 0.0) -> bool:
        if (self.user_id, self.seq_index, self.assist_on) != (other.user_id, other.seq_index, other.assist_on):
            return False
        if self.angles.shape != other.angles.shape:
            return False
        if not np.allclose(self.angles, other.angles, rtol=0.0, atol=atol):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or bool(np.array_equal(self.labels, other.labels))


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[Sequence, ...] = field(default_factory=tuple)

    def __post_init__(self):
        seqs = tuple(self.sequences)
        if not seqs:
            raise ValueError("a dataset needs at least one sequence")
        object.__setattr__(self, "sequences", seqs)

    def __iter__(self) -> Iterator[Sequence]:
        return iter(self.sequences)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def sequence_count(self) -> int:
        return len(self.sequences)

    @property
    def user_ids(self) -> list[int]:
        return sorted({s.user_id for s in self.sequences})

    def for_user(self, user_id: int) -> "Dataset":
        return Dataset(tuple(s for s in self.sequences if s.user_id == user_id))

    def excluding_user(self, user_id: int) -> "Dataset":
        return Dataset(tuple(s for s in self.sequences if s.user_id != user_id))

    def __add__(self, other: "Dataset | Iterable[Sequence]") -> "Dataset":
        extra = other.sequences if isinstance(other, Dataset) else tuple(other)
        return Dataset(self.sequences + tuple(extra))

    @property
    def total_samples(self) -> int:
        return sum(len(s) for s in self.sequences)


@dataclass(frozen=True, eq=False)
class TargetWindowEstimate:
    """Per-class values for offsets ``-N..+N`` around ``anchor_k``.

    Row ``i`` corresponds to offset ``i - N``.
    """

    scores: np.ndarray
    is_probabilities: bool
    anchor_k: int

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[1] != N_CLASSES or scores.shape[0] % 2 != 1:
            raise ValueError(f"scores must have shape (2N+1, 3), got {scores.shape}")
        object.__setattr__(self, "scores", scores)

    @property
    def N(self) -> int:
        return (self.scores.shape[0] - 1) // 2

    def row(self, offset: int) -> np.ndarray:
        if abs(offset) > self.N:
            raise IndexError(f"offset {offset} outside [-{self.N}, {self.N}]")
        return self.scores[offset + self.N]

    def mode_at(self, offset: int = 0) -> WalkingMode:
        return WalkingMode(int(np.argmax(self.row(offset))))


def extract_window(seq: Sequence, k: int, M: int) -> np.ndarray:
    """Frames ``k-M .. k`` as a ``(2, M+1)`` matrix, oldest column first."""
    if not 0 <= k < len(seq):
        raise IndexError(f"k={k} outside sequence of length {len(seq)}")
    if k < M:
        raise WarmupError(f"k={k} precedes the warm-up of {M} samples")
    return np.array(seq.angles[k - M : k + 1].T)


def target_indices(k: int, N: int) -> np.ndarray:
    return np.arange(k - N, k + N + 1)


def extract_target(
    seq: Sequence, k: int, N: int, pad: PadPolicy = PadPolicy.REPLICATE
) -> np.ndarray:
    """Labels at offsets ``-N..+N`` around ``k``.

    Out-of-range offsets are filled with the nearest in-range label
    (``REPLICATE``) or with :data:`MASKED`.
    """
    labels = seq.ground_truth()
    return gather_targets(labels, k, N, pad)


def gather_targets(labels: np.ndarray, k: int, N: int, pad: PadPolicy = PadPolicy.REPLICATE) -> np.ndarray:
    L = len(labels)
    if not 0 <= k < L:
        raise IndexError(f"k={k} outside sequence of length {L}")
    idx = target_indices(k, N)
    inside = (idx >= 0) & (idx < L)
    out = np.asarray(labels)[np.clip(idx, 0, L - 1)].astype(np.int64)
    if pad is PadPolicy.MASK:
        out[~inside] = MASKED
    return out


def one_hot(mode: WalkingMode | int) -> np.ndarray:
    v = np.zeros(N_CLASSES)
    v[int(mode)] = 1.0
    return v
