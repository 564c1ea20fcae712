"""Leave-one-user-out cross-validation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..core import Dataset
from .metrics import ConfusionMatrix, CurrentTimePredictor, current_time_auroc

log = logging.getLogger(__name__)


class ProtocolError(ValueError):
    pass


@dataclass
class LouoResult:
    per_user: dict[int, float]
    confusions: dict[int, ConfusionMatrix]
    models: dict[int, Any] = field(default_factory=dict)

    @property
    def users(self) -> list[int]:
        return sorted(self.per_user)

    @property
    def values(self) -> np.ndarray:
        return np.array([self.per_user[u] for u in self.users])

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def total_confusion(self) -> ConfusionMatrix:
        mats = [self.confusions[u] for u in self.users]
        out = mats[0]
        for m in mats[1:]:
            out = out + m
        return out


def leave_one_user_out(
    dataset: Dataset,
    trainer: Callable[[Dataset], CurrentTimePredictor],
    *,
    keep_models: bool = False,
) -> LouoResult:
    """Train on all users but one and score current-time AUROC on the one left out."""
    users = dataset.user_ids
    if len(users) < 2:
        raise ProtocolError("leave-one-user-out needs at least two users")
    per_user, confusions, models = {}, {}, {}
    for u in users:
        train_set = dataset.excluding_user(u)
        model = trainer(train_set)
        auc, cm = current_time_auroc(model, dataset.for_user(u))
        log.info("fold user %d: AUROC %.4f", u, auc)
        per_user[u] = auc
        confusions[u] = cm
        if keep_models:
            models[u] = model
    return LouoResult(per_user, confusions, models)
