"""Shared orchestration for the cross-validation, window-curve and day-protocol runs.

The command-line tool and the acceptance suite both go through these
functions, so a result printed by one can be reproduced by the other.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baseline_rf import RfConfig, RfModel, rf_train
from .core import Dataset
from .evaluation import (
    LouoResult,
    WilcoxonResult,
    WindowCurve,
    WindowPredictions,
    current_predictions,
    leave_one_user_out,
    pick_delta,
    repeat_baseline_from_predictions,
    summarize_runs,
    RunSummary,
    wilcoxon_signed_rank,
    window_curve_from_predictions,
    window_predictions,
)
from .ssl import DayReport, LabelingMode, N_DAYS, run_days, day_pairs, pair_orders, select_delta
from .tcn import TcnConfig, TcnModel, train

log = logging.getLogger(__name__)

# Desk-scale training budget used by the experiments; the cohort is small and
# eight passes over ~56k windows converge.
EXPERIMENT_EPOCHS = 8
EXPERIMENT_FINETUNE_EPOCHS = 3


def experiment_config(seed: int = 0, **overrides) -> TcnConfig:
    base = dict(epochs=EXPERIMENT_EPOCHS, finetune_epochs=EXPERIMENT_FINETUNE_EPOCHS, seed=seed)
    base.update(overrides)
    return TcnConfig(**base)


def tcn_trainer(config: TcnConfig):
    def run(ds: Dataset) -> TcnModel:
        return train(ds, config)[0]

    return run


def rf_trainer(config: RfConfig):
    def run(ds: Dataset) -> RfModel:
        return rf_train(ds, config)

    return run


@dataclass
class CrossvalResult:
    tcn: LouoResult
    rf: LouoResult
    test: WilcoxonResult  # TCN minus RF, one-sided "greater"


def crossval(
    dataset: Dataset,
    tcn_config: TcnConfig,
    rf_config: RfConfig,
    *,
    keep_models: bool = True,
) -> CrossvalResult:
    tcn = leave_one_user_out(dataset, tcn_trainer(tcn_config), keep_models=keep_models)
    rf = leave_one_user_out(dataset, rf_trainer(rf_config), keep_models=False)
    test = wilcoxon_signed_rank(tcn.values - rf.values, alternative="greater")
    return CrossvalResult(tcn, rf, test)


@dataclass
class CurveResult:
    curve: WindowCurve  # TCN, offsets -N..N
    repeat: WindowCurve  # TCN current-time estimate held constant, offsets 0..N
    repeat_rf: Optional[WindowCurve]
    delta: int


def louo_window_curves(
    dataset: Dataset,
    models: dict[int, TcnModel],
    rf_models: Optional[dict[int, RfModel]] = None,
) -> CurveResult:
    """Window curve pooled over every held-out user, each scored by its own fold model."""
    preds, cur, cur_rf = [], [], []
    for u in sorted(models):
        held = dataset.for_user(u)
        wp = window_predictions(models[u], held)
        preds += wp
        cur += [WindowPredictions(w.ks, w.probs[:, [w.N]], w.labels) for w in wp]
        if rf_models is not None:
            cur_rf += current_predictions(rf_models[u], held)
    N = preds[0].N
    curve = window_curve_from_predictions(preds)
    repeat = repeat_baseline_from_predictions(cur, N)
    repeat_rf = repeat_baseline_from_predictions(cur_rf, N) if rf_models is not None else None
    return CurveResult(curve, repeat, repeat_rf, pick_delta(curve))


def louo_models(dataset: Dataset, config: TcnConfig) -> dict[int, TcnModel]:
    return {u: train(dataset.excluding_user(u), config)[0] for u in dataset.user_ids}


@dataclass
class ProtocolSummary:
    reports: dict[LabelingMode, list[DayReport]]
    deltas: dict[int, int] = field(default_factory=dict)

    def day_values(self, mode: LabelingMode, day: int) -> np.ndarray:
        return np.array(self.reports[mode][day].run_aurocs)

    def summary(self, mode: LabelingMode, day: int) -> RunSummary:
        return summarize_runs(self.day_values(mode, day))


def day_protocol(
    dataset: Dataset,
    config: TcnConfig,
    *,
    users: Optional[list[int]] = None,
    n_permutations: int = 6,
    permutation_seed: int = 0,
    day0_models: Optional[dict[int, TcnModel]] = None,
    modes=(LabelingMode.GROUND_TRUTH, LabelingMode.SELF_LABEL),
) -> ProtocolSummary:
    """Run the three-day protocol for each new user and both labelling modes.

    Both modes share the day-0 model, the slot orders and the fine-tuning
    seeds, so their per-run results are paired.
    """
    users = dataset.user_ids if users is None else users
    modes = [LabelingMode(m) for m in modes]
    reports = {m: [DayReport(d, m) for d in range(N_DAYS)] for m in modes}
    deltas = {}
    for u in users:
        others, new = dataset.excluding_user(u), dataset.for_user(u)
        day0 = day0_models[u] if day0_models and u in day0_models else train(others, config)[0]
        delta, _ = select_delta(others, config)
        deltas[u] = delta
        pairs = day_pairs(new)
        for r, order in enumerate(pair_orders(n_permutations, permutation_seed)):
            seed = config.seed + 1000 * (r + 1) + 17 * u
            for m in modes:
                aurocs, accs = run_days(day0, others, pairs, order, m, delta, config, seed=seed)
                for d in range(N_DAYS):
                    reports[m][d].run_aurocs.append(aurocs[d])
                for d, a in enumerate(accs):
                    reports[m][d + 1].label_accuracy.append(a)
                log.info("user %d order %s %s: %s", u, order, m.value, np.round(aurocs, 4))
    return ProtocolSummary(reports, deltas)
