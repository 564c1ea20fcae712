from .metrics import (
    ConfusionMatrix,
    ScoredSample,
    UndefinedMetricError,
    WindowCurve,
    WindowPredictions,
    auroc_binary,
    auroc_multiclass,
    auroc_samples,
    confusion,
    current_predictions,
    current_time_auroc,
    pick_delta,
    repeat_baseline_curve,
    repeat_baseline_from_predictions,
    window_curve,
    window_curve_from_predictions,
    window_predictions,
)
from .protocols import LouoResult, ProtocolError, leave_one_user_out
from .stats import RunSummary, UndefinedTestError, WilcoxonResult, summarize_runs, wilcoxon_signed_rank

__all__ = [
    "ConfusionMatrix",
    "LouoResult",
    "ProtocolError",
    "RunSummary",
    "ScoredSample",
    "UndefinedMetricError",
    "UndefinedTestError",
    "WilcoxonResult",
    "WindowCurve",
    "WindowPredictions",
    "auroc_binary",
    "auroc_multiclass",
    "auroc_samples",
    "confusion",
    "current_predictions",
    "current_time_auroc",
    "leave_one_user_out",
    "pick_delta",
    "repeat_baseline_curve",
    "repeat_baseline_from_predictions",
    "summarize_runs",
    "wilcoxon_signed_rank",
    "window_curve",
    "window_curve_from_predictions",
    "window_predictions",
]
