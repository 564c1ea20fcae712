"""Closed-loop controller simulation.

A sequence is replayed one sample at a time. Each sample refreshes the input
window and the model's target-window estimate, feeds a gait-event detector
on the thigh angle, and advances the assistance reference. At every detected
stance-to-swing transition (T2) the estimate anchored at T2 is averaged over
the stride span and the resulting walking mode sets the reference gain for
the swing that follows.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional

import numpy as np

from .core import MASKED, N_CLASSES, SAMPLE_RATE_HZ, Sequence, TargetWindowEstimate, WalkingMode
from .tcn import TcnModel, predict_window

log = logging.getLogger(__name__)

STANCE_FRACTION = 0.6
SWING_BAND = (0.25, 0.55)
NO_CLASS = -1


class StaleEstimateError(LookupError):
    """No estimate anchored at the requested time step."""


# ----------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class GaitEvents:
    t1: int  # start of stance, peak flexion
    t2: int  # stance to swing, peak extension
    t3: int  # end of swing, next peak flexion

    def __post_init__(self):
        if not self.t1 < self.t2 < self.t3:
            raise ValueError(f"events out of order: {self.t1}, {self.t2}, {self.t3}")

    @property
    def stride(self) -> int:
        return self.t3 - self.t1

    @property
    def swing_fraction(self) -> float:
        return (self.t3 - self.t2) / (self.t3 - self.t1)


class SwingOnset(NamedTuple):
    t1: int
    t2: int
    confirmed_at: int


@dataclass(frozen=True)
class DetectorConfig:
    expected_stride: int = 36  # samples; initial guess, tracked online
    refractory_fraction: float = 0.3
    min_hysteresis_deg: float = 3.0
    hysteresis_fraction: float = 0.25  # of the last peak-to-peak excursion
    smoothing: int = 3  # causal moving average length
    swing_band: tuple[float, float] = SWING_BAND

    def __post_init__(self):
        if self.expected_stride < 2 or self.smoothing < 1 or self.smoothing % 2 == 0:
            raise ValueError("expected_stride >= 2 and an odd smoothing length are required")
        lo, hi = self.swing_band
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("swing band must satisfy 0 < lo < hi < 1")


class GaitEventDetector:
    """Streaming extremum detector for one thigh angle.

    The angle is smoothed with a causal moving average whose delay is
    subtracted from reported indices. Minima and maxima alternate; a
    candidate extremum is confirmed once the signal has moved away from it
    by the hysteresis margin with the velocity pointing the same way, and
    no sooner than the refractory period after the previous extremum of the
    same kind. Velocity is the first difference of the smoothed angle
    (degrees per second) unless supplied.
    """

    def __init__(self, config: DetectorConfig = DetectorConfig()):
        self.config = config
        self._raw: deque[float] = deque(maxlen=config.smoothing)
        self._delay = (config.smoothing - 1) // 2
        self._n = -1
        self._prev_s: Optional[float] = None
        self._seeking = "max"
        self._cand_val = np.nan
        self._cand_idx = -1
        self._last = {"max": (None, np.nan), "min": (None, np.nan)}
        self._t1: Optional[int] = None
        self._t2: Optional[int] = None
        self._minima: deque[int] = deque(maxlen=5)
        self.expected_stride = float(config.expected_stride)
        self.accepted: list[GaitEvents] = []
        self.rejected: list[GaitEvents] = []

    @property
    def hysteresis(self) -> float:
        hi, lo = self._last["max"][1], self._last["min"][1]
        span = hi - lo if np.isfinite(hi) and np.isfinite(lo) else 0.0
        return max(self.config.min_hysteresis_deg, self.config.hysteresis_fraction * span)

    def push(self, angle: float, velocity: Optional[float] = None):
        """Add one sample; returns ``(onset, stride)``, either of which may be None."""
        self._n += 1
        self._raw.append(float(angle))
        if len(self._raw) < self.config.smoothing:
            return None, None
        s = sum(self._raw) / len(self._raw)
        idx = self._n - self._delay
        if velocity is None:
            velocity = 0.0 if self._prev_s is None else (s - self._prev_s) * SAMPLE_RATE_HZ
        self._prev_s = s
        if self._cand_idx < 0:
            self._cand_val, self._cand_idx = s, idx
            return None, None

        onset = stride = None
        if self._seeking == "max":
            if s > self._cand_val:
                self._cand_val, self._cand_idx = s, idx
            elif self._cand_val - s >= self.hysteresis and velocity < 0 and self._clear_of("max"):
                stride = self._confirm_max()
                self._cand_val, self._cand_idx = s, idx
        else:
            if s < self._cand_val:
                self._cand_val, self._cand_idx = s, idx
            elif s - self._cand_val >= self.hysteresis and velocity > 0 and self._clear_of("min"):
                onset = self._confirm_min(self._n)
                self._cand_val, self._cand_idx = s, idx
        return onset, stride

    @property
    def last_max_index(self) -> Optional[int]:
        return self._last["max"][0]

    def _clear_of(self, kind: str) -> bool:
        prev = self._last[kind][0]
        return prev is None or self._cand_idx - prev >= self.config.refractory_fraction * self.expected_stride

    def _confirm_max(self) -> Optional[GaitEvents]:
        t = self._cand_idx
        self._last["max"] = (t, self._cand_val)
        self._seeking = "min"
        stride = None
        if self._t1 is not None and self._t2 is not None and self._t1 < self._t2 < t:
            ev = GaitEvents(self._t1, self._t2, t)
            lo, hi = self.config.swing_band
            if lo <= ev.swing_fraction <= hi:
                self.accepted.append(ev)
                stride = ev
            else:
                self.rejected.append(ev)
        self._t1, self._t2 = t, None
        return stride

    def _confirm_min(self, now: int) -> Optional[SwingOnset]:
        t = self._cand_idx
        self._last["min"] = (t, self._cand_val)
        self._seeking = "max"
        self._minima.append(t)
        if len(self._minima) > 1:
            self.expected_stride = float(np.median(np.diff(np.asarray(self._minima))))
        self._t2 = t
        if self._t1 is None or self._t1 >= t:
            return None
        return SwingOnset(self._t1, t, now)


@dataclass(frozen=True)
class DetectionResult:
    events: list[GaitEvents]
    rejected: list[GaitEvents]
    onsets: list[SwingOnset]

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)

    @property
    def acceptance_rate(self) -> float:
        total = len(self.events) + len(self.rejected)
        return len(self.events) / total if total else 0.0


def detect_gait_events(hip_angle, hip_velocity=None, config: DetectorConfig = DetectorConfig()) -> DetectionResult:
    """Run the streaming detector over a whole angle trace."""
    det = GaitEventDetector(config)
    vel = [None] * len(hip_angle) if hip_velocity is None else hip_velocity
    onsets = []
    for a, v in zip(hip_angle, vel):
        onset, _ = det.push(a, v)
        if onset is not None:
            onsets.append(onset)
    return DetectionResult(list(det.accepted), list(det.rejected), onsets)


# ----------------------------------------------------------------------------
# step classification and reference


@dataclass(frozen=True, eq=False)
class StepClassification:
    step_index: int
    mode: WalkingMode
    probs: np.ndarray
    span: tuple[int, int]  # absolute sample indices, inclusive
    anchor_k: int

    def __post_init__(self):
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-6:
            raise ValueError("step probabilities must sum to 1")


def classify_step(
    window_estimates: Mapping[int, TargetWindowEstimate],
    events: GaitEvents,
    step_index: int = 0,
) -> StepClassification:
    """Average the estimate anchored at T2 over the stride span.

    Rows for offsets ``T1-T2 .. T3-T2`` are used, clipped to the target
    window. The argmax of the mean is the step class; ties go to the lowest
    class index.
    """
    est = window_estimates.get(events.t2)
    if est is None:
        raise StaleEstimateError(f"no estimate anchored at T2={events.t2}")
    if not est.is_probabilities:
        raise ValueError("step classification needs probability rows")
    N = est.N
    lo = max(events.t1 - events.t2, -N)
    hi = min(events.t3 - events.t2, N)
    mean = est.scores[N + lo : N + hi + 1].mean(axis=0)
    mean = mean / mean.sum()
    mode = WalkingMode(int(np.argmax(mean)))
    return StepClassification(step_index, mode, mean, (events.t2 + lo, events.t2 + hi), events.t2)


@dataclass(frozen=True)
class ReferenceProfile:
    gains: tuple[float, float, float] = (1.3, 1.0, 0.6)  # SA, LG, SD
    slack_rad: float = 0.05
    base_amplitude_rad: float = 0.4

    def validate(self) -> "ReferenceProfile":
        sa, lg, sd = self.gains
        if not sa > lg > sd > 0:
            raise ValueError(f"gains must satisfy SA > LG > SD > 0, got {self.gains}")
        if self.base_amplitude_rad <= 0:
            raise ValueError("base amplitude must be positive")
        return self

    def gain(self, mode: WalkingMode) -> float:
        return float(self.gains[int(mode)])

    def to_dict(self) -> dict:
        return {"gains": list(self.gains), "slack_rad": self.slack_rad, "base_amplitude_rad": self.base_amplitude_rad}

    @classmethod
    def from_dict(cls, data: dict) -> "ReferenceProfile":
        d = dict(data)
        if "gains" in d:
            d["gains"] = tuple(float(g) for g in d["gains"])
        return cls(**d)


def generate_reference(phase, step_mode: WalkingMode, profile: ReferenceProfile):
    """Motor position reference in radians.

    Slack during stance; during swing a half-sine of the base amplitude
    scaled by the mode gain, which is zero at both ends of the swing.
    """
    if any(g < 0 for g in profile.gains):
        raise ValueError("gains must be non-negative")
    p = np.asarray(phase, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("phase must lie in [0, 1]")
    swing = np.sin(np.pi * (p - STANCE_FRACTION) / (1.0 - STANCE_FRACTION))
    ref = np.where(
        p < STANCE_FRACTION,
        profile.slack_rad,
        profile.slack_rad + profile.gain(WalkingMode(step_mode)) * profile.base_amplitude_rad * swing,
    )
    return float(ref) if np.ndim(phase) == 0 else ref


# ----------------------------------------------------------------------------
# closed loop


TRACE_COLUMNS = ("t", "left_deg", "right_deg", "truth", "pred_k", "step_class", "phase", "reference")
_INT_COLUMNS = {"truth", "pred_k", "step_class", "step_class_right"}


@dataclass(eq=False)
class Trace:
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(next(iter(self.columns.values())))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def equals(self, other: "Trace") -> bool:
        return list(self.columns) == list(other.columns) and all(
            np.array_equal(self.columns[c], other.columns[c]) for c in self.columns
        )


def write_trace(path, trace: Trace, header: tuple[str, ...] = ()) -> None:
    """Comma-separated trace; floats via ``repr`` so the file round-trips exactly."""
    names = list(trace.columns)
    cols = [trace.columns[n] for n in names]
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for i in range(len(trace)):
            fh.write(",".join(str(int(c[i])) if n in _INT_COLUMNS else repr(float(c[i])) for n, c in zip(names, cols)))
            fh.write("\n")


def read_trace(path) -> Trace:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    names = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:] if ln]
    cols = {}
    for j, n in enumerate(names):
        if n in _INT_COLUMNS:
            cols[n] = np.array([int(r[j]) for r in rows], dtype=np.int64)
        else:
            cols[n] = np.array([float(r[j]) for r in rows], dtype=np.float64)
    return Trace(cols)


@dataclass
class StepRecord:
    leg: str
    step: StepClassification
    truth: int
    latency: int  # samples from T2 to the decision


@dataclass
class SimSummary:
    n_samples: int
    n_steps: int
    step_accuracy: float
    n_strides: int
    n_rejected_strides: int
    mean_swing_fraction: float
    latency_p50: float
    latency_p90: float
    latency_max: int
    n_unclassified: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SimResult:
    trace: Trace
    summary: SimSummary
    steps: list[StepRecord]
    strides: list[GaitEvents]
    estimates: dict[int, np.ndarray] = field(default_factory=dict)  # k -> (2N+1, 3)
    compute_ms: Optional[np.ndarray] = None  # wall clock per sample, not part of the result files


class _LegController:
    """Detector, step classifier and reference generator for one leg."""

    def __init__(self, name: str, detector: DetectorConfig, profile: ReferenceProfile):
        self.name = name
        self.detector = GaitEventDetector(detector)
        self.profile = profile
        self.step_class = NO_CLASS
        self.t1: Optional[int] = None
        self.t2: Optional[int] = None
        self.swing_len = (1.0 - STANCE_FRACTION) * detector.expected_stride
        self.stance_len = STANCE_FRACTION * detector.expected_stride
        self.in_swing = False
        self.n_unclassified = 0

    def update(self, n: int, angle: float, history: Mapping[int, TargetWindowEstimate], labels, steps: list):
        onset, stride = self.detector.push(angle)
        if stride is not None:
            self.swing_len = float(stride.t3 - stride.t2)
            self.stance_len = float(stride.t2 - stride.t1)
        last_max = self.detector.last_max_index
        if last_max is not None and (self.t1 is None or last_max > self.t1):
            self.t1 = last_max
            self.in_swing = False
        if onset is not None:
            self.t2 = onset.t2
            self.in_swing = True
            provisional_t3 = onset.t2 + max(1, int(round(self.swing_len)))
            try:
                step = classify_step(history, GaitEvents(onset.t1, onset.t2, provisional_t3), len(steps))
            except StaleEstimateError:
                self.n_unclassified += 1
            else:
                self.step_class = int(step.mode)
                truth = _majority(labels[step.span[0] : step.span[1] + 1]) if labels is not None else NO_CLASS
                steps.append(StepRecord(self.name, step, truth, n - onset.t2))
        return self.phase(n), self.reference(n)

    def phase(self, n: int) -> float:
        if self.in_swing and self.t2 is not None:
            return STANCE_FRACTION + (1.0 - STANCE_FRACTION) * min(1.0, (n - self.t2) / self.swing_len)
        if self.t1 is not None:
            return STANCE_FRACTION * min((n - self.t1) / self.stance_len, 1.0 - 1e-9)
        return 0.0

    def reference(self, n: int) -> float:
        if self.step_class == NO_CLASS:
            return self.profile.slack_rad
        return generate_reference(self.phase(n), WalkingMode(self.step_class), self.profile)


def _majority(labels: np.ndarray) -> int:
    counts = np.bincount(labels[labels != MASKED], minlength=N_CLASSES)
    return int(np.argmax(counts))


class ClosedLoop:
    """Per-sample pipeline shared by the synchronous and accelerated runs."""

    def __init__(
        self,
        model: TcnModel,
        profile: ReferenceProfile,
        detector: DetectorConfig,
        labels: Optional[np.ndarray],
        two_legs: bool = False,
    ):
        self.model = model
        self.M, self.N = model.M, model.N
        self.labels = labels
        self.buffer: deque[np.ndarray] = deque(maxlen=self.M + 1)
        self.history: dict[int, TargetWindowEstimate] = {}
        self.legs = [_LegController("left", detector, profile)]
        if two_legs:
            self.legs.append(_LegController("right", detector, profile))
        self.steps: list[StepRecord] = []
        self.estimates: dict[int, np.ndarray] = {}
        self.n = -1

    def step(self, frame: np.ndarray) -> dict:
        self.n += 1
        n = self.n
        self.buffer.append(np.asarray(frame, dtype=np.float64))
        pred = NO_CLASS
        if len(self.buffer) == self.M + 1:
            window = np.array(np.stack(self.buffer, axis=0).T)  # (channels, M+1), oldest first
            est = predict_window(self.model, window, anchor_k=n)
            self.history[n] = est
            self.estimates[n] = est.scores
            self.history.pop(n - 2 * self.N - 1, None)
            pred = int(np.argmax(est.scores[self.N]))
        row = {"pred_k": pred}
        for c, leg in enumerate(self.legs):
            phase, ref = leg.update(n, frame[c], self.history, self.labels, self.steps)
            suffix = "" if c == 0 else "_right"
            row["step_class" + suffix] = leg.step_class
            row["phase" + suffix] = phase
            row["reference" + suffix] = ref
        return row


def run_closed_loop(
    model: TcnModel,
    seq: Sequence,
    profile: ReferenceProfile = ReferenceProfile(),
    *,
    detector: DetectorConfig = DetectorConfig(),
    two_legs: bool = False,
    accelerated: bool = False,
    queue_size: int = 64,
) -> SimResult:
    """Replay ``seq`` through the controller at 30 Hz logical time.

    The pipeline sees only angles; labels are read afterwards for the step
    accuracy and the ``truth`` trace column. With ``accelerated`` a producer
    thread replays samples into a bounded queue that blocks when full, so no
    sample is ever dropped and the output equals the synchronous run.
    """
    profile.validate()
    if len(seq) <= model.M:
        raise ValueError(f"sequence of {len(seq)} samples is within the warm-up of {model.M}")
    labels = seq.labels
    loop = ClosedLoop(model, profile, detector, labels, two_legs)
    rows: list[dict] = []
    compute = np.empty(len(seq))

    if accelerated:
        q: queue.Queue = queue.Queue(maxsize=queue_size)

        def produce():
            for frame in seq.angles:
                q.put(frame)  # blocks when the consumer falls behind
            q.put(None)

        producer = threading.Thread(target=produce, daemon=True)
        producer.start()
        i = 0
        while (frame := q.get()) is not None:
            start = time.perf_counter()
            rows.append(loop.step(frame))
            compute[i] = (time.perf_counter() - start) * 1e3
            i += 1
        producer.join()
    else:
        for i, frame in enumerate(seq.angles):
            start = time.perf_counter()
            rows.append(loop.step(frame))
            compute[i] = (time.perf_counter() - start) * 1e3

    L = len(seq)
    cols = {
        "t": np.arange(L) / seq.sample_rate,
        "left_deg": seq.angles[:, 0].copy(),
        "right_deg": seq.angles[:, 1].copy(),
        "truth": labels.copy() if labels is not None else np.full(L, NO_CLASS, dtype=np.int64),
    }
    for name in rows[0]:
        dtype = np.int64 if name in _INT_COLUMNS else np.float64
        cols[name] = np.array([r[name] for r in rows], dtype=dtype)
    trace = Trace(cols)

    strides = [ev for leg in loop.legs for ev in leg.detector.accepted]
    n_rejected = sum(len(leg.detector.rejected) for leg in loop.legs)
    scored = [s for s in loop.steps if s.truth != NO_CLASS]
    lat = np.array([s.latency for s in loop.steps], dtype=np.float64)
    summary = SimSummary(
        n_samples=L,
        n_steps=len(loop.steps),
        step_accuracy=float(np.mean([int(s.step.mode) == s.truth for s in scored])) if scored else float("nan"),
        n_strides=len(strides),
        n_rejected_strides=n_rejected,
        mean_swing_fraction=float(np.mean([e.swing_fraction for e in strides])) if strides else float("nan"),
        latency_p50=float(np.percentile(lat, 50)) if len(lat) else float("nan"),
        latency_p90=float(np.percentile(lat, 90)) if len(lat) else float("nan"),
        latency_max=int(lat.max()) if len(lat) else 0,
        n_unclassified=sum(leg.n_unclassified for leg in loop.legs),
    )
    log.info(
        "closed loop: %d steps, accuracy %.3f, per-sample compute mean %.2f ms",
        summary.n_steps,
        summary.step_accuracy,
        compute.mean(),
    )
    return SimResult(trace, summary, loop.steps, strides, loop.estimates, compute)


def reference_amplitudes(trace: Trace) -> dict[WalkingMode, float]:
    """Peak reference above slack for each step class present in the trace."""
    out = {}
    ref, cls = trace["reference"], trace["step_class"]
    base = ref.min()
    for m in WalkingMode:
        sel = cls == int(m)
        if sel.any():
            out[m] = float(ref[sel].max() - base)
    return out
