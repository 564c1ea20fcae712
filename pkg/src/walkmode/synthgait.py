"""Parametric synthetic thigh-angle sequences and the sequence CSV format.

The generator stands in for a private multi-user recording campaign. Each
leg's sagittal thigh angle follows a stride waveform whose mean, amplitude
and cadence depend on the walking mode::

    angle(t) = mean(mode) + amplitude(mode) * wave(phase(t)) + drift * t + noise

``wave`` is a cosine that is time-warped so that the extension half of the
stride (peak flexion to peak extension) lasts ``1 - swing_fraction`` of the
cycle; with ``swing_fraction=0.5`` it is a plain sinusoid. ``phase`` is the
integral of the mode cadence so the waveform stays continuous across mode
switches. During the ``anticipation_s`` seconds before a switch, mean and
amplitude ramp linearly toward the next mode's values (reaching
``anticipation_reach`` of the gap at the switch) while the labels keep the
current mode.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence as Seq

import numpy as np

from .core import SAMPLE_RATE_HZ, Dataset, Sequence, WalkingMode

SA, LG, SD = WalkingMode.SA, WalkingMode.LG, WalkingMode.SD

CSV_HEADER = ["t", "left_deg", "right_deg", "label"]
_FILENAME_RE = re.compile(r"^user(\d+)_seq(\d+)_(on|off)\.csv$")

# Cohort parameter ranges (per-mode values indexed SA, LG, SD).
BASE_MEAN_DEG = (22.0, 12.0, 10.0)
BASE_AMPLITUDE_DEG = (26.0, 21.0, 18.0)
BASE_CADENCE_HZ = (0.72, 0.95, 0.80)
USER_OFFSET_DEG = 1.5  # sensor mounting offset, uniform +-
MODE_MEAN_JITTER_DEG = 1.5
AMPLITUDE_SCALE = (0.95, 1.05)
CADENCE_SCALE = (0.95, 1.05)
NOISE_STD_DEG = (0.5, 1.0)
DRIFT_DEG_PER_S = 0.03
ANTICIPATION_S = (1.2, 2.0)
ANTICIPATION_REACH = 0.75

# Assisted walking: slightly larger, slightly more flexed strides.
ASSIST_AMPLITUDE_GAIN = 0.06
ASSIST_MEAN_SHIFT_DEG = 0.8

# Desk-scaled durations for the standard protocol.
SECONDS_PER_RAMP = 2.6
SECONDS_PER_METRE = 0.25
LANDING_S = 2.0


class ProfileError(ValueError):
    pass


class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    cadence_hz: tuple[float, float, float]
    mean_angle_deg: tuple[float, float, float]
    amplitude_deg: tuple[float, float, float]
    leg_phase_offset_rad: float = math.pi
    noise_std_deg: float = 0.7
    drift_deg_per_s: float = 0.0
    anticipation_s: float = 1.2
    rng_seed: int = 0
    swing_fraction: float = 0.4
    anticipation_reach: float = 0.6
    right_leg_offset_deg: float = 0.0

    def validate(self) -> "UserProfile":
        for name in ("cadence_hz", "mean_angle_deg", "amplitude_deg"):
            if len(getattr(self, name)) != 3:
                raise ProfileError(f"{name} needs one value per walking mode")
        if min(self.cadence_hz) <= 0:
            raise ProfileError("cadence must be positive")
        if min(self.amplitude_deg) <= 0:
            raise ProfileError("amplitude must be positive")
        if self.noise_std_deg < 0:
            raise ProfileError("noise_std must be non-negative")
        if not 0 <= self.anticipation_s <= 2:
            raise ProfileError("anticipation_s must lie in [0, 2]")
        if not 0 < self.swing_fraction < 1:
            raise ProfileError("swing_fraction must lie in (0, 1)")
        if not 0 <= self.anticipation_reach <= 1:
            raise ProfileError("anticipation_reach must lie in [0, 1]")
        gap = abs(self.mean_angle_deg[SA] - self.mean_angle_deg[SD])
        if gap < 2 * self.noise_std_deg:
            raise ProfileError(
                f"degenerate profile: SA/SD mean gap {gap:.3f} deg below twice the noise std"
            )
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "UserProfile":
        data = dict(data)
        for name in ("cadence_hz", "mean_angle_deg", "amplitude_deg"):
            data[name] = tuple(float(v) for v in data[name])
        return cls(**data).validate()


@dataclass(frozen=True)
class SequencePlan:
    segments: tuple[tuple[WalkingMode, float], ...]

    def __post_init__(self):
        segs = tuple((WalkingMode(m), float(d)) for m, d in self.segments)
        if not segs:
            raise ValueError("a plan needs at least one segment")
        if any(d <= 0 for _, d in segs):
            raise ValueError("segment durations must be positive")
        object.__setattr__(self, "segments", segs)

    @property
    def duration_s(self) -> float:
        return sum(d for _, d in self.segments)

    @property
    def n_switches(self) -> int:
        return sum(a[0] != b[0] for a, b in zip(self.segments, self.segments[1:]))


def stride_wave(phase: np.ndarray, swing_fraction: float) -> np.ndarray:
    """Unit stride waveform: +1 at phase 0 (peak flexion), -1 at the stance end."""
    p = np.mod(phase, 1.0)
    stance = 1.0 - swing_fraction
    return np.where(
        p < stance,
        np.cos(np.pi * p / stance),
        -np.cos(np.pi * (p - stance) / swing_fraction),
    )


def _mode_tracks(profile: UserProfile, plan: SequencePlan, n: int, assist_on: bool):
    """Per-sample labels, mean, amplitude and cadence for a plan."""
    fs = SAMPLE_RATE_HZ
    t = np.arange(n) / fs
    bounds = np.cumsum([0.0] + [d for _, d in plan.segments])
    modes = [m for m, _ in plan.segments]
    seg = np.clip(np.searchsorted(bounds, t, side="right") - 1, 0, len(modes) - 1)
    labels = np.array([modes[s] for s in seg], dtype=np.int64)

    mean_tab = np.asarray(profile.mean_angle_deg, dtype=float)
    amp_tab = np.asarray(profile.amplitude_deg, dtype=float)
    cad_tab = np.asarray(profile.cadence_hz, dtype=float)
    mean = mean_tab[labels].copy()
    amp = amp_tab[labels].copy()
    cadence = cad_tab[labels]

    if profile.anticipation_s > 0:
        for i in range(len(modes) - 1):
            cur, nxt = modes[i], modes[i + 1]
            if cur == nxt:
                continue
            switch = bounds[i + 1]
            start = max(switch - profile.anticipation_s, bounds[i])
            sel = (t >= start) & (t < switch)
            frac = profile.anticipation_reach * (t[sel] - start) / (switch - start)
            mean[sel] += frac * (mean_tab[nxt] - mean_tab[cur])
            amp[sel] += frac * (amp_tab[nxt] - amp_tab[cur])

    if assist_on:
        amp *= 1.0 + ASSIST_AMPLITUDE_GAIN
        mean += ASSIST_MEAN_SHIFT_DEG
    return t, labels, mean, amp, cadence


def generate_sequence(
    profile: UserProfile,
    plan: SequencePlan,
    *,
    seed: int | None = None,
    seq_index: int = 0,
    assist_on: bool = False,
) -> Sequence:
    """Render a plan for one user; a pure function of ``(profile, plan, seed)``."""
    profile.validate()
    n = int(round(plan.duration_s * SAMPLE_RATE_HZ))
    if n <= 0:
        raise ValueError("plan is shorter than one sample")
    t, labels, mean, amp, cadence = _mode_tracks(profile, plan, n, assist_on)

    # cumulative phase in strides; first sample at phase 0
    phase = np.concatenate([[0.0], np.cumsum(cadence[:-1]) / SAMPLE_RATE_HZ])
    leg_shift = profile.leg_phase_offset_rad / (2 * np.pi)
    left = mean + amp * stride_wave(phase, profile.swing_fraction)
    right = (
        mean
        + profile.right_leg_offset_deg
        + amp * stride_wave(phase + leg_shift, profile.swing_fraction)
    )
    angles = np.stack([left, right], axis=1) + profile.drift_deg_per_s * t[:, None]

    if profile.noise_std_deg > 0:
        rng = np.random.default_rng(profile.rng_seed if seed is None else seed)
        angles = angles + rng.normal(0.0, profile.noise_std_deg, size=angles.shape)
    return Sequence(profile.user_id, angles, labels, seq_index=seq_index, assist_on=assist_on)


def default_cohort(n_users: int = 5, seed: int = 0) -> list[UserProfile]:
    """Draw ``n_users`` profiles from the documented parameter ranges."""
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    rng = np.random.default_rng(seed)
    profiles = []
    for user in range(n_users):
        while True:
            offset = rng.uniform(-USER_OFFSET_DEG, USER_OFFSET_DEG)
            amp_scale = rng.uniform(*AMPLITUDE_SCALE)
            cad_scale = rng.uniform(*CADENCE_SCALE)
            mean = tuple(float(m + offset + rng.normal(0, MODE_MEAN_JITTER_DEG)) for m in BASE_MEAN_DEG)
            amp = tuple(float(a * amp_scale * rng.uniform(0.96, 1.04)) for a in BASE_AMPLITUDE_DEG)
            cad = tuple(float(c * cad_scale * rng.uniform(0.97, 1.03)) for c in BASE_CADENCE_HZ)
            profile = UserProfile(
                user_id=user,
                cadence_hz=cad,
                mean_angle_deg=mean,
                amplitude_deg=amp,
                leg_phase_offset_rad=float(np.pi + rng.normal(0, 0.1)),
                noise_std_deg=float(rng.uniform(*NOISE_STD_DEG)),
                drift_deg_per_s=float(rng.uniform(-DRIFT_DEG_PER_S, DRIFT_DEG_PER_S)),
                anticipation_s=float(rng.uniform(*ANTICIPATION_S)),
                anticipation_reach=ANTICIPATION_REACH,
                rng_seed=int(rng.integers(2**31 - 1)),
                right_leg_offset_deg=float(rng.normal(0, 1.5)),
            )
            try:
                profiles.append(profile.validate())
                break
            except ProfileError:
                continue
    return profiles


def protocol_plans() -> list[SequencePlan]:
    """The three path structures, scaled to desk durations.

    Turning from an ascent to a descent happens on a short landing, which is
    walked on level ground.
    """
    ramps = lambda n: n * SECONDS_PER_RAMP  # noqa: E731
    walk = lambda metres: metres * SECONDS_PER_METRE  # noqa: E731
    return [
        SequencePlan(((SA, ramps(10)), (LG, walk(140)), (SD, ramps(10)))),
        SequencePlan(((SD, ramps(10)), (LG, walk(40)), (SA, ramps(10)))),
        SequencePlan(
            (
                (SD, ramps(8)),
                (LG, walk(70)),
                (SA, ramps(2)),
                (LG, LANDING_S),
                (SD, ramps(2)),
                (LG, walk(70)),
                (SA, ramps(8)),
            )
        ),
    ]


def standard_protocol(profile: UserProfile) -> list[Sequence]:
    """Six sequences per user: the three structures assist-off, then assist-on."""
    plans = protocol_plans()
    seeds = np.random.SeedSequence(profile.rng_seed).generate_state(2 * len(plans))
    out = []
    for i, (assist_on, plan) in enumerate((a, p) for a in (False, True) for p in plans):
        out.append(
            generate_sequence(profile, plan, seed=int(seeds[i]), seq_index=i + 1, assist_on=assist_on)
        )
    return out


def standard_dataset(n_users: int = 5, seed: int = 0) -> Dataset:
    seqs: list[Sequence] = []
    for profile in default_cohort(n_users, seed):
        seqs.extend(standard_protocol(profile))
    return Dataset(tuple(seqs))


def save_cohort(profiles: Seq[UserProfile], path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in profiles], indent=2) + "\n")


def load_cohort(path) -> list[UserProfile]:
    return [UserProfile.from_dict(d) for d in json.loads(Path(path).read_text())]


def csv_filename(seq: Sequence) -> str:
    return f"{seq.name}.csv"


def save_csv(seq: Sequence, path) -> None:
    labels = seq.ground_truth()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for i, ((left, right), lab) in enumerate(zip(seq.angles, labels)):
            fh.write(f"{i / SAMPLE_RATE_HZ:.6f},{left:.6f},{right:.6f},{WalkingMode(lab).name}\n")


def load_csv(path) -> Sequence:
    path = Path(path)
    m = _FILENAME_RE.match(path.name)
    if m is None:
        raise CsvFormatError(f"{path.name}: expected a name like user<id>_seq<n>_<on|off>.csv")
    user_id, seq_index, assist = int(m.group(1)), int(m.group(2)), m.group(3) == "on"

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path.name}: empty file")
    if rows[0] != CSV_HEADER:
        raise CsvFormatError(f"{path.name} row 1: malformed header {rows[0]!r}")
    if len(rows) == 1:
        raise CsvFormatError(f"{path.name}: no samples")

    angles = np.empty((len(rows) - 1, 2))
    labels = np.empty(len(rows) - 1, dtype=np.int64)
    prev_t = -math.inf
    for i, row in enumerate(rows[1:]):
        rowno = i + 2
        if len(row) != 4:
            raise CsvFormatError(f"{path.name} row {rowno}: expected 4 fields, got {len(row)}")
        try:
            t, left, right = float(row[0]), float(row[1]), float(row[2])
        except ValueError:
            raise CsvFormatError(f"{path.name} row {rowno}: non-numeric field") from None
        if not t > prev_t:
            raise CsvFormatError(f"{path.name} row {rowno}: time is not increasing")
        prev_t = t
        try:
            labels[i] = WalkingMode.parse(row[3])
        except ValueError:
            raise CsvFormatError(f"{path.name} row {rowno}: unknown label {row[3]!r}") from None
        angles[i] = left, right
    try:
        return Sequence(user_id, angles, labels, seq_index=seq_index, assist_on=assist)
    except ValueError as exc:
        raise CsvFormatError(f"{path.name}: {exc}") from None


def load_dataset_dir(directory) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    files = sorted(p for p in directory.glob("*.csv") if _FILENAME_RE.match(p.name))
    if not files:
        raise FileNotFoundError(f"no user<id>_seq<n>_<on|off>.csv files in {directory}")
    seqs = sorted((load_csv(p) for p in files), key=lambda s: (s.user_id, s.seq_index))
    return Dataset(tuple(seqs))
