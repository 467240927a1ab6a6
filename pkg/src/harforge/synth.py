"""Deterministic synthetic cohort generator with per-minute ground truth.

Each user gets a resting heart rate and a dynamic range drawn once, then a
daily routine: sleep across the night boundary, a jittered block schedule of
activities by day, and plain wakefulness in between. Per-minute heart rate
is resting + an activity-specific fraction of the user's range + Gaussian
noise; it is emitted as four samples per minute with second-level jitter.
Per-minute step truth is summed into the 15-minute device blocks, so block
redistribution can be scored against a known answer. Sleep/awake truth is
cut into chunks and a configurable fraction of chunks is dropped, which is
what leaves Unknown minutes for the imputation rules to fill.

Everything is driven by per-user seeded generators in a fixed draw order,
so the same config always produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from .align import AlignedMinute
from .core import (
    DEFAULT_LEVEL2_LABELS,
    DEFAULT_TZ_OFFSET_MINUTES,
    MINUTES_PER_DAY,
    SleepState,
)
from .ingest import ACTIVITY_HEADER, HR_HEADER, SCHEDULE_HEADER, SLEEP_HEADER

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()

TRUTH_HEADER = (
    "user_id",
    "date",
    "minute",
    "true_sleep",
    "true_activity",
    "true_steps",
    "true_distance_m",
)

#: Per-sample second offsets inside a minute; jitter stays within [1, 50].
_SAMPLE_SECONDS = (3, 18, 33, 48)


@dataclass(frozen=True)
class ActivityProfile:
    """How an activity expresses itself in heart rate and movement.

    hr_frac scales the user's dynamic range (max minus resting) to an
    offset above resting; steps are drawn per minute from a clipped normal.
    """

    hr_frac: float
    hr_sd: float
    steps_mean: float
    steps_sd: float
    m_per_step: float


@dataclass(frozen=True)
class TemplateEntry:
    """One schedule slot: runs on days where day_index % period == phase."""

    start_minute: int
    label: str
    duration_min: int
    period_days: int = 1
    phase: int = 0


DEFAULT_ACTIVITY_PROFILES: Mapping[str, ActivityProfile] = {
    "Wake Up": ActivityProfile(0.22, 2.5, 12.0, 4.0, 0.7),
    "Running Exercise": ActivityProfile(0.72, 3.0, 160.0, 12.0, 1.1),
    "Firearms Training": ActivityProfile(0.38, 2.5, 18.0, 6.0, 0.7),
    "Military Drills": ActivityProfile(0.50, 3.0, 45.0, 8.0, 0.75),
    "Kitchen Duties": ActivityProfile(0.16, 2.0, 14.0, 5.0, 0.65),
    "Fitness Test": ActivityProfile(0.78, 3.0, 120.0, 15.0, 0.9),
    "Other": ActivityProfile(0.25, 2.5, 15.0, 6.0, 0.7),
    "Obstacle Course Training": ActivityProfile(0.62, 3.0, 95.0, 10.0, 0.85),
    "Contact-Combat": ActivityProfile(0.55, 3.0, 35.0, 8.0, 0.75),
    "General Working": ActivityProfile(0.19, 2.0, 8.0, 4.0, 0.65),
    "Security Mission": ActivityProfile(0.30, 2.5, 22.0, 6.0, 0.8),
}

#: Slot starts leave at least twice the schedule jitter between blocks, so
#: jittered blocks can never collide.
DEFAULT_SCHEDULE_TEMPLATE: tuple[TemplateEntry, ...] = (
    TemplateEntry(380, "Wake Up", 20),
    TemplateEntry(410, "Running Exercise", 45),
    TemplateEntry(480, "Firearms Training", 90),
    TemplateEntry(600, "Military Drills", 75),
    TemplateEntry(700, "Kitchen Duties", 45, period_days=2, phase=0),
    TemplateEntry(700, "Fitness Test", 40, period_days=6, phase=3),
    TemplateEntry(760, "Other", 30, period_days=8, phase=5),
    TemplateEntry(820, "Obstacle Course Training", 60, period_days=2, phase=1),
    TemplateEntry(900, "Contact-Combat", 50, period_days=4, phase=2),
    TemplateEntry(970, "General Working", 120),
    TemplateEntry(1120, "Security Mission", 60, period_days=2, phase=1),
)


@dataclass(frozen=True)
class CohortConfig:
    """Knobs for one synthetic cohort."""

    n_users: int = 20
    n_days: int = 30
    seed: int = 7
    start_date: date = date(2024, 3, 4)
    tz_offset_minutes: int = DEFAULT_TZ_OFFSET_MINUTES
    resting_hr_mean: float = 55.0
    resting_hr_sd: float = 5.0
    hr_range_mean: float = 135.0
    hr_range_sd: float = 8.0
    awake_hr_frac: float = 0.15
    awake_hr_sd: float = 3.0
    sleep_hr_sd: float = 2.0
    hr_sample_sd: float = 0.3
    hr_sd_scale: float = 1.0
    user_frac_jitter_sd: float = 0.0
    awake_steps_mean: float = 4.0
    awake_steps_sd: float = 5.0
    awake_m_per_step: float = 0.7
    sleep_start_minute: int = 1320  # 22:00 local
    sleep_end_minute: int = 360  # 06:00 local
    sleep_jitter_min: int = 10
    schedule_jitter_min: int = 4
    sleep_dropout: float = 0.40
    hr_dropout: float = 0.02
    activity_profiles: Mapping[str, ActivityProfile] = field(
        default_factory=lambda: dict(DEFAULT_ACTIVITY_PROFILES)
    )
    schedule_template: tuple[TemplateEntry, ...] = DEFAULT_SCHEDULE_TEMPLATE

    def __post_init__(self) -> None:
        if self.n_users < 0 or self.n_days < 0:
            raise ValueError("cohort sizes must be non-negative")
        if not 0.0 <= self.sleep_dropout < 1.0 or not 0.0 <= self.hr_dropout < 1.0:
            raise ValueError("dropout fractions must be in [0, 1)")
        if self.tz_offset_minutes % 15 != 0:
            raise ValueError("tz offset must be a multiple of 15 minutes")
        for entry in self.schedule_template:
            if entry.label not in self.activity_profiles:
                raise ValueError(f"template label {entry.label!r} has no profile")
        unknown = set(self.activity_profiles) - set(DEFAULT_LEVEL2_LABELS)
        if unknown:
            raise ValueError(f"profiles for labels outside the taxonomy: {unknown}")


@dataclass
class DayTruth:
    """Per-minute ground truth for one user-day."""

    sleep: np.ndarray  # bool, True = asleep
    activity: list[str | None]
    steps: np.ndarray  # int64
    distance_m: np.ndarray  # float64


GroundTruth = dict[tuple[str, date], DayTruth]


@dataclass
class Cohort:
    """Generator output: the four raw stream files plus the truth."""

    hr_csv: str
    activity_csv: str
    sleep_csv: str
    schedule_csv: str
    truth: GroundTruth

    def truth_csv(self) -> str:
        lines = [",".join(TRUTH_HEADER)]
        for (user, day) in sorted(self.truth):
            t = self.truth[(user, day)]
            day_text = day.isoformat()
            for i in range(len(t.sleep)):
                state = "sleep" if t.sleep[i] else "awake"
                lines.append(
                    f"{user},{day_text},{i},{state},{t.activity[i] or ''},"
                    f"{int(t.steps[i])},{repr(float(t.distance_m[i]))}"
                )
        return "\n".join(lines) + "\n"


def _ts_text(epoch_sec: int, cache: dict[int, str]) -> str:
    day, rem = divmod(epoch_sec, 86400)
    text = cache.get(day)
    if text is None:
        text = date.fromordinal(_EPOCH_ORDINAL + day).isoformat()
        cache[day] = text
    h, rem = divmod(rem, 3600)
    m, s = divmod(rem, 60)
    return f"{text}T{h:02d}:{m:02d}:{s:02d}Z"


def _user_ids(n_users: int) -> list[str]:
    return [f"u{i + 1:03d}" for i in range(n_users)]


def generate_cohort(config: CohortConfig = CohortConfig()) -> Cohort:
    """Build one cohort; identical configs yield byte-identical output."""
    hr_rows: list[str] = [",".join(HR_HEADER)]
    act_rows: list[str] = [",".join(ACTIVITY_HEADER)]
    sleep_rows: list[str] = [",".join(SLEEP_HEADER)]
    sched_rows: list[str] = [",".join(SCHEDULE_HEADER)]
    truth: GroundTruth = {}
    date_cache: dict[int, str] = {}

    labels_sorted = sorted(config.activity_profiles)
    base_ordinal = config.start_date.toordinal()

    for user_index, user in enumerate(_user_ids(config.n_users)):
        rng = np.random.default_rng([config.seed, user_index])
        resting = float(rng.normal(config.resting_hr_mean, config.resting_hr_sd))
        hr_range = max(80.0, float(rng.normal(config.hr_range_mean, config.hr_range_sd)))
        # one shared band shift per user: within-user contrasts are kept,
        # but bands stop lining up across users
        band_shift = float(rng.normal(0.0, config.user_frac_jitter_sd))
        awake_frac = config.awake_hr_frac + band_shift
        frac_of = {
            label: config.activity_profiles[label].hr_frac + band_shift
            for label in labels_sorted
        }

        all_states = np.zeros(config.n_days * MINUTES_PER_DAY, dtype=bool)
        # epoch minute of this user's first local midnight
        local_base = (base_ordinal - _EPOCH_ORDINAL) * MINUTES_PER_DAY - config.tz_offset_minutes

        for day_index in range(config.n_days):
            day = date.fromordinal(base_ordinal + day_index)
            j = config.sleep_jitter_min
            morning_end = config.sleep_end_minute + int(rng.integers(-j, j + 1))
            night_start = config.sleep_start_minute + int(rng.integers(-j, j + 1))

            sleep_mask = np.zeros(MINUTES_PER_DAY, dtype=bool)
            sleep_mask[:morning_end] = True
            sleep_mask[night_start:] = True

            activity: list[str | None] = [None] * MINUTES_PER_DAY
            realized: list[tuple[int, int, str]] = []
            for entry in config.schedule_template:
                if day_index % entry.period_days != entry.phase:
                    continue
                sj = config.schedule_jitter_min
                start = entry.start_minute + int(rng.integers(-sj, sj + 1))
                end = start + entry.duration_min
                realized.append((start, end, entry.label))
                for m in range(start, end):
                    activity[m] = entry.label

            hr_mean = np.empty(MINUTES_PER_DAY)
            hr_sd = np.empty(MINUTES_PER_DAY)
            steps_mean = np.zeros(MINUTES_PER_DAY)
            steps_sd = np.zeros(MINUTES_PER_DAY)
            m_per_step = np.full(MINUTES_PER_DAY, config.awake_m_per_step)
            for i in range(MINUTES_PER_DAY):
                label = activity[i]
                if sleep_mask[i]:
                    hr_mean[i] = resting
                    hr_sd[i] = config.sleep_hr_sd
                elif label is None:
                    hr_mean[i] = resting + awake_frac * hr_range
                    hr_sd[i] = config.awake_hr_sd
                    steps_mean[i] = config.awake_steps_mean
                    steps_sd[i] = config.awake_steps_sd
                else:
                    profile = config.activity_profiles[label]
                    hr_mean[i] = resting + frac_of[label] * hr_range
                    hr_sd[i] = profile.hr_sd
                    steps_mean[i] = profile.steps_mean
                    steps_sd[i] = profile.steps_sd
                    m_per_step[i] = profile.m_per_step

            hr_minute = hr_mean + rng.normal(0.0, 1.0, MINUTES_PER_DAY) * (
                hr_sd * config.hr_sd_scale
            )
            hr_minute = np.maximum(hr_minute, 30.0)
            raw_steps = steps_mean + rng.normal(0.0, 1.0, MINUTES_PER_DAY) * steps_sd
            steps = np.maximum(np.rint(raw_steps), 0.0)
            steps[sleep_mask] = 0.0
            steps = steps.astype(np.int64)
            distance = steps * m_per_step

            hr_drop = rng.random(MINUTES_PER_DAY) < config.hr_dropout
            sec_jitter = rng.integers(-2, 3, size=(MINUTES_PER_DAY, 4))
            val_noise = rng.normal(0.0, config.hr_sample_sd, size=(MINUTES_PER_DAY, 4))

            day_base_min = local_base + day_index * MINUTES_PER_DAY
            for i in range(MINUTES_PER_DAY):
                if hr_drop[i]:
                    continue
                minute_sec = (day_base_min + i) * 60
                for k in range(4):
                    sec = _SAMPLE_SECONDS[k] + int(sec_jitter[i, k])
                    value = round(max(25.0, float(hr_minute[i] + val_noise[i, k])), 2)
                    hr_rows.append(
                        f"{user},{_ts_text(minute_sec + sec, date_cache)},{repr(value)}"
                    )

            block_steps = steps.reshape(-1, 15).sum(axis=1)
            block_dist = distance.reshape(-1, 15).sum(axis=1)
            for b in range(block_steps.shape[0]):
                if block_steps[b] == 0 and block_dist[b] == 0.0:
                    continue
                ts = _ts_text((day_base_min + b * 15) * 60, date_cache)
                act_rows.append(
                    f"{user},{ts},{int(block_steps[b])},{repr(float(block_dist[b]))}"
                )

            for start, end, label in realized:
                s_ts = _ts_text((day_base_min + start) * 60, date_cache)
                e_ts = _ts_text((day_base_min + end) * 60, date_cache)
                sched_rows.append(f"{user},{s_ts},{e_ts},{label}")

            all_states[
                day_index * MINUTES_PER_DAY : (day_index + 1) * MINUTES_PER_DAY
            ] = sleep_mask
            truth[(user, day)] = DayTruth(
                sleep=sleep_mask,
                activity=activity,
                steps=steps,
                distance_m=distance,
            )

        # device sleep segments: chunk each true state run, drop some chunks
        n_total = all_states.shape[0]
        pos = 0
        while pos < n_total:
            run_end = pos
            while run_end < n_total and all_states[run_end] == all_states[pos]:
                run_end += 1
            state_text = "sleep" if all_states[pos] else "awake"
            chunk_start = pos
            while chunk_start < run_end:
                chunk_len = min(int(rng.integers(8, 26)), run_end - chunk_start)
                keep = rng.random() >= config.sleep_dropout
                if keep:
                    s_ts = _ts_text((local_base + chunk_start) * 60, date_cache)
                    e_ts = _ts_text((local_base + chunk_start + chunk_len) * 60, date_cache)
                    sleep_rows.append(f"{user},{s_ts},{e_ts},{state_text}")
                chunk_start += chunk_len
            pos = run_end

    return Cohort(
        hr_csv="\n".join(hr_rows) + "\n",
        activity_csv="\n".join(act_rows) + "\n",
        sleep_csv="\n".join(sleep_rows) + "\n",
        schedule_csv="\n".join(sched_rows) + "\n",
        truth=truth,
    )


def write_cohort(cohort: Cohort, out_dir) -> dict[str, str]:
    """Write the five files; returns name -> path."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, text in (
        ("hr.csv", cohort.hr_csv),
        ("activity.csv", cohort.activity_csv),
        ("sleep.csv", cohort.sleep_csv),
        ("schedule.csv", cohort.schedule_csv),
        ("truth.csv", cohort.truth_csv()),
    ):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths[name] = path
    return paths


def read_truth_csv(stream) -> GroundTruth:
    """Reload a truth.csv written by write_cohort."""
    import csv as _csv

    reader = _csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TRUTH_HEADER:
        raise ValueError(f"truth CSV must start with header {','.join(TRUTH_HEADER)!r}")
    truth: GroundTruth = {}
    for row in reader:
        if not row:
            continue
        user = row[0]
        day = date.fromisoformat(row[1])
        i = int(row[2])
        entry = truth.get((user, day))
        if entry is None:
            entry = DayTruth(
                sleep=np.zeros(MINUTES_PER_DAY, dtype=bool),
                activity=[None] * MINUTES_PER_DAY,
                steps=np.zeros(MINUTES_PER_DAY, dtype=np.int64),
                distance_m=np.zeros(MINUTES_PER_DAY),
            )
            truth[(user, day)] = entry
        entry.sleep[i] = row[3] == "sleep"
        entry.activity[i] = row[4] or None
        entry.steps[i] = int(row[5])
        entry.distance_m[i] = float(row[6])
    return truth


@dataclass(frozen=True)
class MaskReport:
    """How well imputation recovered the states hidden by segment dropout."""

    total_minutes: int
    masked_minutes: int
    resolved_minutes: int
    agreeing_minutes: int
    rule_counts: dict[int, int]
    rule_precision: dict[int, float | None]
    state_recall: dict[str, float | None]
    residual_unknown_fraction: float

    @property
    def agreement(self) -> float | None:
        if self.resolved_minutes == 0:
            return None
        return self.agreeing_minutes / self.resolved_minutes


def mask_report(
    truth: GroundTruth,
    pre_days: Mapping[tuple[str, date], Sequence[AlignedMinute]],
    post_days: Mapping[tuple[str, date], Sequence[AlignedMinute]],
    marks: Mapping[tuple[str, date], Sequence[int]],
) -> MaskReport:
    """Score imputed states against the generator's truth.

    A masked minute is one whose pre-imputation state was Unknown. Rule
    precision is agreement among the minutes that rule resolved; state
    recall is the fraction of masked minutes of each true state that were
    resolved to that state.
    """
    total = 0
    masked = 0
    resolved = 0
    agreeing = 0
    residual_unknown = 0
    rule_counts = {1: 0, 2: 0, 3: 0}
    rule_agree = {1: 0, 2: 0, 3: 0}
    state_masked = {"sleep": 0, "awake": 0}
    state_hit = {"sleep": 0, "awake": 0}

    for key in sorted(truth):
        if key not in pre_days or key not in post_days:
            raise ValueError(f"truth day {key} missing from the aligned series")
        t = truth[key]
        pre = pre_days[key]
        post = post_days[key]
        day_marks = marks[key]
        if not (len(pre) == len(post) == len(day_marks) == len(t.sleep)):
            raise ValueError(f"misaligned series for {key}")
        for i in range(len(pre)):
            total += 1
            truth_state = SleepState.SLEEP if t.sleep[i] else SleepState.AWAKE
            if post[i].sleep is SleepState.UNKNOWN:
                residual_unknown += 1
            if pre[i].sleep is not SleepState.UNKNOWN:
                continue
            masked += 1
            name = truth_state.value
            state_masked[name] += 1
            if post[i].sleep is SleepState.UNKNOWN:
                continue
            resolved += 1
            rule = day_marks[i]
            if rule in rule_counts:
                rule_counts[rule] += 1
            hit = post[i].sleep is truth_state
            if hit:
                agreeing += 1
                if rule in rule_agree:
                    rule_agree[rule] += 1
                state_hit[name] += 1

    rule_precision = {
        rule: (rule_agree[rule] / rule_counts[rule]) if rule_counts[rule] else None
        for rule in rule_counts
    }
    state_recall = {
        name: (state_hit[name] / state_masked[name]) if state_masked[name] else None
        for name in state_masked
    }
    return MaskReport(
        total_minutes=total,
        masked_minutes=masked,
        resolved_minutes=resolved,
        agreeing_minutes=agreeing,
        rule_counts=rule_counts,
        rule_precision=rule_precision,
        state_recall=state_recall,
        residual_unknown_fraction=residual_unknown / total if total else 0.0,
    )
