"""Fusion of the raw streams onto the local per-minute grid.

Heart-rate samples are averaged into one pulse per minute. Each 15-minute
activity summary is spread over its minutes in proportion to how far each
minute's pulse sits above a low-pulse cutoff (a truncated-linear weighting),
so steps land on the minutes that were actually active; a block whose pulses
all sit below the cutoff falls back to a uniform spread. Device sleep
segments and schedule blocks are painted onto the same grid.

Steps are apportioned as integers with the largest-remainder method, so the
block total is conserved exactly; distance is split proportionally as a real
number.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import date
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .core import (
    DEFAULT_TZ_OFFSET_MINUTES,
    MINUTES_PER_DAY,
    MinuteIndex,
    ScheduleBlock,
    SleepState,
    epoch_minute,
    format_number,
    local_day_and_index,
)
from .ingest import (
    BLOCK_MINUTES,
    RawActivityBlock,
    RawHrSample,
    RawSleepSegment,
)

#: Daily pulse percentiles defining the personal heart-rate envelope.
MIN_HR_PERCENTILE = 5.0
MAX_HR_PERCENTILE = 99.97

#: Days with fewer per-minute pulses than this get a low-confidence profile.
MIN_CONFIDENT_PULSES = 60

#: A minute participates in block redistribution only while its pulse
#: exceeds cutoff_factor * min_hr.
LTM_CUTOFF_FACTOR = 1.05

ALIGNED_HEADER = (
    "user_id",
    "date",
    "minute",
    "pulse",
    "steps",
    "distance_m",
    "sleep",
    "schedule_l2",
)
PROFILE_HEADER = ("user_id", "date", "min_hr", "max_hr", "n_pulses", "low_confidence")


class NoProfileError(ValueError):
    """No pulses were available to derive a heart-rate profile from."""


@dataclass(frozen=True, slots=True)
class PersonalHrProfile:
    """Per-user heart-rate envelope for one day (or the whole history).

    min_hr is the 5th percentile of the day's per-minute pulses and max_hr
    the 99.97th, so a handful of spurious readings cannot drag the envelope
    around. Profiles built from fewer than MIN_CONFIDENT_PULSES minutes are
    marked low-confidence but still used.
    """

    user_id: str
    day: date | None
    min_hr: float
    max_hr: float
    n_pulses: int
    low_confidence: bool


@dataclass(frozen=True, slots=True)
class AlignedMinute:
    """One fused grid slot: pulse, redistributed steps/distance, sleep state,
    and the scheduled activity label if any."""

    user_id: str
    minute: MinuteIndex
    pulse: float | None
    steps: int
    distance_m: float
    sleep: SleepState
    schedule_label: str | None


@dataclass
class AlignedData:
    """Cohort-wide alignment result keyed by (user_id, local day)."""

    days: dict[tuple[str, date], list[AlignedMinute]]
    profiles: dict[tuple[str, date], PersonalHrProfile]

    def sorted_keys(self) -> list[tuple[str, date]]:
        return sorted(self.days)


def percentile_linear(values: Sequence[float], q: float) -> float:
    """Percentile with linear interpolation between order statistics.

    The rank of percentile q over n sorted values is q/100 * (n-1); a
    fractional rank interpolates between its two neighbours.
    """
    n = len(values)
    if n == 0:
        raise ValueError("percentile of empty sequence")
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"percentile q={q} outside [0, 100]")
    v = sorted(values)
    rank = (q / 100.0) * (n - 1)
    lo = math.floor(rank)
    hi = math.ceil(rank)
    if lo == hi:
        return float(v[lo])
    return v[lo] + (rank - lo) * (v[hi] - v[lo])


def downsample_hr(samples: Sequence[float]) -> float | None:
    """Mean of the raw readings inside one minute; None when there are none."""
    if not samples:
        return None
    return sum(samples) / len(samples)


def compute_hr_profile(
    user_id: str, day: date | None, pulses: Sequence[float]
) -> PersonalHrProfile:
    """Derive the personal envelope from one day's per-minute pulses."""
    n = len(pulses)
    if n == 0:
        raise NoProfileError(f"no pulses for user {user_id!r} on {day}")
    return PersonalHrProfile(
        user_id=user_id,
        day=day,
        min_hr=percentile_linear(pulses, MIN_HR_PERCENTILE),
        max_hr=percentile_linear(pulses, MAX_HR_PERCENTILE),
        n_pulses=n,
        low_confidence=n < MIN_CONFIDENT_PULSES,
    )


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Apportion ``total`` integer units proportionally to ``weights``.

    Every slot gets the floor of its exact quota; leftover units go to the
    largest fractional parts, ties broken toward the lower index. The result
    always sums to ``total`` exactly.
    """
    if total < 0:
        raise ValueError("cannot apportion a negative total")
    s = float(sum(weights))
    if not s > 0:
        raise ValueError("weights must have a positive sum")
    quotas = [total * w / s for w in weights]
    base = [math.floor(q) for q in quotas]
    leftover = total - sum(base)
    order = sorted(range(len(weights)), key=lambda i: (base[i] - quotas[i], i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def ltm_redistribute(
    steps: int,
    distance_m: float,
    pulses: Sequence[float | None],
    min_hr: float,
    *,
    cutoff_factor: float = LTM_CUTOFF_FACTOR,
    block_minutes: int = BLOCK_MINUTES,
) -> list[tuple[int, float]]:
    """Spread one block's steps and distance over its minutes.

    Each minute carries weight max(0, pulse - cutoff_factor * min_hr); a
    missing pulse counts as below the cutoff. When every weight is zero the
    block is spread uniformly. Returns (steps, distance) per minute; the
    step column sums to ``steps`` exactly.
    """
    if len(pulses) != block_minutes:
        raise ValueError(
            f"expected {block_minutes} per-minute pulses, got {len(pulses)}"
        )
    if steps < 0 or distance_m < 0:
        raise ValueError("steps and distance must be non-negative")
    cutoff = cutoff_factor * min_hr
    weights = []
    for p in pulses:
        if p is None or (isinstance(p, float) and math.isnan(p)):
            weights.append(0.0)
        else:
            weights.append(max(0.0, p - cutoff))
    total_w = sum(weights)
    if total_w <= 0.0:
        weights = [1.0] * block_minutes
        total_w = float(block_minutes)
    step_parts = largest_remainder(steps, weights)
    return [
        (step_parts[i], distance_m * weights[i] / total_w)
        for i in range(block_minutes)
    ]


def _empty_day_arrays() -> dict:
    return {
        "pulse_sum": np.zeros(MINUTES_PER_DAY),
        "pulse_n": np.zeros(MINUTES_PER_DAY, dtype=np.int64),
        "blocks": [],  # (start_index, steps, distance_m)
        "sleep": [SleepState.UNKNOWN] * MINUTES_PER_DAY,
        "schedule": [None] * MINUTES_PER_DAY,
    }


def _paint_interval(day_map, user_id, start_min, end_min, offset, field, value):
    """Write ``value`` into per-day arrays for epoch minutes [start, end)."""
    m = start_min
    while m < end_min:
        day, idx = local_day_and_index(m, offset)
        run = min(end_min - m, MINUTES_PER_DAY - idx)
        arrays = day_map.setdefault((user_id, day), _empty_day_arrays())
        target = arrays[field]
        for k in range(idx, idx + run):
            target[k] = value
        m += run


def _finish_day(
    user_id: str,
    day: date,
    arrays: dict,
    profile: PersonalHrProfile | None,
) -> list[AlignedMinute]:
    pulse = np.full(MINUTES_PER_DAY, np.nan)
    has = arrays["pulse_n"] > 0
    pulse[has] = arrays["pulse_sum"][has] / arrays["pulse_n"][has]

    steps = [0] * MINUTES_PER_DAY
    dist = [0.0] * MINUTES_PER_DAY
    min_hr = profile.min_hr if profile is not None else math.inf
    for start_idx, blk_steps, blk_dist in arrays["blocks"]:
        if start_idx % BLOCK_MINUTES != 0 or start_idx + BLOCK_MINUTES > MINUTES_PER_DAY:
            raise ValueError(
                f"activity block at minute {start_idx} does not fit the local grid"
            )
        window = [
            None if math.isnan(pulse[i]) else float(pulse[i])
            for i in range(start_idx, start_idx + BLOCK_MINUTES)
        ]
        for j, (s, d) in enumerate(ltm_redistribute(blk_steps, blk_dist, window, min_hr)):
            steps[start_idx + j] += s
            dist[start_idx + j] += d

    sleep = arrays["sleep"]
    schedule = arrays["schedule"]
    return [
        AlignedMinute(
            user_id=user_id,
            minute=MinuteIndex(day=day, index=i),
            pulse=None if math.isnan(pulse[i]) else float(pulse[i]),
            steps=steps[i],
            distance_m=dist[i],
            sleep=sleep[i],
            schedule_label=schedule[i],
        )
        for i in range(MINUTES_PER_DAY)
    ]


def align_cohort(
    hr_samples: Sequence[RawHrSample],
    activity_blocks: Sequence[RawActivityBlock],
    sleep_segments: Sequence[RawSleepSegment],
    schedule_blocks: Sequence[ScheduleBlock],
    *,
    tz_offset_minutes: int = DEFAULT_TZ_OFFSET_MINUTES,
    profile_scope: str = "day",
) -> AlignedData:
    """Fuse all four streams for a whole cohort.

    profile_scope picks where the heart-rate envelope comes from: "day"
    derives one per user-day, "global" pools each user's whole history.

    The offset must be a multiple of 15 so that device blocks stay inside a
    single local day.
    """
    if tz_offset_minutes % BLOCK_MINUTES != 0:
        raise ValueError("tz offset must be a multiple of 15 minutes")
    if profile_scope not in ("day", "global"):
        raise ValueError(f"unknown profile scope {profile_scope!r}")

    day_map: dict[tuple[str, date], dict] = {}

    for s in hr_samples:
        day, idx = local_day_and_index(epoch_minute(s.timestamp), tz_offset_minutes)
        arrays = day_map.setdefault((s.user_id, day), _empty_day_arrays())
        arrays["pulse_sum"][idx] += s.hr_bpm
        arrays["pulse_n"][idx] += 1

    for b in activity_blocks:
        day, idx = local_day_and_index(epoch_minute(b.block_start), tz_offset_minutes)
        arrays = day_map.setdefault((b.user_id, day), _empty_day_arrays())
        arrays["blocks"].append((idx, b.steps, b.distance_m))

    for seg in sleep_segments:
        _paint_interval(
            day_map,
            seg.user_id,
            epoch_minute(seg.start),
            epoch_minute(seg.end),
            tz_offset_minutes,
            "sleep",
            seg.state,
        )

    for blk in schedule_blocks:
        _paint_interval(
            day_map,
            blk.user_id,
            epoch_minute(blk.start),
            epoch_minute(blk.end),
            tz_offset_minutes,
            "schedule",
            blk.label,
        )

    pulses_of: dict[tuple[str, date], list[float]] = {}
    for key, arrays in day_map.items():
        has = arrays["pulse_n"] > 0
        vals = arrays["pulse_sum"][has] / arrays["pulse_n"][has]
        pulses_of[key] = [float(v) for v in vals]

    profiles: dict[tuple[str, date], PersonalHrProfile] = {}
    if profile_scope == "day":
        for (user, day), vals in pulses_of.items():
            if vals:
                profiles[(user, day)] = compute_hr_profile(user, day, vals)
    else:
        by_user: dict[str, list[float]] = {}
        for (user, _day), vals in pulses_of.items():
            by_user.setdefault(user, []).extend(vals)
        shared = {
            user: compute_hr_profile(user, None, vals)
            for user, vals in by_user.items()
            if vals
        }
        for user, day in day_map:
            if user in shared:
                profiles[(user, day)] = shared[user]

    days = {
        (user, day): _finish_day(user, day, arrays, profiles.get((user, day)))
        for (user, day), arrays in sorted(day_map.items())
    }
    return AlignedData(days=days, profiles=profiles)


def build_aligned_day(
    user_id: str,
    day: date,
    hr_samples: Sequence[RawHrSample] = (),
    activity_blocks: Sequence[RawActivityBlock] = (),
    sleep_segments: Sequence[RawSleepSegment] = (),
    schedule_blocks: Sequence[ScheduleBlock] = (),
    profile: PersonalHrProfile | None = None,
    *,
    tz_offset_minutes: int = DEFAULT_TZ_OFFSET_MINUTES,
) -> list[AlignedMinute]:
    """Fuse one user-day under the given heart-rate envelope.

    Stream entries for other users or outside the day are ignored; intervals
    are clipped to the day. When no profile is given every block pulse counts
    as below the cutoff, so redistribution falls back to the uniform spread.
    """
    if tz_offset_minutes % BLOCK_MINUTES != 0:
        raise ValueError("tz offset must be a multiple of 15 minutes")
    arrays = _empty_day_arrays()
    for s in hr_samples:
        if s.user_id != user_id:
            continue
        s_day, idx = local_day_and_index(epoch_minute(s.timestamp), tz_offset_minutes)
        if s_day == day:
            arrays["pulse_sum"][idx] += s.hr_bpm
            arrays["pulse_n"][idx] += 1
    for b in activity_blocks:
        if b.user_id != user_id:
            continue
        b_day, idx = local_day_and_index(epoch_minute(b.block_start), tz_offset_minutes)
        if b_day == day:
            arrays["blocks"].append((idx, b.steps, b.distance_m))

    day_start = (day.toordinal() - date(1970, 1, 1).toordinal()) * MINUTES_PER_DAY
    lo = day_start - tz_offset_minutes  # epoch minute of local midnight
    hi = lo + MINUTES_PER_DAY
    for seg in sleep_segments:
        if seg.user_id != user_id:
            continue
        a = max(epoch_minute(seg.start), lo)
        b = min(epoch_minute(seg.end), hi)
        for m in range(a, b):
            arrays["sleep"][m - lo] = seg.state
    for blk in schedule_blocks:
        if blk.user_id != user_id:
            continue
        a = max(epoch_minute(blk.start), lo)
        b = min(epoch_minute(blk.end), hi)
        for m in range(a, b):
            arrays["schedule"][m - lo] = blk.label
    return _finish_day(user_id, day, arrays, profile)


def write_aligned_csv(days: Mapping[tuple[str, date], Sequence[AlignedMinute]]) -> str:
    """Serialize aligned (or imputed) days to canonical CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ALIGNED_HEADER)
    for (user, day) in sorted(days):
        for m in days[(user, day)]:
            writer.writerow(
                [
                    user,
                    day.isoformat(),
                    str(m.minute.index),
                    "" if m.pulse is None else format_number(m.pulse),
                    str(m.steps),
                    format_number(m.distance_m),
                    m.sleep.value,
                    m.schedule_label or "",
                ]
            )
    return buf.getvalue()


def read_aligned_csv(
    stream: Iterable[str] | IO[str],
) -> dict[tuple[str, date], list[AlignedMinute]]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != ALIGNED_HEADER:
        raise ValueError(f"aligned CSV must start with header {','.join(ALIGNED_HEADER)!r}")
    days: dict[tuple[str, date], list[AlignedMinute]] = {}
    for row in reader:
        if not row:
            continue
        if len(row) != len(ALIGNED_HEADER):
            raise ValueError(f"aligned CSV row {reader.line_num} has {len(row)} fields")
        user = row[0]
        day = date.fromisoformat(row[1])
        minute = MinuteIndex(day=day, index=int(row[2]))
        pulse = float(row[3]) if row[3] != "" else None
        days.setdefault((user, day), []).append(
            AlignedMinute(
                user_id=user,
                minute=minute,
                pulse=pulse,
                steps=int(row[4]),
                distance_m=float(row[5]),
                sleep=SleepState(row[6]),
                schedule_label=row[7] or None,
            )
        )
    return days


def write_profiles_csv(profiles: Mapping[tuple[str, date], PersonalHrProfile]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PROFILE_HEADER)
    for (user, day) in sorted(profiles):
        p = profiles[(user, day)]
        writer.writerow(
            [
                user,
                day.isoformat(),
                format_number(p.min_hr),
                format_number(p.max_hr),
                str(p.n_pulses),
                "1" if p.low_confidence else "0",
            ]
        )
    return buf.getvalue()


def read_profiles_csv(
    stream: Iterable[str] | IO[str],
) -> dict[tuple[str, date], PersonalHrProfile]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != PROFILE_HEADER:
        raise ValueError(f"profile CSV must start with header {','.join(PROFILE_HEADER)!r}")
    profiles: dict[tuple[str, date], PersonalHrProfile] = {}
    for row in reader:
        if not row:
            continue
        user = row[0]
        day = date.fromisoformat(row[1])
        profiles[(user, day)] = PersonalHrProfile(
            user_id=user,
            day=day,
            min_hr=float(row[2]),
            max_hr=float(row[3]),
            n_pulses=int(row[4]),
            low_confidence=row[5] == "1",
        )
    return profiles
