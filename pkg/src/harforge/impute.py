"""Rule-based filling of Unknown sleep states on the aligned grid.

Three rules run in order, each only ever resolving Unknown minutes, so
device-reported states are never overwritten and a second application is a
no-op:

  Rule 1 (sleep): a quiet minute (no steps) whose pulse sits below a
      multiple of the personal daily minimum is scored Sleep. The multiple
      is stricter at night than during the day.
  Rule 2 (awake): any steps, or a pulse above the awake multiple of the
      personal minimum, scores the minute Awake.
  Rule 3 (gap fill): a short run of Unknown minutes whose flanking known
      states agree takes that state. Runs touching either day boundary are
      left alone.

All comparisons are strict inequalities; a pulse exactly on a threshold is
a no-decision. Minutes without a pulse can only be resolved by the step
clause of Rule 2 or by Rule 3.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from datetime import date
from typing import Mapping, Sequence

from .align import AlignedMinute, PersonalHrProfile
from .core import SleepState

STATS_HEADER = ("metric", "pre", "after_rules_1_2", "after_rules_1_2_3", "net")


@dataclass(frozen=True)
class ImputeConfig:
    """Thresholds and the night window for the three rules.

    The night window wraps midnight: a minute is nocturnal when its index is
    >= night_start_minute or <= night_end_minute.
    """

    night_start_minute: int = 1260  # 21:00
    night_end_minute: int = 419  # 06:59
    night_sleep_factor: float = 1.05
    day_sleep_factor: float = 1.2
    awake_factor: float = 1.2
    max_gap_minutes: int = 120

    def is_night(self, index: int) -> bool:
        return index >= self.night_start_minute or index <= self.night_end_minute


@dataclass(frozen=True)
class StageCounts:
    """State tally for one user at one point in the rule cascade."""

    sleep_min: int
    awake_min: int
    unknown_min: int

    @property
    def total_min(self) -> int:
        return self.sleep_min + self.awake_min + self.unknown_min


@dataclass(frozen=True)
class ImputationStats:
    """Per-user before/after tallies plus how much each rule resolved."""

    user_id: str
    pre: StageCounts
    after_rules_1_2: StageCounts
    post: StageCounts
    rule1_min: int
    rule2_min: int
    rule3_min: int
    skipped_days: tuple[date, ...] = ()


def rule1_sleep(
    minute: AlignedMinute, profile: PersonalHrProfile, config: ImputeConfig
) -> SleepState | None:
    """Low-pulse quiet minute -> Sleep; otherwise no decision."""
    if minute.sleep is not SleepState.UNKNOWN:
        return None
    if minute.pulse is None or minute.steps != 0:
        return None
    factor = (
        config.night_sleep_factor
        if config.is_night(minute.minute.index)
        else config.day_sleep_factor
    )
    if minute.pulse < factor * profile.min_hr:
        return SleepState.SLEEP
    return None


def rule2_awake(
    minute: AlignedMinute, profile: PersonalHrProfile, config: ImputeConfig
) -> SleepState | None:
    """Steps or an elevated pulse -> Awake; otherwise no decision."""
    if minute.sleep is not SleepState.UNKNOWN:
        return None
    if minute.steps > 0:
        return SleepState.AWAKE
    if minute.pulse is not None and minute.pulse > config.awake_factor * profile.min_hr:
        return SleepState.AWAKE
    return None


def rule3_fill(states: Sequence[SleepState], max_gap_minutes: int) -> list[SleepState]:
    """Fill interior Unknown runs bounded by the same known state on both sides."""
    out = list(states)
    n = len(out)
    i = 0
    while i < n:
        if out[i] is not SleepState.UNKNOWN:
            i += 1
            continue
        j = i
        while j < n and out[j] is SleepState.UNKNOWN:
            j += 1
        # run is [i, j); flanks must exist, agree, and the run must be short
        if (
            i > 0
            and j < n
            and out[i - 1] is out[j]
            and out[i - 1] is not SleepState.UNKNOWN
            and (j - i) <= max_gap_minutes
        ):
            for k in range(i, j):
                out[k] = out[i - 1]
        i = j
    return out


def _count(minutes: Sequence[AlignedMinute]) -> StageCounts:
    sleep = awake = unknown = 0
    for m in minutes:
        if m.sleep is SleepState.SLEEP:
            sleep += 1
        elif m.sleep is SleepState.AWAKE:
            awake += 1
        else:
            unknown += 1
    return StageCounts(sleep_min=sleep, awake_min=awake, unknown_min=unknown)


def _merge(a: StageCounts, b: StageCounts) -> StageCounts:
    return StageCounts(
        sleep_min=a.sleep_min + b.sleep_min,
        awake_min=a.awake_min + b.awake_min,
        unknown_min=a.unknown_min + b.unknown_min,
    )


def impute_day(
    minutes: Sequence[AlignedMinute],
    profile: PersonalHrProfile,
    config: ImputeConfig = ImputeConfig(),
) -> tuple[list[AlignedMinute], list[int]]:
    """Apply the rule cascade to one day.

    Returns the new minute list plus a parallel mark list recording which
    rule (1, 2 or 3) resolved each slot, 0 for untouched slots.
    """
    out = list(minutes)
    marks = [0] * len(out)
    for i, m in enumerate(out):
        if m.sleep is not SleepState.UNKNOWN:
            continue
        decided = rule1_sleep(m, profile, config)
        if decided is not None:
            out[i] = replace(m, sleep=decided)
            marks[i] = 1
            continue
        decided = rule2_awake(m, profile, config)
        if decided is not None:
            out[i] = replace(m, sleep=decided)
            marks[i] = 2
    filled = rule3_fill([m.sleep for m in out], config.max_gap_minutes)
    for i, state in enumerate(filled):
        if state is not out[i].sleep:
            out[i] = replace(out[i], sleep=state)
            marks[i] = 3
    return out, marks


def impute_user(
    user_id: str,
    days: Mapping[date, Sequence[AlignedMinute]],
    profiles: Mapping[date, PersonalHrProfile],
    config: ImputeConfig = ImputeConfig(),
) -> tuple[dict[date, list[AlignedMinute]], ImputationStats, dict[date, list[int]]]:
    """Impute every day of one user. Days without a profile are left as-is
    and reported in ``skipped_days``."""
    zero = StageCounts(0, 0, 0)
    pre = mid = post = zero
    rule_counts = {1: 0, 2: 0, 3: 0}
    out_days: dict[date, list[AlignedMinute]] = {}
    out_marks: dict[date, list[int]] = {}
    skipped: list[date] = []
    for day in sorted(days):
        minutes = list(days[day])
        pre = _merge(pre, _count(minutes))
        profile = profiles.get(day)
        if profile is None:
            out_days[day] = minutes
            out_marks[day] = [0] * len(minutes)
            mid = _merge(mid, _count(minutes))
            post = _merge(post, _count(minutes))
            skipped.append(day)
            continue
        imputed, marks = impute_day(minutes, profile, config)
        for rule in (1, 2, 3):
            rule_counts[rule] += sum(1 for m in marks if m == rule)
        mid_counts = _count(
            [imputed[i] if marks[i] in (1, 2) else minutes[i] for i in range(len(minutes))]
        )
        mid = _merge(mid, mid_counts)
        post = _merge(post, _count(imputed))
        out_days[day] = imputed
        out_marks[day] = marks
    stats = ImputationStats(
        user_id=user_id,
        pre=pre,
        after_rules_1_2=mid,
        post=post,
        rule1_min=rule_counts[1],
        rule2_min=rule_counts[2],
        rule3_min=rule_counts[3],
        skipped_days=tuple(skipped),
    )
    return out_days, stats, out_marks


def impute_cohort(
    days: Mapping[tuple[str, date], Sequence[AlignedMinute]],
    profiles: Mapping[tuple[str, date], PersonalHrProfile],
    config: ImputeConfig = ImputeConfig(),
) -> tuple[
    dict[tuple[str, date], list[AlignedMinute]],
    list[ImputationStats],
    dict[tuple[str, date], list[int]],
]:
    """Impute a whole cohort, returning per-user stats in user order."""
    by_user: dict[str, dict[date, Sequence[AlignedMinute]]] = {}
    for (user, day), minutes in days.items():
        by_user.setdefault(user, {})[day] = minutes
    out_days: dict[tuple[str, date], list[AlignedMinute]] = {}
    out_marks: dict[tuple[str, date], list[int]] = {}
    stats: list[ImputationStats] = []
    for user in sorted(by_user):
        user_profiles = {
            day: prof for (u, day), prof in profiles.items() if u == user
        }
        imputed, user_stats, marks = impute_user(
            user, by_user[user], user_profiles, config
        )
        stats.append(user_stats)
        for day, minutes in imputed.items():
            out_days[(user, day)] = minutes
        for day, day_marks in marks.items():
            out_marks[(user, day)] = day_marks
    return out_days, stats, out_marks


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def write_stats_report(stats: Sequence[ImputationStats]) -> str:
    """Tabulate the cascade: per-user averages for each state at each stage,
    percentage shares, per-rule resolution counts, and cohort totals."""
    if not stats:
        raise ValueError("no imputation stats to report")
    n = len(stats)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STATS_HEADER)

    def stage_totals(pick) -> tuple[int, int, int, int]:
        sleep = sum(pick(s).sleep_min for s in stats)
        awake = sum(pick(s).awake_min for s in stats)
        unknown = sum(pick(s).unknown_min for s in stats)
        return sleep, awake, unknown, sleep + awake + unknown

    pre = stage_totals(lambda s: s.pre)
    mid = stage_totals(lambda s: s.after_rules_1_2)
    post = stage_totals(lambda s: s.post)

    names = ("sleep_min_per_user", "awake_min_per_user", "unknown_min_per_user")
    for i, name in enumerate(names):
        writer.writerow(
            [
                name,
                _fmt(pre[i] / n),
                _fmt(mid[i] / n),
                _fmt(post[i] / n),
                _fmt((post[i] - pre[i]) / n),
            ]
        )
    writer.writerow(
        [
            "total_min_per_user",
            _fmt(pre[3] / n),
            _fmt(mid[3] / n),
            _fmt(post[3] / n),
            _fmt((post[3] - pre[3]) / n),
        ]
    )
    pct_names = ("sleep_pct", "awake_pct", "unknown_pct")
    for i, name in enumerate(pct_names):
        writer.writerow(
            [
                name,
                _fmt(100.0 * pre[i] / pre[3]) if pre[3] else "",
                _fmt(100.0 * mid[i] / mid[3]) if mid[3] else "",
                _fmt(100.0 * post[i] / post[3]) if post[3] else "",
                _fmt(100.0 * (post[i] / post[3] - pre[i] / pre[3])) if pre[3] else "",
            ]
        )
    writer.writerow(
        ["rule1_min_per_user", "", _fmt(sum(s.rule1_min for s in stats) / n), "", ""]
    )
    writer.writerow(
        ["rule2_min_per_user", "", _fmt(sum(s.rule2_min for s in stats) / n), "", ""]
    )
    writer.writerow(
        ["rule3_min_per_user", "", "", _fmt(sum(s.rule3_min for s in stats) / n), ""]
    )
    writer.writerow(
        ["cohort_total_min", str(pre[3]), str(mid[3]), str(post[3]), str(post[3] - pre[3])]
    )
    return buf.getvalue()
