"""Shared vocabulary for the pipeline: the one-minute day grid, sleep states,
and the two-level activity taxonomy.

Every downstream stage (alignment, imputation, windowing, evaluation, charts)
speaks in terms of these types. All of them are immutable values, so they are
safe to share freely between threads and to use as dict keys where hashable.

Timestamps arrive in UTC and are shifted by a fixed per-deployment offset
before anything is snapped to the grid; a "day" always means the local
calendar day after that shift.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from datetime import date, datetime, timezone
from enum import Enum
from typing import Iterable, Mapping, Sequence

MINUTES_PER_DAY = 1440

#: Minutes added to UTC to obtain local wall-clock time.
DEFAULT_TZ_OFFSET_MINUTES = 120

#: Plausibility bounds for a per-minute pulse, bpm. Report-only: values
#: outside the band are flagged by validate_day_series, never dropped.
PULSE_PLAUSIBLE_LOW = 20.0
PULSE_PLAUSIBLE_HIGH = 250.0

LEVEL1_SLEEP = "Sleep"
LEVEL1_AWAKE = "Awake"
LEVEL1_ACTIVITY = "Activity"

#: The coarse label set, in canonical order.
LEVEL1_LABELS = (LEVEL1_SLEEP, LEVEL1_AWAKE, LEVEL1_ACTIVITY)

#: Built-in fine-grained activity vocabulary. Deployments can swap in their
#: own via a taxonomy CSV; this is the default used when none is given.
DEFAULT_LEVEL2_LABELS = (
    "Firearms Training",
    "Military Drills",
    "Running Exercise",
    "Obstacle Course Training",
    "Fitness Test",
    "Wake Up",
    "Security Mission",
    "Contact-Combat",
    "General Working",
    "Kitchen Duties",
    "Other",
)

TAXONOMY_HEADER = ("level2_label", "level1_label")

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()


class SleepState(Enum):
    """Per-minute sleep state. The string values double as the CSV encoding."""

    SLEEP = "sleep"
    AWAKE = "awake"
    UNKNOWN = "unknown"


class UnknownLabelError(KeyError):
    """A label was looked up that is not part of the active taxonomy."""


@dataclass(frozen=True)
class ActivityTaxonomy:
    """Two-level activity vocabulary.

    ``level2`` holds the fine-grained activity names in a stable order and
    ``parent`` maps each of them to one of the three coarse labels. The
    coarse names Sleep and Awake are also legal fine-grained labels (a window
    can be plain sleep or plain wakefulness), which is why the classifier
    label space is ``level2_classes`` = (Sleep, Awake, *level2).

    Attributes:
        level2: ordered fine-grained activity names.
        parent: mapping from each level-2 name to its level-1 label.
    """

    level2: tuple[str, ...]
    parent: Mapping[str, str]

    def __post_init__(self) -> None:
        if len(set(self.level2)) != len(self.level2):
            raise ValueError("duplicate level-2 labels in taxonomy")
        if set(self.parent) != set(self.level2):
            raise ValueError("parent map must cover exactly the level-2 labels")
        for name, up in self.parent.items():
            if up not in LEVEL1_LABELS:
                raise ValueError(f"level-2 label {name!r} has unknown parent {up!r}")
        for reserved in LEVEL1_LABELS:
            if reserved in self.level2:
                raise ValueError(f"{reserved!r} is reserved and cannot be a level-2 label")

    def level1_of(self, label: str) -> str:
        """Coarse label for ``label``; level-1 names map to themselves."""
        if label in LEVEL1_LABELS:
            return label
        try:
            return self.parent[label]
        except KeyError:
            raise UnknownLabelError(f"label {label!r} is not in the taxonomy") from None

    @property
    def level1_classes(self) -> tuple[str, str, str]:
        return LEVEL1_LABELS

    @property
    def level2_classes(self) -> tuple[str, ...]:
        """Full fine-grained label space seen by the classifier."""
        return (LEVEL1_SLEEP, LEVEL1_AWAKE) + self.level2

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TAXONOMY_HEADER)
        for name in self.level2:
            writer.writerow([name, self.parent[name]])
        return buf.getvalue()

    def content_hash(self) -> str:
        """Stable hex digest of the taxonomy content, for artifact stamping."""
        return hashlib.sha256(self.to_csv_text().encode("utf-8")).hexdigest()


def default_taxonomy() -> ActivityTaxonomy:
    """The built-in vocabulary: every fine label parents to Activity."""
    parent = {name: LEVEL1_ACTIVITY for name in DEFAULT_LEVEL2_LABELS}
    return ActivityTaxonomy(level2=DEFAULT_LEVEL2_LABELS, parent=parent)


def read_taxonomy(lines: Iterable[str]) -> ActivityTaxonomy:
    """Parse a ``level2_label,level1_label`` CSV into a taxonomy."""
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("taxonomy file is empty") from None
    if tuple(h.strip() for h in header) != TAXONOMY_HEADER:
        raise ValueError(f"taxonomy header must be {','.join(TAXONOMY_HEADER)!r}")
    names: list[str] = []
    parent: dict[str, str] = {}
    for row in reader:
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"taxonomy row {reader.line_num} must have 2 fields")
        name, up = row[0].strip(), row[1].strip()
        names.append(name)
        parent[name] = up
    return ActivityTaxonomy(level2=tuple(names), parent=parent)


def load_taxonomy(path) -> ActivityTaxonomy:
    with open(path, encoding="utf-8", newline="") as fh:
        return read_taxonomy(fh)


def save_taxonomy(taxonomy: ActivityTaxonomy, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(taxonomy.to_csv_text())


@dataclass(frozen=True, order=True)
class MinuteIndex:
    """One slot on the local per-minute grid: a calendar day plus an index
    in [0, 1440)."""

    day: date
    index: int

    def __post_init__(self) -> None:
        if not 0 <= self.index < MINUTES_PER_DAY:
            raise ValueError(f"minute index {self.index} outside [0, {MINUTES_PER_DAY})")


@dataclass(frozen=True)
class ScheduleBlock:
    """A planned activity: [start, end) in UTC with a level-2 label."""

    user_id: str
    start: datetime
    end: datetime
    label: str

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError("schedule block must have end > start")


def as_utc(ts: datetime) -> datetime:
    """Normalize to an aware UTC datetime; naive input is taken as UTC."""
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def epoch_minute(ts: datetime) -> int:
    """Whole minutes since the Unix epoch, truncating seconds toward zero."""
    ts = as_utc(ts)
    days = ts.toordinal() - _EPOCH_ORDINAL
    return days * MINUTES_PER_DAY + ts.hour * 60 + ts.minute


def local_day_and_index(epoch_min: int, utc_offset_minutes: int) -> tuple[date, int]:
    """Map an epoch minute to its local (day, slot index)."""
    local = epoch_min + utc_offset_minutes
    day_ord, index = divmod(local, MINUTES_PER_DAY)
    return date.fromordinal(_EPOCH_ORDINAL + day_ord), index


def minute_of_day(
    ts: datetime, utc_offset_minutes: int = DEFAULT_TZ_OFFSET_MINUTES
) -> MinuteIndex:
    """Snap a UTC timestamp to its local grid slot.

    Seconds are floor-truncated, so every instant of a local day maps into
    [0, 1440) and consecutive minutes map to consecutive indices.
    """
    day, index = local_day_and_index(epoch_minute(ts), utc_offset_minutes)
    return MinuteIndex(day=day, index=index)


def minute_utc_start(
    day: date, index: int, utc_offset_minutes: int = DEFAULT_TZ_OFFSET_MINUTES
) -> datetime:
    """UTC instant at which local grid slot (day, index) begins."""
    if not 0 <= index < MINUTES_PER_DAY:
        raise ValueError(f"minute index {index} outside [0, {MINUTES_PER_DAY})")
    day_ord = day.toordinal() - _EPOCH_ORDINAL
    total = day_ord * MINUTES_PER_DAY + index - utc_offset_minutes
    return datetime.fromtimestamp(total * 60, tz=timezone.utc)


def format_number(x) -> str:
    """Canonical text form of a number: shortest string that round-trips."""
    if isinstance(x, bool):
        raise TypeError("bool is not a CSV number")
    if isinstance(x, int):
        return str(x)
    v = float(x)
    if math.isnan(v) or math.isinf(v):
        raise ValueError(f"non-finite value {v!r} cannot be serialized")
    return repr(v)


@dataclass(frozen=True)
class Finding:
    """One validation complaint about a day series."""

    kind: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings


def validate_day_series(minutes: Sequence) -> ValidationReport:
    """Sanity-check one aligned day. Report-only; nothing is modified.

    Flags: wrong slot count, duplicate or non-monotonic indices, negative
    steps or distance, and pulses outside the plausible bpm band.
    """
    findings: list[Finding] = []
    n = len(minutes)
    if n != MINUTES_PER_DAY:
        findings.append(Finding("length", f"expected {MINUTES_PER_DAY} slots, got {n}"))
    seen: set[int] = set()
    prev = None
    for m in minutes:
        idx = m.minute.index
        if idx in seen:
            findings.append(Finding("duplicate_index", f"minute {idx} appears twice"))
        seen.add(idx)
        if prev is not None and idx <= prev:
            findings.append(Finding("order", f"minute {idx} follows {prev}"))
        prev = idx
        if m.steps < 0:
            findings.append(Finding("negative_steps", f"minute {idx}: steps {m.steps}"))
        if m.distance_m < 0:
            findings.append(
                Finding("negative_distance", f"minute {idx}: distance {m.distance_m}")
            )
        if m.pulse is not None and not (
            PULSE_PLAUSIBLE_LOW <= m.pulse <= PULSE_PLAUSIBLE_HIGH
        ):
            findings.append(Finding("pulse_range", f"minute {idx}: pulse {m.pulse}"))
    return ValidationReport(findings=tuple(findings))
