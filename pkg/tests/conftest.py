from datetime import date

import pytest

from harforge.align import AlignedMinute
from harforge.core import MinuteIndex, SleepState, default_taxonomy


@pytest.fixture(scope="session")
def taxonomy():
    return default_taxonomy()


def make_minute(
    index,
    day=date(2024, 3, 4),
    user_id="u001",
    pulse=None,
    steps=0,
    distance_m=0.0,
    sleep=SleepState.UNKNOWN,
    schedule_label=None,
):
    """Build one aligned minute with sensible defaults for tests."""
    return AlignedMinute(
        user_id=user_id,
        minute=MinuteIndex(day=day, index=index),
        pulse=pulse,
        steps=steps,
        distance_m=distance_m,
        sleep=sleep,
        schedule_label=schedule_label,
    )


@pytest.fixture
def minute_factory():
    return make_minute
