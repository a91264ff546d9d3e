"""
Timeline helpers: timestamps are integer minutes since a fixed local epoch.
Calendar days start at local midnight.
"""
from datetime import date, datetime, timedelta
from typing import Union

from utils.constants import EPOCH_ISO, MINUTES_PER_DAY

EPOCH = datetime.fromisoformat(EPOCH_ISO)


def parse_date(value: Union[str, date]) -> date:
    """Parse an ISO date string (dates pass through)."""
    if isinstance(value, datetime):
        return value.date()
    if isinstance(value, date):
        return value
    return date.fromisoformat(value)


def to_minutes(value: Union[datetime, date]) -> int:
    """Convert a datetime (or a date at midnight) to epoch minutes."""
    if not isinstance(value, datetime):
        value = datetime(value.year, value.month, value.day)
    return int((value - EPOCH).total_seconds() // 60)


def from_minutes(minutes: int) -> datetime:
    """Convert epoch minutes back to a datetime."""
    return EPOCH + timedelta(minutes=int(minutes))


def day_index(minutes: int) -> int:
    """Calendar-day index of a timestamp."""
    return int(minutes) // MINUTES_PER_DAY


def date_of(minutes: int) -> date:
    """Calendar date of a timestamp."""
    return (EPOCH + timedelta(days=day_index(minutes))).date()


def midnight(day: Union[date, int]) -> int:
    """Timestamp of local midnight starting a calendar day (date or day index)."""
    if isinstance(day, date):
        return to_minutes(day)
    return int(day) * MINUTES_PER_DAY


def day_index_of_date(day: date) -> int:
    """Calendar-day index of a date."""
    return (day - EPOCH.date()).days


def date_of_index(index: int) -> date:
    """Date of a calendar-day index."""
    return EPOCH.date() + timedelta(days=int(index))


def calendar_days_touched(start: int, end: int) -> int:
    """Number of calendar days a [start, end] interval touches."""
    return day_index(end) - day_index(start) + 1


def month_year(day: date) -> str:
    """Month-year label used to group encounters, e.g. '2020-07'."""
    return f"{day.year:04d}-{day.month:02d}"
