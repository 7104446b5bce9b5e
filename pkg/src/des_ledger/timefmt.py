"""RFC 3339 millisecond timestamps and ISO 8601 durations."""

from __future__ import annotations

import calendar
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

_TIMESTAMP = re.compile(r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})\.(\d{3})Z$")
_DURATION = re.compile(
    r"^P(?!$)(?:(\d+)Y)?(?:(\d+)M)?(?:(\d+)W)?(?:(\d+)D)?"
    r"(?:T(?=\d)(?:(\d+)H)?(?:(\d+)M)?(?:(\d+(?:\.\d+)?)S)?)?$"
)


def parse_timestamp(value: str) -> datetime:
    """Parse a ``YYYY-MM-DDTHH:MM:SS.mmmZ`` string.

    Any other precision or offset raises ``ValueError``; timestamps are never
    silently normalised because the sealed bytes must stay deterministic.
    """
    if not isinstance(value, str):
        raise ValueError("timestamp must be a string")
    m = _TIMESTAMP.match(value)
    if m is None:
        raise ValueError(f"{value!r} is not an RFC 3339 UTC timestamp with millisecond precision")
    y, mo, d, h, mi, s, ms = (int(g) for g in m.groups())
    return datetime(y, mo, d, h, mi, s, ms * 1000, tzinfo=timezone.utc)


def is_timestamp(value: object) -> bool:
    try:
        parse_timestamp(value)  # type: ignore[arg-type]
    except ValueError:
        return False
    return True


def format_timestamp(value: datetime) -> str:
    if value.tzinfo is None:
        raise ValueError("naive datetime; attach a timezone first")
    value = value.astimezone(timezone.utc)
    return value.strftime("%Y-%m-%dT%H:%M:%S.") + f"{value.microsecond // 1000:03d}Z"


def utc_now() -> str:
    return format_timestamp(datetime.now(timezone.utc))


def normalize_rfc3339(value: str) -> str:
    """Convert an arbitrary RFC 3339 timestamp (any offset, any fraction) to the
    millisecond ``Z`` form. Used only by importers, never by event parsing."""
    m = re.match(
        r"^(\d{4}-\d{2}-\d{2})[Tt ](\d{2}:\d{2}:\d{2})(?:\.(\d+))?([Zz]|[+-]\d{2}:\d{2})$", value
    )
    if m is None:
        raise ValueError(f"{value!r} is not an RFC 3339 timestamp")
    date, clock, frac, offset = m.groups()
    frac = (frac or "").ljust(6, "0")[:6]
    offset = "+00:00" if offset in ("Z", "z") else offset
    parsed = datetime.fromisoformat(f"{date}T{clock}.{frac}{offset}")
    return format_timestamp(parsed)


@dataclass(frozen=True)
class Duration:
    months: int = 0
    seconds: float = 0.0

    def add_to(self, start: datetime) -> datetime:
        total = start.month - 1 + self.months
        year, month = start.year + total // 12, total % 12 + 1
        day = min(start.day, calendar.monthrange(year, month)[1])
        return start.replace(year=year, month=month, day=day) + timedelta(seconds=self.seconds)


def parse_duration(value: str) -> Duration:
    m = _DURATION.match(value) if isinstance(value, str) else None
    if m is None:
        raise ValueError(f"{value!r} is not an ISO 8601 duration")
    years, months, weeks, days, hours, minutes, seconds = m.groups()
    n = lambda g: int(g) if g else 0  # noqa: E731
    return Duration(
        months=12 * n(years) + n(months),
        seconds=(7 * n(weeks) + n(days)) * 86400
        + n(hours) * 3600
        + n(minutes) * 60
        + (float(seconds) if seconds else 0.0),
    )


def duration_at_least(value: str, minimum: str, anchor: datetime | None = None) -> bool:
    """True when ``value`` spans at least ``minimum`` measured from ``anchor``."""
    anchor = anchor or datetime(2000, 1, 31, tzinfo=timezone.utc)
    return parse_duration(value).add_to(anchor) >= parse_duration(minimum).add_to(anchor)
