"""Calendar months as integer indices (year * 12 + month - 1)."""

from __future__ import annotations

from .errors import ConfigurationError


def month_index(date: str) -> int:
    """Parse ``YYYY-MM`` into an absolute month index."""
    try:
        year_s, month_s = date.strip().split("-")
        year, month = int(year_s), int(month_s)
    except ValueError:
        raise ConfigurationError(f"bad date {date!r}, expected YYYY-MM") from None
    if not 1 <= month <= 12:
        raise ConfigurationError(f"bad month in date {date!r}")
    return year * 12 + month - 1


def format_month(index: int) -> str:
    """Inverse of :func:`month_index`."""
    index = int(index)
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


def year_of(index: int) -> int:
    return int(index) // 12
