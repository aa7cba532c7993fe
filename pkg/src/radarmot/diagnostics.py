"""Process-wide counters for benign edge cases that warrant bookkeeping."""

from collections import Counter

warning_counts: Counter = Counter()


def warn_count(key: str, n: int = 1) -> None:
    warning_counts[key] += n


def reset_warnings() -> None:
    warning_counts.clear()
