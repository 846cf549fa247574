import os
import re
from typing import Iterable, List, Tuple

from .config import PS_PER_SECOND


def ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def safe_filename(name: str) -> str:
    cleaned = re.sub(r"[<>:\"/\\\\|?*=,\s]+", "_", name)
    return cleaned.strip("._- ") or "scenario"


def seconds_to_ps(seconds: float) -> int:
    """Convert a duration in seconds to integer picoseconds (round half to even)."""
    return int(round(seconds * PS_PER_SECOND))


def ps_to_seconds(ps: int) -> float:
    return ps / PS_PER_SECOND


def format_ps(ps: int) -> str:
    """Exact decimal rendering of a picosecond count as seconds."""
    sign = "-" if ps < 0 else ""
    ps = abs(ps)
    return f"{sign}{ps // PS_PER_SECOND}.{ps % PS_PER_SECOND:012d}"


def merge_intervals(intervals: Iterable[Tuple[int, int]]) -> List[Tuple[int, int]]:
    merged: List[Tuple[int, int]] = []
    for start, end in sorted(intervals):
        if end <= start:
            continue
        if merged and start <= merged[-1][1]:
            if end > merged[-1][1]:
                merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return merged


def covered_within(merged: List[Tuple[int, int]], lo: int, hi: int) -> int:
    """Length of the part of [lo, hi) covered by already merged intervals."""
    total = 0
    for start, end in merged:
        if end <= lo:
            continue
        if start >= hi:
            break
        total += min(end, hi) - max(start, lo)
    return total
