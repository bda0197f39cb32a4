from bisect import bisect_left
from typing import Iterator, List, Optional, Tuple


class RangeSet:
    """Sorted, disjoint, inclusive integer ranges."""

    __slots__ = ("_ranges",)

    def __init__(self, ranges: Optional[List[Tuple[int, int]]] = None) -> None:
        self._ranges: List[List[int]] = []
        for lo, hi in ranges or ():
            self.add(lo, hi)

    def add(self, lo: int, hi: Optional[int] = None) -> None:
        if hi is None:
            hi = lo
        r = self._ranges
        # fast path: extend or append at the end
        if not r or lo > r[-1][1] + 1:
            if not r or lo > r[-1][1]:
                r.append([lo, hi])
                return
        elif lo >= r[-1][0] and lo <= r[-1][1] + 1:
            if hi > r[-1][1]:
                r[-1][1] = hi
            return
        i = bisect_left(r, [lo, lo])
        if i > 0 and r[i - 1][1] + 1 >= lo:
            i -= 1
        j = i
        new_lo, new_hi = lo, hi
        while j < len(r) and r[j][0] <= hi + 1:
            new_lo = min(new_lo, r[j][0])
            new_hi = max(new_hi, r[j][1])
            j += 1
        r[i:j] = [[new_lo, new_hi]]

    def __contains__(self, value: int) -> bool:
        r = self._ranges
        if not r or value > r[-1][1]:
            return False
        i = bisect_left(r, [value + 1, value + 1]) - 1
        return i >= 0 and r[i][0] <= value <= r[i][1]

    def covers(self, lo: int, hi: int) -> bool:
        r = self._ranges
        i = bisect_left(r, [lo + 1, lo + 1]) - 1
        return i >= 0 and r[i][0] <= lo and hi <= r[i][1]

    def missing(self, lo: int, hi: int) -> Iterator[Tuple[int, int]]:
        """Yield the sub-ranges of [lo, hi] not in the set."""
        cursor = lo
        for a, b in self._ranges:
            if b < cursor:
                continue
            if a > hi:
                break
            if a > cursor:
                yield cursor, a - 1
            cursor = max(cursor, b + 1)
            if cursor > hi:
                return
        if cursor <= hi:
            yield cursor, hi

    def shift(self) -> Tuple[int, int]:
        lo, hi = self._ranges.pop(0)
        return lo, hi

    def trim_below(self, value: int) -> None:
        r = self._ranges
        while r and r[0][1] < value:
            r.pop(0)
        if r and r[0][0] < value:
            r[0][0] = value

    def descending(self, limit: int) -> List[Tuple[int, int]]:
        return [(lo, hi) for lo, hi in reversed(self._ranges[-limit:])]

    @property
    def first(self) -> Optional[Tuple[int, int]]:
        return tuple(self._ranges[0]) if self._ranges else None

    @property
    def last(self) -> Optional[Tuple[int, int]]:
        return tuple(self._ranges[-1]) if self._ranges else None

    def __len__(self) -> int:
        return len(self._ranges)

    def __iter__(self):
        return (tuple(r) for r in self._ranges)

    def __eq__(self, other) -> bool:
        return isinstance(other, RangeSet) and self._ranges == other._ranges

    def __repr__(self) -> str:
        return f"RangeSet({[tuple(r) for r in self._ranges]})"
