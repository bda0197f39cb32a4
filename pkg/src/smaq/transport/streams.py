"""Ordered byte streams (RFC 9000 stream semantics, flow control disabled)."""
from collections import deque
from typing import Callable, Deque, Dict, Optional, Tuple

from ..errors import StreamClosedError
from .rangeset import RangeSet


class SendStream:
    __slots__ = ("stream_id", "_buf", "_base", "_next", "_acked", "_retransmit",
                 "fin_offset", "fin_sent", "fin_acked", "producer", "low_watermark")

    def __init__(self, stream_id: int) -> None:
        self.stream_id = stream_id
        self._buf = bytearray()  # octets from _base onwards, not yet acknowledged
        self._base = 0
        self._next = 0  # next never-sent offset
        self._acked = RangeSet()
        self._retransmit: Deque[Tuple[int, int]] = deque()
        self.fin_offset: Optional[int] = None
        self.fin_sent = False
        self.fin_acked = False
        # called with the stream when unsent data drops below low_watermark
        self.producer: Optional[Callable[["SendStream"], None]] = None
        self.low_watermark = 0

    @property
    def write_offset(self) -> int:
        return self._base + len(self._buf)

    @property
    def unsent(self) -> int:
        return self.write_offset - self._next

    @property
    def buffered(self) -> int:
        return len(self._buf)

    @property
    def finished(self) -> bool:
        return self.fin_offset is not None

    @property
    def done(self) -> bool:
        return self.fin_acked and self._base == self.fin_offset

    def write(self, data: bytes, fin: bool = False) -> None:
        if self.fin_offset is not None:
            raise StreamClosedError(f"stream {self.stream_id} already finished")
        self._buf += data
        if fin:
            self.fin_offset = self.write_offset

    def has_pending(self) -> bool:
        if self._retransmit or self._next < self.write_offset:
            return True
        return self.fin_offset is not None and not self.fin_sent

    def next_chunk(self, max_len: int) -> Optional[Tuple[int, bytes, bool]]:
        """(offset, data, fin) for the next frame, retransmissions first."""
        while self._retransmit:
            lo, hi = self._retransmit[0]
            if lo < self._base:
                lo = self._base
            if lo > hi:
                self._retransmit.popleft()
                continue
            for a, b in self._acked.missing(lo, hi):
                end = min(b, a + max_len - 1)
                if end < hi:
                    self._retransmit[0] = (end + 1, hi)
                else:
                    self._retransmit.popleft()
                data = bytes(self._buf[a - self._base:end + 1 - self._base])
                fin = self.fin_offset is not None and end + 1 == self.fin_offset
                return a, data, fin
            self._retransmit.popleft()
        if self.producer is not None and self.fin_offset is None and self.unsent <= self.low_watermark:
            self.producer(self)
        if self._next < self.write_offset:
            start = self._next
            end = min(self.write_offset, start + max_len)
            self._next = end
            fin = self.fin_offset is not None and end == self.fin_offset
            if fin:
                self.fin_sent = True
            return start, bytes(self._buf[start - self._base:end - self._base]), fin
        if self.fin_offset is not None and not self.fin_sent:
            self.fin_sent = True
            return self.fin_offset, b"", True
        return None

    def on_acked(self, offset: int, length: int, fin: bool) -> None:
        if fin:
            self.fin_acked = True
        if length:
            self._acked.add(offset, offset + length - 1)
        first = self._acked.first
        if first is not None and first[0] <= self._base:
            end = first[1] + 1
            if end > self._base:
                del self._buf[:end - self._base]
                self._base = end
            self._acked.shift()

    def on_lost(self, offset: int, length: int, fin: bool) -> None:
        if length:
            self._retransmit.append((offset, offset + length - 1))
        if fin and not self.fin_acked:
            if length == 0:
                self.fin_sent = False
            elif self.fin_offset == offset + length:
                pass  # resent together with the data range

    def has_data_in(self, lo: int) -> bool:
        return lo < self.write_offset


class ReceiveStream:
    __slots__ = ("stream_id", "next_offset", "_pending", "fin_offset", "finished")

    def __init__(self, stream_id: int) -> None:
        self.stream_id = stream_id
        self.next_offset = 0
        self._pending: Dict[int, bytes] = {}
        self.fin_offset: Optional[int] = None
        self.finished = False

    def receive(self, offset: int, data: bytes, fin: bool) -> Tuple[bytes, bool]:
        """Return newly contiguous data and whether the stream just ended."""
        if fin:
            self.fin_offset = offset + len(data)
        end = offset + len(data)
        if end > self.next_offset and data:
            if offset < self.next_offset:
                data = data[self.next_offset - offset:]
                offset = self.next_offset
            old = self._pending.get(offset)
            if old is None or len(old) < len(data):
                self._pending[offset] = data
        out = []
        advanced = False
        while True:
            chunk = self._pending.pop(self.next_offset, None)
            if chunk is None:
                if not advanced or not self._pending:
                    break
                advanced = False
                # a buffered fragment may overlap the newly delivered prefix
                overlap = [o for o in self._pending if o < self.next_offset]
                if not overlap:
                    break
                for o in overlap:
                    c = self._pending.pop(o)
                    if o + len(c) > self.next_offset:
                        trimmed = c[self.next_offset - o:]
                        cur = self._pending.get(self.next_offset)
                        if cur is None or len(cur) < len(trimmed):
                            self._pending[self.next_offset] = trimmed
                continue
            out.append(chunk)
            self.next_offset += len(chunk)
            advanced = True
        ended = False
        if not self.finished and self.fin_offset is not None and self.next_offset >= self.fin_offset:
            self.finished = True
            ended = True
        return b"".join(out), ended
