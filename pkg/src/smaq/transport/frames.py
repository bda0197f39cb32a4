"""Frame vocabulary and its wire encoding.

Each frame is a type octet followed by type-specific varint fields, using
the RFC 9000 frame type values. Frames also report their encoded size so
the object-level fast path can account octets without serializing.
"""
from typing import List, Sequence, Tuple

from ..errors import ParameterError

MAX_VARINT = (1 << 62) - 1


def varint_size(value: int) -> int:
    if value < 0x40:
        return 1
    if value < 0x4000:
        return 2
    if value < 0x40000000:
        return 4
    if value <= MAX_VARINT:
        return 8
    raise ParameterError(f"{value} does not fit in a varint")


def encode_varint(value: int) -> bytes:
    size = varint_size(value)
    prefix = {1: 0, 2: 1, 4: 2, 8: 3}[size]
    raw = value.to_bytes(size, "big")
    return bytes([raw[0] | (prefix << 6)]) + raw[1:]


def decode_varint(buf: bytes, pos: int) -> Tuple[int, int]:
    """Return (value, new position)."""
    if pos >= len(buf):
        raise ParameterError("truncated varint")
    first = buf[pos]
    size = 1 << (first >> 6)
    if pos + size > len(buf):
        raise ParameterError("truncated varint")
    value = first & 0x3F
    for b in buf[pos + 1:pos + size]:
        value = (value << 8) | b
    return value, pos + size


class FrameType:
    PADDING = 0x00
    PING = 0x01
    ACK = 0x02
    CRYPTO = 0x06
    STREAM = 0x08
    STREAM_FIN = 0x01
    STREAM_LEN = 0x02
    STREAM_OFF = 0x04
    PATH_CHALLENGE = 0x1A
    PATH_RESPONSE = 0x1B
    CONNECTION_CLOSE = 0x1C
    HANDSHAKE_DONE = 0x1E


class Frame:
    __slots__ = ()
    ack_eliciting = True
    probing = False

    def wire_size(self) -> int:
        return len(self.encode())

    def encode(self) -> bytes:
        raise NotImplementedError


class PaddingFrame(Frame):
    __slots__ = ("length",)
    ack_eliciting = False
    probing = True

    def __init__(self, length: int) -> None:
        self.length = length

    def wire_size(self) -> int:
        return self.length

    def encode(self) -> bytes:
        return bytes(self.length)

    def __eq__(self, other):
        return isinstance(other, PaddingFrame) and other.length == self.length

    def __repr__(self):
        return f"PADDING({self.length})"


class PingFrame(Frame):
    __slots__ = ()

    def wire_size(self) -> int:
        return 1

    def encode(self) -> bytes:
        return b"\x01"

    def __eq__(self, other):
        return isinstance(other, PingFrame)

    def __repr__(self):
        return "PING"


class HandshakeDoneFrame(Frame):
    __slots__ = ()

    def wire_size(self) -> int:
        return 1

    def encode(self) -> bytes:
        return b"\x1e"

    def __eq__(self, other):
        return isinstance(other, HandshakeDoneFrame)

    def __repr__(self):
        return "HANDSHAKE_DONE"


class AckFrame(Frame):
    """``ranges`` holds inclusive (low, high) pairs, highest range first."""

    __slots__ = ("ranges", "delay", "_size")
    ack_eliciting = False

    def __init__(self, ranges: Sequence[Tuple[int, int]], delay: int = 0) -> None:
        self.ranges = tuple(ranges)
        self.delay = delay  # microseconds
        self._size = 0

    @property
    def largest(self) -> int:
        return self.ranges[0][1]

    def wire_size(self) -> int:
        if self._size:
            return self._size
        lo, hi = self.ranges[0]
        size = 1 + varint_size(hi) + varint_size(self.delay) + varint_size(len(self.ranges) - 1) + varint_size(hi - lo)
        prev_lo = lo
        for lo, hi in self.ranges[1:]:
            size += varint_size(prev_lo - hi - 2) + varint_size(hi - lo)
            prev_lo = lo
        self._size = size
        return size

    def encode(self) -> bytes:
        lo, hi = self.ranges[0]
        out = [b"\x02", encode_varint(hi), encode_varint(self.delay),
               encode_varint(len(self.ranges) - 1), encode_varint(hi - lo)]
        prev_lo = lo
        for lo, hi in self.ranges[1:]:
            out.append(encode_varint(prev_lo - hi - 2))
            out.append(encode_varint(hi - lo))
            prev_lo = lo
        return b"".join(out)

    def __eq__(self, other):
        return isinstance(other, AckFrame) and (self.ranges, self.delay) == (other.ranges, other.delay)

    def __repr__(self):
        return f"ACK({list(self.ranges)})"


class CryptoFrame(Frame):
    __slots__ = ("offset", "data")

    def __init__(self, offset: int, data: bytes) -> None:
        self.offset = offset
        self.data = data

    def wire_size(self) -> int:
        return 1 + varint_size(self.offset) + varint_size(len(self.data)) + len(self.data)

    def encode(self) -> bytes:
        return b"\x06" + encode_varint(self.offset) + encode_varint(len(self.data)) + self.data

    def __eq__(self, other):
        return isinstance(other, CryptoFrame) and (self.offset, self.data) == (other.offset, other.data)

    def __repr__(self):
        return f"CRYPTO(off={self.offset}, len={len(self.data)})"


class StreamFrame(Frame):
    __slots__ = ("stream_id", "offset", "data", "fin")

    def __init__(self, stream_id: int, offset: int, data: bytes, fin: bool = False) -> None:
        self.stream_id = stream_id
        self.offset = offset
        self.data = data
        self.fin = fin

    def wire_size(self) -> int:
        return (1 + varint_size(self.stream_id) + varint_size(self.offset)
                + varint_size(len(self.data)) + len(self.data))

    def encode(self) -> bytes:
        ftype = FrameType.STREAM | FrameType.STREAM_OFF | FrameType.STREAM_LEN
        if self.fin:
            ftype |= FrameType.STREAM_FIN
        return (bytes([ftype]) + encode_varint(self.stream_id) + encode_varint(self.offset)
                + encode_varint(len(self.data)) + self.data)

    def __eq__(self, other):
        return isinstance(other, StreamFrame) and (
            self.stream_id, self.offset, self.data, self.fin) == (other.stream_id, other.offset, other.data, other.fin)

    def __repr__(self):
        return f"STREAM(id={self.stream_id}, off={self.offset}, len={len(self.data)}{', fin' if self.fin else ''})"


def stream_frame_overhead(stream_id: int, offset: int, length: int) -> int:
    return 1 + varint_size(stream_id) + varint_size(offset) + varint_size(length)


class _PathValidationFrame(Frame):
    __slots__ = ("token",)
    probing = True
    frame_type = 0

    def __init__(self, token: bytes) -> None:
        if len(token) != 8:
            raise ParameterError("path validation token must be 8 octets")
        self.token = token

    def wire_size(self) -> int:
        return 9

    def encode(self) -> bytes:
        return bytes([self.frame_type]) + self.token

    def __eq__(self, other):
        return type(other) is type(self) and other.token == self.token

    def __repr__(self):
        return f"{type(self).__name__[:-5]}({self.token.hex()})"


class PathChallengeFrame(_PathValidationFrame):
    __slots__ = ()
    frame_type = FrameType.PATH_CHALLENGE


class PathResponseFrame(_PathValidationFrame):
    __slots__ = ()
    frame_type = FrameType.PATH_RESPONSE


class ConnectionCloseFrame(Frame):
    __slots__ = ("error_code", "reason")
    ack_eliciting = False

    def __init__(self, error_code: int, reason: str = "") -> None:
        self.error_code = error_code
        self.reason = reason

    def encode(self) -> bytes:
        reason = self.reason.encode()
        return (b"\x1c" + encode_varint(self.error_code) + b"\x00"
                + encode_varint(len(reason)) + reason)

    def __eq__(self, other):
        return isinstance(other, ConnectionCloseFrame) and (
            self.error_code, self.reason) == (other.error_code, other.reason)

    def __repr__(self):
        return f"CONNECTION_CLOSE({self.error_code})"


PING = PingFrame()
HANDSHAKE_DONE = HandshakeDoneFrame()


def encode_frames(frames: Sequence[Frame]) -> bytes:
    return b"".join(f.encode() for f in frames)


def decode_frames(buf: bytes) -> List[Frame]:
    frames: List[Frame] = []
    pos = 0
    end = len(buf)
    while pos < end:
        ftype = buf[pos]
        pos += 1
        if ftype == FrameType.PADDING:
            start = pos - 1
            while pos < end and buf[pos] == 0:
                pos += 1
            frames.append(PaddingFrame(pos - start))
        elif ftype == FrameType.PING:
            frames.append(PING)
        elif ftype == FrameType.HANDSHAKE_DONE:
            frames.append(HANDSHAKE_DONE)
        elif ftype == FrameType.ACK:
            largest, pos = decode_varint(buf, pos)
            delay, pos = decode_varint(buf, pos)
            count, pos = decode_varint(buf, pos)
            first, pos = decode_varint(buf, pos)
            ranges = [(largest - first, largest)]
            low = largest - first
            for _ in range(count):
                gap, pos = decode_varint(buf, pos)
                length, pos = decode_varint(buf, pos)
                high = low - gap - 2
                low = high - length
                if low < 0:
                    raise ParameterError("ACK range below zero")
                ranges.append((low, high))
            frames.append(AckFrame(ranges, delay))
        elif ftype == FrameType.CRYPTO:
            offset, pos = decode_varint(buf, pos)
            length, pos = decode_varint(buf, pos)
            if pos + length > end:
                raise ParameterError("truncated CRYPTO frame")
            frames.append(CryptoFrame(offset, bytes(buf[pos:pos + length])))
            pos += length
        elif FrameType.STREAM <= ftype <= 0x0F:
            stream_id, pos = decode_varint(buf, pos)
            offset = 0
            if ftype & FrameType.STREAM_OFF:
                offset, pos = decode_varint(buf, pos)
            if ftype & FrameType.STREAM_LEN:
                length, pos = decode_varint(buf, pos)
            else:
                length = end - pos
            if pos + length > end:
                raise ParameterError("truncated STREAM frame")
            frames.append(StreamFrame(stream_id, offset, bytes(buf[pos:pos + length]),
                                      bool(ftype & FrameType.STREAM_FIN)))
            pos += length
        elif ftype in (FrameType.PATH_CHALLENGE, FrameType.PATH_RESPONSE):
            if pos + 8 > end:
                raise ParameterError("truncated path validation frame")
            cls = PathChallengeFrame if ftype == FrameType.PATH_CHALLENGE else PathResponseFrame
            frames.append(cls(bytes(buf[pos:pos + 8])))
            pos += 8
        elif ftype == FrameType.CONNECTION_CLOSE:
            code, pos = decode_varint(buf, pos)
            _, pos = decode_varint(buf, pos)
            length, pos = decode_varint(buf, pos)
            frames.append(ConnectionCloseFrame(code, bytes(buf[pos:pos + length]).decode(errors="replace")))
            pos += length
        else:
            raise ParameterError(f"unknown frame type 0x{ftype:02x}")
    return frames
