"""Request/response applications carried over XADS-protected streams.

Each resource is fetched over its own bidirectional stream. The client
sends ``GET <size>`` (``GET *`` for an endless bulk body) and finishes its
side; the server answers with ``size`` octets of seeded random data and
finishes. On SMAQ connections both directions are sealed in XADS records
with the connection's end-to-end schedule, so middleboxes only ever see
ciphertext; plain QUIC connections carry the bytes as they are.
"""
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from ..crypto.xads import MAX_RECORD_PAYLOAD, XadsReader, XadsWriter
from ..errors import ParameterError
from ..netem.scheduler import derive_seed
from ..transport.connection import Connection
from ..transport.streams import SendStream

ENDLESS = -1
# plaintext produced per refill of a response stream
PRODUCE_CHUNK = 8 * MAX_RECORD_PAYLOAD
LOW_WATERMARK = 64 * 1024


def encode_request(size: int) -> bytes:
    return b"GET *" if size == ENDLESS else b"GET %d" % size


def decode_request(data: bytes) -> int:
    if not data.startswith(b"GET "):
        raise ParameterError(f"bad request {data[:16]!r}")
    arg = data[4:]
    if arg == b"*":
        return ENDLESS
    try:
        size = int(arg)
    except ValueError:
        raise ParameterError(f"bad request size {arg[:16]!r}") from None
    if size < 0:
        raise ParameterError("negative request size")
    return size


class _Clear:
    """Stand-in for an XADS lane on connections without XADS."""

    def seal(self, data: bytes) -> bytes:
        return data

    def feed(self, data: bytes) -> List[bytes]:
        return [data] if data else []


def lane_writer(conn: Connection, sender: str, stream_id: int):
    return _Clear() if conn.xads is None else XadsWriter(conn.xads, sender, stream_id)


def lane_reader(conn: Connection, sender: str, stream_id: int):
    return _Clear() if conn.xads is None else XadsReader(conn.xads, sender, stream_id)


def content(seed: int, stream_id: int) -> random.Random:
    """Generator of the random response body for one stream."""
    return random.Random(derive_seed(seed, f"content/{stream_id}"))


class ResponseServer:
    """Serves requests on every connection it is attached to."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.requests = 0
        self.errors = 0

    def attach(self, conn: Connection) -> None:
        readers: Dict[int, object] = {}
        requests: Dict[int, bytearray] = {}

        def on_data(c: Connection, stream_id: int, data: bytes, fin: bool) -> None:
            reader = readers.get(stream_id)
            if reader is None:
                reader = readers[stream_id] = lane_reader(c, "client", stream_id)
                requests[stream_id] = bytearray()
            for chunk in reader.feed(data):
                requests[stream_id] += chunk
            if fin:
                try:
                    size = decode_request(bytes(requests.pop(stream_id)))
                except ParameterError:
                    self.errors += 1
                    return
                self.requests += 1
                self._respond(c, stream_id, size)

        conn.on_stream_data = on_data

    def _respond(self, conn: Connection, stream_id: int, size: int) -> None:
        writer = lane_writer(conn, "server", stream_id)
        rng = content(self.seed, stream_id)
        remaining = [size]

        def produce(stream: SendStream) -> None:
            n = PRODUCE_CHUNK if remaining[0] == ENDLESS else min(PRODUCE_CHUNK, remaining[0])
            if n:
                stream.write(writer.seal(rng.randbytes(n)))
            if remaining[0] != ENDLESS:
                remaining[0] -= n
                if remaining[0] == 0:
                    stream.write(b"", fin=True)
                    stream.producer = None

        conn.set_stream_producer(stream_id, produce, LOW_WATERMARK)


@dataclass
class Fetch:
    stream_id: int
    size: int
    received: int = 0
    done_at: Optional[int] = None
    body: Optional[bytearray] = None


@dataclass
class FetchClient:
    """Issues requests on one connection and counts decrypted response octets."""

    conn: Connection
    keep_bodies: bool = False
    on_complete: Optional[Callable[["FetchClient", Fetch], None]] = None
    fetches: Dict[int, Fetch] = field(default_factory=dict)
    received: int = 0
    _readers: Dict[int, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.conn.on_stream_data = self._on_data

    def request(self, size: int) -> Fetch:
        conn = self.conn
        sid = conn.get_next_stream_id()
        fetch = Fetch(sid, size, body=bytearray() if self.keep_bodies else None)
        self.fetches[sid] = fetch
        self._readers[sid] = lane_reader(conn, "server", sid)
        conn.send_stream_data(sid, lane_writer(conn, "client", sid).seal(encode_request(size)), fin=True)
        return fetch

    def _on_data(self, conn: Connection, stream_id: int, data: bytes, fin: bool) -> None:
        fetch = self.fetches.get(stream_id)
        if fetch is None:
            return
        for chunk in self._readers[stream_id].feed(data):
            fetch.received += len(chunk)
            self.received += len(chunk)
            if fetch.body is not None:
                fetch.body += chunk
        if fin:
            fetch.done_at = conn.now
            if self.on_complete is not None:
                self.on_complete(self, fetch)

    @property
    def complete(self) -> bool:
        return all(f.done_at is not None for f in self.fetches.values())

    def bodies(self) -> List[bytes]:
        return [bytes(self.fetches[sid].body or b"") for sid in sorted(self.fetches)]
