"""Out-of-band request/response channel between the client and middleboxes.

The channel is pre-keyed (the peers share a key from an earlier session), so
requests carry data from the first datagram. Requests are retransmitted with
exponential backoff until a response arrives or the caller cancels; the
responder caches its answer so a retransmitted request is answered again
without re-running the handler.

Datagram payload: ``kind (0 request / 1 response) | request id (8) | nonce (12)
| AES-128-GCM(message)``.
"""
from typing import Callable, Dict, Optional, Tuple

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ..netem.link import Address, Datagram

KIND_REQUEST = 0
KIND_RESPONSE = 1
REQUEST_ID_LEN = 8
NONCE_LEN = 12
OVERHEAD = 1 + REQUEST_ID_LEN + NONCE_LEN + 16


class _Pending:
    __slots__ = ("dst", "payload", "on_response", "rto", "attempts", "cancelled")

    def __init__(self, dst, payload, on_response, rto) -> None:
        self.dst = dst
        self.payload = payload
        self.on_response = on_response
        self.rto = rto
        self.attempts = 0
        self.cancelled = False


# handler(src, message, respond) answers now or later by calling respond(bytes)
Handler = Callable[[Address, bytes, Callable[[bytes], None]], None]


class OobChannel:
    def __init__(self, node, port: int, key: bytes, handler: Optional[Handler] = None,
                 max_attempts: int = 8) -> None:
        self.node = node
        self.address = node.bind(port, self)
        self.scheduler = node.network.scheduler
        self.rng = self.scheduler.rng(f"oob/{node.name}:{port}")
        self._aead = AESGCM(key)
        self.handler = handler
        self.max_attempts = max_attempts
        self._pending: Dict[bytes, _Pending] = {}
        self._answers: Dict[Tuple[Address, bytes], Optional[bytes]] = {}
        self.retransmissions = 0
        self.rejected = 0

    # ------------------------------------------------------------ requester

    def request(self, dst: Address, message: bytes, rto: int,
                on_response: Callable[[bytes], None]) -> bytes:
        """Send ``message`` reliably; returns the request id (for cancel())."""
        rid = self.rng.randbytes(REQUEST_ID_LEN)
        p = _Pending(dst, self._seal(KIND_REQUEST, rid, message), on_response, rto)
        self._pending[rid] = p
        self._transmit(rid)
        return rid

    def cancel(self, rid: bytes) -> None:
        p = self._pending.pop(rid, None)
        if p is not None:
            p.cancelled = True

    def _transmit(self, rid: bytes) -> None:
        p = self._pending.get(rid)
        if p is None or p.cancelled:
            return
        if p.attempts >= self.max_attempts:
            del self._pending[rid]
            return
        if p.attempts:
            self.retransmissions += 1
        delay = p.rto << p.attempts
        p.attempts += 1
        self._send(p.dst, p.payload)
        self.scheduler.call_later(delay, self._transmit, rid)

    # ------------------------------------------------------------ wire

    def _seal(self, kind: int, rid: bytes, message: bytes) -> bytes:
        nonce = self.rng.randbytes(NONCE_LEN)
        head = bytes([kind]) + rid
        return head + nonce + self._aead.encrypt(nonce, message, head)

    def _send(self, dst: Address, payload: bytes) -> None:
        self.node.send(Datagram(self.address, dst, payload, len(payload)))

    def datagram_received(self, datagram: Datagram) -> None:
        data = datagram.payload
        if not isinstance(data, bytes) or len(data) < OVERHEAD:
            self.rejected += 1
            return
        head, nonce, body = data[:1 + REQUEST_ID_LEN], data[1 + REQUEST_ID_LEN:OVERHEAD - 16], data[OVERHEAD - 16:]
        try:
            message = self._aead.decrypt(nonce, body, head)
        except InvalidTag:
            self.rejected += 1
            return
        kind, rid = head[0], head[1:]
        if kind == KIND_RESPONSE:
            p = self._pending.pop(rid, None)
            if p is not None and not p.cancelled:
                p.on_response(message)
        elif kind == KIND_REQUEST:
            self._on_request(datagram.src, rid, message)
        else:
            self.rejected += 1

    def _on_request(self, src: Address, rid: bytes, message: bytes) -> None:
        key = (src, rid)
        if key in self._answers:
            answer = self._answers[key]
            if answer is not None:  # None while the handler is still working
                self._send(src, answer)
            return
        self._answers[key] = None
        if self.handler is None:
            return

        def respond(reply: bytes) -> None:
            sealed = self._seal(KIND_RESPONSE, rid, reply)
            self._answers[key] = sealed
            self._send(src, sealed)

        self.handler(src, message, respond)
