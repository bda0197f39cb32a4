"""Client side of the handover.

Once its keys are established the client snapshots the connection, offers
the state to the first middlebox over the out-of-band channel and holds back
its own application data. Data the server still sends over the original path
is dropped unacknowledged, so the server resends it through the middleboxes.
The client resumes when a middlebox PINGs it from a new address after the
handshake is confirmed. Without a timely SmaqOk, or on SmaqError, it falls
back to plain end-to-end QUIC.
"""
from typing import Callable, Optional

from ..errors import ParameterError
from ..netem.link import Address
from ..netem.scheduler import ms
from ..transport.connection import ERR_MIGRATION_FAILED, Connection
from .messages import SmaqError, SmaqOk, StateOffer, decode_message, encode_message
from .oob import OobChannel
from .state import create_state, serialize_state

STATE_CREATE_DELAY = 50_000
# first StateOffer retransmission, in OOB RTT estimates; one retransmission
# plus its answer has to fit inside the fallback timeout of 3 estimates
OFFER_RTO_FACTOR = 1.25
# floor for the OOB RTT estimate, so a zero-delay path still leaves the
# middlebox time to restore before the client gives up
MIN_OOB_RTT = 200_000
# after SmaqOk the PING must arrive within this many smoothed RTTs of confirmation
MIGRATION_DEADLINE_RTTS = 4


class HandoverClient:
    """Drives the handover for one client connection.

    ``phase`` moves through: idle, offered, accepted, migrated, and ends in
    migrated, fallback or failed.
    """

    def __init__(self, conn: Connection, oob: OobChannel, middlebox: Address, oob_rtt: int = ms(0.8),
                 on_ready: Optional[Callable[["HandoverClient"], None]] = None) -> None:
        self.conn = conn
        self.oob = oob
        self.middlebox = middlebox
        self.oob_rtt = max(oob_rtt, MIN_OOB_RTT)
        self.on_ready = on_ready
        self.phase = "idle"
        self.fallback_reason: Optional[str] = None
        self.session_id = conn.rng.randbytes(8)
        self.state_created_at: Optional[int] = None
        self.migrated_at: Optional[int] = None
        self.original_server: Address = conn.peer_addr
        self._request: Optional[bytes] = None
        self._ready_fired = False
        conn.on_keys_established = self._on_keys_established
        conn.on_migrated = self._on_migrated
        conn.on_confirmed = self._on_confirmed
        conn.on_path_unchanged = self._on_path_unchanged

    @property
    def now(self) -> int:
        return self.conn.now

    @property
    def migration_time(self) -> Optional[int]:
        if self.migrated_at is None or self.state_created_at is None:
            return None
        return self.migrated_at - self.state_created_at

    def _event(self, name: str, **fields) -> None:
        self.conn._event(name, **fields)

    def _on_keys_established(self, conn: Connection) -> None:
        if not conn.smaq_negotiated:
            self._event("smaq-not-negotiated")
            self._fallback("not-negotiated")
            return
        conn.app_blocked = True
        conn.drop_stream_data_from = self.original_server
        conn.scheduler.call_later(STATE_CREATE_DELAY, self._offer_state)

    def _offer_state(self) -> None:
        conn = self.conn
        if conn.closed or self.phase != "idle":
            return
        state = create_state(conn)
        self.state_created_at = self.now
        self._event("state-created", session=self.session_id.hex())
        msg = encode_message(StateOffer(self.session_id, serialize_state(state)))
        self._request = self.oob.request(self.middlebox, msg, int(OFFER_RTO_FACTOR * self.oob_rtt), self._on_reply)
        self.phase = "offered"
        conn.call_at(self.now + 3 * self.oob_rtt, self._offer_timeout)

    def _offer_timeout(self) -> None:
        if self.phase == "offered":
            self.oob.cancel(self._request)
            self._fallback("no-response")

    def _on_reply(self, data: bytes) -> None:
        self._request = None
        if self.phase != "offered":
            return
        try:
            reply = decode_message(data)
        except ParameterError:
            self._fallback("malformed-reply")
            return
        if isinstance(reply, SmaqOk) and reply.session_id == self.session_id:
            self.phase = "accepted"
            self._event("smaq-ok", session=self.session_id.hex())
            if self.conn.confirmed:
                self._arm_migration_deadline()
        elif isinstance(reply, SmaqError):
            self._event("smaq-error", reason=reply.reason)
            self._fallback(reply.reason)

    def _on_confirmed(self, conn: Connection) -> None:
        if self.phase == "accepted":
            self._arm_migration_deadline()
        elif self.phase == "fallback":
            self._ready()

    def _arm_migration_deadline(self) -> None:
        conn = self.conn
        deadline = self.now + MIGRATION_DEADLINE_RTTS * max(conn.cc.rtt.smoothed, self.oob_rtt)
        conn.call_at(deadline, self._migration_deadline)

    def _migration_deadline(self) -> None:
        if self.phase == "accepted":
            self.phase = "failed"
            self._event("migration-deadline", session=self.session_id.hex())
            self.conn.close(ERR_MIGRATION_FAILED, "middlebox never took over")

    def _on_path_unchanged(self, conn: Connection, src: Address) -> None:
        # the offer reached the middlebox after all, but its answer did not
        # reach us in time: the server is being moved to a path we gave up on
        if self.phase == "fallback" and src[0] == self.middlebox[0] and not conn.closed:
            self.phase = "failed"
            self._event("late-restore", src=src)
            conn.close(ERR_MIGRATION_FAILED, "middlebox restored after fallback")

    def _on_migrated(self, conn: Connection, address: Address) -> None:
        if self.phase not in ("accepted", "offered"):
            return
        self.phase = "migrated"
        self.migrated_at = self.now
        conn.app_blocked = False
        self._ready()

    def _fallback(self, reason: str) -> None:
        conn = self.conn
        self.phase = "fallback"
        self.fallback_reason = reason
        conn.migration_allowed = False
        conn.app_blocked = False
        conn.drop_stream_data_from = None
        if reason != "not-negotiated":
            self._event("smaq-fallback", reason=reason)
        if conn.confirmed:
            self._ready()

    def _ready(self) -> None:
        if not self._ready_fired and self.on_ready is not None:
            self._ready_fired = True
            self.on_ready(self)
