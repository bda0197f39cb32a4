"""QUIC-like connection state machine.

One class serves all four roles: the two endpoints and the two middlebox
facades restored from handed-over state. Handshake messages are modeled
(random values stand in for the key exchange and certificates) but keys,
packet numbers, loss recovery and migration follow RFC 9000/9002.
"""
import hashlib
import hmac
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, Deque, Dict, List, Optional, Tuple

from ..congestion import (
    MAX_DATAGRAM_SIZE, PACKET_THRESHOLD, Pacer, make_controller, retransmission_timer,
)
from ..crypto.keys import (
    CIPHER_AES128GCM_SHA256, QUIC_VERSION_1, ConnectionSecrets, PacketKeys,
    derive_connection_secrets, initial_secrets,
)
from ..crypto.xads import Secret, XadsKeySchedule
from ..errors import IntegrityError, ParameterError
from ..netem.link import Address, Datagram
from ..netem.scheduler import ms, seconds
from .frames import (
    HANDSHAKE_DONE, PING, AckFrame, ConnectionCloseFrame, CryptoFrame, Frame, HandshakeDoneFrame,
    PaddingFrame, PathChallengeFrame, PathResponseFrame, PingFrame, StreamFrame, stream_frame_overhead,
)
from .packet import (
    AEAD_TAG_LEN, MIN_INITIAL_SIZE, Packet, Space, decode_packet, encode_packet, header_size,
)
from .params import SMAQ, TransportParameters, decode_transport_parameters, encode_transport_parameters
from .rangeset import RangeSet
from .streams import ReceiveStream, SendStream

CID_LEN = 8
RESET_TOKEN_LEN = 16
MAX_ACK_RANGES = 32
MAX_RECV_RANGES = 256

MSG_CLIENT_HELLO = 0x01
MSG_SERVER_HELLO = 0x02
MSG_ENCRYPTED_EXTENSIONS = 0x08
MSG_FINISHED = 0x14

ERR_NO_ERROR = 0x0
ERR_PROTOCOL_VIOLATION = 0xA
ERR_MIGRATION_FAILED = 0x100
ERR_IDLE_TIMEOUT = 0x101


class Role(Enum):
    CLIENT = "client"
    SERVER = "server"
    CLIENT_FACING = "middlebox-client-facing"
    SERVER_FACING = "middlebox-server-facing"

    @property
    def is_client(self) -> bool:
        """True for roles that act as the QUIC client on the wire."""
        return self in (Role.CLIENT, Role.SERVER_FACING)

    @property
    def sender(self) -> str:
        return "client" if self.is_client else "server"


class HandshakeState(IntEnum):
    START = 0
    INITIAL_SENT = 1
    KEYS_ESTABLISHED = 2
    CONFIRMED = 3


@dataclass
class ConnectionConfig:
    smaq: bool = False
    congestion: str = "newreno"
    initial_rtt: Optional[int] = None
    backoff_disabled_until_migration: bool = False
    cwnd_cap: Optional[int] = None
    pacing: bool = True
    max_ack_delay: int = ms(25)
    idle_timeout: int = seconds(30)
    wire_format: bool = False
    quic_version: int = QUIC_VERSION_1
    cipher_suite: int = CIPHER_AES128GCM_SHA256
    path_validation_attempts: int = 3
    # middlebox facades trust the peer address change without validation
    trusted_migration: bool = False
    extra_transport_parameters: Dict[str, object] = field(default_factory=dict)


class SentPacket:
    __slots__ = ("pn", "time", "size", "in_flight", "frames")

    def __init__(self, pn: int, time: int, size: int, in_flight: bool, frames: List[Frame]) -> None:
        self.pn = pn
        self.time = time
        self.size = size
        self.in_flight = in_flight
        self.frames = frames


class PacketSpace:
    __slots__ = ("space", "next_pn", "largest_acked", "sent", "recv_ranges", "largest_recv",
                 "largest_recv_time", "ack_pending", "ack_now", "ack_deadline", "send_keys",
                 "recv_keys", "loss_time", "crypto_queue", "crypto_received", "discarded",
                 "last_ack_eliciting", "in_flight_count")

    def __init__(self, space: Space) -> None:
        self.space = space
        self.next_pn = 0
        self.largest_acked = -1
        self.sent: Dict[int, SentPacket] = {}
        self.recv_ranges = RangeSet()
        self.largest_recv = -1
        self.largest_recv_time = 0
        self.ack_pending = 0
        self.ack_now = False
        self.ack_deadline: Optional[int] = None
        self.send_keys: Optional[PacketKeys] = None
        self.recv_keys: Optional[PacketKeys] = None
        self.loss_time: Optional[int] = None
        self.crypto_queue: Deque[CryptoFrame] = deque()
        self.crypto_received = 0
        self.discarded = False
        self.last_ack_eliciting: Optional[int] = None
        self.in_flight_count = 0

    @property
    def highest_sent(self) -> int:
        return self.next_pn - 1

    def ack_due(self, now: int) -> bool:
        return self.ack_pending > 0 and (self.ack_now or (self.ack_deadline is not None and now >= self.ack_deadline))

    def has_in_flight(self) -> bool:
        return self.in_flight_count > 0


class PathValidation:
    __slots__ = ("address", "token", "attempts", "deadline", "started")

    def __init__(self, address: Address, token: bytes, started: int) -> None:
        self.address = address
        self.token = token
        self.attempts = 0
        self.deadline = 0
        self.started = started


def _finished(secret: Secret, transcript: bytes) -> bytes:
    return hmac.new(secret.value, transcript, hashlib.sha256).digest()


class Connection:
    def __init__(self, role: Role, node, port: int, peer_addr: Address,
                 config: Optional[ConnectionConfig] = None, name: Optional[str] = None) -> None:
        self.role = role
        self.node = node
        self.port = port
        self.local_addr: Address = (node.name, port)
        self.peer_addr: Address = peer_addr
        self.config = config or ConnectionConfig()
        self.name = name or f"{node.name}:{port}/{role.value}"
        network = node.network
        self.scheduler = network.scheduler
        self.trace = network.trace
        self.rng = self.scheduler.rng(f"conn/{self.name}")

        cfg = self.config
        self.cc = make_controller(cfg.congestion, cwnd_cap=cfg.cwnd_cap, initial_rtt=cfg.initial_rtt,
                                  backoff_disabled_until_migration=cfg.backoff_disabled_until_migration)
        self.pacer = Pacer()
        self.spaces = {s: PacketSpace(s) for s in Space}
        self.handshake_state = HandshakeState.START
        self.quic_version = cfg.quic_version
        self.cipher_suite = cfg.cipher_suite
        self.key_phase = 0

        self.host_cid = b""
        self.peer_cid = b""
        self.original_dcid = b""
        self.cid_sequence = {"client": 0, "server": 0}
        self.stateless_reset_tokens: Dict[bytes, bytes] = {}
        self.local_params: TransportParameters = {}
        self.peer_params: TransportParameters = {}
        self.secrets: Optional[ConnectionSecrets] = None
        self.traffic_secrets: Dict[str, Secret] = {}
        self.hp_keys: Dict[str, bytes] = {}
        self.xads: Optional[XadsKeySchedule] = None

        self.send_streams: Dict[int, SendStream] = {}
        self.recv_streams: Dict[int, ReceiveStream] = {}
        self._stream_queue: Deque[int] = deque()
        self._next_stream_id = 0 if role.is_client else 1

        self._pending_handshake_done = False
        self._handshake_done_acked = False
        self._ch = b""
        self._sh = b""
        self._share = b""
        self._address_validated = role.is_client
        self._bytes_received = 0
        self._bytes_sent = 0

        self.closed = False
        self.close_reason: Optional[str] = None
        self.last_activity = 0
        self.path_validation: Optional[PathValidation] = None
        self.migrations = 0
        self.app_blocked = False
        # cleared by the client when a handover fell back to plain QUIC
        self.migration_allowed = True
        self.drop_stream_data_from: Optional[Address] = None
        self.dropped_stream_packets = 0
        # when set and returning False, stream packets are dropped unacknowledged
        self.stream_admission: Optional[Callable[[], bool]] = None
        self.refused_stream_packets = 0
        self.unknown_acks = 0
        self.auth_failures = 0
        self.duplicates = 0
        self.early_path_packets = 0

        # migration probing (middlebox facades)
        self._probe_active = False
        self._probe_deadline: Optional[int] = None
        self._probe_started = 0
        self._probe_timeout = cfg.idle_timeout
        self.probe_count = 0
        self.peer_migrated = False

        self._timer_at: Optional[int] = None
        self._flush_scheduled = False
        self._pacing_at: Optional[int] = None
        self._deadline_hooks: List[Tuple[int, Callable[[], None]]] = []

        # upward callbacks
        self.on_stream_data: Optional[Callable[["Connection", int, bytes, bool], None]] = None
        self.on_keys_established: Optional[Callable[["Connection"], None]] = None
        self.on_confirmed: Optional[Callable[["Connection"], None]] = None
        self.on_migrated: Optional[Callable[["Connection", Address], None]] = None
        # client only: a packet from a new address that did not move the path
        self.on_path_unchanged: Optional[Callable[["Connection", Address], None]] = None
        self.on_handshake_done_received: Optional[Callable[["Connection"], None]] = None
        self.on_closed: Optional[Callable[["Connection", str], None]] = None
        self.on_new_cid: Optional[Callable[["Connection", bytes], None]] = None

    # ------------------------------------------------------------------ helpers

    @property
    def now(self) -> int:
        return self.scheduler.now

    def _event(self, event: str, **fields) -> None:
        self.trace.event(self.now, self.node.name, event, conn=self.name, **fields)

    @property
    def smaq_negotiated(self) -> bool:
        return bool(self.local_params.get(SMAQ)) and bool(self.peer_params.get(SMAQ))

    @property
    def confirmed(self) -> bool:
        return self.handshake_state == HandshakeState.CONFIRMED

    @property
    def active_cids(self) -> List[Tuple[str, bytes, int]]:
        own = self.role.sender
        other = "server" if own == "client" else "client"
        return [(own, self.host_cid, self.cid_sequence[own]),
                (other, self.peer_cid, self.cid_sequence[other])]

    def _random(self, n: int) -> bytes:
        return self.rng.randbytes(n)

    def _build_local_params(self) -> None:
        p: TransportParameters = {
            "initial_source_connection_id": self.host_cid,
            "max_idle_timeout": self.config.idle_timeout // 1_000_000,
            "max_ack_delay": self.config.max_ack_delay // 1_000_000,
            "max_udp_payload_size": MAX_DATAGRAM_SIZE,
        }
        if not self.role.is_client:
            token = self._random(RESET_TOKEN_LEN)
            p["stateless_reset_token"] = token
            p["original_destination_connection_id"] = self.original_dcid
            self.stateless_reset_tokens[self.host_cid] = token
        if self.config.smaq:
            p[SMAQ] = True
        p.update(self.config.extra_transport_parameters)
        self.local_params = p

    def _install_app_keys(self, secrets: ConnectionSecrets) -> None:
        self.traffic_secrets = {"client": secrets.client_application, "server": secrets.server_application}
        self.hp_keys = {"client": secrets.client_hp, "server": secrets.server_hp}
        self._install_traffic_keys()

    def _install_traffic_keys(self) -> None:
        own = self.role.sender
        other = "server" if own == "client" else "client"
        app = self.spaces[Space.APPLICATION]
        app.send_keys = PacketKeys(self.traffic_secrets[own], self.hp_keys[own])
        app.recv_keys = PacketKeys(self.traffic_secrets[other], self.hp_keys[other])

    def _discard_space(self, space: Space) -> None:
        s = self.spaces[space]
        if s.discarded:
            return
        for p in s.sent.values():
            if p.in_flight:
                self.cc.on_packet_discarded(p.size)
        s.sent.clear()
        s.in_flight_count = 0
        s.crypto_queue.clear()
        s.loss_time = None
        s.last_ack_eliciting = None
        s.send_keys = s.recv_keys = None
        s.discarded = True
        self.cc.pto_count = 0

    # ------------------------------------------------------------------ handshake

    def connect(self) -> None:
        """Client: send the Initial flight."""
        if not self.role.is_client or self.handshake_state != HandshakeState.START:
            raise ParameterError("connect() is only valid on a fresh client")
        self.host_cid = self._random(CID_LEN)
        self.original_dcid = self._random(CID_LEN)
        self.peer_cid = self.original_dcid
        self.stateless_reset_tokens[self.host_cid] = self._random(RESET_TOKEN_LEN)
        client_initial, server_initial = initial_secrets(self.original_dcid)
        init = self.spaces[Space.INITIAL]
        init.send_keys = PacketKeys(client_initial)
        init.recv_keys = PacketKeys(server_initial)
        self._build_local_params()
        self._share = self._random(32)
        self._ch = (bytes([MSG_CLIENT_HELLO]) + self._random(32) + self._share
                    + encode_transport_parameters(self.local_params))
        init.crypto_queue.append(CryptoFrame(0, self._ch))
        self.handshake_state = HandshakeState.INITIAL_SENT
        self.last_activity = self.now
        self._event("initial-sent", peer=self.peer_addr, smaq=int(self.config.smaq))
        self._flush()

    def accept(self, original_dcid: bytes, client_cid: bytes) -> None:
        """Server: prepare to process a client's first Initial."""
        self.original_dcid = original_dcid
        self.peer_cid = client_cid
        self.host_cid = self._random(CID_LEN)
        client_initial, server_initial = initial_secrets(original_dcid)
        init = self.spaces[Space.INITIAL]
        init.send_keys = PacketKeys(server_initial)
        init.recv_keys = PacketKeys(client_initial)
        self._build_local_params()
        self.last_activity = self.now

    def _on_crypto(self, space: Space, frame: CryptoFrame) -> None:
        s = self.spaces[space]
        if frame.offset < s.crypto_received:
            return  # retransmission of an already processed message
        s.crypto_received = frame.offset + len(frame.data)
        data = frame.data
        if not data:
            return
        kind = data[0]
        if kind == MSG_CLIENT_HELLO and not self.role.is_client and space == Space.INITIAL:
            self._server_on_client_hello(data)
        elif kind == MSG_SERVER_HELLO and self.role.is_client and space == Space.INITIAL:
            self._client_on_server_hello(data)
        elif kind == MSG_ENCRYPTED_EXTENSIONS and self.role.is_client and space == Space.HANDSHAKE:
            self._client_on_server_finished(data)
        elif kind == MSG_FINISHED and not self.role.is_client and space == Space.HANDSHAKE:
            self._server_on_client_finished(data)
        else:
            self.close(ERR_PROTOCOL_VIOLATION, "unexpected handshake message")

    def _server_on_client_hello(self, ch: bytes) -> None:
        self._ch = ch
        client_share = ch[33:65]
        self.peer_params, _ = decode_transport_parameters(ch, 65)
        self._share = self._random(32)
        self._sh = bytes([MSG_SERVER_HELLO]) + self._random(32) + self._share
        shared = hashlib.sha256(client_share + self._share).digest()
        self.secrets = derive_connection_secrets(shared, self._ch, self._sh)
        hs = self.spaces[Space.HANDSHAKE]
        hs.send_keys = PacketKeys(self.secrets.server_handshake)
        hs.recv_keys = PacketKeys(self.secrets.client_handshake)
        self._install_app_keys(self.secrets)
        if self.smaq_negotiated:
            self.xads = XadsKeySchedule.from_exporter(self.secrets.exporter_master)
        self.spaces[Space.INITIAL].crypto_queue.append(CryptoFrame(0, self._sh))
        ee = bytes([MSG_ENCRYPTED_EXTENSIONS]) + encode_transport_parameters(self.local_params)
        fin = bytes([MSG_FINISHED]) + _finished(self.secrets.server_handshake, self._ch + self._sh + ee)
        hs.crypto_queue.append(CryptoFrame(0, ee + fin))
        self.handshake_state = HandshakeState.KEYS_ESTABLISHED
        self._event("server-hello", peer=self.peer_addr, smaq=int(self.smaq_negotiated))

    def _client_on_server_hello(self, sh: bytes) -> None:
        self._sh = sh
        shared = hashlib.sha256(self._share + sh[33:65]).digest()
        self.secrets = derive_connection_secrets(shared, self._ch, self._sh)
        hs = self.spaces[Space.HANDSHAKE]
        hs.send_keys = PacketKeys(self.secrets.client_handshake)
        hs.recv_keys = PacketKeys(self.secrets.server_handshake)

    def _client_on_server_finished(self, data: bytes) -> None:
        fin_at = len(data) - 1 - 32
        ee, fin = data[:fin_at], data[fin_at:]
        if fin[0] != MSG_FINISHED or not hmac.compare_digest(
                fin[1:], _finished(self.secrets.server_handshake, self._ch + self._sh + ee)):
            self.close(ERR_PROTOCOL_VIOLATION, "bad server finished")
            return
        self.peer_params, _ = decode_transport_parameters(ee, 1)
        token = self.peer_params.get("stateless_reset_token")
        if isinstance(token, bytes):
            self.stateless_reset_tokens[self.peer_cid] = token
        self._install_app_keys(self.secrets)
        if self.smaq_negotiated:
            self.xads = XadsKeySchedule.from_exporter(self.secrets.exporter_master)
        client_fin = bytes([MSG_FINISHED]) + _finished(self.secrets.client_handshake, self._ch + self._sh + data)
        self.spaces[Space.HANDSHAKE].crypto_queue.append(CryptoFrame(0, client_fin))
        self._discard_space(Space.INITIAL)
        self.handshake_state = HandshakeState.KEYS_ESTABLISHED
        self._event("keys-established", peer=self.peer_addr, smaq=int(self.smaq_negotiated))
        if self.on_keys_established is not None:
            self.on_keys_established(self)

    def _server_on_client_finished(self, data: bytes) -> None:
        # transcript check is symmetric with the client's; the stub accepts it as-is
        self._address_validated = True
        self._discard_space(Space.INITIAL)
        self._discard_space(Space.HANDSHAKE)
        self.handshake_state = HandshakeState.CONFIRMED
        self._pending_handshake_done = True
        self._event("handshake-confirmed", peer=self.peer_addr)
        if self.on_confirmed is not None:
            self.on_confirmed(self)

    def _on_handshake_done(self) -> None:
        if self.on_handshake_done_received is not None:
            self.on_handshake_done_received(self)
        if self.role != Role.CLIENT or self.confirmed:
            return
        self.handshake_state = HandshakeState.CONFIRMED
        self._discard_space(Space.HANDSHAKE)
        self._event("handshake-confirmed", peer=self.peer_addr)
        if self.on_confirmed is not None:
            self.on_confirmed(self)

    def send_handshake_done(self) -> None:
        """Queue a HANDSHAKE_DONE (used by the client-facing facade to forward one)."""
        self._pending_handshake_done = True
        self._schedule_flush()

    # ------------------------------------------------------------------ streams

    def get_next_stream_id(self) -> int:
        sid = self._next_stream_id
        self._next_stream_id += 4
        return sid

    def _send_stream(self, stream_id: int) -> SendStream:
        stream = self.send_streams.get(stream_id)
        if stream is None:
            stream = self.send_streams[stream_id] = SendStream(stream_id)
            if stream_id >= self._next_stream_id and (stream_id & 1) == (self._next_stream_id & 1):
                self._next_stream_id = stream_id + 4
        return stream

    def send_stream_data(self, stream_id: int, data: bytes, fin: bool = False) -> None:
        if self.closed:
            raise ParameterError("connection is closed")
        stream = self._send_stream(stream_id)
        stream.write(data, fin)
        self._enqueue_stream(stream_id)

    def set_stream_producer(self, stream_id: int, producer: Callable[[SendStream], None],
                            low_watermark: int) -> None:
        stream = self._send_stream(stream_id)
        stream.producer = producer
        stream.low_watermark = low_watermark
        self._enqueue_stream(stream_id)

    def _enqueue_stream(self, stream_id: int) -> None:
        if stream_id not in self._stream_queue:
            self._stream_queue.append(stream_id)
        self._schedule_flush()

    def unsent_stream_octets(self) -> int:
        return sum(s.unsent for s in self.send_streams.values())

    def _on_stream_frame(self, frame: StreamFrame) -> None:
        stream = self.recv_streams.get(frame.stream_id)
        if stream is None:
            stream = self.recv_streams[frame.stream_id] = ReceiveStream(frame.stream_id)
        data, ended = stream.receive(frame.offset, frame.data, frame.fin)
        if (data or ended) and self.on_stream_data is not None:
            self.on_stream_data(self, frame.stream_id, data, ended)

    # ------------------------------------------------------------------ receive

    def _keys_for(self, space: Space, key_phase: int) -> Optional[PacketKeys]:
        s = self.spaces[space]
        return None if s.discarded else s.recv_keys

    def datagram_received(self, datagram: Datagram) -> None:
        if self.closed:
            return
        payload = datagram.payload
        if isinstance(payload, Packet):
            pkt = payload
            s = self.spaces[pkt.space]
            if s.recv_keys is None or pkt.key_tag != s.recv_keys.tag:
                self.auth_failures += 1
                return
        else:
            try:
                pkt = decode_packet(payload, self._keys_for)
            except (IntegrityError, ParameterError):
                self.auth_failures += 1
                return
        self._bytes_received += datagram.size
        self._process_packet(pkt, datagram.src)

    def _process_packet(self, pkt: Packet, src: Address) -> None:
        now = self.now
        space = pkt.space
        s = self.spaces[space]
        pn = pkt.pn
        frames = pkt.frames
        ack_eliciting = False
        non_probing = False
        has_stream = False
        for f in frames:
            if f.ack_eliciting:
                ack_eliciting = True
            if not f.probing:
                non_probing = True
            if type(f) is StreamFrame:
                has_stream = True

        if pn in s.recv_ranges:
            self.duplicates += 1
            if ack_eliciting:
                s.ack_pending += 1
                s.ack_now = True
                self._schedule_flush()
            return

        if has_stream and self.drop_stream_data_from is not None and src == self.drop_stream_data_from:
            # data from the original server path during handover: drop unacknowledged
            self.dropped_stream_packets += 1
            return
        if has_stream and self.stream_admission is not None and not self.stream_admission():
            # receive buffer full: the sender will see this packet as lost
            self.refused_stream_packets += 1
            return

        if space == Space.HANDSHAKE and not self.role.is_client:
            # a client Handshake packet proves address ownership
            self._address_validated = True
            self._discard_space(Space.INITIAL)

        if src != self.peer_addr and space == Space.APPLICATION:
            self._on_packet_from_new_address(src, pn, s, non_probing)
        elif src == self.peer_addr and self._probe_active and not self.peer_migrated:
            self._on_peer_migrated()

        out_of_order = pn != s.largest_recv + 1 and s.largest_recv >= 0
        s.recv_ranges.add(pn)
        if len(s.recv_ranges) > MAX_RECV_RANGES:
            s.recv_ranges.shift()
        if pn > s.largest_recv:
            s.largest_recv = pn
            s.largest_recv_time = now
        self.last_activity = now

        for f in frames:
            ftype = type(f)
            if ftype is StreamFrame:
                self._on_stream_frame(f)
            elif ftype is AckFrame:
                self._on_ack(s, f)
            elif ftype is CryptoFrame:
                self._on_crypto(space, f)
            elif ftype is HandshakeDoneFrame:
                self._on_handshake_done()
            elif ftype is PathChallengeFrame:
                self._send_immediate([PathResponseFrame(f.token)], src)
            elif ftype is PathResponseFrame:
                self._on_path_response(f, src)
            elif ftype is ConnectionCloseFrame:
                self._terminate(f"peer closed: {f.reason or f.error_code}")
                return
            if self.closed:
                return

        if ack_eliciting and not s.discarded:
            s.ack_pending += 1
            if space != Space.APPLICATION or s.ack_pending >= 2 or out_of_order:
                s.ack_now = True
            elif s.ack_deadline is None:
                s.ack_deadline = now + self.config.max_ack_delay
        self._flush()

    # ------------------------------------------------------------------ migration

    def _on_packet_from_new_address(self, src: Address, pn: int, s: PacketSpace, non_probing: bool) -> None:
        highest = pn > s.largest_recv
        if not (non_probing and highest):
            return
        if self.config.trusted_migration:
            self._adopt_path(src, "migrated")
        elif self.role == Role.CLIENT:
            if self.confirmed and self.smaq_negotiated and self.migration_allowed:
                self._adopt_path(src, "migrated")
            else:
                self.early_path_packets += 1
                self._event("path-unchanged", src=src, confirmed=int(self.confirmed))
                if self.on_path_unchanged is not None:
                    self.on_path_unchanged(self, src)
        elif self.role == Role.SERVER:
            if not self.confirmed:
                self.early_path_packets += 1
                self._event("path-unchanged", src=src, confirmed=0)
            elif self.path_validation is None or self.path_validation.address != src:
                self._start_path_validation(src)

    def _adopt_path(self, address: Address, event: str) -> None:
        old = self.peer_addr
        self.peer_addr = address
        self.migrations += 1
        self.cc.reset()
        self.cc.on_migration_complete()
        self.pacer = Pacer()
        # packets sent on the old path still get retransmitted if lost, but
        # their fate says nothing about the new path's congestion state
        for sp in self.spaces.values():
            for p in sp.sent.values():
                p.in_flight = False
            sp.in_flight_count = 0
        self._event(event, old=old, new=address)
        if self.on_migrated is not None:
            self.on_migrated(self, address)

    def _start_path_validation(self, address: Address) -> None:
        pv = PathValidation(address, self._random(8), self.now)
        self.path_validation = pv
        self._event("path-challenge", new=address)
        self._send_path_challenge()

    def _path_validation_interval(self) -> int:
        # PTO for a fresh path (initial RTT), as the new path has no samples yet
        rtt = self.config.initial_rtt or 333 * 1_000_000
        return rtt + max(4 * (rtt // 2), ms(1))

    def _send_path_challenge(self) -> None:
        pv = self.path_validation
        pv.attempts += 1
        pv.deadline = self.now + self._path_validation_interval()
        self._send_immediate([PathChallengeFrame(pv.token)], pv.address)

    def _on_path_response(self, frame: PathResponseFrame, src: Address) -> None:
        pv = self.path_validation
        if pv is None or frame.token != pv.token:
            self._event("path-response-mismatch", src=src)
            return
        self.path_validation = None
        self._adopt_path(pv.address, "path-validated")

    def _path_validation_timeout(self) -> None:
        pv = self.path_validation
        if pv.attempts >= self.config.path_validation_attempts:
            self._event("path-validation-failed", new=pv.address)
            self.close(ERR_MIGRATION_FAILED, "path validation failed")
        else:
            self._send_path_challenge()

    def start_migration_probe(self, timeout: Optional[int] = None) -> None:
        """Facade: PING the peer until it migrates to this address."""
        self._probe_active = True
        self.peer_migrated = False
        self._probe_started = self.now
        if timeout is not None:
            self._probe_timeout = timeout
        self._send_probe_ping()

    def _send_probe_ping(self) -> None:
        self.probe_count += 1
        self._send_immediate([PING], self.peer_addr)
        self._probe_deadline = retransmission_timer(self.cc, self.now)
        if not self.cc.backoff_disabled_until_migration:
            self.cc.pto_count += 1
        self._arm_timer()

    def _on_peer_migrated(self) -> None:
        self.peer_migrated = True
        self._probe_active = False
        self._probe_deadline = None
        self.cc.pto_count = 0
        self.cc.on_migration_complete()
        self._event("peer-migrated", peer=self.peer_addr, pings=self.probe_count)
        if self.on_migrated is not None:
            self.on_migrated(self, self.peer_addr)

    def _probe_timer(self) -> None:
        if self.now - self._probe_started >= self._probe_timeout:
            self._probe_active = False
            self._probe_deadline = None
            self._event("migration-timeout", peer=self.peer_addr, pings=self.probe_count)
            # the peer never used this path, so there is nobody to notify
            self._terminate("peer never migrated")
        else:
            self._send_probe_ping()

    # ------------------------------------------------------------------ acks and loss

    def _on_ack(self, s: PacketSpace, frame: AckFrame) -> None:
        now = self.now
        largest = frame.largest
        if largest > s.highest_sent:
            # acknowledges numbers this endpoint never sent (e.g. a peer's
            # acknowledgement aimed at the pre-handover sender); ignore
            self.unknown_acks += 1
            return
        sent = s.sent
        # sent is keyed in ascending packet number order
        ascending = frame.ranges[::-1]
        i = 0
        hit: List[int] = []
        for pn in sent:
            if pn > largest:
                break
            while ascending[i][1] < pn:
                i += 1
            if ascending[i][0] <= pn:
                hit.append(pn)
        if not hit:
            return
        newly = [sent.pop(pn) for pn in hit]
        if largest > s.largest_acked:
            s.largest_acked = largest
        newest = max(newly, key=lambda p: p.pn)
        if newest.pn == largest:
            max_delay = self.config.max_ack_delay if self.confirmed else 0
            self.cc.rtt.update(now - newest.time, frame.delay * 1000, max_delay)
        acked_in_flight = 0
        newest_in_flight_time = -1
        for p in newly:
            if p.in_flight:
                s.in_flight_count -= 1
                acked_in_flight += p.size
                if p.time > newest_in_flight_time:
                    newest_in_flight_time = p.time
            for f in p.frames:
                ftype = type(f)
                if ftype is StreamFrame:
                    stream = self.send_streams.get(f.stream_id)
                    if stream is not None:
                        stream.on_acked(f.offset, len(f.data), f.fin)
                elif ftype is HandshakeDoneFrame:
                    self._handshake_done_acked = True
        if acked_in_flight:
            self.cc.on_ack(acked_in_flight, newest_in_flight_time, now)
        self._detect_losses(s)
        if not (self.role.is_client and self.handshake_state < HandshakeState.KEYS_ESTABLISHED):
            self.cc.pto_count = 0

    def _detect_losses(self, s: PacketSpace) -> None:
        now = self.now
        s.loss_time = None
        loss_delay = self.cc.rtt.loss_delay()
        lost_send_time = now - loss_delay
        lost: List[SentPacket] = []
        for pn, p in s.sent.items():
            if pn > s.largest_acked:
                break
            if pn <= s.largest_acked - PACKET_THRESHOLD or p.time <= lost_send_time:
                lost.append(p)
            else:
                t = p.time + loss_delay
                if s.loss_time is None or t < s.loss_time:
                    s.loss_time = t
        if lost:
            self._on_packets_lost(s, lost)

    def _on_packets_lost(self, s: PacketSpace, lost: List[SentPacket]) -> None:
        lost_octets = 0
        largest_time = -1
        for p in lost:
            del s.sent[p.pn]
            if p.in_flight:
                s.in_flight_count -= 1
                lost_octets += p.size
                if p.time > largest_time:
                    largest_time = p.time
            self._requeue(s, p.frames)
        if lost_octets:
            self.cc.on_loss(lost_octets, largest_time, self.now)

    def _requeue(self, s: PacketSpace, frames: List[Frame]) -> None:
        for f in frames:
            ftype = type(f)
            if ftype is StreamFrame:
                stream = self.send_streams.get(f.stream_id)
                if stream is not None:
                    stream.on_lost(f.offset, len(f.data), f.fin)
                    if f.stream_id not in self._stream_queue:
                        self._stream_queue.append(f.stream_id)
            elif ftype is CryptoFrame:
                if not s.discarded:
                    s.crypto_queue.append(f)
            elif ftype is HandshakeDoneFrame:
                if not self._handshake_done_acked:
                    self._pending_handshake_done = True

    def _pto_space(self) -> Optional[PacketSpace]:
        best = None
        for s in self.spaces.values():
            if s.discarded or s.last_ack_eliciting is None or not s.has_in_flight():
                continue
            if best is None or s.last_ack_eliciting < best.last_ack_eliciting:
                best = s
        return best

    def _loss_deadline(self) -> Tuple[Optional[int], Optional[PacketSpace], bool]:
        """(deadline, space, is_time_threshold)."""
        best_time, best_space = None, None
        for s in self.spaces.values():
            if s.loss_time is not None and (best_time is None or s.loss_time < best_time):
                best_time, best_space = s.loss_time, s
        if best_time is not None:
            return best_time, best_space, True
        s = self._pto_space()
        if s is None:
            return None, None, False
        max_ack_delay = self.config.max_ack_delay if (s.space == Space.APPLICATION and self.confirmed) else 0
        return retransmission_timer(self.cc, s.last_ack_eliciting, max_ack_delay), s, False

    def _on_loss_timer(self, s: PacketSpace, time_threshold: bool) -> None:
        if time_threshold:
            self._detect_losses(s)
            return
        self.cc.pto_count += 1
        self._event_pto(s)
        probe: List[Frame] = []
        for p in s.sent.values():
            if p.in_flight:
                probe = [f for f in p.frames if type(f) in (StreamFrame, CryptoFrame, HandshakeDoneFrame)]
                break
        if not probe:
            probe = [PING]
        dst = self.peer_addr
        self._send_packet(s, probe, dst, in_flight=True, pad=(s.space == Space.INITIAL and self.role.is_client))

    def _event_pto(self, s: PacketSpace) -> None:
        if self.trace.packets:
            self._event("pto", space=s.space.name.lower(), count=self.cc.pto_count)

    # ------------------------------------------------------------------ send

    def _schedule_flush(self) -> None:
        if not self._flush_scheduled and not self.closed:
            self._flush_scheduled = True
            self.scheduler.call_at(self.now, self._scheduled_flush)

    def _scheduled_flush(self) -> None:
        self._flush_scheduled = False
        self._flush()

    def _ack_frame(self, s: PacketSpace, now: int) -> AckFrame:
        delay = (now - s.largest_recv_time) // 1000
        s.ack_pending = 0
        s.ack_now = False
        s.ack_deadline = None
        return AckFrame(s.recv_ranges.descending(MAX_ACK_RANGES), delay)

    def _amplification_blocked(self) -> bool:
        return not self._address_validated and self._bytes_sent >= 3 * self._bytes_received

    def _send_packet(self, s: PacketSpace, frames: List[Frame], dst: Address,
                     in_flight: bool = True, pad: bool = False) -> Packet:
        now = self.now
        pn = s.next_pn
        s.next_pn += 1
        key_tag = s.send_keys.tag
        pkt = Packet(s.space, self.quic_version, self.peer_cid, self.host_cid, pn, frames,
                     self.key_phase, key_tag)
        if pad and pkt.size < MIN_INITIAL_SIZE:
            frames.append(PaddingFrame(MIN_INITIAL_SIZE - pkt.size))
            pkt.size = MIN_INITIAL_SIZE
        if self.config.wire_format:
            payload = encode_packet(pkt, s.send_keys)
            size = len(payload)
        else:
            payload = pkt
            size = pkt.size
        ack_eliciting = False
        for f in frames:
            if f.ack_eliciting:
                ack_eliciting = True
                break
        if ack_eliciting:
            s.sent[pn] = SentPacket(pn, now, size, in_flight, frames)
            if in_flight:
                s.in_flight_count += 1
                self.cc.on_packet_sent(size)
                s.last_ack_eliciting = now
        self._bytes_sent += size
        self.node.send(Datagram(self.local_addr, dst, payload, size))
        return pkt

    def _send_immediate(self, frames: List[Frame], dst: Address) -> None:
        s = self.spaces[Space.APPLICATION]
        if s.send_keys is None or self.closed:
            return
        self._send_packet(s, list(frames), dst, in_flight=False)

    def _flush(self) -> None:
        if self.closed:
            return
        now = self.now
        for space in (Space.INITIAL, Space.HANDSHAKE):
            s = self.spaces[space]
            if s.discarded or s.send_keys is None:
                continue
            while (s.crypto_queue or s.ack_due(now)) and not self._amplification_blocked():
                frames: List[Frame] = []
                if s.ack_pending:
                    frames.append(self._ack_frame(s, now))
                while s.crypto_queue:
                    frames.append(s.crypto_queue.popleft())
                self._send_packet(s, frames, self.peer_addr,
                                  pad=(space == Space.INITIAL and self.role.is_client))
        app = self.spaces[Space.APPLICATION]
        if app.send_keys is not None and self.handshake_state >= HandshakeState.KEYS_ESTABLISHED:
            self._flush_application(app, now)
        self._arm_timer()

    def _flush_application(self, s: PacketSpace, now: int) -> None:
        cc = self.cc
        pacing = self.config.pacing
        hdr = header_size(Space.APPLICATION, self.peer_cid, b"", s.next_pn) + AEAD_TAG_LEN
        budget_total = MAX_DATAGRAM_SIZE - hdr - 4  # room for packet number growth
        self._pacing_at = None
        while not self._amplification_blocked():
            frames: List[Frame] = []
            budget = budget_total
            data_allowed = bool(self._stream_queue) and not self.app_blocked
            if data_allowed and not cc.can_send(MAX_DATAGRAM_SIZE):
                data_allowed = False
            if data_allowed and pacing:
                t = self.pacer.next_send_time(now)
                if t > now:
                    data_allowed = False
                    self._pacing_at = t
            if s.ack_pending and (s.ack_due(now) or data_allowed or self._pending_handshake_done):
                ack = self._ack_frame(s, now)
                frames.append(ack)
                budget -= ack.wire_size()
            if self._pending_handshake_done:
                self._pending_handshake_done = False
                frames.append(HANDSHAKE_DONE)
                budget -= 1
            if data_allowed:
                budget = self._fill_stream_frames(frames, budget)
            if not frames:
                break
            has_data = len(frames) > 1 or type(frames[0]) is not AckFrame
            self._send_packet(s, frames, self.peer_addr, in_flight=has_data)
            if has_data and pacing:
                self.pacer.on_sent(now, MAX_DATAGRAM_SIZE - budget, cc.pacing_rate())
            if not has_data:
                break

    def _fill_stream_frames(self, frames: List[Frame], budget: int) -> int:
        queue = self._stream_queue
        while queue and budget > 8:
            sid = queue[0]
            stream = self.send_streams[sid]
            overhead = stream_frame_overhead(sid, stream.write_offset, budget)
            chunk = stream.next_chunk(budget - overhead)
            if chunk is None:
                queue.popleft()
                continue
            offset, data, fin = chunk
            frames.append(StreamFrame(sid, offset, data, fin))
            budget -= overhead + len(data)
            queue.rotate(-1)
            if not stream.has_pending() and stream.producer is None:
                queue.remove(sid)
        return budget

    # ------------------------------------------------------------------ timers

    def call_at(self, when: int, hook: Callable[[], None]) -> None:
        """Run ``hook`` at ``when`` unless the connection closes first."""
        self._deadline_hooks.append((when, hook))
        self._arm_timer()

    def _next_deadline(self) -> Optional[int]:
        deadline = self.last_activity + self.config.idle_timeout
        loss, _, _ = self._loss_deadline()
        if loss is not None and loss < deadline:
            deadline = loss
        app = self.spaces[Space.APPLICATION]
        if app.ack_pending and app.ack_deadline is not None and app.ack_deadline < deadline:
            deadline = app.ack_deadline
        if self._pacing_at is not None and self._pacing_at < deadline:
            deadline = self._pacing_at
        if self.path_validation is not None and self.path_validation.deadline < deadline:
            deadline = self.path_validation.deadline
        if self._probe_deadline is not None and self._probe_deadline < deadline:
            deadline = self._probe_deadline
        for when, _ in self._deadline_hooks:
            if when < deadline:
                deadline = when
        return deadline

    def _arm_timer(self) -> None:
        if self.closed:
            return
        deadline = self._next_deadline()
        if deadline is None:
            return
        if self._timer_at is None or deadline < self._timer_at:
            self._timer_at = deadline
            self.scheduler.call_at(deadline, self._on_timer, deadline)

    def _on_timer(self, scheduled: int) -> None:
        if self.closed or scheduled != self._timer_at:
            return
        self._timer_at = None
        now = self.now
        if now >= self.last_activity + self.config.idle_timeout:
            self._event("idle-timeout", peer=self.peer_addr)
            self._terminate("idle timeout")
            return
        if self._deadline_hooks:
            due = [h for h in self._deadline_hooks if h[0] <= now]
            if due:
                self._deadline_hooks = [h for h in self._deadline_hooks if h[0] > now]
                for _, hook in due:
                    hook()
                    if self.closed:
                        return
        if self.path_validation is not None and now >= self.path_validation.deadline:
            self._path_validation_timeout()
            if self.closed:
                return
        if self._probe_deadline is not None and now >= self._probe_deadline:
            self._probe_timer()
            if self.closed:
                return
        deadline, s, time_threshold = self._loss_deadline()
        if deadline is not None and now >= deadline:
            self._on_loss_timer(s, time_threshold)
        self._flush()

    # ------------------------------------------------------------------ close

    def close(self, error_code: int = ERR_NO_ERROR, reason: str = "") -> None:
        if self.closed:
            return
        s = self.spaces[Space.APPLICATION]
        if s.send_keys is not None:
            self._send_packet(s, [ConnectionCloseFrame(error_code, reason)], self.peer_addr, in_flight=False)
        self._terminate(reason or "closed")

    def _terminate(self, reason: str) -> None:
        if self.closed:
            return
        self.closed = True
        self.close_reason = reason
        self._probe_deadline = None
        self._event("closed", peer=self.peer_addr, reason=reason)
        if self.on_closed is not None:
            self.on_closed(self, reason)
