"""Middlebox (PEP) side of the handover.

A middlebox accepts serialized connection state over the out-of-band
channel, restores it into two facades and splices their streams:

* the client-facing facade impersonates the server toward the client,
* the server-facing facade impersonates the client toward the server.

Both facades PING their peer until it migrates to the middlebox. With a
second middlebox configured (``next_hop``), the server-facing side is handed
over once more: the forwarded state names this middlebox as the client, and
the server-facing facade waits for the next middlebox to migrate onto it
instead of probing the server itself. It falls back to probing the server if
the next middlebox rejects the state or never answers.
"""
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional

from ..crypto.keys import CIPHER_AES128GCM_SHA256, QUIC_VERSION_1
from ..errors import ParameterError, StateFormatError
from ..netem.link import Address
from ..netem.scheduler import ms, seconds
from ..transport.connection import Connection, Role
from ..transport.endpoint import QuicEndpoint
from ..transport.params import SUPPORTED_TRANSPORT_PARAMETERS
from .facade import facade_config, restore_facade
from .messages import (
    REASON_MALFORMED, SmaqError, SmaqOk, StateOffer, decode_message, encode_message,
)
from .oob import OobChannel
from .state import SmaqState, check_support, deserialize_state, serialize_state

QUIC_PORT = 443
OOB_PORT = 4434


@dataclass
class MiddleboxConfig:
    versions: FrozenSet[int] = frozenset({QUIC_VERSION_1})
    ciphers: FrozenSet[int] = frozenset({CIPHER_AES128GCM_SHA256})
    transport_parameters: FrozenSet[str] = SUPPORTED_TRANSPORT_PARAMETERS
    # smoothed RTT of earlier connections over each adjacent hop
    client_side_rtt: Optional[int] = None
    server_side_rtt: Optional[int] = None
    client_side_congestion: str = "newreno"
    server_side_congestion: str = "newreno"
    client_side_cwnd_cap: Optional[int] = None
    server_side_cwnd_cap: Optional[int] = None
    # OOB address of the next middlebox toward the server, if any
    next_hop: Optional[Address] = None
    next_hop_rtt: int = ms(500)
    restore_delay: int = 100_000
    probe_timeout: int = seconds(10)
    # per-direction splice buffer; stream packets beyond it are dropped
    buffer_limit: int = 4 * 1024 * 1024
    wire_format: bool = False
    record_material: bool = False


class Splice:
    """One handed-over connection: two facades and the byte pipe between them."""

    def __init__(self, box: "Middlebox", session_id: bytes, state: SmaqState) -> None:
        self.box = box
        self.session_id = session_id
        self.state = state
        cfg = box.config
        node = box.node
        tag = session_id.hex()[:8]
        self.client_facing = restore_facade(
            state, Role.CLIENT_FACING, node, box.quic.port,
            facade_config(cfg.client_side_rtt, cfg.client_side_congestion, cfg.client_side_cwnd_cap,
                          wire_format=cfg.wire_format),
            name=f"{node.name}/cf-{tag}")
        self.server_facing = restore_facade(
            state, Role.SERVER_FACING, node, box.quic.port,
            facade_config(cfg.server_side_rtt, cfg.server_side_congestion, cfg.server_side_cwnd_cap,
                          trusted_migration=cfg.next_hop is not None, wire_format=cfg.wire_format),
            name=f"{node.name}/sf-{tag}")
        self.max_buffered = 0
        self.forwarded = {"upstream": 0, "downstream": 0}
        self.next_hop_request: Optional[bytes] = None
        self.closed = False

        cf, sf = self.client_facing, self.server_facing
        box.quic.register(cf.host_cid, cf)  # packets addressed to the server's CID
        box.quic.register(sf.host_cid, sf)  # packets addressed to the client's CID
        cf.on_stream_data = self._upstream
        sf.on_stream_data = self._downstream
        limit = cfg.buffer_limit
        cf.stream_admission = lambda: sf.unsent_stream_octets() < limit
        sf.stream_admission = lambda: cf.unsent_stream_octets() < limit
        sf.on_handshake_done_received = lambda _c: cf.send_handshake_done()
        cf.on_closed = sf.on_closed = self._on_facade_closed
        sf.on_migrated = self._on_server_side_migrated

    # -------------------------------------------------------------- start

    def start(self) -> None:
        cfg = self.box.config
        self.client_facing.start_migration_probe(cfg.probe_timeout)
        if cfg.next_hop is None:
            self.server_facing.start_migration_probe(cfg.probe_timeout)
            return
        # hand the server side over once more; the next middlebox sees us as the client
        self.server_facing.app_blocked = True
        forwarded = self.state.with_client_address(self.box.quic.address)
        msg = encode_message(StateOffer(self.session_id, serialize_state(forwarded)))
        self.next_hop_request = self.box.oob.request(cfg.next_hop, msg, 2 * cfg.next_hop_rtt, self._on_next_hop_reply)
        self.server_facing.call_at(self.box.now + 3 * cfg.next_hop_rtt, self._next_hop_deadline)
        self.box.event("state-forwarded", to=cfg.next_hop, session=self.session_id.hex())

    def _on_next_hop_reply(self, data: bytes) -> None:
        self.next_hop_request = None
        try:
            reply = decode_message(data)
        except ParameterError:
            reply = SmaqError(self.session_id, REASON_MALFORMED)
        if isinstance(reply, SmaqOk):
            self.box.event("next-hop-ok", session=self.session_id.hex())
        else:
            self.box.event("next-hop-error", session=self.session_id.hex(), reason=getattr(reply, "reason", "?"))
            self._probe_server_directly()

    def _next_hop_deadline(self) -> None:
        if self.next_hop_request is not None:
            self.box.oob.cancel(self.next_hop_request)
            self.next_hop_request = None
            self.box.event("next-hop-timeout", session=self.session_id.hex())
            self._probe_server_directly()

    def _probe_server_directly(self) -> None:
        sf = self.server_facing
        if self.closed or sf.closed or sf.migrations:
            return
        sf.config.trusted_migration = False
        sf.app_blocked = False
        sf.start_migration_probe(self.box.config.probe_timeout)

    def _on_server_side_migrated(self, conn: Connection, address: Address) -> None:
        conn.app_blocked = False

    # -------------------------------------------------------------- splice

    def _forward(self, egress: Connection, stream_id: int, data: bytes, fin: bool, direction: str) -> None:
        if egress.closed:
            return
        egress.send_stream_data(stream_id, data, fin)
        self.forwarded[direction] += len(data)
        if self.box.material is not None and data:
            self.box.material.append(data)
        buffered = egress.unsent_stream_octets()
        if buffered > self.max_buffered:
            self.max_buffered = buffered

    def _upstream(self, conn: Connection, stream_id: int, data: bytes, fin: bool) -> None:
        self._forward(self.server_facing, stream_id, data, fin, "upstream")

    def _downstream(self, conn: Connection, stream_id: int, data: bytes, fin: bool) -> None:
        self._forward(self.client_facing, stream_id, data, fin, "downstream")

    def _on_facade_closed(self, conn: Connection, reason: str) -> None:
        if self.closed:
            return
        self.closed = True
        for other in (self.client_facing, self.server_facing):
            if other is not conn and not other.closed:
                if other.peer_migrated or other.migrations:
                    other.close(reason="peer facade closed")
                else:
                    other._terminate("peer facade closed")
        if self.next_hop_request is not None:
            self.box.oob.cancel(self.next_hop_request)
        self.box.erase(self, reason)


class Middlebox:
    def __init__(self, node, psk: bytes, config: Optional[MiddleboxConfig] = None,
                 quic_port: int = QUIC_PORT, oob_port: int = OOB_PORT) -> None:
        self.node = node
        self.config = config or MiddleboxConfig()
        self.scheduler = node.network.scheduler
        self.trace = node.network.trace
        self.quic = QuicEndpoint(node, quic_port)
        self.oob = OobChannel(node, oob_port, psk, handler=self._on_request)
        self.splices: Dict[bytes, Splice] = {}
        self.restored = 0
        self.rejected: List[str] = []
        self.erased = 0
        # plaintext this middlebox handled, for secrecy checks
        self.material: Optional[List[bytes]] = [] if self.config.record_material else None

    @property
    def now(self) -> int:
        return self.scheduler.now

    def event(self, name: str, **fields) -> None:
        self.trace.event(self.now, self.node.name, name, **fields)

    def _on_request(self, src: Address, message: bytes, respond) -> None:
        try:
            offer = decode_message(message)
        except ParameterError:
            return
        if not isinstance(offer, StateOffer):
            return
        self.scheduler.call_later(self.config.restore_delay, self._restore, offer, respond)

    def _restore(self, offer: StateOffer, respond) -> None:
        if self.material is not None:
            self.material.append(offer.state)
        reason = None
        try:
            state = deserialize_state(offer.state)
        except StateFormatError:
            state, reason = None, REASON_MALFORMED
        if state is not None:
            reason = check_support(state, self.config.versions, self.config.ciphers,
                                   self.config.transport_parameters)
        if reason is not None:
            self.rejected.append(reason)
            self.event("smaq-error", session=offer.session_id.hex(), reason=reason)
            self.event("state-erased", session=offer.session_id.hex(), reason=reason)
            self.erased += 1
            respond(encode_message(SmaqError(offer.session_id, reason)))
            return
        if offer.session_id in self.splices:
            respond(encode_message(SmaqOk(offer.session_id)))
            return
        splice = Splice(self, offer.session_id, state)
        self.splices[offer.session_id] = splice
        self.restored += 1
        self.event("restored", session=offer.session_id.hex(), client=state.client_address,
                   server=state.server_address)
        respond(encode_message(SmaqOk(offer.session_id)))
        splice.start()

    def erase(self, splice: Splice, reason: str) -> None:
        if self.splices.get(splice.session_id) is splice:
            del self.splices[splice.session_id]
        self.quic.unregister(splice.client_facing)
        self.quic.unregister(splice.server_facing)
        splice.state = None
        for conn in (splice.client_facing, splice.server_facing):
            conn.traffic_secrets = {}
            conn.hp_keys = {}
        self.erased += 1
        self.event("state-erased", session=splice.session_id.hex(), reason=reason)
