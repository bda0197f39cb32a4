"""The handed-over connection state and its binary format.

Serialized layout::

    magic "SMAQ" | format version (uint8) | field*

    field := tag (uint8) | length (varint) | value

Fields appear in this order, each exactly once:

    1  active connection IDs      count, then (owner, cid, sequence)*
    2  stateless reset tokens     count, then (cid, 16-octet token)*
    3  QUIC version               uint32
    4  cipher suite               uint16
    5  key phase                  varint
    6  traffic secrets            client secret, server secret
    7  header protection keys     client key, server key
    8  endpoint addresses         client address, server address
    9  transport parameters       client map, server map
    10 packet numbers             highest sent, highest received (client view)

Owners are encoded as 0 (client) / 1 (server); octet strings and names are
varint length-prefixed; a secret is its phase (varint) followed by the octet
string; an address is a node name followed by a uint16 port; highest packet
numbers are stored plus one so that "none" encodes as zero.

The object deliberately has no room for end-to-end (XADS) key material.
"""
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

from ..crypto.xads import Secret, SecretLabel
from ..errors import ParameterError, StateFormatError, StateNotReady
from ..netem.link import Address
from ..transport.connection import Connection, HandshakeState, Role
from ..transport.frames import decode_varint, encode_varint
from ..transport.packet import Space
from ..transport.params import TransportParameters, decode_transport_parameters, encode_transport_parameters

MAGIC = b"SMAQ"
FORMAT_VERSION = 1
OWNERS = ("client", "server")

TAG_CIDS = 1
TAG_RESET_TOKENS = 2
TAG_VERSION = 3
TAG_CIPHER = 4
TAG_KEY_PHASE = 5
TAG_TRAFFIC_SECRETS = 6
TAG_HP_KEYS = 7
TAG_ADDRESSES = 8
TAG_TRANSPORT_PARAMETERS = 9
TAG_PACKET_NUMBERS = 10
FIELD_ORDER = tuple(range(1, 11))


@dataclass(frozen=True)
class SmaqState:
    active_cids: Tuple[Tuple[str, bytes, int], ...]
    stateless_reset_tokens: Tuple[Tuple[bytes, bytes], ...]
    quic_version: int
    cipher_suite: int
    key_phase: int
    client_traffic_secret: Secret
    server_traffic_secret: Secret
    client_hp_key: bytes
    server_hp_key: bytes
    client_address: Address
    server_address: Address
    client_parameters: Tuple[Tuple[str, object], ...]
    server_parameters: Tuple[Tuple[str, object], ...]
    highest_sent: int  # by the client, -1 if none
    highest_received: int  # by the client, -1 if none

    def cid(self, owner: str) -> bytes:
        for o, cid, _ in self.active_cids:
            if o == owner:
                return cid
        raise KeyError(owner)

    def with_client_address(self, address: Address) -> "SmaqState":
        return replace(self, client_address=address)

    @property
    def parameter_names(self) -> List[str]:
        return sorted({k for k, _ in self.client_parameters} | {k for k, _ in self.server_parameters})

    def secret_values(self) -> List[bytes]:
        return [self.client_traffic_secret.value, self.server_traffic_secret.value,
                self.client_hp_key, self.server_hp_key]


def _params_tuple(params: TransportParameters) -> Tuple[Tuple[str, object], ...]:
    return tuple(sorted(params.items()))


def create_state(conn: Connection) -> SmaqState:
    """Snapshot a client connection once its keys are established."""
    if conn.role != Role.CLIENT:
        raise ParameterError("state is created by the client")
    if conn.handshake_state < HandshakeState.KEYS_ESTABLISHED or not conn.traffic_secrets:
        raise StateNotReady("connection keys are not established yet")
    app = conn.spaces[Space.APPLICATION]
    tokens = tuple(sorted(conn.stateless_reset_tokens.items()))
    return SmaqState(
        active_cids=tuple(conn.active_cids),
        stateless_reset_tokens=tokens,
        quic_version=conn.quic_version,
        cipher_suite=conn.cipher_suite,
        key_phase=conn.key_phase,
        client_traffic_secret=conn.traffic_secrets["client"],
        server_traffic_secret=conn.traffic_secrets["server"],
        client_hp_key=conn.hp_keys["client"],
        server_hp_key=conn.hp_keys["server"],
        client_address=conn.local_addr,
        server_address=conn.peer_addr,
        client_parameters=_params_tuple(conn.local_params),
        server_parameters=_params_tuple(conn.peer_params),
        highest_sent=app.highest_sent,
        highest_received=app.largest_recv,
    )


# ---------------------------------------------------------------- encoding

def _bytes(value: bytes) -> bytes:
    return encode_varint(len(value)) + value


def _secret(secret: Secret) -> bytes:
    return encode_varint(secret.label.phase or 0) + _bytes(secret.value)


def _address(addr: Address) -> bytes:
    return _bytes(addr[0].encode()) + addr[1].to_bytes(2, "big")


def serialize_state(state: SmaqState) -> bytes:
    fields = {
        TAG_CIDS: encode_varint(len(state.active_cids)) + b"".join(
            bytes([OWNERS.index(owner)]) + _bytes(cid) + encode_varint(seq)
            for owner, cid, seq in state.active_cids),
        TAG_RESET_TOKENS: encode_varint(len(state.stateless_reset_tokens)) + b"".join(
            _bytes(cid) + _bytes(token) for cid, token in state.stateless_reset_tokens),
        TAG_VERSION: state.quic_version.to_bytes(4, "big"),
        TAG_CIPHER: state.cipher_suite.to_bytes(2, "big"),
        TAG_KEY_PHASE: encode_varint(state.key_phase),
        TAG_TRAFFIC_SECRETS: _secret(state.client_traffic_secret) + _secret(state.server_traffic_secret),
        TAG_HP_KEYS: _bytes(state.client_hp_key) + _bytes(state.server_hp_key),
        TAG_ADDRESSES: _address(state.client_address) + _address(state.server_address),
        TAG_TRANSPORT_PARAMETERS: (_bytes(encode_transport_parameters(dict(state.client_parameters)))
                                   + _bytes(encode_transport_parameters(dict(state.server_parameters)))),
        TAG_PACKET_NUMBERS: encode_varint(state.highest_sent + 1) + encode_varint(state.highest_received + 1),
    }
    out = bytearray(MAGIC)
    out.append(FORMAT_VERSION)
    for tag in FIELD_ORDER:
        value = fields[tag]
        out.append(tag)
        out += encode_varint(len(value))
        out += value
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def varint(self) -> int:
        value, self.pos = decode_varint(self.buf, self.pos)
        return value

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise StateFormatError("truncated state field")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def octets(self) -> bytes:
        return self.take(self.varint())

    def uint(self, n: int) -> int:
        return int.from_bytes(self.take(n), "big")

    def secret(self, sender: str) -> Secret:
        phase = self.varint()
        value = self.octets()
        return Secret(value, SecretLabel(f"{sender}_application_traffic_secret", sender, None, phase))

    def address(self) -> Address:
        name = self.octets().decode()
        return name, self.uint(2)

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise StateFormatError("trailing octets in state field")


def deserialize_state(data: bytes) -> SmaqState:
    if data[:4] != MAGIC:
        raise StateFormatError("bad magic")
    if len(data) < 5 or data[4] != FORMAT_VERSION:
        raise StateFormatError("unsupported state format version")
    outer = _Reader(data)
    outer.pos = 5
    fields = {}
    try:
        for expected in FIELD_ORDER:
            tag = outer.uint(1)
            if tag != expected:
                raise StateFormatError(f"field {tag} out of order, expected {expected}")
            fields[tag] = _Reader(outer.octets())
        outer.done()

        r = fields[TAG_CIDS]
        cids = []
        for _ in range(r.varint()):
            owner = r.uint(1)
            if owner > 1:
                raise StateFormatError("bad CID owner")
            cids.append((OWNERS[owner], r.octets(), r.varint()))
        r.done()
        r = fields[TAG_RESET_TOKENS]
        tokens = tuple((r.octets(), r.octets()) for _ in range(r.varint()))
        r.done()
        version = fields[TAG_VERSION].uint(4)
        cipher = fields[TAG_CIPHER].uint(2)
        key_phase = fields[TAG_KEY_PHASE].varint()
        r = fields[TAG_TRAFFIC_SECRETS]
        client_secret, server_secret = r.secret("client"), r.secret("server")
        r.done()
        r = fields[TAG_HP_KEYS]
        client_hp, server_hp = r.octets(), r.octets()
        r.done()
        r = fields[TAG_ADDRESSES]
        client_addr, server_addr = r.address(), r.address()
        r.done()
        r = fields[TAG_TRANSPORT_PARAMETERS]
        client_params, _ = decode_transport_parameters(r.octets())
        server_params, _ = decode_transport_parameters(r.octets())
        r.done()
        r = fields[TAG_PACKET_NUMBERS]
        highest_sent, highest_received = r.varint() - 1, r.varint() - 1
        r.done()
    except (ParameterError, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, StateFormatError):
            raise
        raise StateFormatError(str(exc)) from None
    return SmaqState(
        active_cids=tuple(cids), stateless_reset_tokens=tokens, quic_version=version,
        cipher_suite=cipher, key_phase=key_phase,
        client_traffic_secret=client_secret, server_traffic_secret=server_secret,
        client_hp_key=client_hp, server_hp_key=server_hp,
        client_address=client_addr, server_address=server_addr,
        client_parameters=_params_tuple(client_params), server_parameters=_params_tuple(server_params),
        highest_sent=highest_sent, highest_received=highest_received,
    )


def check_support(state: SmaqState, versions, ciphers, parameters) -> Optional[str]:
    """Return the rejection reason, or None if the state can be restored."""
    if state.quic_version not in versions:
        return "version-unsupported"
    if state.cipher_suite not in ciphers:
        return "cipher-unsupported"
    for name in state.parameter_names:
        if name not in parameters:
            return "transport-parameter-unsupported"
    return None
