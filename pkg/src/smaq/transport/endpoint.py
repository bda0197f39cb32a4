from typing import Callable, Dict, List, Optional

from ..errors import ParameterError
from ..netem.link import Address, Datagram
from .connection import Connection, ConnectionConfig, Role
from .packet import Packet, Space, parse_header


def datagram_dcid(payload) -> Optional[bytes]:
    if isinstance(payload, Packet):
        return payload.dcid
    try:
        return parse_header(payload)[2]
    except ParameterError:
        return None


def datagram_initial(payload) -> Optional[tuple]:
    """(dcid, scid) if the datagram carries an Initial packet."""
    if isinstance(payload, Packet):
        return (payload.dcid, payload.scid) if payload.space == Space.INITIAL else None
    try:
        space, _, dcid, scid, _ = parse_header(payload)
    except ParameterError:
        return None
    return (dcid, scid) if space == Space.INITIAL else None


class QuicEndpoint:
    """Demultiplexes datagrams arriving at one (node, port) to connections by CID."""

    def __init__(self, node, port: int) -> None:
        self.node = node
        self.port = port
        self.address: Address = node.bind(port, self)
        self.connections: Dict[bytes, Connection] = {}
        self.unknown_cid = 0

    def register(self, cid: bytes, conn: Connection) -> None:
        self.connections[cid] = conn

    def unregister(self, conn: Connection) -> None:
        for cid in [c for c, v in self.connections.items() if v is conn]:
            del self.connections[cid]

    def lookup(self, payload) -> Optional[Connection]:
        dcid = datagram_dcid(payload)
        return None if dcid is None else self.connections.get(dcid)

    def datagram_received(self, datagram: Datagram) -> None:
        conn = self.lookup(datagram.payload)
        if conn is None:
            conn = self.unknown_connection(datagram)
            if conn is None:
                self.unknown_cid += 1
                return
        conn.datagram_received(datagram)

    def unknown_connection(self, datagram: Datagram) -> Optional[Connection]:
        return None


class ClientEndpoint(QuicEndpoint):
    def connect(self, server: Address, config: Optional[ConnectionConfig] = None,
                name: Optional[str] = None) -> Connection:
        conn = Connection(Role.CLIENT, self.node, self.port, server, config, name)
        conn.connect()
        self.register(conn.host_cid, conn)
        return conn


class ServerEndpoint(QuicEndpoint):
    def __init__(self, node, port: int, config_factory: Callable[[], ConnectionConfig],
                 on_connection: Optional[Callable[[Connection], None]] = None) -> None:
        super().__init__(node, port)
        self.config_factory = config_factory
        self.on_connection = on_connection
        self.accepted: List[Connection] = []

    def unknown_connection(self, datagram: Datagram) -> Optional[Connection]:
        initial = datagram_initial(datagram.payload)
        if initial is None:
            return None
        dcid, scid = initial
        conn = Connection(Role.SERVER, self.node, self.port, datagram.src, self.config_factory(),
                          name=f"{self.node.name}:{self.port}/server#{len(self.accepted)}")
        conn.accept(dcid, scid)
        self.register(dcid, conn)
        self.register(conn.host_cid, conn)
        self.accepted.append(conn)
        if self.on_connection is not None:
            self.on_connection(conn)
        return conn
