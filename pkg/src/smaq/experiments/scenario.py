"""One simulated testbed: topology, server, middleboxes and client connections.

Middlebox roles follow the distributed setup: the middlebox next to the
client splits off the satellite segment toward the server side, the one
behind the satellite splits off the terrestrial segment. The satellite hop
runs Hybla-Westwood on the sending middlebox, every other hop NewReno.
"""
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional

from ..congestion import bdp_cap
from ..handover.client import HandoverClient
from ..handover.middlebox import OOB_PORT, QUIC_PORT, Middlebox, MiddleboxConfig
from ..handover.oob import OobChannel
from ..netem.scheduler import EventScheduler
from ..netem.topology import DEFAULT_RATE, Topology, build_topology
from ..netem.trace import Trace
from ..transport.connection import Connection, ConnectionConfig
from ..transport.endpoint import ClientEndpoint, ServerEndpoint
from .apps import ResponseServer

SATELLITE_CCA = "hybla-westwood"
OOB_KEY = bytes(range(16))
CLIENT_BASE_PORT = 5000


@dataclass
class Session:
    """A client connection and, under smaq-pep, its handover driver."""

    conn: Connection
    handover: Optional[HandoverClient]
    ready_at: Optional[int] = None


class World:
    def __init__(self, orbit: str = "GEO", loss: float = 0.0, pep_count: int = 2, seed: int = 1,
                 smaq: Optional[bool] = None, topology: Optional[Topology] = None,
                 record_material: bool = False, wire_format: bool = False, trace_packets: bool = False,
                 middlebox_overrides: Optional[Dict[str, dict]] = None,
                 rate_limit: int = DEFAULT_RATE) -> None:
        self.topology = topology or build_topology(orbit, loss, pep_count, rate_limit=rate_limit)
        self.pep_count = len(self.topology.chain) - 2
        self.smaq = self.pep_count > 0 if smaq is None else smaq
        self.wire_format = wire_format
        self.scheduler = EventScheduler(seed)
        self.trace = Trace(packets=trace_packets)
        self.net = self.topology.instantiate(self.scheduler, self.trace)
        self.rate_limit = rate_limit
        self.server_app = ResponseServer(seed)
        topo = self.topology
        self.server = ServerEndpoint(
            self.net.nodes["server"], QUIC_PORT,
            lambda: ConnectionConfig(smaq=self.smaq, cwnd_cap=bdp_cap(rate_limit, topo.rtt()),
                                     wire_format=wire_format),
            self.server_app.attach)
        self.middleboxes: Dict[str, Middlebox] = {}
        overrides = middlebox_overrides or {}
        for name, cfg in self._middlebox_configs(record_material).items():
            cfg = replace(cfg, **overrides.get(name, {}))
            self.middleboxes[name] = Middlebox(self.net.nodes[name], OOB_KEY, cfg)
        self.oob: Optional[OobChannel] = None
        if self.pep_count:
            self.oob = OobChannel(self.net.nodes["client"], OOB_PORT, OOB_KEY)
        self.sessions: List[Session] = []

    def _middlebox_configs(self, record_material: bool) -> Dict[str, MiddleboxConfig]:
        topo = self.topology
        chain = topo.chain
        rate = self.rate_limit
        configs = {}
        for i in range(1, len(chain) - 1):
            left, name, right = chain[i - 1], chain[i], chain[i + 1]
            satellite = topo.satellite
            left_rtt, right_rtt = topo.rtt(left, name), topo.rtt(name, right)
            configs[name] = MiddleboxConfig(
                client_side_rtt=left_rtt, server_side_rtt=right_rtt,
                client_side_congestion=SATELLITE_CCA if satellite == (left, name) else "newreno",
                server_side_congestion=SATELLITE_CCA if satellite == (name, right) else "newreno",
                client_side_cwnd_cap=bdp_cap(rate, left_rtt), server_side_cwnd_cap=bdp_cap(rate, right_rtt),
                next_hop=(right, OOB_PORT) if right != "server" else None,
                next_hop_rtt=right_rtt,
                wire_format=self.wire_format, record_material=record_material,
            )
        return configs

    @property
    def now(self) -> int:
        return self.scheduler.now

    def connect(self, on_ready: Optional[Callable[[Session], None]] = None) -> Session:
        """Open a client connection; ``on_ready`` fires once the client may send
        application data (after the handover, or its fallback, under smaq)."""
        port = CLIENT_BASE_PORT + len(self.sessions)
        endpoint = ClientEndpoint(self.net.nodes["client"], port)
        conn = endpoint.connect(("server", QUIC_PORT),
                                ConnectionConfig(smaq=self.smaq, wire_format=self.wire_format))
        session = Session(conn, None)

        def ready(*_args) -> None:
            if session.ready_at is None:
                session.ready_at = self.now
                if on_ready is not None:
                    on_ready(session)

        if self.pep_count and self.smaq:
            session.handover = HandoverClient(conn, self.oob, ("pep1", OOB_PORT),
                                              self.topology.rtt("client", "pep1"), on_ready=ready)
        else:
            conn.on_keys_established = ready
        self.sessions.append(session)
        return session

    def run(self, until: int) -> None:
        self.scheduler.run(until=until)

    def stop(self) -> None:
        self.scheduler.stop()
