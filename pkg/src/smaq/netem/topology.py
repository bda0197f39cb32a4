"""Satellite testbed topologies: client -- pep1 -- pep2 -- server.

Delays follow the emulation testbed defaults: the satellite hop between the
PEPs is 250 ms one way for GEO and 16 ms for LEO, the terrestrial hop to the
server 40 ms, and PEP #1 sits in the client's LAN (0.4 ms). Random loss is
applied on the satellite hop only, and so is the rate limit (server-to-client
direction): the LAN and terrestrial hops are not bottlenecks.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..errors import ConfigError
from .link import LinkProfile, Network
from .scheduler import EventScheduler, ms
from .trace import Trace

ORBIT_DELAY_MS = {"GEO": 250.0, "LEO": 16.0}
CLIENT_PEP_DELAY_MS = 0.4
PEP_SERVER_DELAY_MS = 40.0
DEFAULT_RATE = 20_000_000
LOSS_PROFILES = (0.0, 0.0001, 0.001)


@dataclass
class Topology:
    chain: List[str]
    links: Dict[Tuple[str, str], LinkProfile] = field(default_factory=dict)
    satellite: Optional[Tuple[str, str]] = None
    rate_limit: int = DEFAULT_RATE

    def one_way_delay(self, a: str, b: str) -> int:
        i, j = self.chain.index(a), self.chain.index(b)
        step = 1 if j > i else -1
        return sum(self.links[(self.chain[k], self.chain[k + step])].one_way_delay for k in range(i, j, step))

    def rtt(self, a: Optional[str] = None, b: Optional[str] = None) -> int:
        a = a or self.chain[0]
        b = b or self.chain[-1]
        return self.one_way_delay(a, b) + self.one_way_delay(b, a)

    def instantiate(self, scheduler: EventScheduler, trace: Optional[Trace] = None) -> Network:
        net = Network(scheduler, trace)
        for name in self.chain:
            net.add_node(name)
        for a, b in zip(self.chain, self.chain[1:]):
            net.connect(a, b, self.links[(a, b)], self.links[(b, a)])
        net.build_routes(self.chain)
        return net


def _pair(delay_ms: float, loss: float, rate: int) -> Tuple[LinkProfile, LinkProfile]:
    """(client-to-server direction, server-to-client direction)."""
    up = LinkProfile(ms(delay_ms), loss, 0)
    down = LinkProfile(ms(delay_ms), loss, rate)
    return up, down


def build_topology(orbit: str = "GEO", loss: float = 0.0001, pep_count: int = 2,
                   rate_limit: int = DEFAULT_RATE,
                   client_pep_delay_ms: float = CLIENT_PEP_DELAY_MS,
                   satellite_delay_ms: Optional[float] = None,
                   pep_server_delay_ms: float = PEP_SERVER_DELAY_MS) -> Topology:
    orbit_key = orbit.upper()
    if satellite_delay_ms is None:
        if orbit_key not in ORBIT_DELAY_MS:
            raise ConfigError(f"unknown orbit {orbit!r}")
        satellite_delay_ms = ORBIT_DELAY_MS[orbit_key]
    if not 0.0 <= loss <= 1.0:
        raise ConfigError(f"loss {loss} outside [0, 1]")
    if pep_count not in (0, 1, 2):
        raise ConfigError(f"pep_count must be 0, 1 or 2, got {pep_count}")

    # (a, b, one-way delay, is the satellite segment)
    if pep_count == 0:
        segments = [("client", "server", client_pep_delay_ms + satellite_delay_ms + pep_server_delay_ms, True)]
    elif pep_count == 1:
        # the single PEP keeps its LAN position next to the client
        segments = [("client", "pep1", client_pep_delay_ms, False),
                    ("pep1", "server", satellite_delay_ms + pep_server_delay_ms, True)]
    else:
        segments = [("client", "pep1", client_pep_delay_ms, False),
                    ("pep1", "pep2", satellite_delay_ms, True),
                    ("pep2", "server", pep_server_delay_ms, False)]

    chain = [segments[0][0]] + [s[1] for s in segments]
    topo = Topology(chain=chain, rate_limit=rate_limit)
    for a, b, delay, satellite in segments:
        up, down = _pair(delay, loss if satellite else 0.0, rate_limit if satellite else 0)
        topo.links[(a, b)] = up
        topo.links[(b, a)] = down
        if satellite:
            topo.satellite = (a, b)
    return topo
