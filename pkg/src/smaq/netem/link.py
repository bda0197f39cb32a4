from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

from .scheduler import NS_PER_S, EventScheduler
from .trace import Trace

Address = Tuple[str, int]

MAX_DATAGRAM_SIZE = 1200


class Datagram:
    __slots__ = ("src", "dst", "payload", "size")

    def __init__(self, src: Address, dst: Address, payload: Any, size: int) -> None:
        self.src = src
        self.dst = dst
        self.payload = payload
        self.size = size

    def __repr__(self) -> str:
        return f"Datagram({self.src}->{self.dst}, {self.size}B)"


@dataclass(frozen=True)
class LinkProfile:
    one_way_delay: int = 0  # ns
    loss_probability: float = 0.0
    rate_limit: int = 0  # bits/s, 0 = unlimited

    def __post_init__(self):
        if self.one_way_delay < 0:
            raise ValueError("negative delay")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss probability outside [0, 1]")
        if self.rate_limit < 0:
            raise ValueError("negative rate")

    def serialization_delay(self, size: int) -> int:
        if not self.rate_limit:
            return 0
        return size * 8 * NS_PER_S // self.rate_limit


class Link:
    """One direction of a point-to-point link with a FIFO transmit queue."""

    def __init__(self, scheduler: EventScheduler, src: "Node", dst: "Node", profile: LinkProfile,
                 trace: Optional[Trace] = None) -> None:
        self.scheduler = scheduler
        self.src = src
        self.dst = dst
        self.profile = profile
        self.name = f"{src.name}->{dst.name}"
        self.rng = scheduler.rng(f"link/{self.name}")
        self.trace = trace
        # Test hook: return True to force a drop.
        self.drop_filter: Optional[Callable[[Datagram], bool]] = None
        self.free_at = 0
        self.sent = 0
        self.dropped = 0
        self.delivered = 0
        self.bytes_sent = 0
        self.max_backlog = 0

    def transmit(self, datagram: Datagram) -> None:
        sched = self.scheduler
        now = sched.now
        profile = self.profile
        if datagram.size > MAX_DATAGRAM_SIZE:
            raise ValueError(f"datagram of {datagram.size} octets exceeds {MAX_DATAGRAM_SIZE}")
        self.sent += 1
        self.bytes_sent += datagram.size
        depart = now
        if profile.rate_limit:
            start = self.free_at if self.free_at > now else now
            depart = start + datagram.size * 8 * NS_PER_S // profile.rate_limit
            self.free_at = depart
            backlog = depart - now
            if backlog > self.max_backlog:
                self.max_backlog = backlog
        p = profile.loss_probability
        if (p and self.rng.random() < p) or (self.drop_filter is not None and self.drop_filter(datagram)):
            self.dropped += 1
            if self.trace is not None and self.trace.packets:
                self.trace.packet(now, self.src.name, "drop", f"{self.name} {datagram.payload!r}")
            return
        sched.call_at(depart + profile.one_way_delay, self._deliver, datagram)

    def _deliver(self, datagram: Datagram) -> None:
        self.delivered += 1
        self.dst.receive(datagram)

    @property
    def in_flight(self) -> int:
        return self.sent - self.dropped - self.delivered


class Node:
    """A host or router on the chain. Handlers are bound per port."""

    def __init__(self, name: str, network: "Network") -> None:
        self.name = name
        self.network = network
        self.ports: Dict[int, Any] = {}
        self.routes: Dict[str, Link] = {}
        self.forwarded = 0
        self.unroutable = 0

    def bind(self, port: int, handler: Any) -> Address:
        self.ports[port] = handler
        return (self.name, port)

    def unbind(self, port: int) -> None:
        self.ports.pop(port, None)

    def send(self, datagram: Datagram) -> None:
        link = self.routes.get(datagram.dst[0])
        if link is None:
            self.unroutable += 1
            return
        trace = self.network.trace
        if trace.packets:
            trace.packet(self.network.scheduler.now, self.name, "tx", f"{datagram.src}->{datagram.dst} {datagram.payload!r}")
        link.transmit(datagram)

    def receive(self, datagram: Datagram) -> None:
        if datagram.dst[0] != self.name:
            self.forwarded += 1
            self.send(datagram)
            return
        handler = self.ports.get(datagram.dst[1])
        if handler is None:
            self.unroutable += 1
            return
        trace = self.network.trace
        if trace.packets:
            trace.packet(self.network.scheduler.now, self.name, "rx", f"{datagram.src}->{datagram.dst} {datagram.payload!r}")
        handler.datagram_received(datagram)


class Network:
    def __init__(self, scheduler: EventScheduler, trace: Optional[Trace] = None) -> None:
        self.scheduler = scheduler
        self.trace = trace if trace is not None else Trace()
        self.nodes: Dict[str, Node] = {}
        self.links: Dict[Tuple[str, str], Link] = {}

    def add_node(self, name: str) -> Node:
        node = Node(name, self)
        self.nodes[name] = node
        return node

    def connect(self, a: str, b: str, forward: LinkProfile, backward: LinkProfile) -> None:
        na, nb = self.nodes[a], self.nodes[b]
        self.links[(a, b)] = Link(self.scheduler, na, nb, forward, self.trace)
        self.links[(b, a)] = Link(self.scheduler, nb, na, backward, self.trace)

    def build_routes(self, chain) -> None:
        """Static routing along a chain of node names."""
        for i, name in enumerate(chain):
            node = self.nodes[name]
            for j, other in enumerate(chain):
                if i == j:
                    continue
                nxt = chain[i + 1] if j > i else chain[i - 1]
                node.routes[other] = self.links[(name, nxt)]

    def conservation(self) -> Tuple[int, int, int, int]:
        sent = sum(l.sent for l in self.links.values())
        dropped = sum(l.dropped for l in self.links.values())
        delivered = sum(l.delivered for l in self.links.values())
        in_flight = sum(l.in_flight for l in self.links.values())
        return sent, dropped, delivered, in_flight
