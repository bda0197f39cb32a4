import pytest
from hypothesis import given, settings, strategies as st

from smaq.errors import ConfigError
from smaq.netem.link import Datagram, LinkProfile, Network
from smaq.netem.scheduler import NS_PER_S, EventScheduler, ms
from smaq.netem.topology import build_topology
from smaq.netem.trace import Trace, parse_line


class Sink:
    def __init__(self, scheduler):
        self.scheduler = scheduler
        self.received = []

    def datagram_received(self, datagram):
        self.received.append((self.scheduler.now, datagram))


def two_node_network(profile, seed=0, back=None):
    sched = EventScheduler(seed)
    net = Network(sched)
    net.add_node("a")
    net.add_node("b")
    net.connect("a", "b", profile, back or LinkProfile())
    net.build_routes(["a", "b"])
    sink = Sink(sched)
    net.nodes["b"].bind(1, sink)
    return sched, net, sink


def test_delivery_exactly_after_delay():
    sched, net, sink = two_node_network(LinkProfile(ms(250)))
    net.nodes["a"].send(Datagram(("a", 1), ("b", 1), "x", 1200))
    sched.run()
    assert sink.received[0][0] == ms(250)


def test_serialization_adds_to_delay():
    profile = LinkProfile(ms(250), 0.0, 20_000_000)
    sched, net, sink = two_node_network(profile)
    net.nodes["a"].send(Datagram(("a", 1), ("b", 1), "x", 1200))
    sched.run()
    assert sink.received[0][0] == ms(250) + 1200 * 8 * NS_PER_S // 20_000_000


def test_rate_limit_goodput_ceiling():
    sched, net, sink = two_node_network(LinkProfile(ms(10), 0.0, 20_000_000))
    for _ in range(10_000):
        net.nodes["a"].send(Datagram(("a", 1), ("b", 1), None, 1200))
    sched.run()
    first, last = sink.received[0][0], sink.received[-1][0]
    rate = (len(sink.received) - 1) * 1200 * 8 * NS_PER_S / (last - first)
    assert rate == pytest.approx(20e6, rel=1e-3)


def test_fifo_order_preserved():
    sched, net, sink = two_node_network(LinkProfile(ms(5), 0.0, 1_000_000))
    for i in range(50):
        net.nodes["a"].send(Datagram(("a", 1), ("b", 1), i, 100 + i))
    sched.run()
    assert [d.payload for _, d in sink.received] == list(range(50))


def test_oversized_datagram_rejected():
    sched, net, sink = two_node_network(LinkProfile())
    with pytest.raises(ValueError):
        net.nodes["a"].send(Datagram(("a", 1), ("b", 1), None, 1201))


def test_empirical_loss_rate():
    sched, net, sink = two_node_network(LinkProfile(0, 0.001), seed=0)
    n = 100_000
    for _ in range(n):
        net.nodes["a"].send(Datagram(("a", 1), ("b", 1), None, 100))
    sched.run()
    link = net.links[("a", "b")]
    assert abs(link.dropped / n - 0.001) <= 0.15 * 0.001


def test_loss_rate_unbiased_across_seeds():
    # +-15 % on 10^5 draws is only ~1.5 sigma, so also check the pooled rate
    drops = 0
    for seed in range(20):
        rng = EventScheduler(seed).rng("link/a->b")
        drops += sum(rng.random() < 0.001 for _ in range(100_000))
    assert abs(drops / 2_000_000 - 0.001) <= 0.05 * 0.001


def test_conservation():
    sched, net, sink = two_node_network(LinkProfile(ms(1), 0.05), seed=3)
    for _ in range(2000):
        net.nodes["a"].send(Datagram(("a", 1), ("b", 1), None, 100))
    sched.run(until=ms(0.5))
    sent, dropped, delivered, in_flight = net.conservation()
    assert sent == dropped + delivered + in_flight and in_flight > 0
    sched.run()
    sent, dropped, delivered, in_flight = net.conservation()
    assert in_flight == 0 and sent == dropped + delivered == 2000
    assert len(sink.received) == delivered


@pytest.mark.parametrize("orbit,rtt_ms", [("GEO", 580), ("LEO", 112)])
@pytest.mark.parametrize("peps", [0, 2])
def test_topology_rtt(orbit, rtt_ms, peps):
    topo = build_topology(orbit, 0.0, peps)
    sched = EventScheduler()
    net = topo.instantiate(sched)
    client = Sink(sched)
    server = net.nodes["server"]

    class Echo:
        def datagram_received(self, dg):
            server.send(Datagram(dg.dst, dg.src, dg.payload, dg.size))

    server.bind(443, Echo())
    net.nodes["client"].bind(1, client)
    net.nodes["client"].send(Datagram(("client", 1), ("server", 443), "ping", 40))
    sched.run()
    assert abs(client.received[0][0] - ms(rtt_ms)) <= ms(1)
    assert abs(topo.rtt() - ms(rtt_ms)) <= ms(1)


def test_topology_pep_count_zero_has_no_middlebox_nodes():
    topo = build_topology("GEO", 0.001, 0)
    assert topo.chain == ["client", "server"]
    assert topo.links[("client", "server")].loss_probability == 0.001


@pytest.mark.parametrize("pep_count,satellite", [(0, ("client", "server")), (1, ("pep1", "server")),
                                                 (2, ("pep1", "pep2"))])
def test_topology_loss_and_rate_only_on_satellite(pep_count, satellite):
    topo = build_topology("GEO", 0.001, pep_count)
    assert topo.satellite == satellite
    for (a, b), profile in topo.links.items():
        on_sat = {a, b} == set(satellite)
        assert profile.loss_probability == (0.001 if on_sat else 0.0)
        downstream = topo.chain.index(b) < topo.chain.index(a)
        assert bool(profile.rate_limit) == (on_sat and downstream)


@pytest.mark.parametrize("kwargs", [{"orbit": "MEO"}, {"loss": 1.5}, {"pep_count": 3}])
def test_topology_config_errors(kwargs):
    with pytest.raises(ConfigError):
        build_topology(**kwargs)


def _lossy_run(seed, loss_ab=0.1, loss_ba=0.1):
    sched = EventScheduler(seed)
    trace = Trace(packets=True)
    net = Network(sched, trace)
    for n in ("a", "b"):
        net.add_node(n)
    net.connect("a", "b", LinkProfile(ms(3), loss_ab), LinkProfile(ms(3), loss_ba))
    net.build_routes(["a", "b"])
    sinks = {n: Sink(sched) for n in ("a", "b")}
    for n, s in sinks.items():
        net.nodes[n].bind(1, s)
    for i in range(500):
        sched.call_at(i * 1000, net.nodes["a"].send, Datagram(("a", 1), ("b", 1), i, 100))
        sched.call_at(i * 1000, net.nodes["b"].send, Datagram(("b", 1), ("a", 1), i, 100))
    sched.run()
    return trace, sinks


def test_determinism_identical_trace():
    assert _lossy_run(11)[0].dump() == _lossy_run(11)[0].dump()
    assert _lossy_run(11)[0].dump() != _lossy_run(12)[0].dump()


def test_loss_independence_between_links():
    _, with_loss = _lossy_run(5)
    _, without = _lossy_run(5, loss_ab=0.0)
    got = lambda sinks: [d.payload for _, d in sinks["a"].received]
    assert got(with_loss) == got(without)
    assert len(without["b"].received) == 500


def test_trace_line_format_round_trip():
    trace = Trace()
    trace.event(42, "pep1", "migrated", peer=("client", 1), pn=3)
    line = next(iter(trace.lines()))
    assert line == "42 pep1 migrated peer=client:1 pn=3"
    assert parse_line(line) == (42, "pep1", "migrated", {"peer": "client:1", "pn": "3"})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=10**9), min_size=1, max_size=40), st.integers(0, 2**32))
def test_events_fire_in_nondecreasing_time(times, seed):
    sched = EventScheduler(seed, shuffle_ties=True)
    fired = []
    for t in times:
        sched.call_at(t, lambda: fired.append(sched.now))
    sched.run()
    assert fired == sorted(times)
