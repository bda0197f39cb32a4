import pytest
from hypothesis import given, settings, strategies as st

from smaq.crypto.keys import PacketKeys, initial_secrets
from smaq.errors import IntegrityError, ParameterError, StreamClosedError
from smaq.experiments.apps import ENDLESS, FetchClient, content
from smaq.experiments.scenario import World
from smaq.netem.link import Datagram
from smaq.netem.scheduler import EventScheduler, ms, seconds
from smaq.netem.topology import build_topology
from smaq.transport.connection import ConnectionConfig, HandshakeState
from smaq.transport.endpoint import ClientEndpoint, ServerEndpoint
from smaq.transport.frames import (
    HANDSHAKE_DONE, PING, AckFrame, ConnectionCloseFrame, CryptoFrame, HandshakeDoneFrame, PaddingFrame,
    PathChallengeFrame, PathResponseFrame, StreamFrame, decode_frames, decode_varint, encode_frames,
    encode_varint, varint_size,
)
from smaq.transport.packet import Packet, Space, decode_packet, encode_packet
from smaq.transport.rangeset import RangeSet


# ---------------------------------------------------------------- codecs

@given(st.integers(min_value=0, max_value=(1 << 62) - 1))
def test_varint_round_trip(value):
    raw = encode_varint(value)
    assert len(raw) == varint_size(value)
    assert decode_varint(raw, 0) == (value, len(raw))


@pytest.mark.parametrize("value,size", [(63, 1), (64, 2), (16383, 2), (16384, 4), (2**30 - 1, 4), (2**30, 8)])
def test_varint_size_boundaries(value, size):
    assert varint_size(value) == size


def test_varint_rejects_out_of_range_and_truncation():
    with pytest.raises(ParameterError):
        encode_varint(1 << 62)
    with pytest.raises(ParameterError):
        decode_varint(b"\x40", 0)


def _ranges(draw_list):
    # descending, disjoint, separated by at least one missing packet
    out, hi = [], 10_000
    for gap, length in draw_list:
        lo = hi - length
        if lo < 0:
            break
        out.append((lo, hi))
        hi = lo - gap - 2
        if hi < 0:
            break
    return out or [(0, 0)]


frame_strategy = st.one_of(
    st.builds(PaddingFrame, st.integers(1, 50)),
    st.just(PING),
    st.just(HANDSHAKE_DONE),
    st.builds(lambda rs, d: AckFrame(_ranges(rs), d),
              st.lists(st.tuples(st.integers(0, 300), st.integers(0, 500)), min_size=1, max_size=5),
              st.integers(0, 100_000)),
    st.builds(CryptoFrame, st.integers(0, 1 << 20), st.binary(max_size=64)),
    st.builds(StreamFrame, st.integers(0, 1 << 20), st.integers(0, 1 << 40), st.binary(max_size=64), st.booleans()),
    st.builds(PathChallengeFrame, st.binary(min_size=8, max_size=8)),
    st.builds(PathResponseFrame, st.binary(min_size=8, max_size=8)),
    st.builds(ConnectionCloseFrame, st.integers(0, 1 << 20), st.text(max_size=20)),
)


@settings(max_examples=200)
@given(st.lists(frame_strategy, min_size=1, max_size=6))
def test_frames_round_trip_and_sizes(frames):
    # consecutive padding merges on decode, so keep at most one and put it last
    pads = [f for f in frames if isinstance(f, PaddingFrame)]
    frames = [f for f in frames if not isinstance(f, PaddingFrame)] + pads[:1]
    raw = encode_frames(frames)
    assert sum(f.wire_size() for f in frames) == len(raw)
    assert decode_frames(raw) == frames


def _keys():
    client, _ = initial_secrets(b"\x01" * 8)
    return PacketKeys(client)


@settings(max_examples=100, deadline=None)
@given(space=st.sampled_from(list(Space)), pn=st.integers(0, 1 << 40),
       frames=st.lists(frame_strategy.filter(lambda f: not isinstance(f, PaddingFrame)), min_size=1, max_size=4),
       key_phase=st.integers(0, 1))
def test_packet_wire_round_trip_matches_fast_path_size(space, pn, frames, key_phase):
    keys = _keys()
    if space != Space.APPLICATION:
        key_phase = 0
    pkt = Packet(space, 1, b"\xaa" * 8, b"\xbb" * 8, pn, frames, key_phase, keys.tag)
    raw = encode_packet(pkt, keys)
    assert len(raw) == pkt.size
    out = decode_packet(raw, lambda s, p: keys)
    assert (out.space, out.pn, out.frames, out.key_phase, out.dcid) == (space, pn, frames, key_phase, pkt.dcid)


def test_packet_tamper_and_wrong_keys_rejected():
    keys = _keys()
    pkt = Packet(Space.APPLICATION, 1, b"\xaa" * 8, b"", 7, [StreamFrame(0, 0, b"secret")], 0, keys.tag)
    raw = bytearray(encode_packet(pkt, keys))
    _, server = initial_secrets(b"\x01" * 8)
    with pytest.raises(IntegrityError):
        decode_packet(bytes(raw), lambda s, p: PacketKeys(server))
    raw[-3] ^= 1
    with pytest.raises(IntegrityError):
        decode_packet(bytes(raw), lambda s, p: keys)


def test_packet_number_is_header_protected():
    keys = _keys()
    a = encode_packet(Packet(Space.APPLICATION, 1, b"\xaa" * 8, b"", 5, [PING]), keys)
    pn_offset = 1 + 1 + 8
    assert a[pn_offset] & 0x3F != 5
    assert b"secret" not in encode_packet(
        Packet(Space.APPLICATION, 1, b"\xaa" * 8, b"", 5, [StreamFrame(0, 0, b"secret")]), keys)


@given(st.lists(st.tuples(st.integers(0, 200), st.integers(0, 20)), max_size=30))
def test_rangeset_matches_set_model(spans):
    rs, model = RangeSet(), set()
    for lo, n in spans:
        rs.add(lo, lo + n)
        model.update(range(lo, lo + n + 1))
    for x in range(0, 230):
        assert (x in rs) == (x in model)


# ---------------------------------------------------------------- connections

class Pair:
    """Client and server over the plain end-to-end topology."""

    def __init__(self, orbit="GEO", loss=0.0, client_smaq=False, server_smaq=False, seed=1, wire_format=False):
        self.topo = build_topology(orbit, loss, 0)
        self.sched = EventScheduler(seed)
        self.net = self.topo.instantiate(self.sched)
        self.accepted = []
        self.server = ServerEndpoint(self.net.nodes["server"], 443,
                                     lambda: ConnectionConfig(smaq=server_smaq, wire_format=wire_format),
                                     self.accepted.append)
        self.client = ClientEndpoint(self.net.nodes["client"], 5000).connect(
            ("server", 443), ConnectionConfig(smaq=client_smaq, wire_format=wire_format))

    def link(self, a, b):
        return self.net.links[(a, b)]

    def run(self, until):
        self.sched.run(until=until)


@pytest.mark.parametrize("client_smaq,server_smaq,expected", [
    (True, True, True), (True, False, False), (False, True, False), (False, False, False)])
def test_smaq_parameter_negotiation(client_smaq, server_smaq, expected):
    p = Pair(client_smaq=client_smaq, server_smaq=server_smaq)
    p.run(seconds(2))
    server = p.accepted[0]
    assert p.client.confirmed and server.confirmed
    assert p.client.smaq_negotiated is expected
    assert server.smaq_negotiated is expected
    assert (p.client.xads is not None) is expected


@pytest.mark.parametrize("orbit", ["GEO", "LEO"])
def test_handshake_timeline_without_loss(orbit):
    p = Pair(orbit)
    rtt = p.topo.rtt()
    p.run(seconds(3))
    trace = p.net.trace
    keys = trace.first("keys-established")[0]
    confirmed = trace.first("handshake-confirmed", "client")[0]
    # one RTT to the server's first flight, two to HANDSHAKE_DONE; serialization adds < 2 ms
    assert rtt <= keys <= rtt + ms(2)
    assert 2 * rtt <= confirmed <= 2 * rtt + ms(2)
    assert trace.first("handshake-confirmed", "server")[0] < confirmed


def test_unconfirmed_client_has_no_confirmation_before_handshake_done():
    p = Pair()
    p.link("server", "client").drop_filter = lambda d: any(
        isinstance(f, HandshakeDoneFrame) for f in d.payload.frames)
    p.run(seconds(5))
    assert p.client.handshake_state == HandshakeState.KEYS_ESTABLISHED
    assert not p.client.confirmed


def test_handshake_done_retransmitted_after_loss():
    p = Pair()
    dropped = []

    def drop_first(d):
        if not dropped and any(isinstance(f, HandshakeDoneFrame) for f in d.payload.frames):
            dropped.append(p.sched.now)
            return True
        return False

    p.link("server", "client").drop_filter = drop_first
    p.run(seconds(5))
    assert dropped
    assert p.client.confirmed
    assert p.net.trace.first("handshake-confirmed", "client")[0] > 2 * p.topo.rtt() + ms(100)


def _echo_streams(conn, got):
    def on_data(c, sid, data, fin):
        got.setdefault(sid, bytearray()).extend(data)
        if fin:
            got.setdefault("fin", []).append(sid)
    conn.on_stream_data = on_data


def test_interleaved_streams_keep_per_stream_order():
    p = Pair("LEO", loss=0.05)
    got = {}
    p.server.on_connection = lambda c: (p.accepted.append(c), _echo_streams(c, got))
    a = bytes(range(256)) * 200
    b = bytes(reversed(range(256))) * 200

    def send(c):
        for i in range(0, len(a), 1000):
            c.send_stream_data(0, a[i:i + 1000], fin=i + 1000 >= len(a))
            c.send_stream_data(4, b[i:i + 1000], fin=i + 1000 >= len(b))

    p.client.on_keys_established = send
    p.run(seconds(30))
    assert bytes(got[0]) == a and bytes(got[4]) == b
    assert sorted(got["fin"]) == [0, 4]


def test_write_after_fin_raises():
    p = Pair()
    p.run(seconds(2))
    p.client.send_stream_data(0, b"x", fin=True)
    with pytest.raises(StreamClosedError):
        p.client.send_stream_data(0, b"y")


@pytest.mark.parametrize("wire_format", [False, True])
def test_lossy_megabyte_reassembled_exactly(wire_format):
    world = World("LEO", 0.02, 0, seed=3, wire_format=wire_format)
    got = []
    world.connect(on_ready=lambda s: got.append(FetchClient(s.conn, keep_bodies=True)) or got[0].request(1_000_000))
    world.run(seconds(60))
    fetch = got[0].fetches[0]
    assert fetch.done_at is not None
    assert bytes(fetch.body) == content(world.server_app.seed, 0).randbytes(1_000_000)
    assert world.net.links[("server", "client")].dropped > 0


def test_duplicate_packet_ignored_and_acknowledged_again():
    p = Pair("LEO")
    got = {}
    p.server.on_connection = lambda c: (p.accepted.append(c), _echo_streams(c, got))
    dup = []
    up = p.link("client", "server")

    def duplicate(d):
        if not dup and isinstance(d.payload, Packet) and any(isinstance(f, StreamFrame) for f in d.payload.frames):
            dup.append(d)
            p.sched.call_later(ms(5), p.net.nodes["server"].receive, Datagram(d.src, d.dst, d.payload, d.size))
        return False

    up.drop_filter = duplicate
    acks_after = []

    def count_acks(d):
        if dup and p.sched.now > ms(5) and any(isinstance(f, AckFrame) for f in d.payload.frames):
            acks_after.append(p.sched.now)
        return False

    p.link("server", "client").drop_filter = count_acks
    p.client.on_keys_established = lambda c: c.send_stream_data(0, b"hello world", fin=True)
    p.run(seconds(2))
    server = p.accepted[0]
    assert server.duplicates == 1
    assert bytes(got[0]) == b"hello world"
    assert acks_after


def test_packet_numbers_strictly_increase_per_space():
    p = Pair("LEO", loss=0.02)
    seen = {}
    violations = []

    def watch(d):
        pkt = d.payload
        key = (d.src, pkt.space)
        if key in seen and pkt.pn <= seen[key]:
            violations.append((key, pkt.pn))
        seen[key] = pkt.pn
        return False

    p.link("client", "server").drop_filter = watch
    p.link("server", "client").drop_filter = watch
    p.client.on_keys_established = lambda c: c.send_stream_data(0, bytes(300_000), fin=True)
    p.run(seconds(10))
    assert not violations
    assert len(seen) >= 4


def test_wire_format_and_fast_path_deliver_same_bytes_at_same_time():
    done = []
    for wire in (False, True):
        world = World("GEO", 0.0, 0, seed=5, wire_format=wire)
        got = []
        world.connect(on_ready=lambda s: got.append(FetchClient(s.conn, keep_bodies=True)) or got[0].request(200_000))
        world.run(seconds(20))
        f = got[0].fetches[0]
        done.append((f.done_at, bytes(f.body)))
    assert done[0] == done[1]


def test_idle_timeout_closes_silent_connection():
    p = Pair("LEO")
    p.run(seconds(1))
    p.link("server", "client").drop_filter = lambda d: True
    p.link("client", "server").drop_filter = lambda d: True
    p.client.send_stream_data(0, b"x", fin=True)
    p.run(seconds(40))
    assert p.client.closed
