import pytest
from hypothesis import given, settings, strategies as st

from smaq.congestion import (
    HyblaWestwood, NewReno, Pacer, RttEstimator, bdp_cap, make_controller, retransmission_timer,
)
from smaq.netem.scheduler import NS_PER_S, ms

MSS = 1200


def with_rtt(ctrl, rtt):
    ctrl.rtt.update(rtt)
    return ctrl


def test_initial_window_ten_packets():
    assert NewReno().congestion_window == 10 * MSS
    assert HyblaWestwood().congestion_window == 10 * MSS


def test_hybla_rho_twenty_growth_clamped_at_cwnd():
    ctrl = with_rtt(HyblaWestwood(), ms(500))
    assert ctrl.rho == 20
    ctrl.on_packet_sent(MSS)
    ctrl.on_ack(MSS, 0, ms(500))
    # (2^20 - 1) * 1200 would be ~1.26 GB; one ack may at most double the window
    assert ctrl.congestion_window == 2 * 10 * MSS


def test_hybla_rho_is_at_least_one():
    ctrl = with_rtt(HyblaWestwood(), ms(5))
    assert ctrl.rho == 1.0


def test_hybla_at_reference_rtt_matches_newreno_update_for_update():
    reno = with_rtt(NewReno(), ms(25))
    hybla = with_rtt(HyblaWestwood(), ms(25))
    now = 0
    for i in range(400):
        now += ms(2)
        if i == 150:
            # enter congestion avoidance with identical state on both
            for c in (reno, hybla):
                c.ssthresh = c.cwnd = c.cwnd / 2
        for c in (reno, hybla):
            c.on_packet_sent(MSS)
            c.on_ack(MSS, now - ms(25), now)
        assert hybla.cwnd == pytest.approx(reno.cwnd, rel=1e-12)
    assert not reno.in_slow_start


def test_newreno_halves_on_loss():
    ctrl = NewReno()
    ctrl.cwnd = 100 * MSS
    ctrl.on_loss(MSS, ms(1), ms(2))
    assert ctrl.congestion_window == 50 * MSS
    assert ctrl.ssthresh == 50 * MSS


def test_westwood_reduces_to_pipe_estimate():
    ctrl = with_rtt(HyblaWestwood(), ms(100))
    ctrl.cwnd = 100 * MSS
    ctrl.bandwidth = 80 * MSS * NS_PER_S / ms(100)
    ctrl.on_loss(MSS, ms(1), ms(2))
    assert ctrl.congestion_window == pytest.approx(80 * MSS)
    assert ctrl.congestion_window > 50 * MSS


def test_loss_within_recovery_period_ignored():
    ctrl = NewReno()
    ctrl.cwnd = 100 * MSS
    ctrl.on_loss(MSS, ms(10), ms(20))
    ctrl.on_loss(MSS, ms(15), ms(21))
    assert ctrl.congestion_window == 50 * MSS
    ctrl.on_loss(MSS, ms(25), ms(30))
    assert ctrl.congestion_window == 25 * MSS


@settings(max_examples=200, deadline=None)
@given(st.floats(1e3, 1e8), st.floats(1e3, 1e8))
def test_westwood_ssthresh_monotone_in_bandwidth(bw_a, bw_b):
    results = []
    for bw in (bw_a, bw_b):
        ctrl = with_rtt(HyblaWestwood(), ms(500))
        ctrl.cwnd = 10_000 * MSS
        ctrl.bandwidth = bw
        ctrl.on_loss(MSS, ms(1), ms(2))
        results.append(ctrl.ssthresh)
    if bw_a <= bw_b:
        assert results[0] <= results[1]
    else:
        assert results[0] >= results[1]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["newreno", "hybla-westwood"]),
       st.lists(st.tuples(st.booleans(), st.integers(1, 5 * MSS), st.integers(1, ms(800))), max_size=200),
       st.integers(10 * MSS, 10**7))
def test_cwnd_bounds(algorithm, events, cap):
    ctrl = make_controller(algorithm, cwnd_cap=cap)
    initial_ssthresh = ctrl.ssthresh
    now = 0
    for is_ack, size, rtt in events:
        now += ms(1)
        ctrl.rtt.update(rtt)
        ctrl.on_packet_sent(size)
        if is_ack:
            ctrl.on_ack(size, now, now)
        else:
            ctrl.on_loss(size, now, now)
            assert ctrl.ssthresh <= initial_ssthresh
        assert 2 * MSS <= ctrl.cwnd <= cap
        if isinstance(ctrl, HyblaWestwood):
            assert ctrl.rho >= 1


def pto_intervals(ctrl, count):
    intervals = []
    last = 0
    for _ in range(count):
        deadline = retransmission_timer(ctrl, last)
        intervals.append(deadline - last)
        last = deadline
        ctrl.pto_count += 1
    return intervals


def test_pto_backoff_doubles():
    ctrl = NewReno()
    base = ctrl.rtt.pto_interval()
    assert pto_intervals(ctrl, 3) == [base, 2 * base, 4 * base]


def test_pto_backoff_disabled_constant():
    ctrl = NewReno(backoff_disabled_until_migration=True)
    intervals = pto_intervals(ctrl, 5)
    assert len(set(intervals)) == 1
    ctrl.on_migration_complete()
    assert retransmission_timer(ctrl, 0) > intervals[0]


def test_initial_rtt_override_gives_millisecond_pto():
    default = retransmission_timer(NewReno(), 0)
    overridden = retransmission_timer(NewReno(initial_rtt=ms(1)), 0)
    assert default == ms(333) + 4 * (ms(333) // 2)
    assert overridden == ms(1) + max(4 * ms(0.5), ms(1))
    assert overridden < ms(5)


def test_pto_includes_max_ack_delay():
    ctrl = NewReno()
    assert retransmission_timer(ctrl, 0, max_ack_delay=ms(25)) == retransmission_timer(ctrl, 0) + ms(25)


def test_rtt_estimator_smoothing():
    est = RttEstimator()
    est.update(ms(100))
    assert (est.smoothed, est.var, est.min_rtt) == (ms(100), ms(50), ms(100))
    est.update(ms(200))
    assert est.smoothed == (7 * ms(100) + ms(200)) // 8
    assert est.var == (3 * ms(50) + ms(100)) // 4


def test_bdp_cap():
    assert bdp_cap(20_000_000, ms(580)) == int(2 * 2_500_000 * 0.58)
    assert bdp_cap(20_000_000, ms(0.8)) == 10 * MSS
    assert bdp_cap(0, ms(580)) is None


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        make_controller("cubic")


def test_pacer_spreads_after_burst():
    pacer = Pacer(burst=2 * MSS)
    rate = MSS / ms(1)  # one packet per millisecond
    sends = []
    now = 0
    for _ in range(5):
        now = pacer.next_send_time(now)
        sends.append(now)
        pacer.on_sent(now, MSS, rate)
    assert sends[:3] == [0, 0, 0]
    assert sends[3] > 0
    assert sends[4] - sends[3] == pytest.approx(ms(1), abs=2)


# ---------------------------------------------------------------- simulated runs

def _push_run(algorithm, loss, duration_s=30, seed=3):
    """Server pushes an endless stream over the GEO path with ``algorithm``;
    returns (mean cwnd sampled every 100 ms, octets delivered per second)."""
    from smaq.netem.scheduler import EventScheduler, seconds
    from smaq.netem.topology import build_topology
    from smaq.transport.connection import ConnectionConfig
    from smaq.transport.endpoint import ClientEndpoint, ServerEndpoint

    topo = build_topology("GEO", loss, 0)
    sched = EventScheduler(seed)
    net = topo.instantiate(sched)
    cap = bdp_cap(topo.rate_limit, topo.rtt())
    accepted = []

    def on_conn(conn):
        accepted.append(conn)
        conn.on_confirmed = lambda c: c.set_stream_producer(
            1, lambda s: s.write(bytes(64 * 1024)), 64 * 1024)

    ServerEndpoint(net.nodes["server"], 443,
                   lambda: ConnectionConfig(congestion=algorithm, cwnd_cap=cap), on_conn)
    client = ClientEndpoint(net.nodes["client"], 5000).connect(("server", 443), ConnectionConfig())
    got = [0]
    per_second = []
    client.on_stream_data = lambda c, sid, d, fin: got.__setitem__(0, got[0] + len(d))
    cwnd = []

    def sample():
        if accepted:
            cwnd.append(accepted[0].cc.congestion_window)
        sched.call_later(ms(100), sample)

    def tick():
        per_second.append(got[0])
        sched.call_later(seconds(1), tick)

    sched.call_later(ms(100), sample)
    sched.call_later(seconds(1), tick)
    sched.run(until=seconds(duration_s))
    return sum(cwnd) / len(cwnd), per_second


def test_hybla_westwood_keeps_larger_window_under_random_loss():
    hw, _ = _push_run("hybla-westwood", 0.001)
    nr, _ = _push_run("newreno", 0.001)
    assert hw / nr > 1


@pytest.mark.parametrize("algorithm", ["newreno", "hybla-westwood"])
def test_converges_to_link_rate_without_loss(algorithm):
    from smaq.netem.topology import DEFAULT_RATE
    _, per_second = _push_run(algorithm, 0.0)
    goodput = (per_second[-1] - per_second[-11]) / 10 * 8
    assert abs(goodput - DEFAULT_RATE) <= 0.1 * DEFAULT_RATE
