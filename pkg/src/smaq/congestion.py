"""Congestion control and RTT estimation.

``NewReno`` follows RFC 9002 section 7. ``HyblaWestwood`` combines Hybla's
RTT-normalised window growth with Westwood+'s bandwidth-estimate based
loss response. All times are integer nanoseconds, windows are octets.
"""
from typing import Optional

from .netem.scheduler import NS_PER_S, ms

MAX_DATAGRAM_SIZE = 1200
INITIAL_WINDOW_PACKETS = 10
MINIMUM_WINDOW_PACKETS = 2
INITIAL_RTT = ms(333)
GRANULARITY = ms(1)
HYBLA_RTT0 = ms(25)
PACKET_THRESHOLD = 3
TIME_THRESHOLD = 9 / 8
WESTWOOD_MIN_SAMPLE = ms(50)
PACING_GAIN_SLOW_START = 2.0
PACING_GAIN_AVOIDANCE = 1.25
INFINITE_SSTHRESH = float("inf")


class RttEstimator:
    def __init__(self, initial_rtt: Optional[int] = None) -> None:
        self.initial_rtt = INITIAL_RTT if initial_rtt is None else initial_rtt
        self.reset()

    def reset(self) -> None:
        self.smoothed = self.initial_rtt
        self.var = self.initial_rtt // 2
        self.min_rtt: Optional[int] = None
        self.latest = 0
        self.has_sample = False

    def update(self, sample: int, ack_delay: int = 0, max_ack_delay: Optional[int] = None) -> None:
        self.latest = sample
        if self.min_rtt is None or sample < self.min_rtt:
            self.min_rtt = sample
        if not self.has_sample:
            self.has_sample = True
            self.smoothed = sample
            self.var = sample // 2
            return
        if max_ack_delay is not None:
            ack_delay = min(ack_delay, max_ack_delay)
        adjusted = sample
        if sample - ack_delay >= self.min_rtt:
            adjusted = sample - ack_delay
        self.var = (3 * self.var + abs(self.smoothed - adjusted)) // 4
        self.smoothed = (7 * self.smoothed + adjusted) // 8

    def pto_interval(self, max_ack_delay: int = 0) -> int:
        return self.smoothed + max(4 * self.var, GRANULARITY) + max_ack_delay

    def loss_delay(self) -> int:
        return max(int(TIME_THRESHOLD * max(self.latest, self.smoothed)), GRANULARITY)


class CongestionController:
    algorithm = "base"

    def __init__(self, max_datagram_size: int = MAX_DATAGRAM_SIZE,
                 initial_window_packets: int = INITIAL_WINDOW_PACKETS,
                 cwnd_cap: Optional[int] = None,
                 initial_rtt: Optional[int] = None,
                 backoff_disabled_until_migration: bool = False) -> None:
        self.mss = max_datagram_size
        self.initial_window = initial_window_packets * max_datagram_size
        self.min_window = MINIMUM_WINDOW_PACKETS * max_datagram_size
        self.cwnd_cap = cwnd_cap
        self.rtt = RttEstimator(initial_rtt)
        self.backoff_disabled_until_migration = backoff_disabled_until_migration
        self.pto_count = 0
        self.reset()

    def reset(self) -> None:
        """Forget path state (used on connection migration)."""
        self.cwnd = float(self.initial_window)
        self.ssthresh = INFINITE_SSTHRESH
        self.bytes_in_flight = 0
        self.recovery_start: Optional[int] = None
        self.pto_count = 0
        self.rtt.reset()

    @property
    def congestion_window(self) -> int:
        return int(self.cwnd)

    @property
    def in_slow_start(self) -> bool:
        return self.cwnd < self.ssthresh

    def _clamp(self) -> None:
        if self.cwnd_cap is not None and self.cwnd > self.cwnd_cap:
            self.cwnd = float(max(self.cwnd_cap, self.min_window))
        if self.cwnd < self.min_window:
            self.cwnd = float(self.min_window)

    def on_packet_sent(self, size: int) -> None:
        self.bytes_in_flight += size

    def on_packet_discarded(self, size: int) -> None:
        self.bytes_in_flight = max(0, self.bytes_in_flight - size)

    def in_recovery(self, sent_time: int) -> bool:
        return self.recovery_start is not None and sent_time <= self.recovery_start

    def on_ack(self, acked_octets: int, sent_time: int, now: int) -> None:
        """Acknowledgement of ``acked_octets`` in-flight octets, the newest sent at ``sent_time``."""
        self.bytes_in_flight = max(0, self.bytes_in_flight - acked_octets)
        if self.in_recovery(sent_time):
            return
        self._grow(acked_octets, now)
        self._clamp()

    def on_loss(self, lost_octets: int, largest_lost_sent_time: int, now: int) -> None:
        self.bytes_in_flight = max(0, self.bytes_in_flight - lost_octets)
        if self.in_recovery(largest_lost_sent_time):
            return
        self.recovery_start = now
        self._reduce(now)
        self._clamp()

    def _grow(self, acked: int, now: int) -> None:
        raise NotImplementedError

    def _reduce(self, now: int) -> None:
        raise NotImplementedError

    def can_send(self, size: int) -> bool:
        return self.bytes_in_flight + size <= self.cwnd

    def pacing_rate(self) -> float:
        """Octets per nanosecond."""
        gain = PACING_GAIN_SLOW_START if self.in_slow_start else PACING_GAIN_AVOIDANCE
        return gain * self.cwnd / max(self.rtt.smoothed, 1)

    def on_migration_complete(self) -> None:
        self.backoff_disabled_until_migration = False


class NewReno(CongestionController):
    algorithm = "newreno"

    def _grow(self, acked: int, now: int) -> None:
        if self.cwnd < self.ssthresh:
            self.cwnd += acked
        else:
            self.cwnd += self.mss * acked / self.cwnd

    def _reduce(self, now: int) -> None:
        self.ssthresh = max(self.cwnd / 2, self.min_window)
        self.cwnd = self.ssthresh


class HyblaWestwood(CongestionController):
    """Hybla window growth with Westwood+ loss response."""

    algorithm = "hybla-westwood"

    def __init__(self, *args, rtt0: int = HYBLA_RTT0, **kwargs) -> None:
        self.rtt0 = rtt0
        super().__init__(*args, **kwargs)

    def reset(self) -> None:
        super().reset()
        self.bandwidth = 0.0  # octets per second
        self._bw_acked = 0
        self._bw_start: Optional[int] = None

    @property
    def rho(self) -> float:
        return max(1.0, self.rtt.smoothed / self.rtt0)

    def _grow(self, acked: int, now: int) -> None:
        rho = self.rho
        if self.cwnd < self.ssthresh:
            # per-ack growth may at most double the window
            increment = (2.0 ** min(rho, 60.0) - 1.0) * acked
            self.cwnd += min(increment, self.cwnd)
        else:
            self.cwnd += rho * rho * self.mss * acked / self.cwnd

    def on_ack(self, acked_octets: int, sent_time: int, now: int) -> None:
        self._sample_bandwidth(acked_octets, now)
        super().on_ack(acked_octets, sent_time, now)

    def _sample_bandwidth(self, acked: int, now: int) -> None:
        if self._bw_start is None:
            self._bw_start = now
            self._bw_acked = 0
            return
        self._bw_acked += acked
        elapsed = now - self._bw_start
        if elapsed >= max(self.rtt.smoothed, WESTWOOD_MIN_SAMPLE):
            sample = self._bw_acked * NS_PER_S / elapsed
            if self.bandwidth == 0.0 or (self.in_slow_start and sample > self.bandwidth):
                # the delivery rate only rises during slow start, so older
                # samples would drag the average below the current pipe
                self.bandwidth = sample
            else:
                self.bandwidth = (7 * self.bandwidth + sample) / 8
            self._bw_start = now
            self._bw_acked = 0

    def westwood_ssthresh(self) -> float:
        min_rtt = self.rtt.min_rtt if self.rtt.min_rtt is not None else self.rtt.smoothed
        return max(self.bandwidth * min_rtt / NS_PER_S, self.min_window)

    def _reduce(self, now: int) -> None:
        if self.bandwidth > 0.0:
            self.ssthresh = self.westwood_ssthresh()
        else:
            # no estimate yet: behave like Reno
            self.ssthresh = max(self.cwnd / 2, self.min_window)
        self.cwnd = min(self.cwnd, self.ssthresh)


ALGORITHMS = {cls.algorithm: cls for cls in (NewReno, HyblaWestwood)}


def make_controller(algorithm: str, **kwargs) -> CongestionController:
    try:
        cls = ALGORITHMS[algorithm]
    except KeyError:
        raise ValueError(f"unknown congestion control algorithm {algorithm!r}") from None
    return cls(**kwargs)


def retransmission_timer(ctrl: CongestionController, last_ack_eliciting_sent: int,
                         max_ack_delay: int = 0) -> int:
    """PTO deadline, doubling per consecutive timeout unless backoff is disabled."""
    interval = ctrl.rtt.pto_interval(max_ack_delay)
    if not ctrl.backoff_disabled_until_migration:
        interval <<= min(ctrl.pto_count, 16)
    return last_ack_eliciting_sent + interval


def bdp_cap(rate_bps: int, rtt: int, factor: float = 2.0, floor: int = INITIAL_WINDOW_PACKETS * MAX_DATAGRAM_SIZE) -> Optional[int]:
    """Default window cap: ``factor`` bandwidth-delay products."""
    if not rate_bps:
        return None
    return max(int(factor * rate_bps / 8 * rtt / NS_PER_S), floor)


class Pacer:
    """Even pacing with a burst allowance."""

    def __init__(self, burst: int = INITIAL_WINDOW_PACKETS * MAX_DATAGRAM_SIZE) -> None:
        self.burst = burst
        self.next_send = float("-inf")

    def next_send_time(self, now: int) -> int:
        return int(self.next_send) if self.next_send > now else now

    def on_sent(self, now: int, size: int, rate: float) -> None:
        if rate <= 0:
            return
        floor = now - self.burst / rate
        if self.next_send < floor:
            self.next_send = floor
        self.next_send += size / rate
