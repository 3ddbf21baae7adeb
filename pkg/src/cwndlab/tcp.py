"""Sender/receiver transport logic with a pluggable congestion-control interface.

Reliable in-order byte stream over the simulator: cumulative ACKs, RFC 6298
RTT estimation, retransmission timeout with exponential backoff, fast
retransmit / fast recovery in the New Reno style (RFC 5681/6582), and the
three-hook congestion-control interface the window controllers plug into.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

from .simnet import Packet

DEFAULT_MSS = 1460
INITIAL_WINDOW_SEGMENTS = 2
INITIAL_SSTHRESH = 65_535
DUP_ACK_THRESHOLD = 3

# 200 ms floor (not the RFC's 1 s) so timeouts are observable in 10 s runs.
RTO_FLOOR_US = 200_000
RTO_CAP_US = 60_000_000
INITIAL_RTO_US = 1_000_000


class TransportError(Exception):
    pass


class AckBeyondSent(TransportError):
    """Cumulative ACK past the highest byte ever sent: protocol violation."""


class RttEstimator:
    """Smoothed RTT and RTO per RFC 6298, in integer microseconds.

    First sample: srtt = R, rttvar = R/2. Then rttvar is updated with the
    previous srtt (standard ordering), srtt with gain 1/8, and
    rto = srtt + 4*rttvar clamped to [200 ms, 60 s].
    """

    def __init__(self) -> None:
        self.srtt = 0
        self.rttvar = 0
        self.rto = INITIAL_RTO_US
        self.has_sample = False

    def add_sample(self, rtt_us: int) -> None:
        if not self.has_sample:
            self.srtt = rtt_us
            self.rttvar = rtt_us // 2
            self.has_sample = True
        else:
            self.rttvar = (3 * self.rttvar + abs(self.srtt - rtt_us)) // 4
            self.srtt = (7 * self.srtt + rtt_us) // 8
        self.rto = min(max(self.srtt + 4 * self.rttvar, RTO_FLOOR_US), RTO_CAP_US)

    def back_off(self) -> None:
        self.rto = min(self.rto * 2, RTO_CAP_US)


@dataclass
class ConnectionState:
    """Sender-side TCP state; the congestion hooks mutate only cwnd/ssthresh."""

    cwnd: int
    ssthresh: int
    mss: int = DEFAULT_MSS
    snd_nxt: int = 0
    snd_una: int = 0
    dup_ack_count: int = 0
    srtt: int = 0
    rttvar: int = 0
    rto: int = INITIAL_RTO_US
    in_fast_recovery: bool = False
    recover_point: int = 0
    # Extra send credit during fast recovery (dup-ACK inflation). Kept apart
    # from cwnd so that cwnd itself strictly drops at every loss event.
    recovery_inflation: int = 0

    @property
    def bytes_in_flight(self) -> int:
        return self.snd_nxt - self.snd_una

    @property
    def send_window(self) -> int:
        return self.cwnd + self.recovery_inflation


class CongestionControlHooks(ABC):
    """Window-control entry points invoked by the transport layer."""

    @abstractmethod
    def increase_window(self, state: ConnectionState, segments_acked: int) -> None:
        ...

    @abstractmethod
    def get_ssthresh(self, state: ConnectionState, bytes_in_flight: int) -> int:
        ...

    def on_rtt_sample(self, state: ConnectionState, rtt_us: int) -> None:
        pass


class NewReno(CongestionControlHooks):
    """Classic New Reno growth: slow start below ssthresh, then AIMD."""

    def increase_window(self, state: ConnectionState, segments_acked: int) -> None:
        if segments_acked < 1:
            return
        if state.cwnd < state.ssthresh:
            state.cwnd += segments_acked * state.mss
        else:
            for _ in range(segments_acked):
                state.cwnd += max(1, (state.mss * state.mss) // state.cwnd)

    def get_ssthresh(self, state: ConnectionState, bytes_in_flight: int) -> int:
        return max(bytes_in_flight // 2, 2 * state.mss)


class ExternalWindowControl(CongestionControlHooks):
    """cwnd is driven from outside (the agent); losses still halve ssthresh."""

    def increase_window(self, state: ConnectionState, segments_acked: int) -> None:
        pass

    def get_ssthresh(self, state: ConnectionState, bytes_in_flight: int) -> int:
        return max(bytes_in_flight // 2, 2 * state.mss)


class Sender:
    """Bulk-data TCP sender. The flow starts established; data is unbounded
    unless `max_app_bytes` caps it.

    `net` supplies the wiring into the simulator:
      send_segment(seq, size, now, retransmit) -> Packet
      rto_deadline_changed(deadline_us | None)
    """

    def __init__(
        self,
        net,
        hooks: CongestionControlHooks,
        mss: int = DEFAULT_MSS,
        max_app_bytes: Optional[int] = None,
        trace: Optional[Callable[[str, int, dict], None]] = None,
    ):
        self.state = ConnectionState(
            cwnd=INITIAL_WINDOW_SEGMENTS * mss, ssthresh=INITIAL_SSTHRESH, mss=mss
        )
        self.net = net
        self.hooks = hooks
        self.rtt = RttEstimator()
        self.max_app_bytes = max_app_bytes
        self.trace = trace
        self.snd_max = 0  # highest byte ever sent; ACK legality + Karn's rule
        self._timed: dict[int, int] = {}  # segment end -> send time, never-retransmitted
        self._timer_deadline: Optional[int] = None
        self.segments_acked_total = 0
        self.fast_retransmits = 0
        self.timeouts = 0
        self.retransmitted_segments = 0

    @property
    def timer_deadline(self) -> Optional[int]:
        return self._timer_deadline

    def start(self, now: int) -> list[Packet]:
        return self.try_send(now)

    # -- sending ------------------------------------------------------------

    def try_send(self, now: int) -> list[Packet]:
        """Emit new segments while the window allows; arm the RTO timer."""
        s = self.state
        sent: list[Packet] = []
        while True:
            if self.max_app_bytes is not None and s.snd_nxt >= self.max_app_bytes:
                break
            size = s.mss
            if self.max_app_bytes is not None:
                size = min(size, self.max_app_bytes - s.snd_nxt)
            if s.bytes_in_flight + size > s.send_window:
                break
            seq = s.snd_nxt
            end = seq + size
            retransmit = end <= self.snd_max
            pkt = self.net.send_segment(seq, size, now, retransmit)
            s.snd_nxt = end
            if retransmit:
                self.retransmitted_segments += 1
                self._timed.pop(end, None)
            else:
                self.snd_max = end
                self._timed[end] = now
            if s.bytes_in_flight > s.send_window:
                raise TransportError("window discipline violated by new send")
            sent.append(pkt)
            if self.trace:
                self.trace("send", now, {"seq": seq, "size": size, "retransmit": retransmit})
        self._ensure_timer(now)
        return sent

    def _retransmit_segment(self, seq: int, now: int) -> Packet:
        size = min(self.state.mss, (self.max_app_bytes or seq + self.state.mss) - seq)
        pkt = self.net.send_segment(seq, size, now, True)
        self.retransmitted_segments += 1
        self._timed.pop(seq + size, None)
        if self.trace:
            self.trace("send", now, {"seq": seq, "size": size, "retransmit": True})
        return pkt

    # -- ACK processing -----------------------------------------------------

    def on_ack_received(self, ack_seq: int, now: int) -> list[Packet]:
        s = self.state
        if ack_seq > self.snd_max:
            raise AckBeyondSent(f"ack {ack_seq} beyond highest sent {self.snd_max}")
        if ack_seq > s.snd_una:
            return self._on_new_ack(ack_seq, now)
        if ack_seq == s.snd_una and self.snd_max > s.snd_una:
            return self._on_dup_ack(now)
        return []

    def _on_new_ack(self, ack_seq: int, now: int) -> list[Packet]:
        s = self.state
        acked = ack_seq - s.snd_una
        segments = acked // s.mss
        self._sample_rtt(ack_seq, now)
        emitted: list[Packet] = []
        if s.in_fast_recovery:
            if ack_seq >= s.recover_point:
                # Full ACK: recovery done, deflate to ssthresh.
                s.cwnd = max(s.ssthresh, s.mss)
                s.recovery_inflation = 0
                s.in_fast_recovery = False
            else:
                # Partial ACK (RFC 6582): retransmit the next hole, deflate
                # the extra credit by the amount of new data acknowledged.
                emitted.append(self._retransmit_segment(ack_seq, now))
                s.recovery_inflation = max(s.recovery_inflation + s.mss - acked, 0)
        elif segments >= 1:
            self.hooks.increase_window(s, segments)
        s.dup_ack_count = 0
        s.snd_una = ack_seq
        if s.snd_nxt < ack_seq:
            s.snd_nxt = ack_seq
        self.segments_acked_total += segments
        if s.snd_una >= self.snd_max:
            self._timer_deadline = None
        else:
            self._set_timer(now + self.rtt.rto)
        if self.trace:
            self.trace(
                "ack",
                now,
                {"ack_seq": ack_seq, "segments": segments, "cwnd": s.cwnd,
                 "ssthresh": s.ssthresh, "fast_recovery": s.in_fast_recovery},
            )
        emitted.extend(self.try_send(now))
        return emitted

    def _on_dup_ack(self, now: int) -> list[Packet]:
        s = self.state
        s.dup_ack_count += 1
        if s.in_fast_recovery:
            # Each extra duplicate signals one packet left the network.
            s.recovery_inflation += s.mss
            return self.try_send(now)
        if s.dup_ack_count == DUP_ACK_THRESHOLD:
            s.ssthresh = max(self.hooks.get_ssthresh(s, s.bytes_in_flight), 2 * s.mss)
            s.recover_point = self.snd_max
            s.cwnd = max(s.ssthresh, s.mss)
            s.recovery_inflation = DUP_ACK_THRESHOLD * s.mss
            s.in_fast_recovery = True
            self.fast_retransmits += 1
            pkt = self._retransmit_segment(s.snd_una, now)
            if self.trace:
                self.trace(
                    "fast_retransmit",
                    now,
                    {"seq": s.snd_una, "cwnd": s.cwnd, "ssthresh": s.ssthresh},
                )
            return [pkt] + self.try_send(now)
        return []

    def _sample_rtt(self, ack_seq: int, now: int) -> None:
        # Karn's rule: only segments never retransmitted produce samples.
        best: Optional[int] = None
        for end in [e for e in self._timed if e <= ack_seq]:
            sent_at = self._timed.pop(end)
            if best is None or sent_at > best:
                best = sent_at
        if best is None:
            return
        rtt_us = now - best
        self.rtt.add_sample(rtt_us)
        s = self.state
        s.srtt, s.rttvar, s.rto = self.rtt.srtt, self.rtt.rttvar, self.rtt.rto
        self.hooks.on_rtt_sample(s, rtt_us)
        if self.trace:
            self.trace("rtt_sample", now, {"rtt_us": rtt_us, "srtt_us": s.srtt})

    # -- timeout ------------------------------------------------------------

    def on_timeout(self, now: int) -> list[Packet]:
        s = self.state
        if s.snd_una >= self.snd_max:
            # Nothing outstanding; the timer was stale.
            self._timer_deadline = None
            return []
        s.ssthresh = max(self.hooks.get_ssthresh(s, s.bytes_in_flight), 2 * s.mss)
        s.cwnd = s.mss
        s.recovery_inflation = 0
        s.in_fast_recovery = False
        s.dup_ack_count = 0
        self.rtt.back_off()
        s.rto = self.rtt.rto
        # Go-back-N: pull the send pointer back and resend from snd_una.
        # The cumulative ACKs skip whatever the receiver already buffered.
        s.snd_nxt = s.snd_una
        self._timed.clear()
        self.timeouts += 1
        self._timer_deadline = None
        if self.trace:
            self.trace("timeout", now, {"cwnd": s.cwnd, "ssthresh": s.ssthresh,
                                        "rto_us": self.rtt.rto})
        return self.try_send(now)

    def on_timer_pop(self, now: int) -> list[Packet]:
        """Lazy timer: a pop before the live deadline re-arms instead of firing."""
        if self._timer_deadline is None:
            return []
        if now < self._timer_deadline:
            self.net.rto_deadline_changed(self._timer_deadline)
            return []
        return self.on_timeout(now)

    def _ensure_timer(self, now: int) -> None:
        if self._timer_deadline is None and self.state.snd_una < self.snd_max:
            self._set_timer(now + self.rtt.rto)

    def _set_timer(self, deadline: int) -> None:
        self._timer_deadline = deadline
        self.net.rto_deadline_changed(deadline)


class Receiver:
    """In-order reassembly with cumulative ACKs; every segment is ACKed.

    Out-of-order segments are buffered (no SACK, but no discard either), so
    the application stream is always a gapless prefix of the sent stream.
    """

    def __init__(self, net, on_delivery: Optional[Callable[[int, int], None]] = None):
        self.net = net
        self.rcv_nxt = 0
        self._out_of_order: dict[int, int] = {}  # seq -> end
        self.on_delivery = on_delivery
        self.duplicate_segments = 0

    @property
    def delivered_bytes(self) -> int:
        return self.rcv_nxt

    def on_segment(self, pkt: Packet, now: int) -> None:
        seq, end = pkt.seq, pkt.seq + pkt.payload_size
        if seq == self.rcv_nxt:
            self.rcv_nxt = end
            while self.rcv_nxt in self._out_of_order:
                self.rcv_nxt = self._out_of_order.pop(self.rcv_nxt)
            if self.on_delivery is not None:
                self.on_delivery(now, self.rcv_nxt)
        elif seq > self.rcv_nxt:
            self._out_of_order[seq] = end
        else:
            self.duplicate_segments += 1
        self.net.send_ack(self.rcv_nxt, now)
