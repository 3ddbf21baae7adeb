"""Wiring of one bulk TCP flow onto a dumbbell simulation."""

from __future__ import annotations

from typing import Callable, Optional

from .simnet import (
    DumbbellConfig,
    Event,
    EventKind,
    Simulator,
    build_dumbbell,
)
from .tcp import CongestionControlHooks, Receiver, Sender

FLOW_ID = 0


class _SenderPort:
    """Network adapter the sender talks to: packet injection and the RTO timer."""

    def __init__(self, sim: Simulator, source: str):
        self.sim = sim
        self.source = source
        self.sender: Optional[Sender] = None
        self._pop_at: Optional[int] = None

    def send_segment(self, seq: int, size: int, now: int, retransmit: bool):
        pkt = self.sim.make_packet(FLOW_ID, seq, size)
        self.sim.inject(self.source, pkt)
        return pkt

    def rto_deadline_changed(self, deadline: Optional[int]) -> None:
        if deadline is None:
            return
        if self._pop_at is not None and self._pop_at <= deadline:
            return  # pending pop will lazily re-arm
        self._pop_at = deadline
        self.sim.schedule(
            Event(
                at=deadline,
                kind=EventKind.TIMER_FIRE,
                node=self.source,
                label="rto",
                action=self._pop,
            )
        )

    def _pop(self) -> None:
        self._pop_at = None
        if self.sender is not None:
            self.sender.on_timer_pop(self.sim.now)


class _ReceiverPort:
    def __init__(self, sim: Simulator, sink: str):
        self.sim = sim
        self.sink = sink

    def send_ack(self, ack_seq: int, now: int) -> None:
        pkt = self.sim.make_packet(FLOW_ID, 0, 0, is_ack=True, ack_seq=ack_seq)
        self.sim.inject(self.sink, pkt)


class TcpSession:
    """One sender/receiver pair on a freshly built dumbbell."""

    def __init__(
        self,
        cfg: DumbbellConfig,
        hooks: CongestionControlHooks,
        record_events: bool = False,
        sender_trace: Optional[Callable[[str, int, dict], None]] = None,
        on_delivery: Optional[Callable[[int, int], None]] = None,
        max_app_bytes: Optional[int] = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.topology = build_dumbbell(cfg)
        self.sim = Simulator(self.topology, record_events=record_events)
        sender_port = _SenderPort(self.sim, self.topology.source)
        receiver_port = _ReceiverPort(self.sim, self.topology.sink)
        self.sender = Sender(
            sender_port, hooks, max_app_bytes=max_app_bytes, trace=sender_trace
        )
        sender_port.sender = self.sender
        self.receiver = Receiver(receiver_port, on_delivery=on_delivery)
        self.sim.attach(self.topology.sink, self.receiver.on_segment)
        self.sim.attach(
            self.topology.source,
            lambda pkt, now: self.sender.on_ack_received(pkt.ack_seq, now),
        )
        self._started = False

    def start(self) -> None:
        if not self._started:
            self._started = True
            self.sender.start(self.sim.now)

    def run_until(self, end_us: int):
        return self.sim.run_until(end_us)

    @property
    def drops(self) -> int:
        return self.sim.packets_dropped

    @property
    def delivered_bytes(self) -> int:
        return self.receiver.delivered_bytes

    @property
    def srtt_us(self) -> int:
        return self.sender.rtt.srtt if self.sender.rtt.has_sample else 0
