"""Deterministic discrete-event network core.

Virtual clock in integer microseconds, a priority event queue with insertion-order
tie-breaking, point-to-point links with drop-tail FIFO queues, and the dumbbell
topology builder (two access links at 10 Mbps around a 2 Mbps bottleneck).
"""

from __future__ import annotations

import heapq
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

US_PER_SECOND = 1_000_000

# Fixed per-packet overhead (TCP+IP). ACKs carry no payload, so they are
# 40-byte packets on the wire.
HEADER_BYTES = 40


class SimError(Exception):
    """Base class for simulator faults that abort the run."""


class SchedulingInPast(SimError):
    """An event was scheduled before the current clock (logic bug)."""


class InvalidConfig(SimError):
    """Rejected topology or run configuration."""


class EventKind(Enum):
    PACKET_ARRIVAL = "PacketArrival"
    LINK_DEPARTURE = "LinkDeparture"
    TIMER_FIRE = "TimerFire"
    AGENT_STEP = "AgentStep"
    SIM_END = "SimEnd"


@dataclass(slots=True)
class Packet:
    """Unit of simulated transmission.

    ids are unique and strictly increasing in creation order within one run.
    `seq` is a byte offset for data packets; `ack_seq` is the cumulative ACK
    offset for ACK packets.
    """

    id: int
    flow_id: int
    seq: int
    payload_size: int
    is_ack: bool
    ack_seq: int
    sent_at: int
    enqueued_at: int = 0

    @property
    def wire_size(self) -> int:
        return self.payload_size + HEADER_BYTES


@dataclass(slots=True)
class Event:
    """Queued simulator event; equal timestamps execute in insertion order."""

    at: int
    kind: EventKind
    node: str = ""
    packet: Optional[Packet] = None
    label: str = ""
    action: Optional[Callable[[], None]] = None
    seq_no: int = -1  # assigned by the scheduler on insertion


def serialization(packet: Packet, link: "Link") -> int:
    """Microseconds needed to clock `packet` onto `link`, rounded up to a tick."""
    bits = packet.wire_size * 8
    return (bits * US_PER_SECOND + link.bandwidth_bps - 1) // link.bandwidth_bps


@dataclass
class Link:
    """Directed point-to-point link with a drop-tail queue of waiting packets.

    The packet currently being serialized is held in `transmitting` and does
    not occupy a queue slot; an arrival finding the transmitter busy and the
    queue full is dropped.
    """

    name: str
    src: str
    dst: str
    bandwidth_bps: int
    prop_delay_us: int
    queue_capacity: int
    queue: deque = field(default_factory=deque)
    transmitting: Optional[Packet] = None
    busy_until: int = 0
    drops: int = 0
    propagating: int = 0
    max_queue_len: int = 0
    dropped_below_capacity: bool = False
    bytes_served: int = 0

    def occupancy(self) -> int:
        return len(self.queue)


@dataclass
class DumbbellConfig:
    """Topology and run parameters for the 4-node dumbbell."""

    access_bandwidth_bps: int = 10_000_000
    bottleneck_bandwidth_bps: int = 2_000_000
    access_prop_delay_us: int = 2_000
    bottleneck_prop_delay_us: int = 10_000
    queue_capacity: int = 100
    duration_us: int = 10 * US_PER_SECOND
    seed: int = 0

    def validate(self) -> None:
        if self.access_bandwidth_bps <= 0 or self.bottleneck_bandwidth_bps <= 0:
            raise InvalidConfig("bandwidths must be > 0")
        if self.access_prop_delay_us < 0 or self.bottleneck_prop_delay_us < 0:
            raise InvalidConfig("propagation delays must be >= 0")
        if self.queue_capacity < 1:
            raise InvalidConfig("queue_capacity must be >= 1")
        if self.duration_us <= 0:
            raise InvalidConfig("duration must be > 0")
        if self.seed < 0:
            raise InvalidConfig("seed must be >= 0")

    def fingerprint(self) -> tuple:
        """Topology identity without the seed, for comparing runs."""
        return (
            self.access_bandwidth_bps,
            self.bottleneck_bandwidth_bps,
            self.access_prop_delay_us,
            self.bottleneck_prop_delay_us,
            self.queue_capacity,
            self.duration_us,
        )


class Topology:
    """A chain of nodes joined by directed links (one per direction).

    Data packets travel toward the last node, ACKs toward the first.
    """

    def __init__(self, nodes: list[str], links: dict[tuple[str, str], Link]):
        self.nodes = list(nodes)
        self.links = dict(links)
        self._index = {n: i for i, n in enumerate(self.nodes)}

    @property
    def source(self) -> str:
        return self.nodes[0]

    @property
    def sink(self) -> str:
        return self.nodes[-1]

    def next_link(self, node: str, toward_sink: bool) -> Optional[Link]:
        i = self._index[node]
        j = i + 1 if toward_sink else i - 1
        if j < 0 or j >= len(self.nodes):
            return None
        return self.links[(node, self.nodes[j])]


def build_dumbbell(cfg: DumbbellConfig) -> Topology:
    """source -- router-0 -- router-1 -- sink, with independent queues per direction."""
    cfg.validate()
    nodes = ["source", "router-0", "router-1", "sink"]
    specs = [
        ("source", "router-0", cfg.access_bandwidth_bps, cfg.access_prop_delay_us),
        ("router-0", "router-1", cfg.bottleneck_bandwidth_bps, cfg.bottleneck_prop_delay_us),
        ("router-1", "sink", cfg.access_bandwidth_bps, cfg.access_prop_delay_us),
    ]
    links: dict[tuple[str, str], Link] = {}
    for a, b, bw, delay in specs:
        for src, dst in ((a, b), (b, a)):
            links[(src, dst)] = Link(
                name=f"{src}->{dst}",
                src=src,
                dst=dst,
                bandwidth_bps=bw,
                prop_delay_us=delay,
                queue_capacity=cfg.queue_capacity,
            )
    return Topology(nodes, links)


@dataclass
class RunStats:
    packets_sent: int
    packets_delivered: int
    packets_dropped: int
    wall_time_s: float
    end_time_us: int


class Simulator:
    """Single-threaded deterministic event loop owning all run state.

    Endpoint nodes get terminal handlers via `attach`; interior nodes forward
    packets along the chain (data toward the sink, ACKs toward the source).
    """

    def __init__(self, topology: Topology, record_events: bool = False):
        self.topology = topology
        self._heap: list[tuple[int, int, Event]] = []
        self._now = 0
        self._event_seq = 0
        self._next_packet_id = 1
        self._handlers: dict[str, Callable[[Packet, int], None]] = {}
        self._recording = record_events
        self._log: list[tuple[int, str, str, Optional[Packet], str]] = []
        self.packets_sent = 0
        self.packets_delivered = 0
        self.packets_dropped = 0
        self._wall_time_s = 0.0

    @property
    def now(self) -> int:
        return self._now

    def schedule(self, ev: Event) -> Event:
        if ev.at < self._now:
            raise SchedulingInPast(f"event at {ev.at} scheduled from {self._now}")
        ev.seq_no = self._event_seq
        self._event_seq += 1
        heapq.heappush(self._heap, (ev.at, ev.seq_no, ev))
        return ev

    def attach(self, node: str, handler: Callable[[Packet, int], None]) -> None:
        self._handlers[node] = handler

    def make_packet(
        self,
        flow_id: int,
        seq: int,
        payload_size: int,
        is_ack: bool = False,
        ack_seq: int = 0,
    ) -> Packet:
        pkt = Packet(
            id=self._next_packet_id,
            flow_id=flow_id,
            seq=seq,
            payload_size=payload_size,
            is_ack=is_ack,
            ack_seq=ack_seq,
            sent_at=self._now,
        )
        self._next_packet_id += 1
        return pkt

    def inject(self, node: str, pkt: Packet) -> None:
        """Hand a newly created packet to the network at an endpoint."""
        link = self.topology.next_link(node, toward_sink=not pkt.is_ack)
        if link is None:
            raise SimError(f"no outgoing link from {node} for this packet")
        self.packets_sent += 1
        self._transmit(link, pkt)

    def packets_in_network(self) -> int:
        """Structural count: queued, in serialization, or in propagation."""
        n = 0
        for link in self.topology.links.values():
            n += len(link.queue) + link.propagating
            if link.transmitting is not None:
                n += 1
        return n

    def run_until(self, end_us: int) -> RunStats:
        """Execute every event with timestamp <= end_us, then set the clock to end_us."""
        start = time.perf_counter()
        heap = self._heap
        while heap and heap[0][0] <= end_us:
            at, _, ev = heapq.heappop(heap)
            self._now = at
            if self._recording:
                self._log.append((at, ev.kind.value, ev.node, ev.packet, ev.label))
            if ev.action is not None:
                ev.action()
        self._now = end_us
        self._wall_time_s += time.perf_counter() - start
        return self.stats()

    def stats(self) -> RunStats:
        return RunStats(
            packets_sent=self.packets_sent,
            packets_delivered=self.packets_delivered,
            packets_dropped=self.packets_dropped,
            wall_time_s=self._wall_time_s,
            end_time_us=self._now,
        )

    def event_log_lines(self) -> list[str]:
        """Render the recorded event log as `time_us kind node detail` lines."""
        lines = []
        for at, kind, node, pkt, label in self._log:
            parts = [str(at), kind, node or "-"]
            if pkt is not None:
                word = "ack" if pkt.is_ack else "data"
                parts.append(
                    f"id={pkt.id} flow={pkt.flow_id} {word} "
                    f"seq={pkt.seq} ack_seq={pkt.ack_seq} len={pkt.payload_size}"
                )
            if label:
                parts.append(label)
            lines.append(" ".join(parts))
        return lines

    # -- link mechanics -----------------------------------------------------

    def _transmit(self, link: Link, pkt: Packet) -> None:
        if link.transmitting is None:
            self._start_transmission(link, pkt)
        elif len(link.queue) < link.queue_capacity:
            pkt.enqueued_at = self._now
            link.queue.append(pkt)
            if len(link.queue) > link.max_queue_len:
                link.max_queue_len = len(link.queue)
        else:
            if len(link.queue) != link.queue_capacity:
                link.dropped_below_capacity = True
            link.drops += 1
            self.packets_dropped += 1
            if self._recording:
                self._log.append((self._now, "PacketDrop", link.name, pkt, ""))

    def _start_transmission(self, link: Link, pkt: Packet) -> None:
        departure = self._now + serialization(pkt, link)
        link.transmitting = pkt
        link.busy_until = departure
        self.schedule(
            Event(
                at=departure,
                kind=EventKind.LINK_DEPARTURE,
                node=link.name,
                packet=pkt,
                action=lambda: self._on_departure(link, pkt),
            )
        )

    def _on_departure(self, link: Link, pkt: Packet) -> None:
        link.transmitting = None
        link.bytes_served += pkt.wire_size
        link.propagating += 1
        self.schedule(
            Event(
                at=self._now + link.prop_delay_us,
                kind=EventKind.PACKET_ARRIVAL,
                node=link.dst,
                packet=pkt,
                action=lambda: self._on_arrival(link, pkt),
            )
        )
        if link.queue:
            self._start_transmission(link, link.queue.popleft())

    def _on_arrival(self, link: Link, pkt: Packet) -> None:
        link.propagating -= 1
        node = link.dst
        nxt = self.topology.next_link(node, toward_sink=not pkt.is_ack)
        if nxt is None:
            self.packets_delivered += 1
            handler = self._handlers.get(node)
            if handler is not None:
                handler(pkt, self._now)
        else:
            self._transmit(nxt, pkt)
