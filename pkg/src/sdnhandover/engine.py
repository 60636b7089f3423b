"""Deterministic discrete-event engine and the two link models.

Events fire in ``(fire_at, rank, seq)`` order, ``seq`` being assigned at
scheduling time, so two runs of the same scenario with the same seed produce
the same trace line for line.  ``rank`` is 0 for everything except traffic
emissions (1): an application packet emitted at the very microsecond an
activity completes sees the activity's effect.

Both link models share one FIFO single-server :class:`Channel`: a frame waits
until the medium is free, occupies it for ``size * 8 / rate`` and then arrives
``base_delay + jitter`` later unless the loss draw drops it.  A Wi-Fi BSS
relays every device-to-device frame through its AP, i.e. two channel hops.
"""
from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .core import Packet, US_PER_MS

BT_RANGE_M = 10.0


class EventKind(enum.Enum):
    PACKET_ARRIVAL = "packet-arrival"
    TIMER_EXPIRY = "timer-expiry"
    INTERFACE_READY = "interface-ready"
    ACTIVITY_COMPLETE = "activity-complete"
    TRAFFIC_EMIT = "traffic-emit"


@dataclass(order=True)
class Event:
    fire_at: int
    rank: int
    seq: int
    kind: EventKind = field(compare=False)
    action: Callable[[], None] | None = field(compare=False, default=None, repr=False)
    device: str = field(compare=False, default="-")
    detail: str = field(compare=False, default="")
    cancelled: bool = field(compare=False, default=False)


class SchedulingError(ValueError):
    pass


class Engine:
    """Single-threaded event loop owning the scenario clock and RNG."""

    def __init__(self, seed: int = 0, *, trace: bool = True):
        self.now = 0
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._heap: list[Event] = []
        self._seq = 0
        self._ids = 0
        self.fired = 0
        self.trace: list[str] | None = [] if trace else None

    def next_id(self) -> int:
        self._ids += 1
        return self._ids

    def schedule(self, fire_at: int, kind: EventKind, action: Callable[[], None] | None = None,
                 device: str = "-", detail: str = "") -> Event:
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at {fire_at} us, clock is at {self.now} us")
        rank = 1 if kind is EventKind.TRAFFIC_EMIT else 0
        ev = Event(fire_at, rank, self._seq, kind, action, device, detail)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def after(self, delay: int, kind: EventKind, action: Callable[[], None] | None = None,
              device: str = "-", detail: str = "") -> Event:
        return self.schedule(self.now + int(delay), kind, action, device, detail)

    @staticmethod
    def cancel(ev: Event | None) -> None:
        if ev is not None:
            ev.cancelled = True

    def log(self, kind: str, device: str, detail: str) -> None:
        """Trace-only record (state changes, drops) stamped with the current time."""
        if self.trace is not None:
            self.trace.append(f"{self.now}\t{kind}\t{device}\t{detail}")

    def pending(self) -> int:
        return sum(1 for ev in self._heap if not ev.cancelled)

    def run_until(self, deadline: int, stop: Callable[[], bool] | None = None) -> int:
        """Fire events up to ``deadline``; ``stop`` is checked after each event.

        Returns the clock: ``deadline`` unless ``stop`` ended the run early.
        """
        deadline = int(deadline)
        heap = self._heap
        while heap and heap[0].fire_at <= deadline:
            ev = heapq.heappop(heap)
            if ev.cancelled:
                continue
            self.now = ev.fire_at
            self.fired += 1
            if self.trace is not None:
                self.trace.append(f"{ev.fire_at}\t{ev.kind.value}\t{ev.device}\t{ev.detail}")
            if ev.action is not None:
                ev.action()
            if stop is not None and stop():
                return self.now
        self.now = max(self.now, deadline)
        return self.now

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace or ())


@dataclass(frozen=True)
class JitterDist:
    """Extra per-frame delay; ``uniform`` draws from [a, b), ``exponential`` has mean ``a``."""
    kind: str = "none"
    a_us: int = 0
    b_us: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "exponential"):
            raise ValueError(f"unknown jitter distribution {self.kind!r}")
        if self.a_us < 0 or self.b_us < 0 or (self.kind == "uniform" and self.b_us < self.a_us):
            raise ValueError("jitter bounds must be non-negative and ordered")

    @classmethod
    def uniform_ms(cls, width_ms: float) -> "JitterDist":
        if width_ms <= 0:
            return cls()
        return cls("uniform", 0, int(round(width_ms * US_PER_MS)))

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "none" or (self.kind == "uniform" and self.a_us == self.b_us):
            return self.a_us if self.kind == "uniform" else 0
        if self.kind == "uniform":
            return int(rng.uniform(self.a_us, self.b_us))
        return int(rng.exponential(self.a_us))

    @property
    def width_ms(self) -> float:
        if self.kind == "uniform":
            return (self.b_us - self.a_us) / US_PER_MS
        if self.kind == "exponential":
            return self.a_us / US_PER_MS
        return 0.0


@dataclass(frozen=True)
class LinkParams:
    base_delay_us: int
    jitter: JitterDist = JitterDist()
    loss_prob: float = 0.0
    rate_kbps: float = 1000.0
    range_m: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"loss_prob {self.loss_prob} outside [0, 1]")
        if self.rate_kbps <= 0:
            raise ValueError("rate_kbps must be positive")
        if self.range_m <= 0:
            raise ValueError("range_m must be positive")
        if self.base_delay_us < 0:
            raise ValueError("base_delay must be non-negative")

    def serialization_us(self, size_bytes: int) -> int:
        # bits / kbps gives ms
        return int(round(size_bytes * 8 * 1000 / self.rate_kbps))


def default_wifi_params(jitter_ms: float = 2.0) -> LinkParams:
    return LinkParams(base_delay_us=2 * US_PER_MS, jitter=JitterDist.uniform_ms(jitter_ms),
                      loss_prob=0.0, rate_kbps=20_000.0, range_m=100.0)


def default_bt_params(jitter_ms: float = 10.0) -> LinkParams:
    return LinkParams(base_delay_us=15 * US_PER_MS, jitter=JitterDist.uniform_ms(jitter_ms),
                      loss_prob=0.0, rate_kbps=700.0, range_m=BT_RANGE_M)


@dataclass(frozen=True)
class Position:
    """Static point, or piecewise-linear path through ``(t_us, x, y)`` waypoints."""
    device: str
    x: float = 0.0
    y: float = 0.0
    waypoints: tuple[tuple[int, float, float], ...] = ()

    def at(self, t_us: int) -> tuple[float, float]:
        if not self.waypoints:
            return self.x, self.y
        ts = [w[0] for w in self.waypoints]
        return (float(np.interp(t_us, ts, [w[1] for w in self.waypoints])),
                float(np.interp(t_us, ts, [w[2] for w in self.waypoints])))


def distance(a: Position, b: Position, t_us: int = 0) -> float:
    ax, ay = a.at(t_us)
    bx, by = b.at(t_us)
    return math.hypot(ax - bx, ay - by)


def in_bt_range(a: Position, b: Position, t_us: int = 0, range_m: float = BT_RANGE_M) -> bool:
    return distance(a, b, t_us) <= range_m


class Outcome(enum.Enum):
    QUEUED = "queued"
    LOST = "lost"
    OUT_OF_RANGE = "out_of_range"


@dataclass
class TxRecord:
    start: int
    end: int
    src: str
    dst: str
    payload_id: int


class Channel:
    """FIFO single-server half-duplex medium."""

    def __init__(self, name: str, engine: Engine, params: LinkParams):
        self.name = name
        self.engine = engine
        self.params = params
        self.busy_until = 0
        self.tx_log: list[TxRecord] = []
        self.sent = 0
        self.delivered = 0
        self.lost = 0

    @property
    def in_flight(self) -> int:
        return self.sent - self.delivered - self.lost

    def hop(self, src: str, dst: str, packet: Packet,
            on_arrival: Callable[[Packet], None], on_lost: Callable[[Packet], None]) -> Outcome:
        eng = self.engine
        p = self.params
        start = max(eng.now, self.busy_until)
        end = start + p.serialization_us(packet.size_bytes)
        self.busy_until = end
        self.tx_log.append(TxRecord(start, end, src, dst, packet.payload_id))
        self.sent += 1
        if p.loss_prob > 0.0 and eng.rng.random() < p.loss_prob:
            self.lost += 1
            eng.log("drop", src, f"{self.name} loss payload={packet.payload_id}")
            on_lost(packet)
            return Outcome.LOST
        arrive = end + p.base_delay_us + p.jitter.sample(eng.rng)

        def land():
            self.delivered += 1
            on_arrival(packet)

        eng.schedule(arrive, EventKind.PACKET_ARRIVAL, land, dst,
                     f"{self.name} {src}->{dst} payload={packet.payload_id}")
        return Outcome.QUEUED

    def overlaps(self) -> list[tuple[TxRecord, TxRecord]]:
        """Pairs of transmissions that overlap in time (must be empty)."""
        out = []
        for prev, cur in zip(self.tx_log, self.tx_log[1:]):
            if cur.start < prev.end:
                out.append((prev, cur))
        return out


class LinkFailure(RuntimeError):
    """Destination is out of range of the sender on this network."""


PositionLookup = Callable[[str], Position | None]


class _Network:
    kind_name = "net"

    def __init__(self, name: str, engine: Engine, params: LinkParams, members: Iterable[str],
                 positions: PositionLookup | None = None):
        self.name = name
        self.engine = engine
        self.params = params
        self.members = set(members)
        self.channel = Channel(name, engine, params)
        self.positions = positions or (lambda _dev: None)
        # end-to-end frame accounting, per destination device
        self.sent = 0
        self.delivered = 0
        self.lost = 0
        self.in_flight_to: dict[str, int] = {}

    @property
    def in_flight(self) -> int:
        return self.sent - self.delivered - self.lost

    def _begin(self, dst: str) -> None:
        self.sent += 1
        self.in_flight_to[dst] = self.in_flight_to.get(dst, 0) + 1

    def _finish(self, dst: str, delivered: bool) -> None:
        self.in_flight_to[dst] -= 1
        if delivered:
            self.delivered += 1
        else:
            self.lost += 1


class Piconet(_Network):
    """Master-arbitrated Bluetooth piconet; members talk directly when in range."""
    kind_name = "piconet"

    def __init__(self, name: str, engine: Engine, params: LinkParams, master: str,
                 members: Iterable[str], positions: PositionLookup | None = None):
        members = set(members) | {master}
        super().__init__(name, engine, params, members, positions)
        self.master = master

    def reachable(self, a: str, b: str) -> bool:
        pa, pb = self.positions(a), self.positions(b)
        if pa is None or pb is None:
            return True
        return in_bt_range(pa, pb, self.engine.now, self.params.range_m)

    def transmit(self, src: str, dst: str, packet: Packet,
                 on_arrival: Callable[[Packet], None], on_lost: Callable[[Packet], None]) -> Outcome:
        if src not in self.members or dst not in self.members:
            raise LinkFailure(f"{src}->{dst} not both in piconet {self.name}")
        if not self.reachable(src, dst):
            raise LinkFailure(f"{dst} out of Bluetooth range of {src}")
        self._begin(dst)

        def arrived(p: Packet):
            self._finish(dst, True)
            on_arrival(p)

        def lost(p: Packet):
            self._finish(dst, False)
            on_lost(p)

        return self.channel.hop(src, dst, packet, arrived, lost)


class WifiBss(_Network):
    """Infrastructure BSS: device-to-device frames take two hops through the AP."""
    kind_name = "bss"

    def __init__(self, name: str, engine: Engine, params: LinkParams, ap: str,
                 members: Iterable[str], positions: PositionLookup | None = None,
                 ap_position: Position | None = None):
        super().__init__(name, engine, params, members, positions)
        self.ap = ap
        self.ap_position = ap_position

    def reachable(self, a: str, b: str) -> bool:
        return self.in_coverage(a) and self.in_coverage(b)

    def in_coverage(self, dev: str) -> bool:
        if dev == self.ap or self.ap_position is None:
            return True
        pos = self.positions(dev)
        if pos is None:
            return True
        return distance(pos, self.ap_position, self.engine.now) <= self.params.range_m

    def transmit(self, src: str, dst: str, packet: Packet,
                 on_arrival: Callable[[Packet], None], on_lost: Callable[[Packet], None]) -> Outcome:
        for dev in (src, dst):
            if dev != self.ap and dev not in self.members:
                raise LinkFailure(f"{dev} is not associated with {self.name}")
        if not self.reachable(src, dst):
            raise LinkFailure(f"{src}->{dst} outside coverage of {self.name}")
        self._begin(dst)

        def arrived(p: Packet):
            self._finish(dst, True)
            on_arrival(p)

        def lost(p: Packet):
            self._finish(dst, False)
            on_lost(p)

        if src == self.ap or dst == self.ap:
            return self.channel.hop(src, dst, packet, arrived, lost)

        def at_ap(p: Packet):
            self.channel.hop(self.ap, dst, p, arrived, lost)

        return self.channel.hop(src, self.ap, packet, at_ap, lost)


def transmit(link: Piconet | WifiBss, src: str, dst: str, packet: Packet,
             on_arrival: Callable[[Packet], None],
             on_lost: Callable[[Packet], None] = lambda _p: None) -> Outcome:
    """Send ``packet`` over ``link``; out-of-range destinations yield ``OUT_OF_RANGE``."""
    try:
        return link.transmit(src, dst, packet, on_arrival, on_lost)
    except LinkFailure:
        link.engine.log("link-failure", src, f"{link.name} {src}->{dst}")
        return Outcome.OUT_OF_RANGE
