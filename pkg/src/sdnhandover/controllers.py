"""Per-device controller stack.

``LocalController`` answers packet-ins from the LocalDb.  ``ExtendedController``
holds the LocalDb, runs the one-time D2D record exchange, handles ARP, and acts
as a temporary controller (``fallback_install``) while the local one is dead.
Both controllers synthesise rules with the same function, so for equal LocalDb
state their rules differ only in ``origin``, ``rule_id`` and ``installed_at``.

Applications only ever see virtual addresses: the egress rule of a session
rewrites virtual -> physical and the ingress rule physical -> virtual.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

from .core import InterfaceDesc, InterfaceKind, IpAddress, MacAddress, Packet, Protocol
from .switch import (ControllerUnavailable, FlowRule, MatchFields, Port,
                     RuleOrigin, UnknownPeer, kind_of, output, port_of, set_eth_dst,
                     set_eth_src, set_ip_dst, set_ip_src)

SESSION_PRIORITY = 100
CONTROL_FRAME_BYTES = 64
RTT_GAIN = 1 / 8


@dataclass(frozen=True)
class VirtualEndpoint:
    virtual_mac: MacAddress
    virtual_ip: IpAddress

    def desc(self, port: int = 5001) -> InterfaceDesc:
        return InterfaceDesc(self.virtual_mac, self.virtual_ip, port)


@dataclass(frozen=True)
class InterfaceRecord:
    kind: InterfaceKind
    mac: MacAddress
    ip: IpAddress
    network: str = ""

    def desc(self, port: int = 5001) -> InterfaceDesc:
        return InterfaceDesc(self.mac, self.ip, port)


@dataclass
class PeerRecord:
    device: str
    virtual: VirtualEndpoint
    interfaces: dict[InterfaceKind, InterfaceRecord]
    # kind this device uses to reach the peer (or its relay)
    link_kind: InterfaceKind
    reachable: dict[InterfaceKind, bool] = field(default_factory=dict)
    last_updated: int = 0
    via: str | None = None


@dataclass(frozen=True)
class Bridge:
    """Relay duty: rewrite and pass traffic between two endpoints."""
    a: str
    a_kind: InterfaceKind
    b: str
    b_kind: InterfaceKind


@dataclass
class LocalDb:
    owner: str
    virtual: VirtualEndpoint
    self_records: dict[InterfaceKind, InterfaceRecord]
    peer_records: dict[str, PeerRecord] = field(default_factory=dict)
    exchange_done: dict[str, bool] = field(default_factory=dict)
    bridges: list[Bridge] = field(default_factory=list)
    throughput_kbps: list[float] = field(default_factory=list)
    rtt_us: float = 0.0

    def __post_init__(self):
        missing = set(InterfaceKind) - set(self.self_records)
        if missing:
            raise ValueError(f"LocalDb of {self.owner} lacks self records for {sorted(k.value for k in missing)}")

    def update_rtt(self, sample_us: float) -> float:
        if self.rtt_us <= 0:
            self.rtt_us = float(sample_us)
        else:
            self.rtt_us += RTT_GAIN * (sample_us - self.rtt_us)
        return self.rtt_us

    def learn(self, peer: str, virtual: VirtualEndpoint, records: Iterable[InterfaceRecord],
              link_kind: InterfaceKind, now: int, via: str | None = None) -> PeerRecord:
        recs = {r.kind: r for r in records}
        rec = self.peer_records.get(peer)
        if rec is None:
            rec = PeerRecord(peer, virtual, recs, link_kind, {link_kind: True}, now, via)
            self.peer_records[peer] = rec
        else:
            rec.interfaces.update(recs)
            rec.virtual = virtual
            rec.last_updated = now
        return rec

    def peer_by_vip(self, ip: IpAddress) -> PeerRecord | None:
        for rec in self.peer_records.values():
            if rec.virtual.virtual_ip.value == ip.value:
                return rec
        return None

    def hop_record(self, peer: PeerRecord, kind: InterfaceKind) -> InterfaceRecord:
        """Physical next-hop interface for reaching ``peer`` over ``kind``."""
        if peer.via is None:
            return peer.interfaces[kind]
        return self.peer_records[peer.via].interfaces[kind]

    def config_state(self) -> tuple:
        """Everything except the running traffic statistics."""
        peers = tuple(sorted(
            (p.device, p.virtual, tuple(sorted(p.interfaces.items(), key=lambda kv: kv[0].value)),
             p.link_kind, tuple(sorted(p.reachable.items(), key=lambda kv: kv[0].value)),
             p.last_updated, p.via)
            for p in self.peer_records.values()))
        return (self.owner, self.virtual, tuple(sorted(self.self_records.items(), key=lambda kv: kv[0].value)),
                peers, tuple(sorted(self.exchange_done.items())), tuple(self.bridges))

    def dump(self) -> str:
        rows: list[tuple[str, str]] = [
            ("self.virtual.mac", str(self.virtual.virtual_mac)),
            ("self.virtual.ip", str(self.virtual.virtual_ip)),
            ("stats.rtt_us", f"{self.rtt_us:.1f}"),
            ("stats.throughput_samples", str(len(self.throughput_kbps))),
        ]
        for kind, r in self.self_records.items():
            rows += [(f"self.{kind.value}.mac", str(r.mac)), (f"self.{kind.value}.ip", str(r.ip)),
                     (f"self.{kind.value}.network", r.network or "-")]
        for name, p in self.peer_records.items():
            base = f"peer.{name}"
            rows += [(f"{base}.virtual.ip", str(p.virtual.virtual_ip)),
                     (f"{base}.virtual.mac", str(p.virtual.virtual_mac)),
                     (f"{base}.link", p.link_kind.value), (f"{base}.via", p.via or "-"),
                     (f"{base}.last_updated", str(p.last_updated))]
            for kind, r in p.interfaces.items():
                rows += [(f"{base}.{kind.value}.mac", str(r.mac)), (f"{base}.{kind.value}.ip", str(r.ip)),
                         (f"{base}.{kind.value}.reachable", str(p.reachable.get(kind, False)).lower())]
        for name, done in self.exchange_done.items():
            rows.append((f"exchange.{name}", str(done).lower()))
        for i, b in enumerate(self.bridges):
            rows.append((f"bridge.{i}", f"{b.a}/{b.a_kind.value}<->{b.b}/{b.b_kind.value}"))
        return "".join(f"{k} = {v}\n" for k, v in sorted(rows))


class Liveness(enum.Enum):
    ALIVE = "alive"
    DEAD = "dead"


@dataclass
class ControllerLiveness:
    state: Liveness = Liveness.ALIVE
    died_at: int | None = None
    revived_at: int | None = None

    @property
    def alive(self) -> bool:
        return self.state is Liveness.ALIVE

    def kill(self, now: int) -> None:
        self.state = Liveness.DEAD
        self.died_at = now

    def revive(self, now: int) -> None:
        self.state = Liveness.ALIVE
        self.revived_at = now


# -- rule synthesis ---------------------------------------------------------

def _rule(ids: Callable[[], int], match: MatchFields, actions, now: int, origin: RuleOrigin) -> FlowRule:
    return FlowRule(ids(), SESSION_PRIORITY, match, tuple(actions), now, origin)


def egress_rule(db: LocalDb, peer: PeerRecord, kind: InterfaceKind, ids, now, origin) -> FlowRule:
    me = db.self_records[kind]
    hop = db.hop_record(peer, kind)
    match = MatchFields(in_port=Port.VIRTUAL, ip_src=db.virtual.virtual_ip, ip_dst=peer.virtual.virtual_ip)
    return _rule(ids, match, [set_eth_src(me.mac), set_ip_src(me.ip), set_eth_dst(hop.mac),
                              set_ip_dst(hop.ip), output(port_of(kind))], now, origin)


def ingress_rule(db: LocalDb, peer: PeerRecord, kind: InterfaceKind, ids, now, origin) -> FlowRule:
    me = db.self_records[kind]
    hop = db.hop_record(peer, kind)
    match = MatchFields(in_port=port_of(kind), ip_src=hop.ip, ip_dst=me.ip)
    return _rule(ids, match, [set_eth_src(peer.virtual.virtual_mac), set_ip_src(peer.virtual.virtual_ip),
                              set_eth_dst(db.virtual.virtual_mac), set_ip_dst(db.virtual.virtual_ip),
                              output(Port.VIRTUAL)], now, origin)


def session_rules(db: LocalDb, peer: PeerRecord, kind: InterfaceKind, ids, now: int,
                  origin: RuleOrigin, ingress_kind: InterfaceKind | None = None) -> tuple[FlowRule, FlowRule]:
    return (egress_rule(db, peer, kind, ids, now, origin),
            ingress_rule(db, peer, ingress_kind or kind, ids, now, origin))


def bridge_rules(db: LocalDb, bridge: Bridge, ids, now: int, origin: RuleOrigin) -> tuple[FlowRule, FlowRule]:
    out = []
    for src, sk, dst, dk in ((bridge.a, bridge.a_kind, bridge.b, bridge.b_kind),
                             (bridge.b, bridge.b_kind, bridge.a, bridge.a_kind)):
        s_rec = db.peer_records[src].interfaces[sk]
        d_rec = db.peer_records[dst].interfaces[dk]
        me_in, me_out = db.self_records[sk], db.self_records[dk]
        match = MatchFields(in_port=port_of(sk), ip_src=s_rec.ip, ip_dst=me_in.ip)
        out.append(_rule(ids, match, [set_eth_src(me_out.mac), set_ip_src(me_out.ip), set_eth_dst(d_rec.mac),
                                      set_ip_dst(d_rec.ip), output(port_of(dk))], now, origin))
    return out[0], out[1]


def synthesize_rules(db: LocalDb, p: Packet, in_port: Port, ids, now: int,
                     origin: RuleOrigin) -> tuple[FlowRule, FlowRule]:
    """Rule pair answering a table miss for ``p`` arriving on ``in_port``."""
    if in_port is Port.VIRTUAL:
        peer = db.peer_by_vip(p.dst_ip)
        if peer is None:
            raise UnknownPeer(f"{db.owner}: no peer with virtual ip {p.dst_ip.dotted}")
        return session_rules(db, peer, peer.link_kind, ids, now, origin)

    kind = kind_of(in_port)
    for bridge in db.bridges:
        for src, sk in ((bridge.a, bridge.a_kind), (bridge.b, bridge.b_kind)):
            rec = db.peer_records.get(src)
            if sk is kind and rec is not None and rec.interfaces[sk].ip.value == p.src_ip.value:
                return bridge_rules(db, bridge, ids, now, origin)
    # relayed peers first: a relay never carries its own session with a bridged endpoint
    for peer in db.peer_records.values():
        if peer.via is not None and db.hop_record(peer, kind).ip.value == p.src_ip.value:
            return session_rules(db, peer, peer.link_kind, ids, now, origin, ingress_kind=kind)
    for peer in db.peer_records.values():
        if peer.via is None and kind in peer.interfaces and peer.interfaces[kind].ip.value == p.src_ip.value:
            return session_rules(db, peer, peer.link_kind, ids, now, origin, ingress_kind=kind)
    raise UnknownPeer(f"{db.owner}: no peer owns {p.src_ip.dotted} on {kind.value}")


class RuleIds:
    def __init__(self, start: int = 1):
        self._next = start

    def __call__(self) -> int:
        rid = self._next
        self._next += 1
        return rid


class LocalController:
    """Traditional SDN controller embedded next to the switch."""

    def __init__(self, db: LocalDb, liveness: ControllerLiveness, clock: Callable[[], int], ids: RuleIds):
        self.db = db
        self.liveness = liveness
        self.clock = clock
        self.ids = ids
        self.packet_ins = 0

    def on_packet_in(self, p: Packet, in_port: Port) -> tuple[FlowRule, FlowRule]:
        if not self.liveness.alive:
            raise ControllerUnavailable(self.db.owner)
        self.packet_ins += 1
        return synthesize_rules(self.db, p, in_port, self.ids, self.clock(), RuleOrigin.LOCAL_CONTROLLER)

    __call__ = on_packet_in


def on_packet_in(controller: LocalController, p: Packet, in_port: Port, db: LocalDb | None = None):
    if db is not None and db is not controller.db:
        raise ValueError("controller is bound to a different LocalDb")
    return controller.on_packet_in(p, in_port)


# -- control-plane messages ------------------------------------------------

@dataclass(frozen=True)
class D2DRequest:
    sender: str
    virtual: VirtualEndpoint
    records: tuple[InterfaceRecord, ...]
    sent_at: int


@dataclass(frozen=True)
class D2DResponse:
    sender: str
    virtual: VirtualEndpoint
    records: tuple[InterfaceRecord, ...]
    echo_sent_at: int


@dataclass(frozen=True)
class BridgeAdvert:
    relay: str
    far_peer: str
    far_virtual: VirtualEndpoint
    sent_at: int


@dataclass(frozen=True)
class BridgeAck:
    sender: str
    relay: str
    far_peer: str


@dataclass(frozen=True)
class ArpRequest:
    sender: str
    target_ip: IpAddress


@dataclass(frozen=True)
class ArpReply:
    sender: str
    target_ip: IpAddress
    mac: MacAddress


@dataclass(frozen=True)
class ArpAdvert:
    """Gratuitous ARP: ``sender``'s virtual address now lives on ``kind``."""
    sender: str
    kind: InterfaceKind
    mac: MacAddress
    ip: IpAddress
    virtual_ip: IpAddress
    epoch: int = 0


SendFn = Callable[[str, InterfaceKind, object, Protocol], object]


class ExtendedController:
    """Information manager + Flow rules component (the connection manager lives in ``handover``)."""

    def __init__(self, db: LocalDb, liveness: ControllerLiveness, clock: Callable[[], int],
                 ids: RuleIds, send: SendFn | None = None):
        self.db = db
        self.liveness = liveness
        self.clock = clock
        self.ids = ids
        self.send = send
        self.counters: Counter = Counter()
        self.arp_log: list[ArpAdvert] = []
        self.on_advert: Callable[[ArpAdvert], None] | None = None

    # Flow rules component
    def fallback_install(self, p: Packet, in_port: Port) -> tuple[FlowRule, FlowRule]:
        try:
            rules = synthesize_rules(self.db, p, in_port, self.ids, self.clock(), RuleOrigin.EXTENDED_CONTROLLER)
        except UnknownPeer:
            self.counters["fallback_unknown_peer"] += 1
            raise
        self.counters["fallback_installs"] += 1
        return rules

    __call__ = fallback_install

    # ARP
    def handle_arp(self, p: Packet, in_port: Port) -> Packet | None:
        body = p.control
        now = self.clock()
        if isinstance(body, ArpAdvert):
            peer = self.db.peer_records.get(body.sender)
            if peer is None:
                self.counters["arp_unresolved"] += 1
                return None
            old = peer.interfaces.get(body.kind)
            net = old.network if old is not None else ""
            peer.interfaces[body.kind] = InterfaceRecord(body.kind, body.mac, body.ip, net)
            peer.reachable = {k: (k is body.kind) for k in InterfaceKind}
            peer.last_updated = now
            self.arp_log.append(body)
            self.counters["arp_adverts"] += 1
            if self.on_advert is not None:
                self.on_advert(body)
            return None
        if isinstance(body, ArpRequest):
            mac = self._resolve(body.target_ip)
            if mac is None:
                self.counters["arp_unresolved"] += 1
                return None
            reply = ArpReply(self.db.owner, body.target_ip, mac)
            self.counters["arp_replies"] += 1
            requester = self.db.peer_records.get(body.sender)
            if self.send is not None and requester is not None:
                kind = requester.link_kind if in_port is Port.VIRTUAL else kind_of(in_port)
                self.send(body.sender, kind, reply, Protocol.ARP)
            return replace(p, src_mac=p.dst_mac, dst_mac=p.src_mac, src_ip=p.dst_ip, dst_ip=p.src_ip,
                           control=reply)
        if isinstance(body, ArpReply):
            self.counters["arp_replies_seen"] += 1
            return None
        self.counters["arp_unresolved"] += 1
        return None

    def _resolve(self, ip: IpAddress) -> MacAddress | None:
        for rec in self.db.self_records.values():
            if rec.ip.value == ip.value:
                return rec.mac
        if self.db.virtual.virtual_ip.value == ip.value:
            return self.db.virtual.virtual_mac
        for peer in self.db.peer_records.values():
            if peer.virtual.virtual_ip.value == ip.value:
                return peer.virtual.virtual_mac
            for rec in peer.interfaces.values():
                if rec.ip.value == ip.value:
                    return rec.mac
        return None

    def gratuitous_arp(self, kind: InterfaceKind, epoch: int = 0) -> ArpAdvert:
        rec = self.db.self_records[kind]
        return ArpAdvert(self.db.owner, kind, rec.mac, rec.ip, self.db.virtual.virtual_ip, epoch)

    def emit_gratuitous_arp(self, new_kind: InterfaceKind, epoch: int = 0) -> list[str]:
        """Advertise ``new_kind`` to every directly reachable peer; returns the peers addressed."""
        targets = [p.device for p in self.db.peer_records.values() if p.via is None]
        if self.send is None:
            return targets
        advert = self.gratuitous_arp(new_kind, epoch)
        for peer in sorted(targets):
            self.send(peer, new_kind, advert, Protocol.ARP)
        return targets


def fallback_install(ext: ExtendedController, p: Packet, in_port: Port,
                     db: LocalDb | None = None) -> tuple[FlowRule, FlowRule]:
    if db is not None and db is not ext.db:
        raise ValueError("extended controller is bound to a different LocalDb")
    return ext.fallback_install(p, in_port)


def emit_gratuitous_arp(ext: ExtendedController, new_kind: InterfaceKind, epoch: int = 0) -> list[str]:
    return ext.emit_gratuitous_arp(new_kind, epoch)


def swap_records(a: LocalDb, b: LocalDb, link_kind: InterfaceKind, now: int = 0) -> None:
    """Apply a completed exchange to both databases at once (no transport)."""
    if a.exchange_done.get(b.owner) and b.exchange_done.get(a.owner):
        return
    a.learn(b.owner, b.virtual, b.self_records.values(), link_kind, now)
    b.learn(a.owner, a.virtual, a.self_records.values(), link_kind, now)
    a.exchange_done[b.owner] = True
    b.exchange_done[a.owner] = True

