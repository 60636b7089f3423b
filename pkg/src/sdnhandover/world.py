"""Runnable scenario: devices wired to networks, switches, controllers and traffic.

Address plan (device index ``i`` counts from 1 in file order)::

    virtual    02:00:00:00:00:ii  172.16.0.i/24
    wifi       02:00:00:00:01:ii  192.168.1.i/24
    bluetooth  02:00:00:00:02:ii  10.0.0.i/24

Applications inject at the virtual switch port and receive there; everything
below it (rule synthesis, relaying, handover) is invisible to them.
"""
from __future__ import annotations

import dataclasses
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controllers import (CONTROL_FRAME_BYTES, Bridge, BridgeAck, BridgeAdvert, ControllerLiveness, D2DRequest,
                          D2DResponse, ExtendedController, InterfaceRecord, LocalController, LocalDb, RuleIds,
                          VirtualEndpoint, session_rules)
from .core import (InterfaceKind, InterfaceState, IpAddress, MacAddress, Packet, Protocol, SyncMessage,
                   US_PER_MS, US_PER_S, check_transition, make_udp_packet)
from .energy import (DEFAULT_PARAMS, IF_STATE, EnergyLedger, EnergyParams, StateInterval, format_state_record,
                     interval_energy_mj, ledger_from_trace, savings_fraction)
from .engine import (Engine, EventKind, JitterDist, LinkParams, Outcome, Piconet, Position, WifiBss,
                     transmit)
from .handover import (HANDOVER_CSV_HEADER, ConnectionManager, ConnectionManagerConfig, Direction,
                       HandoverRequest, HandoverTimingConfig, HandoverTimings, TriggerConfig, UniformMs,
                       handover_loss)
from .scenario import ErrorCode, FlowKind, FlowSpec, Scenario, ScenarioError
from .switch import CONTROL_PORT, FlowSwitch, FlowTable, Port, RuleOrigin, kind_of, port_of
from .traffic import (CbrConfig, LossStats, SpeechModelConfig, SpeechPhase, ThroughputWindow, cbr_schedule,
                      jitter_series, speech_next_phase)

log = logging.getLogger(__name__)

_UP = (InterfaceState.SLEEP, InterfaceState.ACTIVE)
APP_PORT = 5001
# how long a device waits for the peer's advert before retiring the old interface anyway
RETIRE_GUARD_US = 2 * US_PER_S
RETIRE_POLL_US = 2 * US_PER_MS
_OCTET = {InterfaceKind.WIFI: 1, InterfaceKind.BLUETOOTH: 2}
_SUBNET = {InterfaceKind.WIFI: "192.168.1", InterfaceKind.BLUETOOTH: "10.0.0"}


class UnreachablePeer(RuntimeError):
    """The two devices share no connected network."""


def virtual_endpoint(index: int) -> VirtualEndpoint:
    return VirtualEndpoint(MacAddress.parse(f"02:00:00:00:00:{index:02x}"), IpAddress.parse(f"172.16.0.{index}/24"))


def interface_record(kind: InterfaceKind, index: int, network: str = "") -> InterfaceRecord:
    return InterfaceRecord(kind, MacAddress.parse(f"02:00:00:00:{_OCTET[kind]:02x}:{index:02x}"),
                           IpAddress.parse(f"{_SUBNET[kind]}.{index}/24"), network)


@dataclass
class FlowMetrics:
    name: str
    src: str
    dst: str
    start_us: int
    stop_us: int
    sent_ids: list[int] = field(default_factory=list)
    send_times: list[int] = field(default_factory=list)
    recv_ids: list[int] = field(default_factory=list)
    recv_sent_at: list[int] = field(default_factory=list)
    recv_times: list[int] = field(default_factory=list)
    recv_bits: int = 0
    lost_ids: list[int] = field(default_factory=list)
    drops: Counter = field(default_factory=Counter)
    in_transit: int = 0

    @property
    def loss(self) -> LossStats:
        return LossStats(len(self.sent_ids), len(self.recv_ids))

    @property
    def in_flight(self) -> int:
        return len(self.sent_ids) - len(self.recv_ids) - len(self.lost_ids)

    def jitter_ms(self) -> np.ndarray:
        return jitter_series(np.array(self.recv_sent_at), np.array(self.recv_times)) / US_PER_MS

    @property
    def mean_kbps(self) -> float:
        span = self.stop_us - self.start_us
        return 0.0 if span <= 0 else self.recv_bits / 1000.0 / (span / US_PER_S)

    def csv_row(self) -> str:
        j = self.jitter_ms()
        avg = float(j.mean()) if j.size else 0.0
        mx = float(j.max()) if j.size else 0.0
        ls = self.loss
        return f"{self.name},{ls.sent},{ls.received},{ls.loss_rate:.6f},{avg:.4f},{mx:.4f},{self.mean_kbps:.3f}"


TRAFFIC_CSV_HEADER = "flow,sent,received,loss_rate,avg_jitter_ms,max_jitter_ms,mean_kbps"


class Device:
    """One mobile node: two radios, a flow switch, both controllers and a connection manager."""

    def __init__(self, world: "World", spec, index: int, cm_config: ConnectionManagerConfig):
        self.world = world
        self.engine = world.engine
        self.name = spec.name
        self.spec = spec
        self.index = index
        self.network: dict[InterfaceKind, Piconet | WifiBss | None] = {k: None for k in InterfaceKind}
        records = {k: interface_record(k, index) for k in InterfaceKind}
        self.db = LocalDb(self.name, virtual_endpoint(index), records)
        self.liveness = ControllerLiveness()
        self.ids = RuleIds()
        clock = lambda: self.engine.now  # noqa: E731
        self.local = LocalController(self.db, self.liveness, clock, self.ids)
        self.ext = ExtendedController(self.db, self.liveness, clock, self.ids, self._send_for_ext)
        self.ext.on_advert = self._on_advert
        self.switch = FlowSwitch(self.name, FlowTable(), controller=self.local, fallback=self.ext,
                                 arp_handler=self.ext.handle_arp, control_handler=self._on_control)
        self.states = {InterfaceKind.WIFI: spec.wifi, InterfaceKind.BLUETOOTH: spec.bluetooth}
        self.configured = {k: st in _UP for k, st in self.states.items()}
        self.active_kind: InterfaceKind | None = spec.active or next(
            (k for k in (InterfaceKind.BLUETOOTH, InterfaceKind.WIFI) if self.states[k] in _UP), None)
        self.session_peer: str | None = None
        self.cm = ConnectionManager(self, self.engine, cm_config)
        self.window = ThroughputWindow()
        self.carried_bits = {k: 0 for k in InterfaceKind}
        self.adverts_seen: dict[str, tuple[InterfaceKind, int]] = {}
        self.counters: Counter = Counter()
        self._d2d_timers: dict[str, object] = {}
        self._bridge_pending: dict[str, object] = {}
        self._bridge_specs: list[tuple[str, InterfaceKind, str, InterfaceKind]] = []

    @property
    def virtual(self) -> VirtualEndpoint:
        return self.db.virtual

    @property
    def controller_alive(self) -> bool:
        return self.liveness.alive

    # -- interface lifecycle -------------------------------------------------
    def set_state(self, kind: InterfaceKind, new: InterfaceState) -> None:
        old = self.states[kind]
        if old is new:
            return
        check_transition(old, new)
        self.states[kind] = new
        self.engine.log(IF_STATE, self.name, format_state_record(kind, old, new))

    def interface_state(self, kind: InterfaceKind) -> InterfaceState:
        return self.states[kind]

    def is_up(self, kind: InterfaceKind) -> bool:
        return self.configured[kind] and self.states[kind] in _UP

    def wake_interface(self, kind: InterfaceKind, callback) -> None:
        self.set_state(kind, InterfaceState.WAKING_UP)
        dur = int(round(self.world.energy.of(kind).wakeup_duration_s * US_PER_S))

        def ready():
            if self.states[kind] is InterfaceState.WAKING_UP:
                self.set_state(kind, InterfaceState.SLEEP)
                callback()

        self.engine.after(dur, EventKind.INTERFACE_READY, ready, self.name, f"{kind.value} awake")

    def associate(self, kind: InterfaceKind) -> bool:
        net = self.network[kind]
        if net is None:
            return False
        if isinstance(net, WifiBss):
            return net.in_coverage(self.name)
        peer = self.session_peer
        return peer is not None and peer in net.members and net.reachable(self.name, peer)

    def configure_interface(self, kind: InterfaceKind) -> None:
        self.configured[kind] = True
        self.engine.log("configured", self.name, kind.value)

    def abort_backup(self, kind: InterfaceKind) -> None:
        if self.states[kind] is not InterfaceState.OFF:
            self.set_state(kind, InterfaceState.OFF)
        self.configured[kind] = False

    def bt_mutual_range(self, fraction: float) -> bool:
        net = self.network[InterfaceKind.BLUETOOTH]
        peer = self.session_peer
        if net is None or peer is None or peer not in net.members:
            return False
        a, b = self.world.positions[self.name], self.world.positions[peer]
        ax, ay = a.at(self.engine.now)
        bx, by = b.at(self.engine.now)
        return float(np.hypot(ax - bx, ay - by)) <= fraction * net.params.range_m

    def rtt_estimate(self) -> float:
        if self.db.rtt_us > 0:
            return self.db.rtt_us
        return self.world.nominal_rtt(self.active_kind or InterfaceKind.WIFI)

    # -- handover hooks --------------------------------------------------------
    def install_handover_rules(self, kind: InterfaceKind, rec: HandoverTimings) -> None:
        peer = self.db.peer_records[self.session_peer]
        peer.link_kind = kind
        origin = RuleOrigin.LOCAL_CONTROLLER if self.liveness.alive else RuleOrigin.EXTENDED_CONTROLLER
        for rule in session_rules(self.db, peer, kind, self.ids, self.engine.now, origin):
            self.switch.table.install(rule)
        self.engine.log("rules", self.name, f"session {self.session_peer} -> {kind.value} ({origin.value})")

    def finish_handover(self, rec: HandoverTimings) -> None:
        target, source = rec.direction.target, rec.direction.source
        self.active_kind = target
        for sample in self.cm.agent.samples if self.cm.agent is not None else ():
            self.db.update_rtt(sample)
        peer = self.db.peer_records[self.session_peer]
        peer.reachable = {k: k is target for k in InterfaceKind}
        peer.last_updated = self.engine.now
        self.ext.emit_gratuitous_arp(target, rec.epoch)
        self.engine.after(int(self.rtt_estimate()), EventKind.TIMER_EXPIRY,
                          lambda: self.ext.emit_gratuitous_arp(target, rec.epoch), self.name, "garp-retx")
        self._retire(source, target, rec.epoch, self.engine.now + RETIRE_GUARD_US)

    def _retire(self, old: InterfaceKind, new: InterfaceKind, epoch: int, guard_at: int) -> None:
        if self.active_kind is not new or self.states[old] is InterfaceState.OFF:
            return
        peer = self.session_peer
        heard = self.adverts_seen.get(peer) == (new, epoch) if peer is not None else True
        net = self.network[old]
        draining = net is not None and net.in_flight_to.get(self.name, 0) > 0
        if (heard or self.engine.now >= guard_at) and not draining:
            self.set_state(old, InterfaceState.OFF)
            self.configured[old] = False
            removed = self.switch.table.remove_where(lambda r: r.match.in_port == port_of(old))
            self.engine.log("retire", self.name, f"{old.value} rules_removed={len(removed)}")
            return
        self.engine.after(RETIRE_POLL_US, EventKind.TIMER_EXPIRY,
                          lambda: self._retire(old, new, epoch, guard_at), self.name, f"retire-wait {old.value}")

    def _on_advert(self, advert) -> None:
        self.adverts_seen[advert.sender] = (advert.kind, advert.epoch)

    # -- control plane transport -------------------------------------------------
    def link_to(self, peer: str) -> InterfaceKind | None:
        """Interface for control traffic to a direct neighbour."""
        common = self.world.common_kinds(self.name, peer)
        prefs = []
        rec = self.db.peer_records.get(peer)
        if rec is not None and rec.via is None:
            prefs.append(rec.link_kind)
        if self.active_kind is not None:
            prefs.append(self.active_kind)
        prefs += [InterfaceKind.BLUETOOTH, InterfaceKind.WIFI]
        for kind in prefs:
            if kind in common and self.is_up(kind):
                return kind
        return None

    def send_control(self, peer: str, body, kind: InterfaceKind | None = None,
                     protocol: Protocol = Protocol.UDP) -> bool:
        kind = kind or self.link_to(peer)
        if kind is None or not self.is_up(kind) or kind not in self.world.common_kinds(self.name, peer):
            self.counters["control_unsent"] += 1
            return False
        dst = self.world.devices[peer]
        p = make_udp_packet(self.db.self_records[kind].desc(CONTROL_PORT), dst.db.self_records[kind].desc(CONTROL_PORT),
                            CONTROL_FRAME_BYTES, self.engine.now, payload_id=self.engine.next_id(), control=body)
        if protocol is not Protocol.UDP:
            p = dataclasses.replace(p, protocol=protocol)
        outcome = self._transmit(kind, dst, p)
        return outcome is Outcome.QUEUED

    def _send_for_ext(self, peer: str, kind: InterfaceKind, body, protocol: Protocol):
        return self.send_control(peer, body, kind, protocol)

    def _on_control(self, p: Packet, in_port: Port) -> None:
        body = p.control
        kind = kind_of(in_port) if in_port is not Port.VIRTUAL else None
        if isinstance(body, SyncMessage):
            self.cm.on_sync(body)
        elif isinstance(body, HandoverRequest):
            self.cm.on_request(body)
        elif isinstance(body, D2DRequest):
            self._on_d2d_request(body, kind)
        elif isinstance(body, D2DResponse):
            self._on_d2d_response(body, kind)
        elif isinstance(body, BridgeAdvert):
            self._on_bridge_advert(body, kind)
        elif isinstance(body, BridgeAck):
            Engine.cancel(self._bridge_pending.pop(body.sender, None))
        else:
            self.counters["control_unknown"] += 1

    # -- D2D exchange (information manager) ----------------------------------------
    def start_exchange(self, peer: str, kind: InterfaceKind | None = None) -> bool:
        """Request/response with retransmission every RTT until answered; no-op once done."""
        if self.db.exchange_done.get(peer):
            return False
        kind = kind or self.link_to(peer)
        if kind is None:
            raise UnreachablePeer(f"{self.name} and {peer} share no connected network")
        req = D2DRequest(self.name, self.db.virtual, tuple(self.db.self_records.values()), self.engine.now)
        self.send_control(peer, req, kind)
        rto = max(1, int(self.rtt_estimate()))
        self._d2d_timers[peer] = self.engine.after(rto, EventKind.TIMER_EXPIRY,
                                                   lambda: self.start_exchange(peer, kind), self.name,
                                                   f"d2d-retx {peer}")
        return True

    def _on_d2d_request(self, req: D2DRequest, kind: InterfaceKind) -> None:
        self.db.learn(req.sender, req.virtual, req.records, kind, self.engine.now)
        self._exchange_complete(req.sender)
        resp = D2DResponse(self.name, self.db.virtual, tuple(self.db.self_records.values()), req.sent_at)
        self.send_control(req.sender, resp, kind)

    def _on_d2d_response(self, resp: D2DResponse, kind: InterfaceKind) -> None:
        self.db.learn(resp.sender, resp.virtual, resp.records, kind, self.engine.now)
        self.db.update_rtt(self.engine.now - resp.echo_sent_at)
        self._exchange_complete(resp.sender)

    def _exchange_complete(self, peer: str) -> None:
        Engine.cancel(self._d2d_timers.pop(peer, None))
        if not self.db.exchange_done.get(peer):
            self.db.exchange_done[peer] = True
            self.engine.log("d2d", self.name, f"exchange-done {peer}")
        self._maybe_advertise_bridges()

    # -- relay duty --------------------------------------------------------------
    def add_bridge(self, a: str, a_kind: InterfaceKind, b: str, b_kind: InterfaceKind) -> None:
        self._bridge_specs.append((a, a_kind, b, b_kind))

    def _maybe_advertise_bridges(self) -> None:
        for a, ak, b, bk in self._bridge_specs:
            if not (self.db.exchange_done.get(a) and self.db.exchange_done.get(b)):
                continue
            bridge = Bridge(a, ak, b, bk)
            if bridge in self.db.bridges:
                continue
            self.db.bridges.append(bridge)
            for near, kind, far in ((a, ak, b), (b, bk, a)):
                self._advertise(near, kind, far)

    def _advertise(self, near: str, kind: InterfaceKind, far: str) -> None:
        far_virtual = self.db.peer_records[far].virtual
        self.send_control(near, BridgeAdvert(self.name, far, far_virtual, self.engine.now), kind)
        rto = max(1, int(self.rtt_estimate()))
        self._bridge_pending[near] = self.engine.after(rto, EventKind.TIMER_EXPIRY,
                                                       lambda: self._advertise(near, kind, far), self.name,
                                                       f"bridge-retx {near}")

    def _on_bridge_advert(self, adv: BridgeAdvert, kind: InterfaceKind) -> None:
        if adv.far_peer not in self.db.peer_records:
            self.db.learn(adv.far_peer, adv.far_virtual, (), kind, self.engine.now, via=adv.relay)
            self.engine.log("bridge", self.name, f"{adv.far_peer} via {adv.relay}")
        self.send_control(adv.relay, BridgeAck(self.name, adv.relay, adv.far_peer), kind)

    # -- data plane ------------------------------------------------------------------
    def app_send(self, p: Packet) -> None:
        self.window.add(p.bits)
        decision = self.switch.process(p, Port.VIRTUAL)
        if not decision.forwarded:
            self.world.record_drop(p, decision.reason)
            return
        self._egress(decision.packet, decision.out_port)

    def _egress(self, p: Packet, out_port: Port) -> None:
        if out_port is Port.VIRTUAL:
            self.world.record_drop(p, "loopback")
            return
        kind = kind_of(out_port)
        if not self.is_up(kind):
            # rules point at an interface that is not configured yet
            self.world.record_drop(p, "iface_not_ready")
            return
        dst = self.world.device_at(kind, p.dst_mac)
        if dst is None:
            self.world.record_drop(p, "no_route")
            return
        outcome = self._transmit(kind, dst, p)
        if outcome is Outcome.OUT_OF_RANGE:
            self.world.record_drop(p, "out_of_range")
            if kind is self.active_kind:
                self.cm.on_link_failure()

    def _transmit(self, kind: InterfaceKind, dst: "Device", p: Packet) -> Outcome:
        net = self.network[kind]
        if net is None:
            return Outcome.OUT_OF_RANGE
        app = bool(p.flow)
        if app:
            self.world.flows[p.flow].in_transit += 1
        outcome = transmit(net, self.name, dst.name, p, lambda q: dst.receive(kind, q),
                           lambda q: self.world.on_channel_loss(q) if app else None)
        if outcome is Outcome.OUT_OF_RANGE:
            if app:
                self.world.flows[p.flow].in_transit -= 1
        else:
            self.carried_bits[kind] += p.bits
        return outcome

    def receive(self, kind: InterfaceKind, p: Packet) -> None:
        if p.flow:
            self.world.flows[p.flow].in_transit -= 1
        if self.engine.now < p.sent_at:
            self.world.violation(f"causality: {p.flow or 'control'} payload {p.payload_id} arrived before it was sent")
        if self.states[kind] not in _UP:
            self.counters["rx_iface_off"] += 1
            if p.flow:
                self.world.record_drop(p, "iface_off")
            return
        self.carried_bits[kind] += p.bits
        decision = self.switch.process(p, port_of(kind))
        if decision.reason in ("arp", "control"):
            return
        if not decision.forwarded:
            self.world.record_drop(p, decision.reason)
            return
        if decision.out_port is Port.VIRTUAL:
            self.window.add(p.bits)
            self.world.app_deliver(self, decision.packet)
            return
        self._egress(decision.packet, decision.out_port)

    # -- periodic tick ----------------------------------------------------------------
    def tick(self, period_us: int, threshold_kbps: float) -> None:
        for kind in InterfaceKind:
            bits = self.carried_bits[kind]
            self.carried_bits[kind] = 0
            if self.states[kind] in _UP:
                kbps = bits / 1000.0 / (period_us / US_PER_S)
                self.set_state(kind, InterfaceState.ACTIVE if kbps >= threshold_kbps else InterfaceState.SLEEP)
        kbps = self.window.roll() * (US_PER_S / period_us)
        self.db.throughput_kbps.append(kbps)
        self.cm.on_throughput_sample(kbps)


class World:
    """Builds a scenario into live objects and runs it on one engine."""

    def __init__(self, scenario: Scenario, *, energy: EnergyParams = DEFAULT_PARAMS, trace: bool = True):
        self.scenario = scenario
        self.energy = energy
        self.engine = Engine(scenario.seed, trace=trace)
        self.duration_us = int(round(scenario.header.duration_s * US_PER_S))
        self.devices: dict[str, Device] = {}
        self.positions: dict[str, Position] = {}
        self.networks: list[Piconet | WifiBss] = []
        self.flows: dict[str, FlowMetrics] = {}
        self.violations: list[str] = []
        self.control_drops: Counter = Counter()
        self._by_mac: dict[tuple[InterfaceKind, int], Device] = {}
        self.initial_states: dict[tuple[str, InterfaceKind], InterfaceState] = {}
        self._build()

    # -- construction ----------------------------------------------------------------
    def _link_params(self, spec) -> LinkParams:
        if self.scenario.header.jitter_model == "exponential" and spec.jitter_ms > 0:
            jitter = JitterDist("exponential", int(round(spec.jitter_ms * US_PER_MS)))
        else:
            jitter = JitterDist.uniform_ms(spec.jitter_ms)
        return LinkParams(int(round(spec.base_delay_ms * US_PER_MS)), jitter, spec.loss, spec.rate_kbps,
                          spec.range_m)

    def _build(self) -> None:
        s = self.scenario
        t = s.trigger
        tm = s.timing
        cm_config = ConnectionManagerConfig(
            trigger=TriggerConfig(t.no_traffic_kbps, t.threshold_wb_s, t.evaluation_period_s),
            timing=HandoverTimingConfig(UniformMs(*tm.bw_config_ms), UniformMs(*tm.bw_rule_ms), tm.bw_rule_ratio,
                                        UniformMs(*tm.wb_config_ms), UniformMs(*tm.wb_rule_ms), tm.wb_rule_ratio,
                                        tm.association_ms, tm.management_extra_ms),
            sync_timeout_us=int(round(t.sync_timeout_s * US_PER_S)),
            trigger_enabled=t.enabled, bt_range_guard=t.bt_range_guard)
        for i, spec in enumerate(s.devices, 1):
            pts = tuple((int(round(w[0] * US_PER_S)), w[1], w[2]) for w in spec.waypoints)
            self.positions[spec.name] = Position(spec.name, spec.x, spec.y, pts)
            cfg = dataclasses.replace(cm_config, trigger_enabled=t.enabled and spec.handover)
            dev = Device(self, spec, i, cfg)
            self.devices[spec.name] = dev
            for kind in InterfaceKind:
                self._by_mac[kind, dev.db.self_records[kind].mac.value] = dev
                self.initial_states[spec.name, kind] = dev.states[kind]
        lookup = self.positions.get
        for p in s.piconets:
            net = Piconet(p.name, self.engine, self._link_params(p), p.master, p.members, lookup)
            self._attach(net, InterfaceKind.BLUETOOTH)
        for b in s.bsses:
            ap_pos = Position(b.ap, b.ap_x, b.ap_y) if b.ap_x is not None else None
            net = WifiBss(b.name, self.engine, self._link_params(b), b.ap, b.members, lookup, ap_pos)
            self._attach(net, InterfaceKind.WIFI)

        relayed: set[frozenset[str]] = set()
        pairs: list[tuple[str, str]] = []
        for br in s.bridges:
            relay = self.devices[br.relay]
            kinds = []
            for end in (br.a, br.b):
                common = self.common_kinds(br.relay, end)
                if not common:
                    raise ScenarioError(ErrorCode.INVALID, f"bridge {br.name}: {br.relay} shares no network with {end}")
                kinds.append(common[0])
            relay.add_bridge(br.a, kinds[0], br.b, kinds[1])
            relayed.add(frozenset((br.a, br.b)))
            pairs += [(br.relay, br.a), (br.relay, br.b)]

        direct: dict[str, set[str]] = {d: set() for d in self.devices}
        for f in s.flows:
            key = frozenset((f.src, f.dst))
            if key not in relayed:
                if not self.common_kinds(f.src, f.dst):
                    raise ScenarioError(ErrorCode.INVALID, f"flow {f.name}: {f.src} and {f.dst} share no network")
                direct[f.src].add(f.dst)
                direct[f.dst].add(f.src)
                pairs.append((f.src, f.dst))
            self._add_flow(f)
        for name, peers in direct.items():
            if len(peers) == 1:
                peer = next(iter(peers))
                if len(self.common_kinds(name, peer)) == 2:
                    self.devices[name].session_peer = peer

        seen: set[frozenset[str]] = set()
        for a, b in pairs:
            key = frozenset((a, b))
            if key in seen:
                continue
            seen.add(key)
            first, second = sorted((a, b), key=lambda n: self.devices[n].index)
            self.engine.schedule(0, EventKind.TIMER_EXPIRY, self._exchange_action(first, second), first,
                                 f"d2d-start {second}")

        for spec in s.devices:
            dev = self.devices[spec.name]
            if spec.controller_die_s is not None:
                self.engine.schedule(int(round(spec.controller_die_s * US_PER_S)), EventKind.TIMER_EXPIRY,
                                     self._liveness_action(dev, False), dev.name, "controller-die")
            if spec.controller_revive_s is not None:
                self.engine.schedule(int(round(spec.controller_revive_s * US_PER_S)), EventKind.TIMER_EXPIRY,
                                     self._liveness_action(dev, True), dev.name, "controller-revive")
        for ho in s.handovers:
            dev = self.devices[ho.device]
            direction = Direction(ho.direction)
            self.engine.schedule(int(round(ho.at_s * US_PER_S)), EventKind.TIMER_EXPIRY,
                                 lambda dev=dev, d=direction: dev.cm.initiate(d, scripted=True), dev.name,
                                 f"scripted {direction.value}")
        period = int(round(t.evaluation_period_s * US_PER_S))
        self.engine.schedule(period, EventKind.TIMER_EXPIRY, lambda: self._tick(period), "-", "tick")

    def _attach(self, net, kind: InterfaceKind) -> None:
        self.networks.append(net)
        for name in sorted(net.members & set(self.devices)):
            dev = self.devices[name]
            dev.network[kind] = net
            rec = dev.db.self_records[kind]
            dev.db.self_records[kind] = dataclasses.replace(rec, network=net.name)

    def _exchange_action(self, a: str, b: str):
        def run():
            try:
                self.devices[a].start_exchange(b)
            except UnreachablePeer as exc:
                self.engine.log("d2d", a, f"unreachable_peer {b}")
                self.devices[a].counters["unreachable_peer"] += 1
                log.info("%s", exc)
        return run

    def _liveness_action(self, dev: Device, alive: bool):
        def run():
            if alive:
                dev.liveness.revive(self.engine.now)
            else:
                dev.liveness.kill(self.engine.now)
            self.engine.log("controller", dev.name, "alive" if alive else "dead")
        return run

    def _tick(self, period: int) -> None:
        thr = self.scenario.trigger.no_traffic_kbps
        for dev in self.devices.values():
            dev.tick(period, thr)
        self.engine.after(period, EventKind.TIMER_EXPIRY, lambda: self._tick(period), "-", "tick")

    # -- traffic sources -----------------------------------------------------------------
    def _add_flow(self, f: FlowSpec) -> None:
        start = int(round(f.start_s * US_PER_S))
        stop = self.duration_us if f.stop_s is None else min(self.duration_us, int(round(f.stop_s * US_PER_S)))
        self.flows[f.name] = FlowMetrics(f.name, f.src, f.dst, start, stop)
        src, dst = self.devices[f.src], self.devices[f.dst]
        index = list(self.flows).index(f.name)
        src_desc = src.virtual.desc(40_000 + index)
        dst_desc = dst.virtual.desc(APP_PORT)

        def emit():
            p = make_udp_packet(src_desc, dst_desc, f.size_bytes, self.engine.now, flow=f.name,
                                payload_id=self.engine.next_id())
            m = self.flows[f.name]
            m.sent_ids.append(p.payload_id)
            m.send_times.append(p.sent_at)
            src.app_send(p)

        if f.kind is FlowKind.CBR:
            self._chain(cbr_schedule(CbrConfig(f.rate_kbps, f.size_bytes, start, stop)), emit, f.name)
        else:
            cfg = SpeechModelConfig(f.mean_talkspurt_s, f.mean_pause_s, on_rate_kbps=f.rate_kbps,
                                    packet_size_bytes=f.size_bytes)
            rng = np.random.default_rng([self.scenario.seed, index])
            self._speech(cfg, rng, None, start, stop, emit, f.name)

    def _chain(self, times: np.ndarray, emit, name: str, then=None) -> None:
        def fire(i: int):
            emit()
            if i + 1 < len(times):
                self.engine.schedule(int(times[i + 1]), EventKind.TRAFFIC_EMIT, lambda: fire(i + 1), name, "emit")
        if len(times):
            self.engine.schedule(int(times[0]), EventKind.TRAFFIC_EMIT, lambda: fire(0), name, "emit")

    def _speech(self, cfg: SpeechModelConfig, rng, phase, at: int, stop: int, emit, name: str) -> None:
        while at < stop:
            phase, dur = speech_next_phase(cfg, rng, phase)
            end = min(stop, at + dur)
            if phase is SpeechPhase.TALKSPURT:
                self._chain(cbr_schedule(CbrConfig(cfg.on_rate_kbps, cfg.packet_size_bytes, at, end)), emit, name)
            at = end

    # -- lookups ------------------------------------------------------------------
    def common_kinds(self, a: str, b: str) -> list[InterfaceKind]:
        out = []
        for kind in (InterfaceKind.BLUETOOTH, InterfaceKind.WIFI):
            na, nb = self.devices[a].network[kind], self.devices[b].network[kind]
            if na is not None and na is nb:
                out.append(kind)
        return out

    def device_at(self, kind: InterfaceKind, mac: MacAddress) -> Device | None:
        return self._by_mac.get((kind, mac.value))

    def nominal_rtt(self, kind: InterfaceKind) -> float:
        nets = [n for n in self.networks if (kind is InterfaceKind.WIFI) == isinstance(n, WifiBss)]
        if not nets:
            return float(10 * US_PER_MS)
        p = nets[0].params
        hops = 2 if kind is InterfaceKind.WIFI else 1
        one_way = hops * (p.serialization_us(CONTROL_FRAME_BYTES) + p.base_delay_us + p.jitter.b_us)
        return float(2 * one_way)

    # -- accounting ----------------------------------------------------------------
    def violation(self, text: str) -> None:
        self.violations.append(f"{self.engine.now}\t{text}")
        self.engine.log("violation", "-", text)

    def record_drop(self, p: Packet, reason: str) -> None:
        if not p.flow:
            self.control_drops[reason] += 1
            return
        m = self.flows[p.flow]
        m.lost_ids.append(p.payload_id)
        m.drops[reason] += 1
        self.engine.log("drop", p.flow, f"{reason} payload={p.payload_id}")

    def on_channel_loss(self, p: Packet) -> None:
        self.flows[p.flow].in_transit -= 1
        self.record_drop(p, "channel_loss")

    def app_deliver(self, dev: Device, p: Packet) -> None:
        m = self.flows[p.flow]
        src = self.devices[m.src]
        if dev.name != m.dst:
            self.violation(f"misdelivery: flow {p.flow} payload {p.payload_id} reached {dev.name}")
        want = (src.virtual.virtual_mac.value, src.virtual.virtual_ip.value,
                dev.virtual.virtual_mac.value, dev.virtual.virtual_ip.value)
        got = (p.src_mac.value, p.src_ip.value, p.dst_mac.value, p.dst_ip.value)
        if got != want:
            self.violation(f"virtual-address: flow {p.flow} payload {p.payload_id} carries physical addresses")
        m.recv_ids.append(p.payload_id)
        m.recv_sent_at.append(p.sent_at)
        m.recv_times.append(self.engine.now)
        m.recv_bits += p.bits

    # -- run ----------------------------------------------------------------------
    def run(self) -> "ScenarioReport":
        self.engine.run_until(self.duration_us)
        self._finalize_handovers()
        self._check_invariants()
        return build_report(self)

    def handover_records(self) -> list[HandoverTimings]:
        return [rec for dev in self.devices.values() for rec in dev.cm.records]

    def _finalize_handovers(self) -> None:
        for dev in self.devices.values():
            emitted = [t for m in self.flows.values() if m.src == dev.name and m.dst == dev.session_peer
                       for t in m.send_times]
            for rec in dev.cm.records:
                rec.lost_packets = 0 if rec.aborted else handover_loss(rec, emitted)

    def _check_invariants(self) -> None:
        for net in self.networks:
            ch = net.channel
            for prev, cur in ch.overlaps():
                self.violation(f"half-duplex: {net.name} payload {prev.payload_id} overlaps {cur.payload_id}")
            if ch.in_flight < 0 or ch.sent != ch.delivered + ch.lost + ch.in_flight:
                self.violation(f"conservation: channel {net.name}")
            if net.in_flight != sum(net.in_flight_to.values()) or min(net.in_flight_to.values(), default=0) < 0:
                self.violation(f"conservation: network {net.name}")
        for m in self.flows.values():
            recv, lost, sent = set(m.recv_ids), set(m.lost_ids), set(m.sent_ids)
            if len(recv) != len(m.recv_ids):
                self.violation(f"duplicate delivery in flow {m.name}")
            if recv & lost or not (recv | lost) <= sent:
                self.violation(f"conservation: flow {m.name} ids")
            if m.in_flight != m.in_transit or m.in_transit < 0:
                self.violation(f"conservation: flow {m.name} sent={len(sent)} received={len(recv)} "
                               f"lost={len(lost)} in_flight={m.in_transit}")
        for rec in self.handover_records():
            if rec.committed_at is not None and rec.committed_at - rec.sync_done_at != rec.handover_delay:
                self.violation(f"delay identity: {rec.device} epoch {rec.epoch}")
        window_loss = sum(r.lost_packets for r in self.handover_records())
        steered = sum(m.drops["iface_not_ready"] for m in self.flows.values())
        if window_loss != steered:
            self.violation(f"loss window: {steered} packets dropped on unready interfaces, "
                           f"{window_loss} scheduled into loss windows")

    def energy_ledger(self) -> EnergyLedger:
        return ledger_from_trace(self.engine.trace or (), self.duration_us, initial=self.initial_states,
                                 params=self.energy)


def wifi_only_baseline_mj(ledger: EnergyLedger) -> float:
    """Energy had each device kept only Wi-Fi on, mirroring its busiest interface state."""
    rank = {InterfaceState.OFF: 0, InterfaceState.WAKING_UP: 1, InterfaceState.SLEEP: 1, InterfaceState.ACTIVE: 2}
    by_dev: dict[str, list[StateInterval]] = {}
    for iv in ledger.intervals:
        by_dev.setdefault(iv.device, []).append(iv)
    out: list[StateInterval] = []
    for dev, ivs in by_dev.items():
        cuts = sorted({iv.start_us for iv in ivs} | {iv.end_us for iv in ivs})
        for a, b in zip(cuts, cuts[1:]):
            live = [iv.state for iv in ivs if iv.start_us <= a and iv.end_us >= b]
            best = max(live, key=lambda s: rank[s], default=InterfaceState.OFF)
            state = {0: InterfaceState.OFF, 1: InterfaceState.SLEEP, 2: InterfaceState.ACTIVE}[rank[best]]
            if state is not InterfaceState.OFF:
                out.append(StateInterval(InterfaceKind.WIFI, state, a, b, dev))
    return interval_energy_mj(ledger.params, out)


@dataclass
class ScenarioReport:
    scenario: Scenario
    files: dict[str, str]
    trace: str
    violations: list[str]
    flows: dict[str, FlowMetrics]
    handovers: list[HandoverTimings]
    energy: EnergyLedger

    @property
    def seed(self) -> int:
        return self.scenario.seed

    @property
    def exit_code(self) -> int:
        return 1 if self.violations else 0

    @property
    def summary(self) -> str:
        return self.files["summary.txt"]

    def write(self, out_dir: str | Path, trace_path: str | Path | None = None) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in self.files.items():
            path = out / name
            path.write_text(text)
            written.append(path)
        if trace_path is not None:
            Path(trace_path).write_text(self.trace)
            written.append(Path(trace_path))
        return written


def build_report(world: World) -> ScenarioReport:
    s = world.scenario
    ledger = world.energy_ledger()
    records = world.handover_records()
    trace = world.engine.trace_text()
    traffic = TRAFFIC_CSV_HEADER + "\n" + "".join(m.csv_row() + "\n" for m in world.flows.values())
    handovers = HANDOVER_CSV_HEADER + "\n" + "".join(r.record_line() + "\n" for r in records)
    tables = "".join(f"# {d.name}\n{d.switch.table.dump()}" for d in world.devices.values())
    dbs = "".join(f"# {d.name}\n{d.db.dump()}" for d in world.devices.values())
    baseline = wifi_only_baseline_mj(ledger)
    total = ledger.total_mj
    rows = [("scenario", s.header.name), ("seed", str(s.seed)), ("duration_s", f"{world.duration_us / US_PER_S:.3f}"),
            ("events_fired", str(world.engine.fired))]
    for m in world.flows.values():
        j = m.jitter_ms()
        rows += [(f"flow.{m.name}.sent", str(len(m.sent_ids))), (f"flow.{m.name}.received", str(len(m.recv_ids))),
                 (f"flow.{m.name}.loss_rate", f"{m.loss.loss_rate:.6f}"),
                 (f"flow.{m.name}.avg_jitter_ms", f"{float(j.mean()) if j.size else 0.0:.4f}"),
                 (f"flow.{m.name}.mean_kbps", f"{m.mean_kbps:.3f}")]
        for reason, n in sorted(m.drops.items()):
            rows.append((f"flow.{m.name}.drop.{reason}", str(n)))
    committed = [r for r in records if r.committed_at is not None]
    rows += [("handovers.committed", str(len(committed))),
             ("handovers.aborted", str(sum(r.aborted for r in records)))]
    if committed:
        rows.append(("handovers.max_delay_ms", f"{max(r.delay_ms for r in committed):.3f}"))
    for d in world.devices.values():
        rows.append((f"energy.{d.name}_mj", f"{ledger.device_mj(d.name):.2f}"))
    rows += [("energy.total_mj", f"{total:.2f}"), ("energy.wifi_only_baseline_mj", f"{baseline:.2f}"),
             ("energy.savings", f"{100 * savings_fraction(total, baseline):.2f}%" if baseline > 0 else "n/a"),
             ("violations", str(len(world.violations)))]
    width = max(len(k) for k, _ in rows)
    summary = "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)
    summary += "".join(f"violation  {v}\n" for v in world.violations)
    files = {"summary.txt": summary, "traffic.csv": traffic, "handovers.csv": handovers,
             "energy.csv": ledger.to_csv(), "flowtables.txt": tables, "localdb.txt": dbs}
    return ScenarioReport(s, files, trace, list(world.violations), world.flows, records, ledger)


def run_scenario(s: Scenario, *, energy: EnergyParams = DEFAULT_PARAMS) -> ScenarioReport:
    return World(s, energy=energy).run()


def d2d_exchange(world: World, a: str, b: str, timeout_us: int = 5 * US_PER_S) -> tuple[LocalDb, LocalDb]:
    """Run the one-time record exchange between ``a`` and ``b`` to completion (or timeout)."""
    if not world.common_kinds(a, b):
        raise UnreachablePeer(f"{a} and {b} share no network")
    da, db_ = world.devices[a], world.devices[b]
    da.start_exchange(b)
    done = lambda: bool(da.db.exchange_done.get(b) and db_.db.exchange_done.get(a))  # noqa: E731
    if not done():
        world.engine.run_until(world.engine.now + timeout_us, stop=done)
    return da.db, db_.db
