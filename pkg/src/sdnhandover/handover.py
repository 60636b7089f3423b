"""Connection manager: when to hand over, and how.

Trigger: throughput is sampled once per second at the application boundary.
Three consecutive samples below 5 kbps on Wi-Fi (with the peer in Bluetooth
range) move the session to Bluetooth; three at or above 5 kbps on Bluetooth
move it back to Wi-Fi.

Execution per device: wake the backup interface, associate, run the SYN
handshake over the still-active link, then start network configuration and
rule installation together.  Rules may land before the new interface is
configured; packets steered to it in that gap are lost.  The handover delay is
``max(t_config, t_rule_install)``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import InterfaceKind, InterfaceState, SyncMessage, US_PER_MS, US_PER_S
from .engine import Engine, EventKind
from .traffic import NO_TRAFFIC_KBPS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TriggerConfig:
    no_traffic_threshold_kbps: float = NO_TRAFFIC_KBPS
    threshold_wb_s: float = 3.0
    evaluation_period_s: float = 1.0

    def __post_init__(self):
        if min(self.no_traffic_threshold_kbps, self.threshold_wb_s, self.evaluation_period_s) <= 0:
            raise ValueError("trigger parameters must be positive")

    @property
    def window(self) -> int:
        return max(1, int(round(self.threshold_wb_s / self.evaluation_period_s)))


class Decision(enum.Enum):
    SWITCH_TO_BLUETOOTH = "switch_to_bluetooth"
    SWITCH_TO_WIFI = "switch_to_wifi"
    STAY = "stay"


def evaluate_trigger(cfg: TriggerConfig, throughput_history: Sequence[float], active: InterfaceKind,
                     bt_mutual_range: bool) -> Decision:
    n = cfg.window
    if len(throughput_history) < n:
        return Decision.STAY
    recent = throughput_history[-n:]
    thr = cfg.no_traffic_threshold_kbps
    if active is InterfaceKind.WIFI and bt_mutual_range and all(x < thr for x in recent):
        return Decision.SWITCH_TO_BLUETOOTH
    if active is InterfaceKind.BLUETOOTH and all(x >= thr for x in recent):
        return Decision.SWITCH_TO_WIFI
    return Decision.STAY


class Direction(enum.Enum):
    WIFI_TO_BLUETOOTH = "wifi_to_bluetooth"
    BLUETOOTH_TO_WIFI = "bluetooth_to_wifi"

    @property
    def target(self) -> InterfaceKind:
        return InterfaceKind.BLUETOOTH if self is Direction.WIFI_TO_BLUETOOTH else InterfaceKind.WIFI

    @property
    def source(self) -> InterfaceKind:
        return self.target.other

    @classmethod
    def towards(cls, kind: InterfaceKind) -> "Direction":
        return cls.WIFI_TO_BLUETOOTH if kind is InterfaceKind.BLUETOOTH else cls.BLUETOOTH_TO_WIFI

    @classmethod
    def from_decision(cls, d: Decision) -> "Direction | None":
        if d is Decision.SWITCH_TO_BLUETOOTH:
            return cls.WIFI_TO_BLUETOOTH
        if d is Decision.SWITCH_TO_WIFI:
            return cls.BLUETOOTH_TO_WIFI
        return None


class HandoverPhase(enum.Enum):
    IDLE = 0
    WAKING_BACKUP = 1
    ASSOCIATING = 2
    SYNCHRONIZING = 3
    COMMITTING = 4
    DONE = 5
    ABORTED = 6


_ABORTABLE = {HandoverPhase.WAKING_BACKUP, HandoverPhase.ASSOCIATING, HandoverPhase.SYNCHRONIZING}


@dataclass(frozen=True)
class UniformMs:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo < 0 or self.hi < self.lo:
            raise ValueError(f"bad uniform range {self.lo}..{self.hi} ms")

    def sample_us(self, rng: np.random.Generator) -> int:
        if self.hi == self.lo:
            return int(round(self.lo * US_PER_MS))
        # floor keeps samples strictly below hi
        return int(rng.uniform(self.lo * US_PER_MS, self.hi * US_PER_MS))

    @property
    def mean_ms(self) -> float:
        return (self.lo + self.hi) / 2


@dataclass(frozen=True)
class HandoverTimingConfig:
    """Durations of the two commit activities per direction.

    ``*_rule_ratio`` (when set) makes rule installation a fixed fraction of
    the sampled configuration time instead of an independent draw.
    """
    bw_config: UniformMs = UniformMs(70, 90)
    bw_rule: UniformMs = UniformMs(70, 90)
    bw_rule_ratio: float | None = None
    wb_config: UniformMs = UniformMs(80, 150)
    wb_rule: UniformMs = UniformMs(13, 25)
    wb_rule_ratio: float | None = 1 / 6
    association_ms: float = 0.0
    # added to rule installation when it goes through the switch management utility
    management_extra_ms: float = 0.0

    def sample(self, direction: Direction, rng: np.random.Generator,
               via_management: bool = False) -> tuple[int, int]:
        if direction is Direction.BLUETOOTH_TO_WIFI:
            cfg_d, rule_d, ratio = self.bw_config, self.bw_rule, self.bw_rule_ratio
        else:
            cfg_d, rule_d, ratio = self.wb_config, self.wb_rule, self.wb_rule_ratio
        t_config = cfg_d.sample_us(rng)
        t_rule = int(t_config * ratio) if ratio is not None else rule_d.sample_us(rng)
        if via_management:
            t_rule += int(round(self.management_extra_ms * US_PER_MS))
        return t_config, t_rule


@dataclass
class HandoverTimings:
    device: str
    direction: Direction
    epoch: int
    started_at: int
    association_duration: int = 0
    sync_duration: int = 0
    sync_done_at: int | None = None
    t_config: int = 0
    t_rule_install: int = 0
    config_done_at: int | None = None
    rule_done_at: int | None = None
    committed_at: int | None = None
    aborted: bool = False
    abort_reason: str = ""
    lost_packets: int = 0
    scripted: bool = False

    @property
    def handover_delay(self) -> int:
        return max(self.t_config, self.t_rule_install)

    @property
    def delay_ms(self) -> float:
        return self.handover_delay / US_PER_MS

    @property
    def loss_window(self) -> tuple[int, int] | None:
        if self.rule_done_at is None or self.config_done_at is None:
            return None
        return self.rule_done_at, self.config_done_at

    def record_line(self) -> str:
        end = "aborted" if self.aborted else str(self.committed_at)
        return (f"{self.device},{self.direction.value},{self.epoch},{self.started_at},{end},"
                f"{self.t_config / US_PER_MS:.3f},{self.t_rule_install / US_PER_MS:.3f},"
                f"{self.delay_ms:.3f},{self.lost_packets}")


HANDOVER_CSV_HEADER = "device,direction,epoch,started_at,committed_at,t_config_ms,t_rule_install_ms,delay_ms,lost_packets"


def handover_loss(timings: HandoverTimings | tuple[int, int], arrivals: Sequence[int] | np.ndarray) -> int:
    """Packets steered onto the new interface after its rules landed but before it was configured."""
    if isinstance(timings, HandoverTimings):
        window = timings.loss_window
        if window is None:
            return 0
        rule_done, config_done = window
    else:
        rule_done, config_done = timings
    if config_done <= rule_done:
        return 0
    t = np.asarray(arrivals, dtype=np.int64)
    return int(np.count_nonzero((t >= rule_done) & (t < config_done)))


# -- SYN handshake -----------------------------------------------------------

@dataclass
class SyncState:
    sent_syn: bool = False
    received_syn: bool = False
    epoch: int = 0
    timer_deadline: int = 0


@dataclass(frozen=True)
class SyncOutcome:
    success: bool
    duration_us: int
    syn_sent: int

    @property
    def timed_out(self) -> bool:
        return not self.success


class SyncAgent:
    """One side of the SYN handshake.

    After association the agent sends ``SYN(epoch)`` on the old link every
    ``rtt/2`` until it holds the partner's SYN.  A SYN from a partner that has
    not yet heard from us (``ack=False``) is answered immediately.  Commit
    happens ``rtt/2`` after our last SYN so both sides switch together.
    """

    def __init__(self, engine: Engine, name: str, send: Callable[[SyncMessage], None],
                 on_success: Callable[[int], None], on_timeout: Callable[[], None]):
        self.engine = engine
        self.name = name
        self.send = send
        self.on_success = on_success
        self.on_timeout = on_timeout
        self.state = SyncState()
        self.rtt_us = 0
        self.associated_at: int | None = None
        self.last_send: int | None = None
        self.syn_sent = 0
        self.stale = 0
        self.succeeded = False
        self.finished = False
        self.samples: list[int] = []
        self._retx = None
        self._timer = None
        self._commit = None
        self._unacked_at: int | None = None

    def arm(self, epoch: int, deadline: int, rtt_us: int) -> None:
        self.state = SyncState(False, False, epoch, deadline)
        self.rtt_us = max(1, int(rtt_us))
        self._timer = self.engine.schedule(deadline, EventKind.TIMER_EXPIRY, self._expire, self.name,
                                           f"sync-timer epoch={epoch}")

    def adopt(self, epoch: int) -> None:
        if epoch > self.state.epoch:
            self.state.epoch = epoch
            self.state.received_syn = False

    def associated(self) -> None:
        if self.finished:
            return
        self.associated_at = self.engine.now
        self.state.sent_syn = True
        self._emit(ack=self.state.received_syn)
        if self.state.received_syn:
            self._schedule_commit()
        else:
            self._schedule_retx()

    def _emit(self, ack: bool) -> None:
        self.syn_sent += 1
        self.last_send = self.engine.now
        if not ack:
            self._unacked_at = self.engine.now
        self.send(SyncMessage(self.name, self.state.epoch, ack))

    def _schedule_retx(self) -> None:
        self._retx = self.engine.after(max(1, self.rtt_us // 2), EventKind.TIMER_EXPIRY, self._retransmit,
                                       self.name, f"syn-retx epoch={self.state.epoch}")

    def _retransmit(self) -> None:
        if self.finished or self.state.received_syn:
            return
        self._emit(ack=False)
        self._schedule_retx()

    def on_message(self, msg: SyncMessage) -> None:
        if msg.handover_epoch != self.state.epoch:
            self.stale += 1
            return
        if msg.ack and self._unacked_at is not None:
            self.samples.append(self.engine.now - self._unacked_at)
        first = not self.state.received_syn
        self.state.received_syn = True
        if not self.state.sent_syn:
            return
        if not msg.ack:
            self._emit(ack=True)
        if first and not self.finished:
            Engine.cancel(self._retx)
            self._schedule_commit()

    def _schedule_commit(self) -> None:
        if self._commit is not None:
            return
        at = max(self.engine.now, (self.last_send or self.engine.now) + self.rtt_us // 2)
        self._commit = self.engine.schedule(at, EventKind.TIMER_EXPIRY, self._succeed, self.name,
                                            f"sync-commit epoch={self.state.epoch}")

    def _succeed(self) -> None:
        if self.finished:
            return
        self.finished = self.succeeded = True
        Engine.cancel(self._timer)
        Engine.cancel(self._retx)
        self.on_success(self.engine.now - (self.associated_at or self.engine.now))

    def _expire(self) -> None:
        if self.finished:
            return
        self.finished = True
        Engine.cancel(self._retx)
        Engine.cancel(self._commit)
        self.on_timeout()

    def outcome(self) -> SyncOutcome | None:
        if not self.finished:
            return None
        dur = 0
        if self.succeeded and self._commit is not None and self.associated_at is not None:
            dur = self._commit.fire_at - self.associated_at
        return SyncOutcome(self.succeeded, dur, self.syn_sent)


def synchronize(rtt_us: int, timeout_us: int, *, device_assoc_at: int = 0,
                peer_assoc_at: int | None = 0, loss_prob: float = 0.0, seed: int = 0,
                ) -> tuple[SyncOutcome, SyncOutcome | None]:
    """Run the handshake between two devices over a symmetric ``rtt/2`` link.

    ``peer_assoc_at=None`` means the peer never finishes associating.
    Returns ``(device_outcome, peer_outcome)``.
    """
    eng = Engine(seed, trace=False)
    agents: dict[str, SyncAgent] = {}

    def link(to: str):
        def send(msg: SyncMessage):
            if loss_prob > 0 and eng.rng.random() < loss_prob:
                return
            eng.after(rtt_us // 2, EventKind.PACKET_ARRIVAL, lambda: agents[to].on_message(msg), to, "SYN")
        return send

    for name, other in (("device", "peer"), ("peer", "device")):
        agents[name] = SyncAgent(eng, name, link(other), lambda _d: None, lambda: None)
        agents[name].arm(1, timeout_us, rtt_us)
    eng.schedule(device_assoc_at, EventKind.INTERFACE_READY, agents["device"].associated, "device", "associated")
    if peer_assoc_at is not None:
        eng.schedule(peer_assoc_at, EventKind.INTERFACE_READY, agents["peer"].associated, "peer", "associated")
    eng.run_until(timeout_us + rtt_us)
    out = agents["device"].outcome()
    assert out is not None
    return out, agents["peer"].outcome()


# -- connection manager ------------------------------------------------------

@dataclass(frozen=True)
class HandoverRequest:
    sender: str
    epoch: int
    direction: Direction


@dataclass
class ConnectionManagerConfig:
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    timing: HandoverTimingConfig = field(default_factory=HandoverTimingConfig)
    sync_timeout_us: int = 5 * US_PER_S
    trigger_enabled: bool = True
    # pre-emptive Bluetooth->Wi-Fi when the peer drifts beyond this share of BT range
    bt_range_guard: float = 0.8


class ConnectionManager:
    """Per-device handover state machine.

    ``device`` supplies the radio and forwarding hooks: ``wake_interface``,
    ``associate``, ``send_control``, ``configure_interface``,
    ``install_handover_rules``, ``finish_handover``, ``abort_backup``,
    ``bt_mutual_range`` and ``active_kind``.
    """

    def __init__(self, device, engine: Engine, config: ConnectionManagerConfig | None = None):
        self.device = device
        self.engine = engine
        self.config = config or ConnectionManagerConfig()
        self.phase = HandoverPhase.IDLE
        self.epoch = 0
        self.current: HandoverTimings | None = None
        self.records: list[HandoverTimings] = []
        self.agent: SyncAgent | None = None
        self.history: list[float] = []
        self.ignored_triggers = 0
        self._pending: list = []

    @property
    def name(self) -> str:
        return self.device.name

    # trigger side
    def on_throughput_sample(self, kbps: float) -> Decision:
        self.history.append(kbps)
        cfg = self.config
        if not cfg.trigger_enabled or self.device.session_peer is None:
            return Decision.STAY
        active = self.device.active_kind
        decision = evaluate_trigger(cfg.trigger, self.history, active, self.device.bt_mutual_range(1.0))
        if (decision is Decision.STAY and active is InterfaceKind.BLUETOOTH
                and not self.device.bt_mutual_range(cfg.bt_range_guard)):
            decision = Decision.SWITCH_TO_WIFI
        direction = Direction.from_decision(decision)
        if direction is not None:
            self.initiate(direction)
        return decision

    def on_link_failure(self) -> None:
        if self.device.active_kind is InterfaceKind.BLUETOOTH:
            self.initiate(Direction.BLUETOOTH_TO_WIFI)

    def initiate(self, direction: Direction, scripted: bool = False) -> bool:
        if self.phase is not HandoverPhase.IDLE:
            self.ignored_triggers += 1
            return False
        if not self._can_start(direction):
            return False
        epoch = self.epoch + 1
        peer = self.device.session_peer
        if peer is not None:
            self.device.send_control(peer, HandoverRequest(self.name, epoch, direction))
        self._start(direction, epoch, scripted)
        return True

    def _can_start(self, direction: Direction) -> bool:
        return (self.device.active_kind is direction.source
                and self.device.interface_state(direction.target) is InterfaceState.OFF)

    def on_request(self, msg: HandoverRequest) -> None:
        if self.phase is HandoverPhase.IDLE:
            if msg.epoch > self.epoch and self._can_start(msg.direction):
                self._start(msg.direction, msg.epoch, False)
            else:
                self.ignored_triggers += 1
        elif self.current is not None and self.current.direction is msg.direction and msg.epoch > self.epoch:
            self.epoch = msg.epoch
            self.current.epoch = msg.epoch
            if self.agent is not None:
                self.agent.adopt(msg.epoch)
        else:
            self.ignored_triggers += 1

    def on_sync(self, msg: SyncMessage) -> None:
        if self.phase is HandoverPhase.IDLE and msg.handover_epoch > self.epoch:
            # partner is ahead of us; keep it until its request arrives
            self._pending.append(msg)
        elif self.agent is not None:
            self.agent.on_message(msg)

    # execution side
    def _start(self, direction: Direction, epoch: int, scripted: bool) -> None:
        now = self.engine.now
        self.epoch = epoch
        self.phase = HandoverPhase.WAKING_BACKUP
        self.current = HandoverTimings(self.name, direction, epoch, now, scripted=scripted)
        self.records.append(self.current)
        self.engine.log("handover", self.name, f"start {direction.value} epoch={epoch}")
        peer = self.device.session_peer
        self.agent = SyncAgent(self.engine, self.name,
                               lambda m: self.device.send_control(peer, m) if peer is not None else None,
                               self._synced, lambda: self.abort("sync_timeout"))
        self.agent.arm(epoch, now + self.config.sync_timeout_us, int(self.device.rtt_estimate()))
        for msg in self._pending:
            if msg.handover_epoch == epoch:
                self.agent.on_message(msg)
        self._pending.clear()
        self.device.wake_interface(direction.target, self._woken)

    def _woken(self) -> None:
        if self.phase is not HandoverPhase.WAKING_BACKUP:
            return
        self.phase = HandoverPhase.ASSOCIATING
        delay = int(self.config.timing.association_ms * US_PER_MS)
        self.engine.after(delay, EventKind.INTERFACE_READY, self._associated, self.name, "associate")

    def _associated(self) -> None:
        if self.phase is not HandoverPhase.ASSOCIATING:
            return
        rec = self.current
        if not self.device.associate(rec.direction.target):
            self.abort("association_failed")
            return
        rec.association_duration = self.engine.now - rec.started_at
        self.phase = HandoverPhase.SYNCHRONIZING
        self.agent.associated()

    def _synced(self, duration: int) -> None:
        if self.phase is not HandoverPhase.SYNCHRONIZING:
            return
        rec = self.current
        now = self.engine.now
        rec.sync_duration = duration
        rec.sync_done_at = now
        self.phase = HandoverPhase.COMMITTING
        via_mgmt = not getattr(self.device, "controller_alive", True)
        t_config, t_rule = self.config.timing.sample(rec.direction, self.engine.rng, via_mgmt)
        rec.t_config, rec.t_rule_install = t_config, t_rule
        self.engine.log("handover", self.name,
                        f"commit epoch={rec.epoch} t_config={t_config} t_rule_install={t_rule}")
        self.engine.after(t_config, EventKind.ACTIVITY_COMPLETE, self._config_done, self.name, "network-config")
        self.engine.after(t_rule, EventKind.ACTIVITY_COMPLETE, self._rule_done, self.name, "rule-install")

    def _config_done(self) -> None:
        rec = self.current
        rec.config_done_at = self.engine.now
        self.device.configure_interface(rec.direction.target)
        self._maybe_done()

    def _rule_done(self) -> None:
        rec = self.current
        rec.rule_done_at = self.engine.now
        self.device.install_handover_rules(rec.direction.target, rec)
        self._maybe_done()

    def _maybe_done(self) -> None:
        rec = self.current
        if rec.config_done_at is None or rec.rule_done_at is None:
            return
        rec.committed_at = self.engine.now
        self.phase = HandoverPhase.DONE
        self.engine.log("handover", self.name,
                        f"done epoch={rec.epoch} delay_us={rec.handover_delay}")
        self.device.finish_handover(rec)
        self.phase = HandoverPhase.IDLE
        self.history.clear()

    def abort(self, reason: str) -> None:
        if self.phase not in _ABORTABLE:
            return
        rec = self.current
        rec.aborted = True
        rec.abort_reason = reason
        self.phase = HandoverPhase.ABORTED
        if self.agent is not None:
            self.agent.finished = True
        self.engine.log("handover", self.name, f"abort epoch={rec.epoch} reason={reason}")
        self.device.abort_backup(rec.direction.target)
        self.phase = HandoverPhase.IDLE
        self.history.clear()


def execute_handover(world, a: str, b: str, direction: Direction, run_for_us: int = 10 * US_PER_S
                     ) -> dict[str, HandoverTimings]:
    """Script a handover between ``a`` and ``b`` on ``world`` and run it to completion."""
    if world.devices[a].session_peer != b:
        raise ValueError(f"{a} and {b} do not share a session")
    world.devices[a].cm.initiate(direction, scripted=True)
    world.engine.run_until(world.engine.now + run_for_us)
    return {name: world.devices[name].cm.records[-1] for name in (a, b) if world.devices[name].cm.records}
