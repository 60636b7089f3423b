"""Per-device flow-table switch.

A packet entering a port is matched against the table; the highest priority
matching rule wins, equal priorities go to the most recently installed rule and
then to the lowest ``rule_id``.  A miss is escalated to the controller stack
once per packet.  ARP and control frames never touch the table: they are handed
to the extended controller directly.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

from .core import InterfaceKind, IpAddress, MacAddress, Packet, Protocol

#: UDP port carrying extended-controller traffic (D2D, SYN, bridge adverts).
CONTROL_PORT = 47_000


class Port(enum.IntEnum):
    VIRTUAL = 0
    WIFI = 1
    BLUETOOTH = 2


def port_of(kind: InterfaceKind) -> Port:
    return Port.WIFI if kind is InterfaceKind.WIFI else Port.BLUETOOTH


def kind_of(port: Port) -> InterfaceKind:
    if port is Port.VIRTUAL:
        raise ValueError("virtual port has no interface kind")
    return InterfaceKind.WIFI if port is Port.WIFI else InterfaceKind.BLUETOOTH


_MATCH_ORDER = ("in_port", "eth_src", "eth_dst", "ip_src", "ip_dst", "protocol", "src_port", "dst_port")


@dataclass(frozen=True)
class MatchFields:
    in_port: Port | None = None
    eth_src: MacAddress | None = None
    eth_dst: MacAddress | None = None
    ip_src: IpAddress | None = None
    ip_dst: IpAddress | None = None
    protocol: Protocol | None = None
    src_port: int | None = None
    dst_port: int | None = None

    def matches(self, p: Packet, in_port: Port) -> bool:
        if self.in_port is not None and self.in_port != in_port:
            return False
        if self.eth_src is not None and self.eth_src != p.src_mac:
            return False
        if self.eth_dst is not None and self.eth_dst != p.dst_mac:
            return False
        # IP match compares the address, not the prefix annotation
        if self.ip_src is not None and self.ip_src.value != p.src_ip.value:
            return False
        if self.ip_dst is not None and self.ip_dst.value != p.dst_ip.value:
            return False
        if self.protocol is not None and self.protocol != p.protocol:
            return False
        if self.src_port is not None and self.src_port != p.src_port:
            return False
        if self.dst_port is not None and self.dst_port != p.dst_port:
            return False
        return True

    def __str__(self) -> str:
        parts = []
        for name in _MATCH_ORDER:
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, enum.Enum):
                value = value.name.lower()
            parts.append(f"{name}={value}")
        return ",".join(parts) or "*"


class ActionType(enum.Enum):
    OUTPUT = "output"
    SET_ETH_SRC = "set_eth_src"
    SET_ETH_DST = "set_eth_dst"
    SET_IP_SRC = "set_ip_src"
    SET_IP_DST = "set_ip_dst"
    DROP = "drop"


@dataclass(frozen=True)
class FlowAction:
    type: ActionType
    value: object = None

    def __str__(self) -> str:
        if self.type is ActionType.DROP:
            return "drop"
        value = self.value.name.lower() if isinstance(self.value, Port) else self.value
        return f"{self.type.value}:{value}"


def output(port: Port) -> FlowAction:
    return FlowAction(ActionType.OUTPUT, Port(port))


def set_eth_src(mac: MacAddress) -> FlowAction:
    return FlowAction(ActionType.SET_ETH_SRC, mac)


def set_eth_dst(mac: MacAddress) -> FlowAction:
    return FlowAction(ActionType.SET_ETH_DST, mac)


def set_ip_src(ip: IpAddress) -> FlowAction:
    return FlowAction(ActionType.SET_IP_SRC, ip)


def set_ip_dst(ip: IpAddress) -> FlowAction:
    return FlowAction(ActionType.SET_IP_DST, ip)


def drop() -> FlowAction:
    return FlowAction(ActionType.DROP)


class RuleOrigin(enum.Enum):
    LOCAL_CONTROLLER = "local"
    EXTENDED_CONTROLLER = "extended"


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class FlowRule:
    rule_id: int
    priority: int
    match: MatchFields
    actions: tuple[FlowAction, ...]
    installed_at: int = 0
    origin: RuleOrigin = RuleOrigin.LOCAL_CONTROLLER

    def __post_init__(self):
        if self.priority < 0:
            raise RuleError("priority must be unsigned")
        if sum(a.type is ActionType.OUTPUT for a in self.actions) > 1:
            raise RuleError(f"rule {self.rule_id} has more than one output action")

    def semantics(self) -> tuple:
        """What the rule does, ignoring identity, time and origin."""
        return self.priority, self.match, self.actions

    def dump_line(self) -> str:
        acts = ",".join(str(a) for a in self.actions) or "-"
        return f"{self.priority}\t{self.match}\t{acts}\t{self.origin.value}"


class MissBehavior(enum.Enum):
    ASK_CONTROLLER = "ask_controller"
    DROP = "drop"


def _rank(rule: FlowRule) -> tuple:
    return -rule.priority, -rule.installed_at, rule.rule_id


class FlowTable:
    def __init__(self, miss: MissBehavior = MissBehavior.ASK_CONTROLLER):
        self.miss = miss
        self._rules: list[FlowRule] = []  # kept in lookup order

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self):
        return iter(self._rules)

    def __contains__(self, rule_id: int) -> bool:
        return any(r.rule_id == rule_id for r in self._rules)

    def install(self, rule: FlowRule) -> None:
        """Add ``rule``; a rule with the same priority and match is overwritten."""
        if rule.rule_id in self:
            raise RuleError(f"duplicate rule_id {rule.rule_id}")
        self._rules = [r for r in self._rules if (r.priority, r.match) != (rule.priority, rule.match)]
        self._rules.append(rule)
        self._rules.sort(key=_rank)

    def remove(self, rule_id: int) -> None:
        self._rules = [r for r in self._rules if r.rule_id != rule_id]

    def remove_where(self, pred: Callable[[FlowRule], bool]) -> list[FlowRule]:
        gone = [r for r in self._rules if pred(r)]
        self._rules = [r for r in self._rules if not pred(r)]
        return gone

    def lookup(self, p: Packet, in_port: Port) -> FlowRule | None:
        for rule in self._rules:
            if rule.match.matches(p, in_port):
                return rule
        return None

    def snapshot(self) -> tuple[FlowRule, ...]:
        return tuple(self._rules)

    def dump(self) -> str:
        return "".join(r.dump_line() + "\n" for r in self._rules)


def lookup(table: FlowTable, p: Packet, in_port: Port) -> FlowRule | None:
    return table.lookup(p, in_port)


def install(table: FlowTable, rule: FlowRule) -> None:
    table.install(rule)


def apply_actions(p: Packet, actions: Iterable[FlowAction]) -> tuple[Packet, Port | None]:
    out: Port | None = None
    for act in actions:
        t = act.type
        if t is ActionType.SET_ETH_SRC:
            p = replace(p, src_mac=act.value)
        elif t is ActionType.SET_ETH_DST:
            p = replace(p, dst_mac=act.value)
        elif t is ActionType.SET_IP_SRC:
            p = replace(p, src_ip=act.value)
        elif t is ActionType.SET_IP_DST:
            p = replace(p, dst_ip=act.value)
        elif t is ActionType.OUTPUT:
            out = act.value
        elif t is ActionType.DROP:
            return p, None
    return p, out


class ControllerUnavailable(RuntimeError):
    """Local controller is dead; the switch must try the fallback path."""


class UnknownPeer(LookupError):
    """No LocalDb record for the packet's peer."""


@dataclass
class ForwardDecision:
    packet: Packet
    out_port: Port | None
    rule: FlowRule | None = None
    reason: str = "hit"

    @property
    def forwarded(self) -> bool:
        return self.out_port is not None


RuleSource = Callable[[Packet, Port], Sequence[FlowRule]]


@dataclass
class FlowSwitch:
    """The Open vSwitch analog sitting under one device's controller stack."""
    name: str
    table: FlowTable = field(default_factory=FlowTable)
    controller: RuleSource | None = None
    fallback: RuleSource | None = None
    arp_handler: Callable[[Packet, Port], None] | None = None
    control_handler: Callable[[Packet, Port], None] | None = None
    counters: Counter = field(default_factory=Counter)

    def intercept_arp(self, p: Packet, in_port: Port = Port.VIRTUAL) -> bool:
        if p.protocol is not Protocol.ARP:
            return False
        self.counters["arp_intercepted"] += 1
        if self.arp_handler is not None:
            self.arp_handler(p, in_port)
        return True

    def process(self, p: Packet, in_port: Port) -> ForwardDecision:
        if self.intercept_arp(p, in_port):
            return ForwardDecision(p, None, reason="arp")
        if p.dst_port == CONTROL_PORT and p.protocol is Protocol.UDP and p.control is not None:
            self.counters["control"] += 1
            if self.control_handler is not None:
                self.control_handler(p, in_port)
            return ForwardDecision(p, None, reason="control")

        rule = self.table.lookup(p, in_port)
        if rule is None:
            if self.table.miss is MissBehavior.DROP:
                self.counters["miss_drop"] += 1
                return ForwardDecision(p, None, reason="miss_drop")
            rule, reason = self._escalate(p, in_port)
            if rule is None:
                return ForwardDecision(p, None, reason=reason)
        out_p, out = apply_actions(p, rule.actions)
        if out is None:
            self.counters["rule_drop"] += 1
            return ForwardDecision(out_p, None, rule, "rule_drop")
        self.counters["forwarded"] += 1
        return ForwardDecision(out_p, out, rule, "hit")

    def _escalate(self, p: Packet, in_port: Port) -> tuple[FlowRule | None, str]:
        self.counters["packet_in"] += 1
        rules: Sequence[FlowRule] = ()
        try:
            if self.controller is None:
                raise ControllerUnavailable(self.name)
            rules = self.controller(p, in_port)
        except UnknownPeer:
            self.counters["unknown_peer"] += 1
            return None, "unknown_peer"
        except ControllerUnavailable:
            self.counters["fallback"] += 1
            try:
                if self.fallback is None:
                    raise UnknownPeer(self.name)
                rules = self.fallback(p, in_port)
            except UnknownPeer:
                self.counters["unhandled_miss"] += 1
                return None, "unhandled_miss"
        for r in rules:
            self.table.install(r)
        rule = self.table.lookup(p, in_port)
        if rule is None:
            self.counters["unhandled_miss"] += 1
            return None, "unhandled_miss"
        return rule, "packet_in"
