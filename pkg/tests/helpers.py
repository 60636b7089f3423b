"""Shared builders and independent oracles for the test suite."""
from __future__ import annotations

import numpy as np

from sdnhandover.controllers import LocalDb, RuleIds
from sdnhandover.core import InterfaceDesc, InterfaceKind, IpAddress, MacAddress, Packet, Protocol
from sdnhandover.switch import FlowRule, MatchFields, Port, RuleOrigin, output
from sdnhandover.world import interface_record, virtual_endpoint

MACS = [MacAddress(0x020000000100 + i) for i in range(1, 4)]
IPS = [IpAddress((10 << 24) + i) for i in range(1, 4)]
PORTS = [5001, 5002]
PROTOS = [Protocol.UDP, Protocol.TCP]


def local_db(index: int) -> LocalDb:
    return LocalDb(f"D{index}", virtual_endpoint(index),
                   {k: interface_record(k, index) for k in InterfaceKind})


def random_packet(rng: np.random.Generator, pid: int) -> tuple[Packet, Port]:
    p = Packet(MACS[rng.integers(3)], MACS[rng.integers(3)], IPS[rng.integers(3)], IPS[rng.integers(3)],
               PROTOS[rng.integers(2)], PORTS[rng.integers(2)], PORTS[rng.integers(2)], pid, 100, 0)
    return p, Port(int(rng.integers(3)))


def random_match(rng: np.random.Generator) -> MatchFields:
    def maybe(pool):
        return None if rng.random() < 0.6 else pool[rng.integers(len(pool))]
    return MatchFields(maybe(list(Port)), maybe(MACS), maybe(MACS), maybe(IPS), maybe(IPS), maybe(PROTOS),
                       maybe(PORTS), maybe(PORTS))


def random_rule(rng: np.random.Generator, ids: RuleIds) -> FlowRule:
    return FlowRule(ids(), int(rng.integers(0, 4)), random_match(rng), (output(Port(int(rng.integers(3)))),),
                    int(rng.integers(0, 5)), RuleOrigin.LOCAL_CONTROLLER)


def oracle_matches(m: MatchFields, p: Packet, in_port: Port) -> bool:
    pairs = [(m.in_port, in_port), (m.eth_src, p.src_mac), (m.eth_dst, p.dst_mac),
             (m.ip_src and m.ip_src.value, p.src_ip.value), (m.ip_dst and m.ip_dst.value, p.dst_ip.value),
             (m.protocol, p.protocol), (m.src_port, p.src_port), (m.dst_port, p.dst_port)]
    return all(want is None or want == got for want, got in pairs)


def oracle_lookup(rules: list[FlowRule], p: Packet, in_port: Port) -> FlowRule | None:
    """Brute force: keep the last install per (priority, match), then scan for the best candidate."""
    live: dict = {}
    for r in rules:
        live[(r.priority, r.match)] = r
    best = None
    for r in live.values():
        if not oracle_matches(r.match, p, in_port):
            continue
        if best is None or (r.priority, r.installed_at, -r.rule_id) > (best.priority, best.installed_at,
                                                                       -best.rule_id):
            best = r
    return best


def jitter_oracle(send, recv) -> list[float]:
    """Interarrival jitter in ms, written directly from the 1/16 recurrence."""
    out, j = [], 0.0
    for i in range(1, len(send)):
        d = (recv[i] - recv[i - 1]) - (send[i] - send[i - 1])
        j = j + (abs(d) - j) / 16.0
        out.append(j / 1000.0)
    return out


def count_in_window(arrivals, lo: int, hi: int) -> int:
    return sum(1 for a in arrivals if lo <= a < hi)


def desc(mac: MacAddress, ip: IpAddress) -> InterfaceDesc:
    return InterfaceDesc(mac, ip, 5001)



def capture_app_boundary(world) -> list:
    """Record every packet handed to an application, independently of the world's own monitor."""
    seen = []
    original = world.app_deliver

    def spy(dev, p):
        seen.append((dev, p))
        original(dev, p)
    world.app_deliver = spy
    return seen


def only_virtual(world, seen) -> bool:
    virt = {(d.virtual.virtual_mac.value, d.virtual.virtual_ip.value) for d in world.devices.values()}
    return all((p.src_mac.value, p.src_ip.value) in virt and (p.dst_mac.value, p.dst_ip.value) in virt
               and p.dst_ip.value == dev.virtual.virtual_ip.value for dev, p in seen)
