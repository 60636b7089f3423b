import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdnhandover.controllers import RuleIds
from sdnhandover.core import InterfaceDesc, IpAddress, MacAddress, Protocol, make_udp_packet
from sdnhandover.switch import (ActionType, ControllerUnavailable, FlowRule, FlowSwitch, FlowTable, MatchFields,
                                MissBehavior, Port, RuleError, RuleOrigin, UnknownPeer, apply_actions, drop, output,
                                set_eth_dst, set_eth_src, set_ip_dst, set_ip_src)

from helpers import oracle_lookup, random_packet, random_rule

A = InterfaceDesc(MacAddress(0xA), IpAddress.parse("10.0.0.1/24"))
B = InterfaceDesc(MacAddress(0xB), IpAddress.parse("10.0.0.2/24"))


def pkt(proto=Protocol.UDP):
    p = make_udp_packet(A, B, 100, 0)
    return p if proto is Protocol.UDP else p.__class__(**{**p.__dict__, "protocol": proto})


def rule(rid, prio, match=MatchFields(), actions=(output(Port.WIFI),), at=0):
    return FlowRule(rid, prio, match, actions, at)


def test_empty_table_misses():
    assert FlowTable().lookup(pkt(), Port.VIRTUAL) is None


def test_higher_priority_wins():
    t = FlowTable()
    t.install(rule(1, 10))
    t.install(rule(2, 20, MatchFields(ip_dst=B.ip)))
    assert t.lookup(pkt(), Port.VIRTUAL).rule_id == 2


def test_duplicate_rule_id_rejected():
    t = FlowTable()
    t.install(rule(1, 10))
    with pytest.raises(RuleError):
        t.install(rule(1, 5, MatchFields(in_port=Port.WIFI)))


def test_equal_priority_overlap_newer_wins():
    t = FlowTable()
    t.install(rule(1, 10, MatchFields(ip_dst=B.ip), at=5))
    t.install(rule(2, 10, MatchFields(ip_src=A.ip), at=9))
    assert t.lookup(pkt(), Port.VIRTUAL).rule_id == 2
    t.install(rule(3, 10, MatchFields(eth_src=A.mac), at=9))
    # same recency: lowest id
    assert t.lookup(pkt(), Port.VIRTUAL).rule_id == 2


def test_two_outputs_rejected():
    with pytest.raises(RuleError):
        rule(1, 1, actions=(output(Port.WIFI), output(Port.BLUETOOTH)))
    with pytest.raises(RuleError):
        rule(1, -1)


def test_rewrite_actions_keep_payload():
    p = pkt()
    x = IpAddress.parse("192.168.1.9/24")
    q, out = apply_actions(p, [set_ip_dst(x), output(Port.WIFI)])
    assert out is Port.WIFI and q.dst_ip == x
    assert (q.payload_id, q.size_bytes) == (p.payload_id, p.size_bytes)


def test_actions_apply_left_to_right():
    m1, m2 = MacAddress(1), MacAddress(2)
    q, _ = apply_actions(pkt(), [set_eth_src(m1), set_eth_src(m2), set_eth_dst(m1), set_ip_src(B.ip)])
    assert q.src_mac == m2 and q.dst_mac == m1 and q.src_ip == B.ip
    q, out = apply_actions(pkt(), [drop(), output(Port.WIFI)])
    assert out is None


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.integers(0, 40))
def test_lookup_matches_brute_force(seed, n_rules):
    rng = np.random.default_rng(seed)
    ids = RuleIds()
    rules = [random_rule(rng, ids) for _ in range(n_rules)]
    t = FlowTable()
    for r in rules:
        t.install(r)
    for i in range(20):
        p, port = random_packet(rng, i + 1)
        assert t.lookup(p, port) == oracle_lookup(rules, p, port)


def test_fifty_rules_two_hundred_packets():
    rng = np.random.default_rng(50)
    ids = RuleIds()
    rules = [random_rule(rng, ids) for _ in range(50)]
    t = FlowTable()
    for r in rules:
        t.install(r)
    for i in range(200):
        p, port = random_packet(rng, i + 1)
        assert t.lookup(p, port) == oracle_lookup(rules, p, port)


def _caching_switch(miss=MissBehavior.ASK_CONTROLLER):
    calls = []
    ids = RuleIds()

    def ctrl(p, in_port):
        calls.append(p.payload_id)
        return [FlowRule(ids(), 100, MatchFields(in_port=in_port, ip_dst=p.dst_ip), (output(Port.WIFI),))]
    return FlowSwitch("s", FlowTable(miss), controller=ctrl), calls


def test_single_packet_in_per_flow():
    sw, calls = _caching_switch()
    for _ in range(10):
        d = sw.process(pkt(), Port.VIRTUAL)
        assert d.out_port is Port.WIFI
    assert len(calls) == 1 and sw.counters["packet_in"] == 1


def test_miss_drop_counts():
    sw, calls = _caching_switch(MissBehavior.DROP)
    d = sw.process(pkt(), Port.VIRTUAL)
    assert not d.forwarded and sw.counters["miss_drop"] == 1 and calls == []


def test_dead_controller_uses_fallback_then_drops():
    def dead(p, in_port):
        raise ControllerUnavailable("x")

    def fb(p, in_port):
        return [FlowRule(77, 100, MatchFields(ip_dst=p.dst_ip), (output(Port.BLUETOOTH),))]
    sw = FlowSwitch("s", controller=dead, fallback=fb)
    assert sw.process(pkt(), Port.VIRTUAL).rule.rule_id == 77
    assert sw.counters["fallback"] == 1

    def unknown(p, in_port):
        raise UnknownPeer("y")
    sw2 = FlowSwitch("s", controller=dead, fallback=unknown)
    d = sw2.process(pkt(), Port.VIRTUAL)
    assert not d.forwarded and sw2.counters["unhandled_miss"] == 1


def test_arp_is_intercepted_not_matched():
    seen = []
    sw = FlowSwitch("s", arp_handler=lambda p, port: seen.append(p))
    sw.table.install(rule(1, 0))
    d = sw.process(pkt(Protocol.ARP), Port.WIFI)
    assert d.reason == "arp" and len(seen) == 1
    assert not sw.intercept_arp(pkt())


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_at_most_one_output_and_payload_preserved(seed):
    rng = np.random.default_rng(seed)
    ids = RuleIds()
    sw = FlowSwitch("s", FlowTable(MissBehavior.DROP))
    for _ in range(10):
        sw.table.install(random_rule(rng, ids))
    for i in range(10):
        p, port = random_packet(rng, i + 1)
        d = sw.process(p, port)
        assert d.out_port is None or isinstance(d.out_port, Port)
        assert (d.packet.payload_id, d.packet.size_bytes) == (p.payload_id, p.size_bytes)
        if d.rule is not None:
            assert sum(a.type is ActionType.OUTPUT for a in d.rule.actions) <= 1


def test_dump_format():
    t = FlowTable()
    t.install(FlowRule(1, 100, MatchFields(in_port=Port.VIRTUAL, ip_dst=B.ip), (output(Port.WIFI),), 0,
                       RuleOrigin.EXTENDED_CONTROLLER))
    line = t.dump().strip()
    prio, match, acts, origin = line.split("\t")
    assert prio == "100" and match.startswith("in_port=virtual") and origin == "extended"
