import dataclasses
import itertools

import pytest
from hypothesis import given, strategies as st

from sdnhandover.core import (IllegalTransition, InterfaceDesc, InterfaceKind, InterfaceState, IpAddress, MacAddress, PacketError,
                              check_transition, is_legal_transition, make_udp_packet, rewrite_headers)

macs = st.integers(0, (1 << 48) - 1).map(MacAddress)
ips = st.builds(IpAddress, st.integers(0, (1 << 32) - 1), st.integers(0, 32))


def test_packet_copies_descriptor_fields(if_a, if_b):
    p = make_udp_packet(if_a, if_b, 1000, 0)
    assert (p.src_mac, p.dst_mac, p.src_ip, p.dst_ip) == (if_a.mac, if_b.mac, if_a.ip, if_b.ip)
    assert p.size_bytes == 1000 and p.bits == 8000


def test_payload_ids_are_fresh(if_a, if_b):
    a = make_udp_packet(if_a, if_b, 100, 0)
    b = make_udp_packet(if_a, if_b, 100, 0)
    assert a.payload_id != b.payload_id


def test_header_floor(if_a, if_b):
    assert make_udp_packet(if_a, if_b, 42, 0).size_bytes == 42
    with pytest.raises(PacketError):
        make_udp_packet(if_a, if_b, 41, 0)


def test_rewrite_identity(if_a, if_b):
    p = make_udp_packet(if_a, if_b, 500, 7)
    assert rewrite_headers(p, p.src_mac, p.dst_mac, p.src_ip, p.dst_ip) == p


def test_rewrite_changes_exactly_four_fields(if_a, if_b):
    p = make_udp_packet(if_a, if_b, 500, 7)
    wifi_a = (MacAddress.parse("02:00:00:00:01:01"), IpAddress.parse("192.168.1.1/24"))
    wifi_c = (MacAddress.parse("02:00:00:00:01:03"), IpAddress.parse("192.168.1.3/24"))
    q = rewrite_headers(p, wifi_a[0], wifi_c[0], wifi_a[1], wifi_c[1])
    changed = {f.name for f in dataclasses.fields(p) if getattr(p, f.name) != getattr(q, f.name)}
    assert changed == {"src_mac", "dst_mac", "src_ip", "dst_ip"}


@given(st.lists(st.tuples(macs, macs, ips, ips), max_size=8))
def test_payload_id_survives_any_rewrite_chain(chain):
    a = InterfaceDesc(MacAddress(1), IpAddress(1), 4000)
    b = InterfaceDesc(MacAddress(2), IpAddress(2), 5001)
    p0 = make_udp_packet(a, b, 200, 0)
    p = p0
    for sm, dm, si, di in chain:
        p = rewrite_headers(p, sm, dm, si, di)
    assert (p.payload_id, p.size_bytes, p.src_port, p.dst_port) == (p0.payload_id, 200, p0.src_port, p0.dst_port)
    back = rewrite_headers(p, p0.src_mac, p0.dst_mac, p0.src_ip, p0.dst_ip)
    assert back == p0


def test_transition_matrix_exhaustive():
    S = InterfaceState
    legal = {(S.OFF, S.WAKING_UP), (S.WAKING_UP, S.SLEEP), (S.SLEEP, S.ACTIVE), (S.ACTIVE, S.SLEEP),
             (S.WAKING_UP, S.OFF), (S.SLEEP, S.OFF), (S.ACTIVE, S.OFF)}
    for a, b in itertools.product(S, S):
        assert is_legal_transition(a, b) == ((a, b) in legal)
        if (a, b) in legal:
            assert check_transition(a, b) is b
        else:
            with pytest.raises(IllegalTransition):
                check_transition(a, b)


def test_address_rendering():
    assert str(MacAddress.parse("AA:bb:0c:dd:ee:0f")) == "aa:bb:0c:dd:ee:0f"
    assert str(IpAddress.parse("10.0.0.7/24")) == "10.0.0.7/24"
    assert InterfaceKind.WIFI.other is InterfaceKind.BLUETOOTH
