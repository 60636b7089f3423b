"""Shared vocabulary: time, addresses, interfaces, packets and sync messages.

All simulation time is an ``int`` count of microseconds since scenario start.
"""
from __future__ import annotations

import enum
import ipaddress
import itertools
from dataclasses import dataclass, field, replace
from typing import Any

US_PER_MS = 1_000
US_PER_S = 1_000_000

#: Ethernet + IPv4 + UDP header floor used for throughput accounting.
UDP_HEADER_BYTES = 42


def ms(value: float) -> int:
    return int(round(value * US_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * US_PER_S))


def fmt_time(t_us: int) -> str:
    return f"{t_us / US_PER_S:.6f}s"


class InterfaceKind(enum.Enum):
    WIFI = "wifi"
    BLUETOOTH = "bluetooth"

    @property
    def other(self) -> "InterfaceKind":
        return InterfaceKind.BLUETOOTH if self is InterfaceKind.WIFI else InterfaceKind.WIFI


class InterfaceState(enum.Enum):
    OFF = "off"
    WAKING_UP = "waking_up"
    SLEEP = "sleep"
    ACTIVE = "active"


_LEGAL = {
    (InterfaceState.OFF, InterfaceState.WAKING_UP),
    (InterfaceState.WAKING_UP, InterfaceState.SLEEP),
    (InterfaceState.SLEEP, InterfaceState.ACTIVE),
    (InterfaceState.ACTIVE, InterfaceState.SLEEP),
    (InterfaceState.WAKING_UP, InterfaceState.OFF),
    (InterfaceState.SLEEP, InterfaceState.OFF),
    (InterfaceState.ACTIVE, InterfaceState.OFF),
}


class IllegalTransition(ValueError):
    pass


def is_legal_transition(src: InterfaceState, dst: InterfaceState) -> bool:
    return (src, dst) in _LEGAL


def check_transition(src: InterfaceState, dst: InterfaceState) -> InterfaceState:
    if not is_legal_transition(src, dst):
        raise IllegalTransition(f"{src.value} -> {dst.value}")
    return dst


@dataclass(frozen=True, order=True)
class MacAddress:
    value: int

    def __post_init__(self):
        if not 0 <= self.value < 1 << 48:
            raise ValueError(f"MAC out of range: {self.value:#x}")

    @classmethod
    def parse(cls, text: str) -> "MacAddress":
        parts = text.split(":")
        if len(parts) != 6:
            raise ValueError(f"bad MAC {text!r}")
        return cls(int("".join(parts), 16))

    def __str__(self) -> str:
        raw = f"{self.value:012x}"
        return ":".join(raw[i:i + 2] for i in range(0, 12, 2))


@dataclass(frozen=True, order=True)
class IpAddress:
    value: int
    prefix: int = 24

    def __post_init__(self):
        if not 0 <= self.value < 1 << 32:
            raise ValueError(f"IP out of range: {self.value:#x}")
        if not 0 <= self.prefix <= 32:
            raise ValueError(f"bad prefix length {self.prefix}")

    @classmethod
    def parse(cls, text: str) -> "IpAddress":
        iface = ipaddress.IPv4Interface(text if "/" in text else text + "/32")
        prefix = iface.network.prefixlen if "/" in text else 24
        return cls(int(iface.ip), prefix)

    @property
    def dotted(self) -> str:
        return str(ipaddress.IPv4Address(self.value))

    def __str__(self) -> str:
        return f"{self.dotted}/{self.prefix}"


class Protocol(enum.Enum):
    ARP = "arp"
    ICMP = "icmp"
    TCP = "tcp"
    UDP = "udp"


@dataclass(frozen=True)
class InterfaceDesc:
    """Addresses bound to one side of a link (physical or virtual)."""
    mac: MacAddress
    ip: IpAddress
    port: int = 5001


class PacketError(ValueError):
    pass


_payload_ids = itertools.count(1)


def next_payload_id() -> int:
    return next(_payload_ids)


@dataclass(frozen=True)
class Packet:
    src_mac: MacAddress
    dst_mac: MacAddress
    src_ip: IpAddress
    dst_ip: IpAddress
    protocol: Protocol
    src_port: int
    dst_port: int
    payload_id: int
    size_bytes: int
    sent_at: int
    flow: str = ""
    # control-plane body for ARP/SYN/D2D frames; not part of header identity
    control: Any = field(default=None, compare=False)

    def __post_init__(self):
        if self.size_bytes < UDP_HEADER_BYTES:
            raise PacketError(f"packet of {self.size_bytes} B is below the {UDP_HEADER_BYTES} B header floor")
        for port in (self.src_port, self.dst_port):
            if not 0 <= port < 1 << 16:
                raise PacketError(f"port out of range: {port}")

    @property
    def bits(self) -> int:
        return self.size_bytes * 8


def make_udp_packet(src_if: InterfaceDesc, dst_if: InterfaceDesc, size_bytes: int, sent_at: int,
                    *, flow: str = "", payload_id: int | None = None, control: Any = None) -> Packet:
    return Packet(
        src_mac=src_if.mac, dst_mac=dst_if.mac,
        src_ip=src_if.ip, dst_ip=dst_if.ip,
        protocol=Protocol.UDP,
        src_port=src_if.port, dst_port=dst_if.port,
        payload_id=next_payload_id() if payload_id is None else payload_id,
        size_bytes=size_bytes, sent_at=sent_at, flow=flow, control=control,
    )


def rewrite_headers(p: Packet, new_src_mac: MacAddress, new_dst_mac: MacAddress,
                    new_src_ip: IpAddress, new_dst_ip: IpAddress) -> Packet:
    return replace(p, src_mac=new_src_mac, dst_mac=new_dst_mac, src_ip=new_src_ip, dst_ip=new_dst_ip)


class SyncKind(enum.Enum):
    SYN = "SYN"


@dataclass(frozen=True)
class SyncMessage:
    sender: str
    handover_epoch: int
    # True once the sender already holds the partner's SYN for this epoch
    ack: bool = False
    kind: SyncKind = SyncKind.SYN
