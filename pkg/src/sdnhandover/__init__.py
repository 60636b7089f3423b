"""Simulator and protocol library for SDN-driven Bluetooth/Wi-Fi vertical handover."""
from .core import (InterfaceKind, InterfaceState, IpAddress, MacAddress, Packet, SyncMessage, make_udp_packet,
                   rewrite_headers)
from .energy import DEFAULT_PARAMS, fig10_curve, interval_energy_mj, ledger_from_trace, power_mw, savings_fraction
from .engine import Engine, in_bt_range, transmit
from .handover import evaluate_trigger, execute_handover, handover_loss, synchronize
from .reproduce import reproduce
from .scenario import ScenarioError, parse_scenario, serialize_scenario
from .switch import FlowSwitch, FlowTable, install, lookup
from .traffic import cbr_schedule, is_no_traffic, jitter_update, speech_next_phase, window_throughput
from .world import World, d2d_exchange, run_scenario

__all__ = [
    "DEFAULT_PARAMS", "Engine", "FlowSwitch", "FlowTable", "InterfaceKind", "InterfaceState", "IpAddress",
    "MacAddress", "Packet", "ScenarioError", "SyncMessage", "World", "cbr_schedule", "d2d_exchange",
    "evaluate_trigger", "execute_handover", "fig10_curve", "handover_loss", "in_bt_range", "install",
    "interval_energy_mj", "is_no_traffic", "jitter_update", "ledger_from_trace", "lookup", "make_udp_packet",
    "parse_scenario", "power_mw", "reproduce", "rewrite_headers", "run_scenario", "savings_fraction",
    "serialize_scenario", "speech_next_phase", "synchronize", "transmit", "window_throughput",
]
