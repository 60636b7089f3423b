import dataclasses
from pathlib import Path

import pytest

from sdnhandover.core import InterfaceKind, InterfaceState
from sdnhandover.handover import Direction
from sdnhandover.reproduce import handover_scenario, relay_scenario
from sdnhandover.scenario import FlowSpec, parse_scenario
from sdnhandover.switch import RuleOrigin
from sdnhandover.world import World, run_scenario

from helpers import capture_app_boundary, only_virtual

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
BT, WIFI = InterfaceKind.BLUETOOTH, InterfaceKind.WIFI


def load(name):
    return parse_scenario((SCENARIOS / name).read_text())


def test_fig11_range_exit_moves_session_to_wifi():
    w = World(load("fig11_handover.scn"))
    seen = capture_app_boundary(w)
    r = w.run()
    assert r.violations == [] and r.exit_code == 0
    committed = [h for h in r.handovers if h.committed_at is not None]
    # one record per endpoint of the single session
    assert sorted(h.device for h in committed) == ["C1", "C2"]
    assert all(h.direction is Direction.BLUETOOTH_TO_WIFI and h.delay_ms < 150 for h in committed)
    assert {w.devices[n].active_kind for n in ("C1", "C2")} == {WIFI}
    assert only_virtual(w, seen) and seen


def test_fig7_ideal_relay_delivers_exact_payload_set_in_order():
    w = World(relay_scenario(300, 1, ideal=True))
    seen = capture_app_boundary(w)
    r = w.run()
    m = r.flows["udp"]
    assert r.violations == []
    assert m.loss.loss_rate == 0 and m.recv_ids == m.sent_ids and len(m.sent_ids) > 0
    assert only_virtual(w, seen)
    assert w.devices["Client2"].switch.counters["forwarded"] >= len(m.sent_ids)


def test_fig7_checked_in_scenario_is_clean():
    r = run_scenario(load("fig7_relay.scn"))
    m = r.flows["udp"]
    assert r.violations == []
    assert len(m.sent_ids) == len(m.recv_ids) + len(m.lost_ids) + m.in_flight


def test_same_seed_same_bytes():
    s = load("fig11_handover.scn")
    a, b = run_scenario(s), run_scenario(s)
    assert a.files == b.files and a.trace == b.trace
    c = run_scenario(s.with_seed(12))
    assert c.trace != a.trace


def test_controller_death_costs_nothing_on_established_flow():
    s = handover_scenario(Direction.BLUETOOTH_TO_WIFI, 300, 2)
    devices = [dataclasses.replace(d, controller_die_s=2.0) if d.name.startswith("Client") else d
               for d in s.devices]
    s = dataclasses.replace(s, devices=devices, handovers=[])
    w = World(s)
    w.engine.run_until(2_000_000)
    packet_ins = w.devices["Client1"].switch.counters["packet_in"]
    r = w.run()
    m = r.flows["cbr"]
    assert not w.devices["Client1"].liveness.alive
    assert r.violations == [] and m.recv_ids == m.sent_ids
    assert w.devices["Client1"].switch.counters["packet_in"] == packet_ins


def test_new_flow_after_death_uses_fallback_rules():
    s = handover_scenario(Direction.BLUETOOTH_TO_WIFI, 300, 2)
    devices = [dataclasses.replace(d, controller_die_s=2.0) if d.name == "Client2" else d for d in s.devices]
    # a peer with no session yet, so its first packet misses after the controller is gone
    back = FlowSpec("back", "Client2", "Master", rate_kbps=100, start_s=3.0, stop_s=5.0)
    s = dataclasses.replace(s, devices=devices, handovers=[], flows=s.flows + [back])
    w = World(s)
    r = w.run()
    assert r.violations == []
    assert r.flows["back"].recv_ids == r.flows["back"].sent_ids
    origins = {rule.origin for rule in w.devices["Client2"].switch.table}
    assert RuleOrigin.EXTENDED_CONTROLLER in origins
    assert w.devices["Client2"].ext.counters["fallback_installs"] >= 1


def test_handover_while_controller_dead_installs_through_fallback():
    s = handover_scenario(Direction.BLUETOOTH_TO_WIFI, 200, 5)
    devices = [dataclasses.replace(d, controller_die_s=0.8) if d.name.startswith("Client") else d
               for d in s.devices]
    s = dataclasses.replace(s, devices=devices)
    w = World(s)
    r = w.run()
    assert r.violations == []
    assert all(h.committed_at is not None for h in r.handovers)
    table = w.devices["Client1"].switch.table
    assert {rule.origin for rule in table} == {RuleOrigin.EXTENDED_CONTROLLER}


def test_speech_silences_trigger_bluetooth():
    s = load("speech_trigger.scn")
    for seed in (1, 2, 3):
        r = run_scenario(s.with_seed(seed))
        assert r.violations == []
        w2b = [h for h in r.handovers if h.direction is Direction.WIFI_TO_BLUETOOTH and h.committed_at]
        assert w2b, f"seed {seed}: no silence-triggered handover"
        assert all(h.delay_ms < 150 for h in r.handovers if h.committed_at)


def test_energy_ledger_tiles_every_interface():
    w = World(load("fig11_handover.scn"))
    r = w.run()
    for dev in w.devices:
        for kind in InterfaceKind:
            ivs = sorted((iv for iv in r.energy.intervals if iv.device == dev and iv.kind is kind),
                         key=lambda iv: iv.start_us)
            assert ivs[0].start_us == 0 and ivs[-1].end_us == w.duration_us
            assert all(a.end_us == b.start_us for a, b in zip(ivs, ivs[1:]))
    assert r.energy.time_in_state_s("C1", BT, InterfaceState.WAKING_UP) == 0


def test_exit_code_reflects_monitors():
    w = World(load("fig7_relay.scn"))
    w.violation("synthetic")
    r = w.run()
    assert r.exit_code == 1 and "synthetic" in r.summary


def test_report_files(tmp_path):
    r = run_scenario(load("fig7_relay.scn"))
    written = r.write(tmp_path / "out", tmp_path / "trace.tsv")
    names = {p.name for p in written}
    assert {"summary.txt", "traffic.csv", "handovers.csv", "energy.csv", "flowtables.txt", "localdb.txt",
            "trace.tsv"} <= names
    assert (tmp_path / "out" / "traffic.csv").read_text().splitlines()[0] == \
        "flow,sent,received,loss_rate,avg_jitter_ms,max_jitter_ms,mean_kbps"
    db = (tmp_path / "out" / "localdb.txt").read_text()
    assert "self.virtual.mac" in db
