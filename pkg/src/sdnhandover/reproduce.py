"""Built-in reproductions: the energy arithmetic, handover timing and relay QoS."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InterfaceState
from .energy import (DEFAULT_PARAMS, PUBLISHED_BASELINE_MJ, PUBLISHED_PROPOSED_MJ, EnergyParams, fig10_curve,
                     fig10_limit, handover_cycle, savings_fraction)
from .handover import Direction
from .scenario import (BridgeSpec, BssSpec, DeviceSpec, FlowSpec, HandoverSpec, PiconetSpec, Scenario,
                       ScenarioHeader, TriggerSpec)
from .world import run_scenario

RATES_KBPS = (100, 200, 300, 400, 500)
REPETITIONS = 30
FIG10_POINTS_S = (0, 60, 300, 600)
Z95 = 1.96


def mean_ci(values) -> tuple[float, float]:
    """Mean and half-width of the normal-approximation 95% interval."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()) if v.size else float("nan"), 0.0
    return float(v.mean()), Z95 * float(v.std(ddof=1)) / math.sqrt(v.size)


# -- energy --------------------------------------------------------------------

def energy_report(params: EnergyParams = DEFAULT_PARAMS) -> str:
    c = handover_cycle(params)
    exact = handover_cycle(params, round_wakeup_power=False)
    lines = [
        f"wifi_wakeup_mw = {params.wifi.wakeup_mw:.2f}",
        f"bt_wakeup_mw = {params.bluetooth.wakeup_mw:.2f}",
        f"segment_t0_t1_mj = {c.bt_wakeup_mj:.2f}",
        f"segment_t1_t2_mj = {c.bt_active_mj:.2f}",
        f"segment_t2_t3_mj = {c.wifi_wakeup_mj:.2f}",
        f"baseline_t0_t1_mj = {c.base_t0_t1_mj:.2f}",
        f"baseline_t1_t2_mj = {c.base_t1_t2_mj:.2f}",
        f"baseline_t2_t3_mj = {c.base_t2_t3_mj:.2f}",
        f"t0_term_mj = {c.idle_t0_mj:.2f}",
        f"total_proposed_published_mj = {PUBLISHED_PROPOSED_MJ:.2f}",
        f"total_baseline_published_mj = {PUBLISHED_BASELINE_MJ:.2f}",
        f"total_proposed_from_segments_mj = {c.proposed_segments_mj:.2f}",
        f"total_baseline_from_segments_mj = {c.baseline_segments_mj:.2f}",
        f"total_proposed_with_t0_mj = {c.proposed_segments_mj + c.idle_t0_mj:.2f}",
        f"total_baseline_with_t0_mj = {c.baseline_segments_mj + c.idle_t0_mj:.2f}",
        f"savings_t0_from_segments = {100 * savings_fraction(c.proposed_segments_mj, c.baseline_segments_mj):.2f}%",
        f"segments_unrounded_wakeup_mj = {exact.bt_wakeup_mj:.2f}, {exact.bt_active_mj:.2f}, {exact.wifi_wakeup_mj:.2f}",
        "note = published totals differ from the sum of published segments; both are listed",
    ]
    for t in FIG10_POINTS_S:
        lines.append(f"savings_t{t} = {100 * fig10_curve(params, t):.2f}%")
    lines.append(f"savings_limit = {100 * fig10_limit(params):.2f}%")
    return "\n".join(lines) + "\n"


# -- handover timing -------------------------------------------------------------

def handover_scenario(direction: Direction, rate_kbps: float, seed: int) -> Scenario:
    """Fig. 11 layout: master plus two clients sharing a piconet and a BSS, one scripted handover."""
    start_bt = direction is Direction.BLUETOOTH_TO_WIFI
    on = InterfaceState.SLEEP
    off = InterfaceState.OFF
    client = dict(wifi=off if start_bt else on, bluetooth=on if start_bt else off)
    devices = [DeviceSpec("Master", 0.0, 5.0, bluetooth=on),
               DeviceSpec("Client1", 0.0, 0.0, **client), DeviceSpec("Client2", 3.0, 0.0, **client)]
    return Scenario(
        ScenarioHeader(seed=seed, duration_s=6.0, name=f"handover-{direction.value}-{int(rate_kbps)}"),
        devices=devices,
        piconets=[PiconetSpec("P1", "Master", ("Master", "Client1", "Client2"))],
        bsses=[BssSpec("B1", "AP", ("Client1", "Client2"))],
        flows=[FlowSpec("cbr", "Client1", "Client2", rate_kbps=rate_kbps, size_bytes=1000, start_s=0.5,
                        stop_s=5.5)],
        handovers=[HandoverSpec("h1", "Client1", 1.0, direction.value)],
        trigger=TriggerSpec(enabled=False))


@dataclass
class HandoverRow:
    direction: str
    rate_kbps: int
    seed: int
    device: str
    t_config_ms: float
    t_rule_install_ms: float
    delay_ms: float
    lost_packets: int


def handover_runs(rates=RATES_KBPS, repetitions: int = REPETITIONS) -> list[HandoverRow]:
    rows = []
    for direction in (Direction.BLUETOOTH_TO_WIFI, Direction.WIFI_TO_BLUETOOTH):
        for rate in rates:
            for seed in range(repetitions):
                report = run_scenario(handover_scenario(direction, rate, seed))
                if report.violations:
                    raise RuntimeError(f"monitor fired in {direction.value}/{rate}/{seed}: {report.violations[0]}")
                for rec in report.handovers:
                    if rec.committed_at is None:
                        continue
                    rows.append(HandoverRow(direction.value, int(rate), seed, rec.device,
                                            rec.t_config / 1000, rec.t_rule_install / 1000, rec.delay_ms,
                                            rec.lost_packets))
    return rows


def handover_report(rows: list[HandoverRow]) -> str:
    out = ["# rate set 100..500 kbps chosen by analogy with the relay experiment",
           "direction            rate_kbps  n   t_config_ms      t_rule_install_ms  delay_ms         lost"]
    keys = sorted({(r.direction, r.rate_kbps) for r in rows}, key=lambda k: (k[0] != "bluetooth_to_wifi", k[1]))
    for d, rate in keys:
        sel = [r for r in rows if r.direction == d and r.rate_kbps == rate]
        cells = []
        for attr in ("t_config_ms", "t_rule_install_ms", "delay_ms"):
            m, h = mean_ci([getattr(r, attr) for r in sel])
            cells.append(f"{m:7.2f} ± {h:5.2f}")
        lost = np.mean([r.lost_packets for r in sel])
        out.append(f"{d:<20} {rate:>9}  {len(sel):<3} {cells[0]:<16} {cells[1]:<18} {cells[2]:<16} {lost:.2f}")
    for d in sorted({r.direction for r in rows}):
        sel = [r for r in rows if r.direction == d]
        ratio = np.mean([r.t_rule_install_ms for r in sel]) / np.mean([r.t_config_ms for r in sel])
        out.append(f"{d}.max_delay_ms = {max(r.delay_ms for r in sel):.3f}")
        out.append(f"{d}.rule_to_config_ratio = {ratio:.4f}")
    return "\n".join(out) + "\n"


def handover_csv(rows: list[HandoverRow]) -> str:
    head = "direction,rate_kbps,seed,device,t_config_ms,t_rule_install_ms,delay_ms,lost_packets\n"
    return head + "".join(f"{r.direction},{r.rate_kbps},{r.seed},{r.device},{r.t_config_ms:.3f},"
                          f"{r.t_rule_install_ms:.3f},{r.delay_ms:.3f},{r.lost_packets}\n" for r in rows)


# -- relay QoS ----------------------------------------------------------------

# calibration: small Bluetooth frame loss so the loss column is not identically zero
RELAY_BT_LOSS = 0.001


def relay_scenario(rate_kbps: float, seed: int, *, ideal: bool = False, duration_s: float = 10.0) -> Scenario:
    """Fig. 7 layout: Client2 bridges the piconet (Master, Client1) and the BSS (Client3)."""
    on = InterfaceState.SLEEP
    jitter_bt, jitter_wifi, loss = (0.0, 0.0, 0.0) if ideal else (10.0, 2.0, RELAY_BT_LOSS)
    devices = [DeviceSpec("Master", 0.0, 0.0, bluetooth=on),
               DeviceSpec("Client1", 2.0, 0.0, bluetooth=on),
               DeviceSpec("Client2", 4.0, 0.0, bluetooth=on, wifi=on),
               DeviceSpec("Client3", 30.0, 0.0, wifi=on)]
    return Scenario(
        ScenarioHeader(seed=seed, duration_s=duration_s, name=f"relay-{int(rate_kbps)}"),
        devices=devices,
        piconets=[PiconetSpec("P1", "Master", ("Master", "Client1", "Client2"), jitter_ms=jitter_bt, loss=loss)],
        bsses=[BssSpec("B1", "AP", ("Client2", "Client3"), jitter_ms=jitter_wifi)],
        bridges=[BridgeSpec("relay", "Client2", "Client1", "Client3")],
        flows=[FlowSpec("udp", "Client3", "Client1", rate_kbps=rate_kbps, size_bytes=1000, start_s=1.0,
                        stop_s=duration_s - 1.0)],
        trigger=TriggerSpec(enabled=False))


@dataclass
class RelayRow:
    rate_kbps: int
    seed: int
    sent: int
    received: int
    loss_rate: float
    avg_jitter_ms: float


def relay_runs(rates=RATES_KBPS, repetitions: int = REPETITIONS, *, ideal: bool = False) -> list[RelayRow]:
    rows = []
    for rate in rates:
        for seed in range(repetitions):
            report = run_scenario(relay_scenario(rate, seed, ideal=ideal))
            if report.violations:
                raise RuntimeError(f"monitor fired in relay/{rate}/{seed}: {report.violations[0]}")
            m = report.flows["udp"]
            j = m.jitter_ms()
            rows.append(RelayRow(int(rate), seed, m.loss.sent, m.loss.received, m.loss.loss_rate,
                                 float(j.mean()) if j.size else 0.0))
    return rows


def relay_report(rows: list[RelayRow]) -> str:
    out = ["rate_kbps  n   jitter_ms        loss_pct"]
    for rate in sorted({r.rate_kbps for r in rows}):
        sel = [r for r in rows if r.rate_kbps == rate]
        jm, jh = mean_ci([r.avg_jitter_ms for r in sel])
        lm, lh = mean_ci([100 * r.loss_rate for r in sel])
        out.append(f"{rate:>9}  {len(sel):<3} {jm:6.3f} ± {jh:5.3f}   {lm:6.3f} ± {lh:5.3f}")
    return "\n".join(out) + "\n"


def relay_csv(rows: list[RelayRow]) -> str:
    return "rate_kbps,seed,sent,received,loss_rate,avg_jitter_ms\n" + "".join(
        f"{r.rate_kbps},{r.seed},{r.sent},{r.received},{r.loss_rate:.6f},{r.avg_jitter_ms:.4f}\n" for r in rows)


def reproduce(which: str, out_dir: str | Path | None = None) -> str:
    if which == "energy":
        text, files = energy_report(), {}
    elif which == "handover":
        rows = handover_runs()
        text, files = handover_report(rows), {"handover_runs.csv": handover_csv(rows)}
    elif which == "relay-qos":
        rows = relay_runs()
        text, files = relay_report(rows), {"relay_runs.csv": relay_csv(rows)}
    else:
        raise ValueError(f"unknown reproduction {which!r}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{which}.txt").write_text(text)
        for name, body in files.items():
            (out / name).write_text(body)
    return text
