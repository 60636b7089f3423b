"""Interface energy accounting.

Power constants per interface state, integration of state intervals into
millijoules, and the worked Wi-Fi/Bluetooth handover cycle with its savings
figures.  Powers are in mW, energies in mJ, so ``mW * s = mJ``.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .core import InterfaceKind, InterfaceState, US_PER_S, is_legal_transition


@dataclass(frozen=True)
class InterfaceEnergy:
    wakeup_energy_mj: float
    sleep_mw: float
    active_mw: float
    off_mw: float
    wakeup_duration_s: float

    def __post_init__(self):
        if min(self.wakeup_energy_mj, self.sleep_mw, self.active_mw, self.off_mw, self.wakeup_duration_s) <= 0:
            raise ValueError("energy constants must be positive")

    @property
    def wakeup_mw(self) -> float:
        return self.wakeup_energy_mj / self.wakeup_duration_s


@dataclass(frozen=True)
class EnergyParams:
    wifi: InterfaceEnergy
    bluetooth: InterfaceEnergy

    def of(self, kind: InterfaceKind) -> InterfaceEnergy:
        return self.wifi if kind is InterfaceKind.WIFI else self.bluetooth


#: Measured averages for the USB Wi-Fi and Bluetooth 4.0 adapters.
DEFAULT_PARAMS = EnergyParams(
    wifi=InterfaceEnergy(536.77, 495.05, 660.09, 213.75, 1.4),
    bluetooth=InterfaceEnergy(417.98, 79.24, 104.21, 38.20, 3.03),
)

# Cycle totals as published; they do not equal the sum of the published segments.
PUBLISHED_PROPOSED_MJ = 3471.66
PUBLISHED_BASELINE_MJ = 4593.54


def power_mw(params: EnergyParams, kind: InterfaceKind, state: InterfaceState) -> float:
    c = params.of(kind)
    if state is InterfaceState.WAKING_UP:
        return c.wakeup_mw
    if state is InterfaceState.SLEEP:
        return c.sleep_mw
    if state is InterfaceState.ACTIVE:
        return c.active_mw
    return c.off_mw


class EnergyError(ValueError):
    pass


@dataclass(frozen=True)
class StateInterval:
    kind: InterfaceKind
    state: InterfaceState
    start_us: int
    end_us: int
    device: str = "dev"

    def __post_init__(self):
        if self.end_us < self.start_us:
            raise EnergyError(f"interval ends before it starts: {self}")

    @property
    def duration_s(self) -> float:
        return (self.end_us - self.start_us) / US_PER_S


def _check_overlaps(intervals: Iterable[StateInterval]) -> None:
    by_iface: dict[tuple[str, InterfaceKind], list[StateInterval]] = defaultdict(list)
    for iv in intervals:
        by_iface[iv.device, iv.kind].append(iv)
    for key, ivs in by_iface.items():
        ivs = sorted((iv for iv in ivs if iv.end_us > iv.start_us), key=lambda iv: iv.start_us)
        for a, b in zip(ivs, ivs[1:]):
            if b.start_us < a.end_us:
                raise EnergyError(f"overlapping intervals on {key[0]}/{key[1].value}: {a} and {b}")


def interval_energy_mj(params: EnergyParams, intervals: Iterable[StateInterval]) -> float:
    intervals = list(intervals)
    _check_overlaps(intervals)
    return sum(power_mw(params, iv.kind, iv.state) * iv.duration_s for iv in intervals)


@dataclass
class EnergyLedger:
    """State intervals per (device, interface), tiling ``[0, duration_us)``."""
    params: EnergyParams = DEFAULT_PARAMS
    intervals: list[StateInterval] = field(default_factory=list)
    duration_us: int = 0

    def __post_init__(self):
        _check_overlaps(self.intervals)

    @property
    def total_mj(self) -> float:
        return interval_energy_mj(self.params, self.intervals)

    def device_mj(self, device: str) -> float:
        return interval_energy_mj(self.params, (iv for iv in self.intervals if iv.device == device))

    def by_interface(self) -> dict[tuple[str, InterfaceKind], float]:
        out: dict[tuple[str, InterfaceKind], float] = defaultdict(float)
        for iv in self.intervals:
            out[iv.device, iv.kind] += power_mw(self.params, iv.kind, iv.state) * iv.duration_s
        return dict(out)

    def time_in_state_s(self, device: str, kind: InterfaceKind, state: InterfaceState) -> float:
        return sum(iv.duration_s for iv in self.intervals
                   if iv.device == device and iv.kind is kind and iv.state is state)

    def concat(self, other: "EnergyLedger") -> "EnergyLedger":
        shift = self.duration_us
        moved = [StateInterval(iv.kind, iv.state, iv.start_us + shift, iv.end_us + shift, iv.device)
                 for iv in other.intervals]
        return EnergyLedger(self.params, self.intervals + moved, self.duration_us + other.duration_us)

    __add__ = concat

    def to_csv(self) -> str:
        lines = ["device,interface,state,from_us,to_us,power_mw,energy_mj"]
        for iv in sorted(self.intervals, key=lambda iv: (iv.device, iv.kind.value, iv.start_us)):
            p = power_mw(self.params, iv.kind, iv.state)
            lines.append(f"{iv.device},{iv.kind.value},{iv.state.value},{iv.start_us},{iv.end_us},"
                         f"{p:.2f},{p * iv.duration_s:.4f}")
        lines.append("")
        lines.append("device,interface,total_mj")
        for (dev, kind), mj in sorted(self.by_interface().items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            lines.append(f"{dev},{kind.value},{mj:.4f}")
        lines.append(f"ALL,ALL,{self.total_mj:.4f}")
        return "\n".join(lines) + "\n"


class TraceError(ValueError):
    pass


IF_STATE = "if-state"


def format_state_record(kind: InterfaceKind, src: InterfaceState, dst: InterfaceState) -> str:
    return f"{kind.value}:{src.value}->{dst.value}"


def ledger_from_trace(lines: Iterable[str], duration_us: int, *,
                      devices: Iterable[str] = (),
                      initial: Mapping[tuple[str, InterfaceKind], InterfaceState] | None = None,
                      params: EnergyParams = DEFAULT_PARAMS) -> EnergyLedger:
    """Rebuild tiling intervals from ``if-state`` trace records.

    Each record reads ``<t>\\tif-state\\t<device>\\t<kind>:<from>-><to>``.
    Interfaces start in ``initial`` (default Off); a record whose ``from`` does
    not match the reconstructed state means a transition is missing.
    """
    state: dict[tuple[str, InterfaceKind], InterfaceState] = {}
    since: dict[tuple[str, InterfaceKind], int] = {}
    initial = dict(initial or {})
    for dev in devices:
        for kind in InterfaceKind:
            initial.setdefault((dev, kind), InterfaceState.OFF)
    for key, st in initial.items():
        state[key] = st
        since[key] = 0

    out: list[StateInterval] = []
    for line in lines:
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 4 or parts[1] != IF_STATE:
            continue
        t = int(parts[0])
        dev = parts[2]
        try:
            kind_s, change = parts[3].split(":", 1)
            src_s, dst_s = change.split("->")
            kind = InterfaceKind(kind_s)
            src, dst = InterfaceState(src_s), InterfaceState(dst_s)
        except ValueError as exc:
            raise TraceError(f"malformed state record {line!r}") from exc
        key = (dev, kind)
        cur = state.setdefault(key, InterfaceState.OFF)
        since.setdefault(key, 0)
        if cur is not src or not is_legal_transition(src, dst):
            raise TraceError(f"missing transition on {dev}/{kind.value} at {t} us: "
                             f"have {cur.value}, record says {src.value}->{dst.value}")
        if t < since[key] or t > duration_us:
            raise TraceError(f"record out of order at {t} us")
        if t > since[key]:
            out.append(StateInterval(kind, cur, since[key], t, dev))
        state[key] = dst
        since[key] = t
    for key, st in state.items():
        if duration_us > since[key]:
            out.append(StateInterval(key[1], st, since[key], duration_us, key[0]))
    return EnergyLedger(params, out, duration_us)


def savings_fraction(proposed_mj: float, baseline_mj: float) -> float:
    if baseline_mj <= 0:
        raise EnergyError("baseline energy must be positive")
    return 1.0 - proposed_mj / baseline_mj


def fig10_curve(params: EnergyParams, t_blue_sleep_s: float) -> float:
    """Savings once Bluetooth sleeps for ``t_blue_sleep_s`` inside the cycle.

    Anchored at the published cycle totals; every extra second costs
    Bluetooth-sleep + Wi-Fi-off on the proposed path and Wi-Fi-sleep +
    Bluetooth-off on the Wi-Fi-only path.
    """
    if t_blue_sleep_s < 0:
        raise EnergyError("t_blue_sleep must be non-negative")
    proposed = PUBLISHED_PROPOSED_MJ + (params.bluetooth.sleep_mw + params.wifi.off_mw) * t_blue_sleep_s
    baseline = PUBLISHED_BASELINE_MJ + (params.wifi.sleep_mw + params.bluetooth.off_mw) * t_blue_sleep_s
    return savings_fraction(proposed, baseline)


def fig10_limit(params: EnergyParams) -> float:
    return 1.0 - ((params.bluetooth.sleep_mw + params.wifi.off_mw)
                  / (params.wifi.sleep_mw + params.bluetooth.off_mw))


@dataclass(frozen=True)
class CycleBreakdown:
    """The Wi-Fi sleep -> Bluetooth -> Wi-Fi cycle, segment by segment."""
    p_blue_wakeup_mw: float
    p_wifi_wakeup_mw: float
    idle_t0_mj: float
    bt_wakeup_mj: float
    bt_sleep_mj: float
    bt_active_mj: float
    wifi_wakeup_mj: float
    base_t0_t1_mj: float
    base_sleep_mj: float
    base_t1_t2_mj: float
    base_t2_t3_mj: float

    @property
    def proposed_segments_mj(self) -> float:
        return self.bt_wakeup_mj + self.bt_sleep_mj + self.bt_active_mj + self.wifi_wakeup_mj

    @property
    def baseline_segments_mj(self) -> float:
        return self.base_t0_t1_mj + self.base_sleep_mj + self.base_t1_t2_mj + self.base_t2_t3_mj


def handover_cycle(params: EnergyParams = DEFAULT_PARAMS, *, t_blue_sleep_s: float = 0.0,
                   t_blue_active_s: float = 3.0, t0_s: float = 1.0,
                   round_wakeup_power: bool = True) -> CycleBreakdown:
    """Segment energies of one energy-saving handover round trip.

    ``round_wakeup_power`` carries the wake-up powers at 0.01 mW precision into
    the segment products, which is how the published segment values are built.
    """
    wifi, bt = params.wifi, params.bluetooth
    p_bw, p_ww = bt.wakeup_mw, wifi.wakeup_mw
    if round_wakeup_power:
        p_bw, p_ww = round(p_bw, 2), round(p_ww, 2)
    t1 = bt.wakeup_duration_s
    t3 = wifi.wakeup_duration_s
    return CycleBreakdown(
        p_blue_wakeup_mw=p_bw,
        p_wifi_wakeup_mw=p_ww,
        idle_t0_mj=(wifi.sleep_mw + bt.off_mw) * t0_s,
        bt_wakeup_mj=(p_bw + wifi.sleep_mw) * t1,
        bt_sleep_mj=(bt.sleep_mw + wifi.off_mw) * t_blue_sleep_s,
        bt_active_mj=(bt.active_mw + wifi.off_mw) * t_blue_active_s,
        wifi_wakeup_mj=(p_ww + bt.off_mw) * t3,
        base_t0_t1_mj=(wifi.sleep_mw + bt.off_mw) * t1,
        base_sleep_mj=(wifi.sleep_mw + bt.off_mw) * t_blue_sleep_s,
        base_t1_t2_mj=(wifi.active_mw + bt.off_mw) * t_blue_active_s,
        base_t2_t3_mj=(wifi.active_mw + bt.off_mw) * t3,
    )


def cycle_intervals(params: EnergyParams = DEFAULT_PARAMS, *, t0_s: float = 1.0,
                    t_blue_sleep_s: float = 0.0, t_blue_active_s: float = 3.0,
                    device: str = "dev") -> list[StateInterval]:
    """Interface-state intervals of the proposed cycle, both interfaces tiled."""
    def us(s: float) -> int:
        return int(round(s * US_PER_S))

    W, B = InterfaceKind.WIFI, InterfaceKind.BLUETOOTH
    S = InterfaceState
    t0 = us(t0_s)
    t1 = t0 + us(params.bluetooth.wakeup_duration_s)
    ts = t1 + us(t_blue_sleep_s)
    t2 = ts + us(t_blue_active_s)
    t3 = t2 + us(params.wifi.wakeup_duration_s)
    ivs = [
        StateInterval(W, S.SLEEP, 0, t1, device),
        StateInterval(W, S.OFF, t1, t2, device),
        StateInterval(W, S.WAKING_UP, t2, t3, device),
        StateInterval(B, S.OFF, 0, t0, device),
        StateInterval(B, S.WAKING_UP, t0, t1, device),
        StateInterval(B, S.SLEEP, t1, ts, device),
        StateInterval(B, S.ACTIVE, ts, t2, device),
        StateInterval(B, S.OFF, t2, t3, device),
    ]
    return [iv for iv in ivs if iv.end_us > iv.start_us]
