"""Scenario definitions and the flat-section text format.

Grammar (one construct per line, ``#`` starts a comment)::

    [scenario]              # exactly once
    seed = 7
    duration_s = 12

    [device C1]             # section kind, then a name
    x = 0
    bluetooth = sleep       # initial interface states
    active = bluetooth

    [piconet P]
    master = M
    members = M, C1, C2

Section kinds: ``scenario``, ``trigger``, ``timing`` (singletons) and
``device``, ``piconet``, ``bss``, ``flow``, ``bridge``, ``handover``
(named).  Keys are the field names of the matching dataclass below.  Lists are
comma separated; waypoints are ``t_s:x:y`` items.  Parsing stops at the first
problem and reports a :class:`ScenarioError` carrying a code and line number.
"""
from __future__ import annotations

import dataclasses
import enum
import re
from dataclasses import dataclass, field
from typing import Any

from .core import UDP_HEADER_BYTES, InterfaceKind, InterfaceState


class ErrorCode(enum.Enum):
    SYNTAX = "E_SYNTAX"
    UNKNOWN_SECTION = "E_UNKNOWN_SECTION"
    UNKNOWN_KEY = "E_UNKNOWN_KEY"
    BAD_VALUE = "E_BAD_VALUE"
    MISSING = "E_MISSING"
    DUPLICATE = "E_DUPLICATE"
    DANGLING_REF = "E_DANGLING_REF"
    NON_POSITIVE = "E_NON_POSITIVE"
    TWO_PICONETS = "E_TWO_PICONETS"
    INVALID = "E_INVALID"


class ScenarioError(ValueError):
    def __init__(self, code: ErrorCode, message: str, line: int | None = None):
        self.code = code
        self.line = line
        self.message = message
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{code.value}: {where}{message}")


@dataclass
class ScenarioHeader:
    seed: int
    duration_s: float = 10.0
    name: str = "scenario"
    jitter_model: str = "uniform"


@dataclass
class DeviceSpec:
    name: str
    x: float = 0.0
    y: float = 0.0
    waypoints: tuple[tuple[float, float, float], ...] = ()
    wifi: InterfaceState = InterfaceState.OFF
    bluetooth: InterfaceState = InterfaceState.OFF
    active: InterfaceKind | None = None
    controller_die_s: float | None = None
    controller_revive_s: float | None = None
    handover: bool = True


@dataclass
class PiconetSpec:
    name: str
    master: str = ""
    members: tuple[str, ...] = ()
    rate_kbps: float = 700.0
    base_delay_ms: float = 15.0
    jitter_ms: float = 10.0
    loss: float = 0.0
    range_m: float = 10.0


@dataclass
class BssSpec:
    name: str
    ap: str = "AP"
    members: tuple[str, ...] = ()
    rate_kbps: float = 20_000.0
    base_delay_ms: float = 2.0
    jitter_ms: float = 2.0
    loss: float = 0.0
    range_m: float = 100.0
    ap_x: float | None = None
    ap_y: float | None = None


class FlowKind(enum.Enum):
    CBR = "cbr"
    SPEECH = "speech"


@dataclass
class FlowSpec:
    name: str
    src: str = ""
    dst: str = ""
    kind: FlowKind = FlowKind.CBR
    rate_kbps: float = 100.0
    size_bytes: int = 1000
    start_s: float = 0.5
    stop_s: float | None = None
    mean_talkspurt_s: float = 1.004
    mean_pause_s: float = 1.587


@dataclass
class BridgeSpec:
    name: str
    relay: str = ""
    a: str = ""
    b: str = ""


@dataclass
class HandoverSpec:
    name: str
    device: str = ""
    at_s: float = 0.0
    direction: str = "bluetooth_to_wifi"


@dataclass
class TriggerSpec:
    enabled: bool = True
    no_traffic_kbps: float = 5.0
    threshold_wb_s: float = 3.0
    evaluation_period_s: float = 1.0
    sync_timeout_s: float = 5.0
    bt_range_guard: float = 0.8


@dataclass
class TimingSpec:
    bw_config_ms: tuple[float, float] = (70.0, 90.0)
    bw_rule_ms: tuple[float, float] = (70.0, 90.0)
    bw_rule_ratio: float | None = None
    wb_config_ms: tuple[float, float] = (80.0, 150.0)
    wb_rule_ms: tuple[float, float] = (13.0, 25.0)
    wb_rule_ratio: float | None = 1 / 6
    association_ms: float = 0.0
    management_extra_ms: float = 0.0


@dataclass
class Scenario:
    header: ScenarioHeader
    devices: list[DeviceSpec] = field(default_factory=list)
    piconets: list[PiconetSpec] = field(default_factory=list)
    bsses: list[BssSpec] = field(default_factory=list)
    flows: list[FlowSpec] = field(default_factory=list)
    bridges: list[BridgeSpec] = field(default_factory=list)
    handovers: list[HandoverSpec] = field(default_factory=list)
    trigger: TriggerSpec = field(default_factory=TriggerSpec)
    timing: TimingSpec = field(default_factory=TimingSpec)

    @property
    def seed(self) -> int:
        return self.header.seed

    def device(self, name: str) -> DeviceSpec:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    def with_seed(self, seed: int) -> "Scenario":
        return dataclasses.replace(self, header=dataclasses.replace(self.header, seed=seed))


_NAMED = {"device": ("devices", DeviceSpec), "piconet": ("piconets", PiconetSpec), "bss": ("bsses", BssSpec),
          "flow": ("flows", FlowSpec), "bridge": ("bridges", BridgeSpec), "handover": ("handovers", HandoverSpec)}
_SINGLE = {"scenario": ("header", ScenarioHeader), "trigger": ("trigger", TriggerSpec),
           "timing": ("timing", TimingSpec)}

_SECTION_RE = re.compile(r"^\[\s*([a-z_]+)(?:\s+([A-Za-z0-9_.-]+))?\s*\]$")
_KEY_RE = re.compile(r"^([a-z_][a-z0-9_]*)\s*=\s*(.*)$")


def _parse_value(ftype: str, raw: str) -> Any:
    raw = raw.strip()
    optional = ftype.endswith("| None")
    base = ftype.replace(" | None", "")
    if optional and raw.lower() in ("none", ""):
        return None
    if base == "int":
        return int(raw)
    if base == "float":
        return float(raw)
    if base == "str":
        if not raw:
            raise ValueError("empty string")
        return raw
    if base == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if base == "InterfaceState":
        return InterfaceState(raw.lower())
    if base == "InterfaceKind":
        return InterfaceKind(raw.lower())
    if base == "FlowKind":
        return FlowKind(raw.lower())
    if base == "tuple[str, ...]":
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if base == "tuple[float, float]":
        parts = [float(s) for s in raw.split(",")]
        if len(parts) != 2:
            raise ValueError("expected two numbers")
        return parts[0], parts[1]
    if base == "tuple[tuple[float, float, float], ...]":
        pts = []
        for item in raw.split(","):
            item = item.strip()
            if not item:
                continue
            t, x, y = (float(v) for v in item.split(":"))
            pts.append((t, x, y))
        return tuple(pts)
    raise ValueError(f"unsupported field type {ftype}")


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _format_value(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, float):
        return _fmt_float(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(":".join(_fmt_float(c) for c in p) for p in v)
        return ", ".join(_fmt_float(x) if isinstance(x, float) else str(x) for x in v)
    return str(v)


def _build(cls, name: str | None, values: dict[str, tuple[str, int]], header_line: int):
    kwargs: dict[str, Any] = {}
    types = {f.name: f for f in dataclasses.fields(cls)}
    for key, (raw, line) in values.items():
        if key not in types or key == "name" and name is not None:
            raise ScenarioError(ErrorCode.UNKNOWN_KEY, f"unknown key {key!r} in [{cls.__name__}]", line)
        try:
            kwargs[key] = _parse_value(str(types[key].type), raw)
        except ValueError as exc:
            raise ScenarioError(ErrorCode.BAD_VALUE, f"{key}: {exc}", line) from None
    if name is not None:
        kwargs["name"] = name
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ScenarioError(ErrorCode.MISSING, f"[{cls.__name__}] {exc}", header_line) from None


def parse_scenario(text: str, *, validate: bool = True) -> Scenario:
    sections: list[tuple[str, str | None, int, dict[str, tuple[str, int]]]] = []
    current: dict[str, tuple[str, int]] | None = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        m = _SECTION_RE.match(stripped)
        if m:
            kind, name = m.group(1), m.group(2)
            if kind not in _NAMED and kind not in _SINGLE:
                raise ScenarioError(ErrorCode.UNKNOWN_SECTION, f"unknown section [{kind}]", lineno)
            if kind in _NAMED and name is None:
                raise ScenarioError(ErrorCode.SYNTAX, f"[{kind}] needs a name", lineno)
            if kind in _SINGLE and name is not None:
                raise ScenarioError(ErrorCode.SYNTAX, f"[{kind}] takes no name", lineno)
            current = {}
            sections.append((kind, name, lineno, current))
            continue
        m = _KEY_RE.match(stripped)
        if not m:
            raise ScenarioError(ErrorCode.SYNTAX, f"cannot parse {stripped!r}", lineno)
        if current is None:
            raise ScenarioError(ErrorCode.SYNTAX, "key outside of any section", lineno)
        key, value = m.group(1), m.group(2)
        if key in current:
            raise ScenarioError(ErrorCode.DUPLICATE, f"key {key!r} repeated", lineno)
        current[key] = (value, lineno)

    singles: dict[str, Any] = {}
    named: dict[str, list] = {attr: [] for attr, _ in _NAMED.values()}
    lines: dict[tuple[str, str], int] = {}
    for kind, name, lineno, values in sections:
        if kind in _SINGLE:
            attr, cls = _SINGLE[kind]
            if attr in singles:
                raise ScenarioError(ErrorCode.DUPLICATE, f"[{kind}] appears twice", lineno)
            singles[attr] = _build(cls, None, values, lineno)
        else:
            attr, cls = _NAMED[kind]
            if (kind, name) in lines:
                raise ScenarioError(ErrorCode.DUPLICATE, f"[{kind} {name}] appears twice", lineno)
            lines[kind, name] = lineno
            named[attr].append(_build(cls, name, values, lineno))
    if "header" not in singles:
        raise ScenarioError(ErrorCode.MISSING, "missing [scenario] section with a seed")
    scenario = Scenario(singles["header"], **named,
                        **{k: v for k, v in singles.items() if k != "header"})
    if validate:
        validate_scenario(scenario, lines)
    return scenario


def serialize_scenario(s: Scenario) -> str:
    out: list[str] = []

    def emit(title: str, obj, skip_name: bool):
        out.append(f"[{title}]")
        for f in dataclasses.fields(obj):
            if skip_name and f.name == "name":
                continue
            out.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        out.append("")

    emit("scenario", s.header, False)
    emit("trigger", s.trigger, False)
    emit("timing", s.timing, False)
    for kind, (attr, _cls) in _NAMED.items():
        for item in getattr(s, attr):
            emit(f"{kind} {item.name}", item, True)
    return "\n".join(out)


def _line(lines, kind, name):
    return (lines or {}).get((kind, name))


def validate_scenario(s: Scenario, lines: dict[tuple[str, str], int] | None = None) -> None:
    h = s.header
    if h.duration_s <= 0:
        raise ScenarioError(ErrorCode.NON_POSITIVE, "duration_s must be positive")
    if h.jitter_model not in ("uniform", "exponential"):
        raise ScenarioError(ErrorCode.BAD_VALUE, f"jitter_model {h.jitter_model!r} is not uniform or exponential")
    names = [d.name for d in s.devices]
    known = set(names)
    if len(known) != len(names):
        raise ScenarioError(ErrorCode.DUPLICATE, "device names must be unique")
    if len(names) > 250:
        raise ScenarioError(ErrorCode.INVALID, "at most 250 devices")

    def need(dev: str, kind: str, name: str, what: str):
        if dev not in known:
            raise ScenarioError(ErrorCode.DANGLING_REF, f"[{kind} {name}] {what} references unknown device {dev!r}",
                                _line(lines, kind, name))

    for d in s.devices:
        ln = _line(lines, "device", d.name)
        states = {InterfaceKind.WIFI: d.wifi, InterfaceKind.BLUETOOTH: d.bluetooth}
        if InterfaceState.WAKING_UP in states.values():
            raise ScenarioError(ErrorCode.BAD_VALUE, f"device {d.name} cannot start waking up", ln)
        if d.active is not None and states[d.active] is InterfaceState.OFF:
            raise ScenarioError(ErrorCode.INVALID, f"device {d.name} active interface {d.active.value} is off", ln)
        ts = [w[0] for w in d.waypoints]
        if ts != sorted(ts):
            raise ScenarioError(ErrorCode.BAD_VALUE, f"device {d.name} waypoints out of time order", ln)
        if (d.controller_revive_s is not None and d.controller_die_s is not None
                and d.controller_revive_s <= d.controller_die_s):
            raise ScenarioError(ErrorCode.INVALID, f"device {d.name} revives before it dies", ln)

    in_piconet: dict[str, str] = {}
    for p in s.piconets:
        ln = _line(lines, "piconet", p.name)
        need(p.master, "piconet", p.name, "master")
        for m in p.members:
            need(m, "piconet", p.name, "member")
        for m in set(p.members) | {p.master}:
            if m in in_piconet and in_piconet[m] != p.name:
                raise ScenarioError(ErrorCode.TWO_PICONETS,
                                    f"device {m} is in piconets {in_piconet[m]} and {p.name}", ln)
            in_piconet[m] = p.name
        _check_link(p, "piconet", ln)
    in_bss: dict[str, str] = {}
    for b in s.bsses:
        ln = _line(lines, "bss", b.name)
        for m in b.members:
            need(m, "bss", b.name, "member")
            if m in in_bss:
                raise ScenarioError(ErrorCode.INVALID, f"device {m} is in two BSSs", ln)
            in_bss[m] = b.name
        _check_link(b, "bss", ln)
        if (b.ap_x is None) != (b.ap_y is None):
            raise ScenarioError(ErrorCode.BAD_VALUE, f"bss {b.name} needs both ap_x and ap_y", ln)

    for f in s.flows:
        ln = _line(lines, "flow", f.name)
        need(f.src, "flow", f.name, "src")
        need(f.dst, "flow", f.name, "dst")
        if f.src == f.dst:
            raise ScenarioError(ErrorCode.INVALID, f"flow {f.name} has src == dst", ln)
        if f.rate_kbps <= 0:
            raise ScenarioError(ErrorCode.NON_POSITIVE, f"flow {f.name} rate_kbps must be positive", ln)
        if f.size_bytes < UDP_HEADER_BYTES:
            raise ScenarioError(ErrorCode.NON_POSITIVE,
                                f"flow {f.name} size_bytes below the {UDP_HEADER_BYTES} B header floor", ln)
        if f.kind is FlowKind.SPEECH and min(f.mean_talkspurt_s, f.mean_pause_s) <= 0:
            raise ScenarioError(ErrorCode.NON_POSITIVE, f"flow {f.name} speech means must be positive", ln)
        if f.stop_s is not None and f.stop_s <= f.start_s:
            raise ScenarioError(ErrorCode.INVALID, f"flow {f.name} stops before it starts", ln)

    for br in s.bridges:
        ln = _line(lines, "bridge", br.name)
        for role in ("relay", "a", "b"):
            need(getattr(br, role), "bridge", br.name, role)
        for f in s.flows:
            if br.relay in (f.src, f.dst) and ({f.src, f.dst} & {br.a, br.b}):
                raise ScenarioError(ErrorCode.INVALID,
                                    f"relay {br.relay} cannot also carry flow {f.name} with a bridged endpoint", ln)

    for ho in s.handovers:
        ln = _line(lines, "handover", ho.name)
        need(ho.device, "handover", ho.name, "device")
        if ho.direction not in ("bluetooth_to_wifi", "wifi_to_bluetooth"):
            raise ScenarioError(ErrorCode.BAD_VALUE, f"handover {ho.name} direction {ho.direction!r}", ln)
        if ho.at_s < 0:
            raise ScenarioError(ErrorCode.BAD_VALUE, f"handover {ho.name} at_s is negative", ln)

    t = s.trigger
    if min(t.no_traffic_kbps, t.threshold_wb_s, t.evaluation_period_s, t.sync_timeout_s) <= 0:
        raise ScenarioError(ErrorCode.NON_POSITIVE, "trigger parameters must be positive", _line(lines, "trigger", None))
    for key in ("bw_config_ms", "bw_rule_ms", "wb_config_ms", "wb_rule_ms"):
        lo, hi = getattr(s.timing, key)
        if lo < 0 or hi < lo:
            raise ScenarioError(ErrorCode.BAD_VALUE, f"timing {key} must be an ordered non-negative range")


def _check_link(spec, kind: str, ln: int | None) -> None:
    if spec.rate_kbps <= 0:
        raise ScenarioError(ErrorCode.NON_POSITIVE, f"{kind} {spec.name} rate_kbps must be positive", ln)
    if spec.range_m <= 0:
        raise ScenarioError(ErrorCode.NON_POSITIVE, f"{kind} {spec.name} range_m must be positive", ln)
    if not 0.0 <= spec.loss <= 1.0:
        raise ScenarioError(ErrorCode.BAD_VALUE, f"{kind} {spec.name} loss outside [0, 1]", ln)
    if spec.base_delay_ms < 0 or spec.jitter_ms < 0:
        raise ScenarioError(ErrorCode.BAD_VALUE, f"{kind} {spec.name} delays must be non-negative", ln)
