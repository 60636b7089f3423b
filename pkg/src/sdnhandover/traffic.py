"""Traffic sources and QoS metrology.

CBR UDP sources emit on an exact microsecond grid.  The conversational speech
source alternates exponentially distributed talkspurts and pauses and sends
CBR only while talking.  Jitter follows the RTP interarrival estimator
(``J += (|D| - J) / 16``), which is what iperf reports for UDP.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.signal import lfilter

from .core import US_PER_MS, US_PER_S

NO_TRAFFIC_KBPS = 5.0


@dataclass(frozen=True)
class CbrConfig:
    rate_kbps: float
    packet_size_bytes: int
    start_us: int
    stop_us: int

    def __post_init__(self):
        if self.rate_kbps <= 0 or self.packet_size_bytes <= 0:
            raise ValueError("rate and packet size must be positive")

    @property
    def interval_us(self) -> int:
        return int(round(self.packet_size_bytes * 8 * 1000 / self.rate_kbps))


def cbr_schedule(cfg: CbrConfig) -> np.ndarray:
    """Emission instants ``start + k * interval`` strictly before ``stop``."""
    if cfg.stop_us <= cfg.start_us:
        return np.empty(0, dtype=np.int64)
    return np.arange(cfg.start_us, cfg.stop_us, cfg.interval_us, dtype=np.int64)


class SpeechPhase(enum.Enum):
    TALKSPURT = "talkspurt"
    PAUSE = "pause"


@dataclass(frozen=True)
class SpeechModelConfig:
    mean_talkspurt_s: float = 1.004
    mean_pause_s: float = 1.587
    mean_mutual_silence_s: float = 0.508
    on_rate_kbps: float = 64.0
    packet_size_bytes: int = 200

    def __post_init__(self):
        if min(self.mean_talkspurt_s, self.mean_pause_s, self.mean_mutual_silence_s) <= 0:
            raise ValueError("speech phase means must be positive")

    def window_from_pauses(self) -> float:
        """No reply across two pauses."""
        return 2 * self.mean_pause_s

    def window_from_exchange(self) -> float:
        """Both sides heard once: twice (mutual silence + talkspurt)."""
        return 2 * (self.mean_mutual_silence_s + self.mean_talkspurt_s)


def speech_next_phase(cfg: SpeechModelConfig, rng: np.random.Generator,
                      current: SpeechPhase | None) -> tuple[SpeechPhase, int]:
    nxt = SpeechPhase.TALKSPURT if current is not SpeechPhase.TALKSPURT else SpeechPhase.PAUSE
    mean = cfg.mean_talkspurt_s if nxt is SpeechPhase.TALKSPURT else cfg.mean_pause_s
    return nxt, max(1, int(rng.exponential(mean) * US_PER_S))


@dataclass(frozen=True)
class JitterEstimator:
    j_us: float = 0.0
    prev_transit_us: int | None = None

    def update(self, send_us: int, recv_us: int) -> "JitterEstimator":
        transit = recv_us - send_us
        if self.prev_transit_us is None:
            return JitterEstimator(0.0, transit)
        d = abs(transit - self.prev_transit_us)
        return JitterEstimator(self.j_us + (d - self.j_us) / 16.0, transit)

    @property
    def j_ms(self) -> float:
        return self.j_us / US_PER_MS


def jitter_update(est: JitterEstimator, send_time: int, recv_time: int) -> JitterEstimator:
    return est.update(send_time, recv_time)


def jitter_series(send_us: np.ndarray, recv_us: np.ndarray) -> np.ndarray:
    """Estimator value after each packet (first entry is 0)."""
    send_us = np.asarray(send_us, dtype=np.float64)
    recv_us = np.asarray(recv_us, dtype=np.float64)
    if send_us.size == 0:
        return np.empty(0)
    d = np.abs(np.diff(recv_us - send_us))
    j = lfilter([1 / 16], [1, -15 / 16], d)
    return np.concatenate(([0.0], j))


@dataclass
class LossStats:
    sent: int = 0
    received: int = 0

    @property
    def loss_rate(self) -> float:
        if self.received > self.sent:
            raise ValueError("received more packets than were sent")
        return 0.0 if self.sent == 0 else 1.0 - self.received / self.sent


def window_throughput(delivered: Iterable[tuple[int, int]], duration_us: int,
                      window_us: int = US_PER_S) -> np.ndarray:
    """kbps per window from ``(time_us, bits)`` samples."""
    n = max(1, -(-duration_us // window_us))
    samples = np.asarray(list(delivered), dtype=np.int64).reshape(-1, 2)
    bits = np.bincount(np.minimum(samples[:, 0] // window_us, n - 1), weights=samples[:, 1], minlength=n)
    return bits / 1000.0 * (US_PER_S / window_us)


def is_no_traffic(kbps: float, threshold_kbps: float = NO_TRAFFIC_KBPS) -> bool:
    return kbps < threshold_kbps


@dataclass
class ThroughputWindow:
    """Running 1 s bit counter at a device's application boundary."""
    window_us: int = US_PER_S
    current_bits: int = 0

    def add(self, bits: int) -> None:
        self.current_bits += bits

    def roll(self) -> float:
        kbps = self.current_bits / 1000.0 * (US_PER_S / self.window_us)
        self.current_bits = 0
        return kbps
