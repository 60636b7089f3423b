import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdnhandover.traffic import (CbrConfig, JitterEstimator, LossStats, SpeechModelConfig, SpeechPhase,
                                 ThroughputWindow, cbr_schedule, is_no_traffic, jitter_series, jitter_update,
                                 speech_next_phase, window_throughput)

from helpers import jitter_oracle


def test_cbr_100kbps_one_second():
    t = cbr_schedule(CbrConfig(100, 1000, 0, 1_000_000))
    assert len(t) == 1_000_000 // 80_000 + 1 == 13
    assert set(np.diff(t)) == {80_000}


def test_cbr_500kbps_spacing():
    assert CbrConfig(500, 1000, 0, 1).interval_us == 8000 * 1000 // 500 == 16_000


def test_cbr_empty_span():
    assert cbr_schedule(CbrConfig(100, 1000, 5, 5)).size == 0


@given(st.floats(1, 10_000), st.integers(42, 1500), st.integers(0, 10**6), st.integers(0, 5 * 10**6))
def test_cbr_grid(rate, size, start, span):
    cfg = CbrConfig(rate, size, start, start + span)
    t = cbr_schedule(cfg)
    iv = round(size * 8 * 1000 / rate)
    assert cfg.interval_us == iv
    assert len(t) == (0 if span == 0 else -(-span // iv))
    assert all(start <= x < start + span for x in t)


def test_speech_means_and_alternation():
    cfg = SpeechModelConfig()
    rng = np.random.default_rng(1)
    phase, talk, pause = None, [], []
    for _ in range(200_000):
        nxt, dur = speech_next_phase(cfg, rng, phase)
        assert nxt is not phase
        (talk if nxt is SpeechPhase.TALKSPURT else pause).append(dur)
        phase = nxt
    assert np.mean(talk) / 1e6 == pytest.approx(1.004, rel=0.01)
    assert np.mean(pause) / 1e6 == pytest.approx(1.587, rel=0.01)


def test_speech_seeded_sequence_repeats():
    def seq(seed):
        rng, phase, out = np.random.default_rng(seed), None, []
        for _ in range(50):
            phase, d = speech_next_phase(SpeechModelConfig(), rng, phase)
            out.append((phase, d))
        return out
    assert seq(4) == seq(4)


def test_speech_defaults_and_window_rationale():
    cfg = SpeechModelConfig()
    assert (cfg.mean_talkspurt_s, cfg.mean_pause_s, cfg.mean_mutual_silence_s) == (1.004, 1.587, 0.508)
    assert cfg.window_from_pauses() == pytest.approx(3.174)
    assert cfg.window_from_exchange() == pytest.approx(3.024)


def test_jitter_worked_example():
    est = JitterEstimator()
    for s, r in ((0, 5_000), (20_000, 25_000), (40_000, 55_000)):
        est = jitter_update(est, s, r)
    assert est.j_us == 625.0 and est.j_ms == 0.625


def test_jitter_constant_transit_and_single_packet():
    est = JitterEstimator().update(0, 7)
    assert est.j_us == 0
    for k in range(1, 20):
        est = est.update(k * 1000, k * 1000 + 7)
    assert est.j_us == 0


def test_jitter_series_matches_reference():
    rng = np.random.default_rng(9)
    for _ in range(200):
        n = int(rng.integers(1, 60))
        send = np.cumsum(rng.integers(0, 50_000, n))
        recv = send + rng.integers(0, 80_000, n)
        got = jitter_series(send, recv)
        assert got[0] == 0
        assert np.allclose(got[1:], np.asarray(jitter_oracle(send, recv)) * 1000.0, rtol=1e-12, atol=1e-9)
        est = JitterEstimator()
        for s, r in zip(send, recv):
            est = est.update(int(s), int(r))
        assert est.j_us == pytest.approx(got[-1], rel=1e-12, abs=1e-9)


def test_loss_stats():
    assert LossStats(10, 9).loss_rate == pytest.approx(0.1)
    assert LossStats(0, 0).loss_rate == 0
    with pytest.raises(ValueError):
        LossStats(1, 2).loss_rate


def test_no_traffic_threshold_is_strict():
    assert list(window_throughput([(100, 4000)], 1_000_000)) == [4.0]
    assert is_no_traffic(4.0) and not is_no_traffic(5.0)
    assert list(window_throughput([], 2_000_000)) == [0.0, 0.0]
    w = ThroughputWindow()
    w.add(5000)
    assert w.roll() == 5.0 and w.roll() == 0.0


@given(st.lists(st.tuples(st.integers(0, 5 * 10**6 - 1), st.integers(0, 12_000)), max_size=40))
def test_window_throughput_sums_bits(samples):
    kbps = window_throughput(samples, 5 * 10**6)
    for k in range(5):
        bits = sum(b for t, b in samples if k * 10**6 <= t < (k + 1) * 10**6)
        assert kbps[k] == pytest.approx(bits / 1000)
