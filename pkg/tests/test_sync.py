import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdgesture.radio import RadioConfig
from rdgesture.sim import (
    ChannelMatrix,
    ImpairmentSpec,
    TargetTrack,
    apply_impairments,
    background_mover_track,
    gesture_track,
    static_track,
    synthesize_channel,
)
from rdgesture.sync import (
    DelayEstimate,
    PhaseCorrector,
    SyncConfig,
    calibrate_delay,
    cancel_self_interference,
    coarse_delay,
    cross_correlation,
    estimate_delay,
    fine_delay,
    phase_correct,
    sync_chain,
    training_sequence,
)

CFG = RadioConfig()


def brute_xcorr(rx, ref, lag):
    return sum(rx[n + lag] * np.conj(ref[n]) for n in range(len(ref)) if 0 <= n + lag < len(rx))


def coupling_only(offset, cfg=CFG, M=8, noise=0.0, seed=0):
    imp = ImpairmentSpec(coupling_amplitude=1.0, timing_offset=offset, noise_power=noise, rng_seed=seed)
    return apply_impairments(synthesize_channel(cfg, [], imp, M), imp)


def test_sync_config_validation():
    for bad in ({"upsample_factor": 0}, {"history_len": 0}, {"phase_step": 0.0}, {"phase_step": 4.0}):
        with pytest.raises(ValueError):
            SyncConfig(**bad)


def test_delay_estimate_sum_is_exact():
    e = DelayEstimate(3, -0.4375)
    assert e.effective == 3 + -0.4375


def test_cross_correlation_matches_brute_force():
    rng = np.random.default_rng(0)
    rx = rng.normal(size=20) + 1j * rng.normal(size=20)
    ref = rng.normal(size=7) + 1j * rng.normal(size=7)
    lags, c = cross_correlation(rx, ref)
    for lag, val in zip(lags, c):
        assert val == pytest.approx(brute_xcorr(rx, ref, lag), abs=1e-10)


def test_coarse_delay_exact_shift():
    rng = np.random.default_rng(1)
    ref = rng.normal(size=32) + 1j * rng.normal(size=32)
    rx = np.concatenate([np.zeros(5), ref, np.zeros(11)])
    assert coarse_delay(rx, ref) == 5
    assert coarse_delay(ref, ref) == 0


def test_coarse_delay_ties_to_smallest_lag():
    ref = np.array([1.0 + 0j])
    rx = np.array([0, 1, 0, 1], dtype=complex)
    assert coarse_delay(rx, ref) == 1


def test_coarse_delay_noisy_monte_carlo():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ref = (rng.normal(size=64) + 1j * rng.normal(size=64)) / np.sqrt(2)
        rx = np.concatenate([np.zeros(7), ref, np.zeros(9)])
        rx = rx + np.sqrt(0.01 / 2) * (rng.normal(size=rx.size) + 1j * rng.normal(size=rx.size))
        lags = range(-63, len(rx))
        oracle = max(lags, key=lambda l: abs(brute_xcorr(rx, ref, l)))
        est = coarse_delay(rx, ref)
        assert est == oracle
        hits += est == 7
    assert hits >= 99


def test_delay_input_errors():
    with pytest.raises(ValueError):
        coarse_delay(np.zeros(4), np.ones(2))
    with pytest.raises(ValueError):
        coarse_delay(np.ones(2), np.ones(4))
    with pytest.raises(ValueError):
        coarse_delay(np.array([]), np.ones(1))
    with pytest.raises(ValueError):
        fine_delay(np.ones(4), np.ones(4), 0, 0)


def test_fine_delay_quarter_sample():
    D = coupling_only(0.25)
    _, est = calibrate_delay(D, U=8)
    assert est.coarse == 0
    assert abs(est.fine - 0.25) <= 1 / 16


def test_zero_delay():
    _, est = calibrate_delay(coupling_only(0.0), U=16)
    assert est.coarse == 0 and abs(est.fine) <= 1 / 32


@pytest.mark.parametrize("offset", [0.0, 0.3, -0.4, 2.7])
def test_unit_upsample_gives_integer_lags(offset):
    ltf = training_sequence(CFG.num_subcarriers)
    rx = np.fft.ifft(np.fft.ifftshift(ltf * np.asarray(coupling_only(offset)).mean(axis=0)))
    ref = np.fft.ifft(np.fft.ifftshift(ltf))
    assert fine_delay(rx, ref, coarse_delay(rx, ref, True), 1, circular=True) == 0


@settings(max_examples=40, deadline=None)
@given(integer=st.integers(-20, 20), frac=st.floats(-0.5, 0.5), U=st.sampled_from([2, 4, 8, 16, 32]))
def test_delay_chain_bound(integer, frac, U):
    d = integer + frac
    aligned, est = calibrate_delay(coupling_only(d, M=2), U=U)
    assert -0.5 < est.fine <= 0.5
    assert abs(est.effective - d) <= 1 / (2 * U) + 1e-9
    # compensation leaves the coupling phase ramp flat to within half a grid step
    resid = np.angle(np.asarray(aligned)[0])
    k = CFG.subcarrier_offsets()
    assert np.max(np.abs(resid)) <= np.pi * np.max(np.abs(k)) / CFG.num_subcarriers / U + 1e-6


def test_fine_delay_on_arbitrary_sequences():
    # time-domain fractional shift of a band-limited sequence
    rng = np.random.default_rng(3)
    P = 64
    X = rng.normal(size=P) + 1j * rng.normal(size=P)
    q = np.fft.fftfreq(P, 1 / P)
    ref = np.fft.ifft(X)
    rx = np.fft.ifft(X * np.exp(-2j * np.pi * q * 3.3 / P))
    est = estimate_delay(rx, ref, U=16, circular=True)
    assert abs(est.effective - 3.3) <= 1 / 32


def test_drift_free_input_needs_no_fix():
    tr = [static_track(0.2, 40, CFG)]
    D = synthesize_channel(CFG, tr, ImpairmentSpec(coupling_amplitude=100.0), 40)
    out, log = phase_correct(D)
    assert np.all(log.fix == 0)
    assert np.all(np.abs(log.delta[1:]) < np.pi / 128)
    assert np.asarray(out).tobytes() == np.asarray(D).tobytes()


@pytest.mark.parametrize("k", [1, 3, -5, 17])
def test_known_phase_jump(k):
    cfg = SyncConfig(history_len=1)
    delta = cfg.phase_step
    D = np.ones((10, 16), dtype=complex)
    D[1:] *= np.exp(-1j * k * delta)
    out, log = phase_correct(D, cfg)
    assert log.fix[0] == 0
    # every later raw frame carries the same jump, so it gets the same fix
    assert np.all(log.steps[1:] == k)
    phases = np.angle(out.mean(axis=1))
    assert np.max(np.abs(np.diff(phases))) < delta / 2


def test_fix_is_integer_multiple_of_step():
    imp = ImpairmentSpec(coupling_amplitude=10.0, phase_drift_std=0.3, noise_power=0.5, rng_seed=4)
    D = apply_impairments(synthesize_channel(CFG, [], imp, 200), imp)
    cfg = SyncConfig()
    _, log = phase_correct(D, cfg)
    assert np.all(log.fix == log.steps * cfg.phase_step)
    assert np.any(log.fix != 0)


def test_round_half_away_from_zero():
    cfg = SyncConfig(history_len=1, phase_step=0.5)
    for delta, expected in [(0.25, 0.5), (-0.25, -0.5), (0.2, 0.0), (0.75, 1.0)]:
        pc = PhaseCorrector(cfg)
        pc.process(np.ones(4, dtype=complex))
        *_, d, fix = pc.process(np.full(4, np.exp(-1j * delta)))
        assert d == pytest.approx(delta)
        assert fix == expected


def test_phase_correction_preserves_magnitude():
    imp = ImpairmentSpec(coupling_amplitude=10.0, phase_drift_std=0.3, noise_power=1.0, rng_seed=2)
    D = np.asarray(apply_impairments(synthesize_channel(CFG, [], imp, 64), imp))
    out, _ = phase_correct(D)
    np.testing.assert_allclose(np.abs(out), np.abs(D), rtol=1e-15, atol=0)


def test_circular_mean_across_branch_cut():
    # phases hovering around +-pi must not pull the reference toward 0
    cfg = SyncConfig(history_len=4)
    th = np.pi + np.array([0.0, 0.02, -0.02, 0.01, -0.01, 0.0])
    D = np.exp(1j * th)[:, None] * np.ones((1, 8))
    _, log = phase_correct(D, cfg)
    assert np.all(np.abs(log.fix) <= cfg.phase_step)


def test_phase_correct_errors():
    with pytest.raises(ValueError):
        phase_correct(np.ones((1, 4)))
    with pytest.raises(ValueError):
        phase_correct(np.zeros((3, 0)))
    D = np.ones((3, 4), dtype=complex)
    D[1] = 0
    with pytest.raises(ValueError):
        phase_correct(D)


def test_phase_log_csv(tmp_path):
    _, log = phase_correct(np.ones((5, 4), dtype=complex))
    log.to_csv(tmp_path / "log.csv")
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0] == ["frame", "theta", "reference", "delta", "fix", "steps"]
    assert len(rows) == 6


def test_corrector_is_streaming():
    imp = ImpairmentSpec(coupling_amplitude=10.0, phase_drift_std=0.2, rng_seed=8)
    D = np.asarray(apply_impairments(synthesize_channel(CFG, [], imp, 30), imp))
    batch, _ = phase_correct(D)
    pc = PhaseCorrector()
    streamed = np.array([pc.process(row)[0] for row in D])
    assert streamed.tobytes() == np.asarray(batch).tobytes()


def test_sic_constant_input_is_zero():
    rng = np.random.default_rng(0)
    c = rng.normal(size=16) + 1j * rng.normal(size=16)
    D = np.tile(c, (10, 1))
    assert np.all(np.asarray(cancel_self_interference(D)) == 0)


def test_sic_preserves_bin_one_tone():
    cfg = RadioConfig(num_subcarriers=16)
    M = 32
    tr = TargetTrack(np.full(M, 1 / cfg.bandwidth), np.full(M, 1 / (M * cfg.frame_interval)), np.ones(M))
    D = np.asarray(synthesize_channel(cfg, [tr], ImpairmentSpec(), M))
    out = np.asarray(cancel_self_interference(D))
    np.testing.assert_allclose(out, D - D.mean(axis=0), atol=1e-12)
    before = np.abs(np.fft.fft(D, axis=0)[1])
    after = np.abs(np.fft.fft(out, axis=0)[1])
    np.testing.assert_allclose(after, before, rtol=1e-10)


def test_sic_suppresses_strong_coupling():
    M = 32
    mover = background_mover_track(0.3, 0.2, M * CFG.frame_interval, CFG, amplitude=1.0)
    imp = ImpairmentSpec(coupling_amplitude=10 ** 1.5, noise_power=0.01, rng_seed=3)
    D = np.asarray(apply_impairments(synthesize_channel(CFG, [mover], imp, M), imp))
    out = np.asarray(cancel_self_interference(D))
    X = np.fft.fft(out, axis=0) / np.sqrt(M)
    zero_gate = np.abs(np.fft.ifft(X[0], norm="ortho")) ** 2
    floor = np.median(np.abs(np.fft.ifft(X[5:-5], axis=1, norm="ortho")) ** 2)
    assert 10 * np.log10(zero_gate.max() + 1e-300) <= 10 * np.log10(floor) + 3


def test_sic_mean_is_zero_and_idempotent():
    rng = np.random.default_rng(5)
    D = rng.normal(size=(32, 64)) + 1j * rng.normal(size=(32, 64)) + 1e3
    once = np.asarray(cancel_self_interference(D))
    twice = np.asarray(cancel_self_interference(once))
    assert np.max(np.abs(once.mean(axis=0))) <= 1e-10
    np.testing.assert_allclose(twice, once, rtol=1e-12, atol=1e-12 * np.abs(once).max())


def test_sic_needs_two_frames():
    with pytest.raises(ValueError):
        cancel_self_interference(np.ones((1, 4)))


def test_sic_keeps_channel_matrix_type():
    D = synthesize_channel(CFG, [static_track(0.2, 4, CFG)], ImpairmentSpec(), 4)
    assert isinstance(cancel_self_interference(D), ChannelMatrix)


def test_chain_on_unimpaired_matrix_is_mean_subtraction():
    cfg = CFG
    tr = gesture_track("PushPull", 0.2, 1.0, 2.0, cfg, total_duration=2.4, rng_seed=1)
    imp = ImpairmentSpec(coupling_amplitude=1000.0)
    D = np.asarray(synthesize_channel(cfg, [tr], imp, len(tr)))
    out, report = sync_chain(D)
    assert report.delay.effective == 0
    assert np.all(report.phase.fix == 0)
    np.testing.assert_allclose(np.asarray(out), D - D.mean(axis=0), atol=1e-9)
