import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdgesture.radio import SPEED_OF_LIGHT, RadioConfig
from rdgesture.rdpipe import (
    Annotation,
    RDClip,
    RDGrid,
    RDMap,
    annotation_to_rd,
    doppler_spectrum,
    estimate_noise_floor,
    normalize_frame,
    rd_map,
    rd_power,
    retained_gates,
    segment_clips,
    velocity_spectrogram,
    write_csv,
    write_pgm,
)
from rdgesture.sim import (
    GestureKind,
    ImpairmentSpec,
    TargetTrack,
    apply_impairments,
    background_mover_track,
    gesture_track,
    static_track,
    synthesize_channel,
)

CFG = RadioConfig()
GRID = RDGrid()
M = GRID.cpi_frames


def noise(seed, shape=(M, 512), power=1.0):
    rng = np.random.default_rng(seed)
    return np.sqrt(power / 2) * (rng.normal(size=shape) + 1j * rng.normal(size=shape))


def brute_rd(D, cfg, grid):
    """Dense 2-D DTFT cell by cell, rectangular windows."""
    k = cfg.subcarrier_offsets()
    m = np.arange(D.shape[0])
    out = np.zeros((len(grid.range_axis), len(grid.velocity_axis)))
    for i, r in enumerate(grid.range_axis):
        rv = np.exp(2j * np.pi * k * cfg.subcarrier_spacing * 2 * r / SPEED_OF_LIGHT)
        col = D @ rv
        for j, v in enumerate(grid.velocity_axis):
            fd = -2 * v / cfg.wavelength
            out[i, j] = abs(np.sum(col * np.exp(-2j * np.pi * fd * m * cfg.frame_interval))) ** 2
    return out / D.size


def test_grid_defaults():
    assert len(GRID.range_axis) == 68
    assert GRID.range_axis[-1] == pytest.approx(0.6231)
    assert len(GRID.velocity_axis) == 61
    assert GRID.velocity_axis[30] == pytest.approx(0.0, abs=1e-12)
    assert not GRID.aliased(CFG)
    assert RDGrid(velocity_span=0.6).aliased(CFG)
    # Doppler resolution of the 32-frame CPI matches the 0.03 m/s figure
    assert CFG.wavelength / (2 * M * CFG.frame_interval) == pytest.approx(0.0295, abs=1e-3)


def test_grid_validation():
    with pytest.raises(ValueError):
        RDGrid(range_max=0.0)
    with pytest.raises(ValueError):
        RDGrid(velocity_cell=0)
    with pytest.raises(ValueError):
        RDGrid(doppler_window="blackman")
    with pytest.raises(ValueError):
        RDGrid.from_dict({"range_cel": 0.1})
    assert RDGrid.from_dict(GRID.to_dict()) == GRID


def test_clip_duration_arithmetic():
    assert 32 * GRID.cpi_hop * CFG.frame_interval == pytest.approx(3.2)
    clip = RDClip(np.zeros((32, 64, 64)), frame_period=GRID.cpi_hop * CFG.frame_interval)
    assert clip.duration == pytest.approx(3.2)


def test_clip_rejects_out_of_range_values():
    with pytest.raises(ValueError):
        RDClip(np.full((32, 64, 64), 1.5))
    with pytest.raises(ValueError):
        RDClip(np.zeros((64, 64)))


def test_rd_power_matches_brute_force():
    rng = np.random.default_rng(0)
    grid = RDGrid(range_max=0.1, range_cell=0.02, velocity_span=0.09, velocity_cell=0.03)
    D = rng.normal(size=(M, 512)) + 1j * rng.normal(size=(M, 512))
    np.testing.assert_allclose(rd_power(D, CFG, grid), brute_rd(D, CFG, grid), rtol=1e-9)


def test_rd_power_shape_checks():
    with pytest.raises(ValueError):
        rd_power(np.ones((16, 512)), CFG)
    with pytest.raises(ValueError):
        rd_power(np.ones((32, 64)), CFG)


def test_static_target_peak():
    D = synthesize_channel(CFG, [static_track(0.20, M, CFG)], ImpairmentSpec(), M)
    m = rd_map(D, CFG, GRID)
    i, j = np.unravel_index(np.argmax(m.values), m.values.shape)
    assert np.sum(m.values == m.values.max()) == 1
    assert abs(m.range_axis[i] - 0.20) <= GRID.range_cell / 2
    assert m.velocity_axis[j] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(m.values))
    assert m.values.shape == (68, 61)


def test_moving_target_peak():
    v = -0.30
    # start so that the CPI centre sits at 0.20 m
    r0 = 0.20 - v * (M / 2) * CFG.frame_interval
    tr = background_mover_track(r0, v, M * CFG.frame_interval, CFG, amplitude=1.0)
    D = np.asarray(synthesize_channel(CFG, [tr], ImpairmentSpec(), M))
    ours = rd_map(D, CFG, GRID)
    oracle = brute_rd(D, CFG, GRID)
    oi = np.unravel_index(np.argmax(oracle), oracle.shape)
    assert np.unravel_index(np.argmax(ours.values), ours.values.shape) == oi
    r, vel = ours.peak()
    assert abs(r - 0.20) <= GRID.range_cell
    assert abs(vel - v) <= GRID.velocity_cell


def test_empty_scene_noise_peaks():
    hits = sum(rd_map(noise(s), CFG, GRID).values.max() <= 12.0 for s in range(100))
    assert hits >= 99


def test_uniform_floor():
    p = np.full((10, 10), 0.37)
    assert estimate_noise_floor(p) == pytest.approx(10 * np.log10(0.37))
    m = RDMap(10 * np.log10(p) - estimate_noise_floor(p), estimate_noise_floor(p))
    assert np.allclose(m.values, 0.0)


def test_floor_ignores_outlier():
    p = np.ones((9, 9))
    base = estimate_noise_floor(p)
    p[4, 4] = 1e9
    assert estimate_noise_floor(p) == base


def test_floor_errors():
    with pytest.raises(ValueError):
        estimate_noise_floor(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        estimate_noise_floor(np.array([]))


@pytest.mark.parametrize("sigma2", [0.01, 1.0, 50.0])
def test_awgn_floor_matches_noise_power(sigma2):
    floors = [estimate_noise_floor(rd_power(noise(s, power=sigma2), CFG, GRID), unbias=True) for s in range(50)]
    assert abs(np.mean(floors) - 10 * np.log10(sigma2)) <= 1.0


@pytest.mark.parametrize("snr,expected", [(5.0, 0.0), (40.0, 1.0), (22.5, 0.5), (60.0, 1.0), (-10.0, 0.0)])
def test_normalize_endpoints(snr, expected):
    out = normalize_frame(np.full((68, 61), snr))
    assert out.shape == (64, 64)
    np.testing.assert_allclose(out, expected, atol=1e-12)


@pytest.mark.parametrize("shape", [(68, 61), (3, 200), (64, 64), (128, 7)])
def test_normalize_constant_any_size(shape):
    np.testing.assert_allclose(normalize_frame(np.full(shape, 20.0)), 15 / 35, atol=1e-12)


def test_normalize_identity_size_keeps_values():
    x = np.random.default_rng(0).uniform(5, 40, size=(64, 64))
    np.testing.assert_allclose(normalize_frame(x), (x - 5) / 35, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-50, 100), b=st.floats(-50, 100))
def test_normalize_monotone(a, b):
    lo, hi = sorted((a, b))
    # bilinear weights sum to one only up to rounding
    assert normalize_frame(np.full((4, 4), lo)).max() <= normalize_frame(np.full((4, 4), hi)).min() + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), shift=st.floats(0, 10))
def test_normalize_monotone_fieldwise(seed, shift):
    x = np.random.default_rng(seed).uniform(-10, 50, size=(68, 61))
    assert np.all(normalize_frame(x) <= normalize_frame(x + shift) + 1e-12)


def _stream(n):
    return np.zeros((n, 64, 64), dtype=np.float32)


def test_segment_single_window():
    clips = segment_clips(_stream(32), [Annotation(4, 28, GestureKind.SLIDE)])
    assert len(clips) == 1
    assert clips[0].label is GestureKind.SLIDE


def test_segment_two_windows():
    clips = segment_clips(_stream(64), [Annotation(40, 60, GestureKind.UP_DOWN)], stride=32)
    assert [c.label for c in clips] == [None, GestureKind.UP_DOWN]
    assert all(c.frames.shape == (32, 64, 64) for c in clips)


def test_segment_straddling_gesture_unlabelled():
    clips = segment_clips(_stream(64), [Annotation(20, 44, GestureKind.PUSH_PULL)], stride=32)
    assert [c.label for c in clips] == [None, None]


def test_segment_short_stream_empty():
    assert segment_clips(_stream(31), [Annotation(0, 10, GestureKind.SLIDE)]) == []


def test_segment_conflicting_labels_unlabelled():
    ann = [Annotation(2, 10, GestureKind.SLIDE), Annotation(12, 20, GestureKind.UP_DOWN)]
    assert segment_clips(_stream(32), ann)[0].label is None


def test_segment_carries_meta():
    clip = segment_clips(_stream(32), [], user=3, location="B", source="x")[0]
    assert (clip.user, clip.location, clip.source) == (3, "B", "x")


def test_annotation_mapping_containment():
    # a window of RD frames [w, w+32) covers OFDM frames [4w, 4w + 31*4 + 32)
    for start in range(0, 40):
        for stop in range(start + 1, start + 160, 7):
            a = annotation_to_rd(start, stop, "Slide", GRID)
            for w in range(0, 12):
                covered = 4 * w <= start and stop <= 4 * w + 31 * 4 + 32
                assert covered == (a.start >= w and a.stop <= w + 32)


def test_parseval_per_gate():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(M, 17)) + 1j * rng.normal(size=(M, 17))
    X = doppler_spectrum(x)
    total = np.sum(np.abs(X) ** 2, axis=0)
    np.testing.assert_allclose(total, M * np.mean(np.abs(x) ** 2, axis=0), rtol=1e-9)


def test_retained_gates():
    assert list(retained_gates(CFG, 1.0)) == [0]
    assert sorted(retained_gates(CFG, 1.5).tolist()) == [0, 1, 511]
    with pytest.raises(ValueError):
        retained_gates(CFG, 0.1)
    with pytest.raises(ValueError):
        retained_gates(CFG, 1e4)


def _mover_scene(seed=0, with_mover=True, frames=160):
    dur = frames * CFG.frame_interval
    tracks = [gesture_track("DoubleRotate", 0.2, 1.0, 2.4, CFG, rng_seed=seed, onset=0.5, total_duration=dur)]
    if with_mover:
        tracks.append(background_mover_track(1.5, 0.3, dur, CFG))
    imp = ImpairmentSpec(coupling_amplitude=1000.0, noise_power=0.01, rng_seed=seed)
    return apply_impairments(synthesize_channel(CFG, tracks, imp, frames), imp)


def test_range_filter_attenuates_mover():
    frames = 160
    D = _mover_scene(frames=frames)
    full = velocity_spectrogram(D, CFG, "all_subcarriers")
    filt = velocity_spectrogram(D, CFG, "range_filtered", threshold=1.0)
    col = np.argmin(np.abs(full.velocity_axis - 0.3))
    # the hand also sweeps through 0.3 m/s, so compare only CPIs that end
    # before the gesture starts or begin after it stops
    start, stop = 20, 116
    s = np.arange(len(full.times)) * GRID.cpi_hop
    idle = (s + M <= start) | (s >= stop)
    assert idle.sum() >= 3
    assert np.all(full.values[idle, col] - filt.values[idle, col] >= 20.0)
    # mover alone through the same processing: attenuated in every CPI
    mover = synthesize_channel(CFG, [background_mover_track(1.5, 0.3, frames * CFG.frame_interval, CFG)], ImpairmentSpec(), frames)
    a = velocity_spectrogram(mover, CFG, "all_subcarriers").values[:, col]
    b = velocity_spectrogram(mover, CFG, "range_filtered", threshold=1.0).values[:, col]
    assert np.all(a - b >= 20.0)


@pytest.mark.parametrize("seed", range(3))
def test_modes_agree_without_movers(seed):
    # Hann Doppler window: with rect, sidelobes of the chirping hand produce
    # near-exact ties between distant velocity cells
    grid = RDGrid(doppler_window="hann")
    D = _mover_scene(seed=seed, with_mover=False)
    full = velocity_spectrogram(D, CFG, "all_subcarriers", grid=grid)
    filt = velocity_spectrogram(D, CFG, "range_filtered", threshold=1.0, grid=grid)
    active = full.snr().max(axis=1) > 15
    assert active.sum() >= 10
    pf = np.argmax(full.values, axis=1)[active]
    pr = np.argmax(filt.values, axis=1)[active]
    assert np.all(np.abs(pf - pr) <= 1)


@pytest.mark.parametrize("mode", ["all_subcarriers", "range_filtered"])
def test_spectrogram_empty_scene(mode):
    hits = 0
    for s in range(100):
        # a spectrogram spans many CPIs; one 61-cell row alone gives a jittery median
        sp = velocity_spectrogram(noise(s, shape=(128, 512)), CFG, mode)
        hits += sp.snr().max() <= 12.0
    assert hits >= 99


def test_spectrogram_rejects_bad_input():
    with pytest.raises(ValueError):
        velocity_spectrogram(noise(0), CFG, "coherent")
    with pytest.raises(ValueError):
        velocity_spectrogram(noise(0), CFG, "range_filtered", threshold=0.2)
    with pytest.raises(ValueError):
        velocity_spectrogram(noise(0, shape=(10, 512)), CFG)


def test_spectrogram_times():
    sp = velocity_spectrogram(noise(1, shape=(M + 8, 512)), CFG)
    np.testing.assert_allclose(sp.times, [0.4, 0.5, 0.6])


def test_csv_and_pgm_export(tmp_path):
    vals = np.arange(6.0).reshape(2, 3)
    write_csv(tmp_path / "a.csv", vals, row_axis=[0.1, 0.2], col_axis=[1, 2, 3])
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == ",1.0,2.0,3.0"
    assert lines[2].split(",")[0] == "0.2"
    write_pgm(tmp_path / "a.pgm", vals, 0.0, 5.0, velocity=[1, 2, 3])
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n")
    assert list(raw[-6:]) == [0, 51, 102, 153, 204, 255]
    side = json.loads((tmp_path / "a.json").read_text())
    assert side["rows"] == 2 and side["velocity"] == [1, 2, 3]
