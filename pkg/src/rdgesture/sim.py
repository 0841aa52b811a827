"""Frequency-domain OFDM channel synthesis for point scatterers.

Every target contributes ``a(m) * exp(j*phi(m)) * exp(-j*2*pi*k*df*tau(m))`` to
frame ``m`` and signed subcarrier offset ``k``, where ``phi`` is the Doppler
phase accumulated over the frames. A frame-constant Tx/Rx coupling term and
circular complex AWGN complete the model.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .radio import SPEED_OF_LIGHT, RadioConfig

logger = logging.getLogger(__name__)


class GestureKind(enum.Enum):
    PUSH_PULL = "PushPull"
    SLIDE = "Slide"
    UP_DOWN = "UpDown"
    DOUBLE_PULSE = "DoublePulse"
    DOUBLE_ROTATE = "DoubleRotate"

    @property
    def label(self) -> int:
        return GESTURES.index(self)

    @classmethod
    def parse(cls, value) -> "GestureKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return GESTURES[int(value)]
        for kind in cls:
            if value in (kind.value, kind.name):
                return kind
        raise ValueError(f"unknown gesture kind: {value!r}")


GESTURES = list(GestureKind)


@dataclass(frozen=True)
class TargetState:
    delay: float
    doppler: float
    amplitude: complex = 1.0


@dataclass
class TargetTrack:
    """Per-frame delay (s), Doppler (Hz) and complex amplitude of one scatterer.

    ``active`` is the half-open frame interval in which the gesture is being
    performed (None for background tracks).
    """

    delay: np.ndarray
    doppler: np.ndarray
    amplitude: np.ndarray
    label_hint: Optional[GestureKind] = None
    active: Optional[tuple[int, int]] = None

    def __post_init__(self):
        self.delay = np.asarray(self.delay, dtype=float)
        self.doppler = np.asarray(self.doppler, dtype=float)
        self.amplitude = np.broadcast_to(
            np.asarray(self.amplitude, dtype=complex), self.delay.shape
        ).copy()
        if not (self.delay.shape == self.doppler.shape and self.delay.ndim == 1):
            raise ValueError("delay and doppler must be 1-D arrays of equal length")
        if np.any(self.delay < 0):
            raise ValueError("target delay must be non-negative")

    def __len__(self) -> int:
        return len(self.delay)

    @property
    def range(self) -> np.ndarray:
        return self.delay * SPEED_OF_LIGHT / 2.0

    @property
    def states(self) -> list[TargetState]:
        return [
            TargetState(float(t), float(f), complex(a))
            for t, f, a in zip(self.delay, self.doppler, self.amplitude)
        ]

    @classmethod
    def from_states(cls, states: Sequence[TargetState], label_hint=None) -> "TargetTrack":
        return cls(
            delay=[s.delay for s in states],
            doppler=[s.doppler for s in states],
            amplitude=[s.amplitude for s in states],
            label_hint=label_hint,
        )


@dataclass(frozen=True)
class ImpairmentSpec:
    coupling_amplitude: complex = 0.0
    noise_power: float = 0.0
    timing_offset: float = 0.0
    phase_drift_std: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_power < 0:
            raise ValueError("noise_power must be >= 0")
        if self.phase_drift_std < 0:
            raise ValueError("phase_drift_std must be >= 0")


@dataclass
class ChannelMatrix:
    """M x N complex channel, frames along axis 0."""

    data: np.ndarray
    cfg: RadioConfig = field(default_factory=RadioConfig)
    aliased: bool = False

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def shape(self):
        return self.data.shape

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]


def _doppler_phase(doppler: np.ndarray, frame_interval: float) -> np.ndarray:
    # trapezoidal integral of f_D; equals 2*pi*T*m*f_D for constant Doppler
    steps = 0.5 * (doppler[1:] + doppler[:-1])
    phase = np.zeros_like(doppler)
    phase[1:] = np.cumsum(steps)
    return 2.0 * np.pi * frame_interval * phase


def synthesize_channel(
    cfg: RadioConfig,
    tracks: Sequence[TargetTrack],
    imp: ImpairmentSpec,
    num_frames: int,
) -> ChannelMatrix:
    """Evaluate the point-scatterer channel model plus coupling and AWGN."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    for i, tr in enumerate(tracks):
        if len(tr) != num_frames:
            raise ValueError(
                f"track {i} has {len(tr)} frames but {num_frames} frames were requested"
            )
    k = cfg.subcarrier_offsets()
    D = np.zeros((num_frames, cfg.num_subcarriers), dtype=complex)
    aliased = False
    for tr in tracks:
        if np.any(np.abs(tr.doppler) >= cfg.max_doppler):
            aliased = True
        slow = tr.amplitude * np.exp(1j * _doppler_phase(tr.doppler, cfg.frame_interval))
        D += slow[:, None] * np.exp(
            -2j * np.pi * cfg.subcarrier_spacing * tr.delay[:, None] * k[None, :]
        )
    if aliased:
        logger.warning("Doppler beyond +/- 1/(2T) in synthesized tracks; output is aliased")
    if imp.coupling_amplitude != 0:
        D += imp.coupling_amplitude
    if imp.noise_power > 0:
        rng = np.random.default_rng([imp.rng_seed, 0])
        scale = np.sqrt(imp.noise_power / 2.0)
        D += scale * (rng.standard_normal(D.shape) + 1j * rng.standard_normal(D.shape))
    return ChannelMatrix(D, cfg, aliased)


def apply_impairments(D, imp: ImpairmentSpec):
    """Apply a global timing offset and a random-walk common phase.

    The timing offset (in samples at the bandwidth rate, may be fractional)
    becomes the ramp ``exp(-j*2*pi*k*offset/N)``; the common phase follows
    ``psi_m = psi_{m-1} + N(0, std^2)`` with ``psi_0 = 0``.
    """
    wrapped = isinstance(D, ChannelMatrix)
    data = np.array(D.data if wrapped else D, dtype=complex)
    M, N = data.shape
    if imp.timing_offset != 0:
        k = np.arange(N) - N // 2
        data *= np.exp(-2j * np.pi * k * imp.timing_offset / N)[None, :]
    if imp.phase_drift_std > 0:
        rng = np.random.default_rng([imp.rng_seed, 1])
        steps = rng.normal(0.0, imp.phase_drift_std, size=M)
        steps[0] = 0.0
        data *= np.exp(1j * np.cumsum(steps))[:, None]
    if wrapped:
        return ChannelMatrix(data, D.cfg, D.aliased)
    return data


def radar_amplitude(rcs: float, range_m: float, ref_rcs: float = 0.01, ref_range: float = 0.2) -> float:
    """Echo amplitude relative to a hand-sized reflector (0.01 m^2) at 0.2 m.

    Power follows the radar equation, sigma / R^4, so amplitude goes as
    sqrt(sigma) / R^2.
    """
    if range_m <= 0 or rcs < 0:
        raise ValueError("range must be positive and rcs non-negative")
    return float(np.sqrt(rcs / ref_rcs) * (ref_range / range_m) ** 2)


def _track_from_range(range_fn, amp_fn, times, cfg: RadioConfig):
    r = range_fn(times)
    if np.any(r < 0):
        raise ValueError("target range went negative")
    # mean velocity over the following frame interval, so the range step and
    # the Doppler sample agree for fast gestures too
    T = cfg.frame_interval
    v = (range_fn(times + T) - r) / T
    return (
        cfg.range_to_delay(r),
        cfg.velocity_to_doppler(v),
        amp_fn(times) if amp_fn is not None else np.ones_like(times),
    )


@dataclass(frozen=True)
class GestureParams:
    """Hand kinematics for the five gestures (repo choices, not measured).

    Lengths in metres; excursions are multiplied by ``speed_scale`` (toward
    the radar at most half the resting range). Slide,
    up-down and rotate follow a warped progress variable whose speed ramps
    linearly over the first and last ``ramp`` fraction of the gesture, so the
    hand starts and stops smoothly.
    """

    push_excursion: float = 0.15
    slide_halfwidth: float = 0.12
    slide_beam: float = 0.20
    updown_halfheight: float = 0.10
    updown_offset: float = 0.06
    updown_beam: float = 0.12
    pulse_excursion: float = 0.06
    pulse_fraction: float = 0.40
    pulse_gain: float = 1.5
    rotate_radius: float = 0.03
    rotate_gain: float = 0.25
    ramp: float = 0.15
    excursion_jitter: float = 0.05

    def peak_speed(self, kind: GestureKind, speed_scale: float, duration: float) -> float:
        """Upper bound on the radial hand speed (m/s) for one gesture."""
        s = abs(speed_scale) * (1 + self.excursion_jitter)
        warp = 1.0 / (1.0 - self.ramp)
        if kind is GestureKind.PUSH_PULL:
            return s * self.push_excursion * np.pi / duration
        if kind is GestureKind.SLIDE:
            return s * self.slide_halfwidth * 2 * np.pi * warp / duration
        if kind is GestureKind.UP_DOWN:
            return s * self.updown_halfheight * 2 * np.pi * warp / duration
        if kind is GestureKind.DOUBLE_PULSE:
            return s * self.pulse_excursion * np.pi / (self.pulse_fraction * duration)
        return s * self.rotate_radius * 4 * np.pi * warp / duration


def _pulse_phase(s: np.ndarray, frac: float) -> np.ndarray:
    u = np.zeros_like(s)
    first = s < frac
    second = s > 1 - frac
    u[first] = s[first] / frac
    u[second] = (s[second] - (1 - frac)) / frac
    return u


def _ramped(s: np.ndarray, eps: float) -> np.ndarray:
    """Monotone map [0,1] -> [0,1] with zero slope at both ends."""
    c = 1.0 / (1.0 - eps)
    return np.where(
        s < eps,
        c * s**2 / (2 * eps),
        np.where(s > 1 - eps, 1 - c * (1 - s) ** 2 / (2 * eps), c * (s - eps / 2)),
    )


def gesture_track(
    kind,
    base_range: float,
    speed_scale: float,
    duration: float,
    cfg: RadioConfig,
    rng_seed: int = 0,
    *,
    onset: float = 0.0,
    total_duration: Optional[float] = None,
    amplitude: float = 1.0,
    params: GestureParams = GestureParams(),
) -> TargetTrack:
    """Kinematic track of a hand performing ``kind``.

    The hand rests at ``base_range`` outside ``[onset, onset + duration]``.
    ``total_duration`` (default ``onset + duration``) sets the number of frames.
    Range, echo amplitude (1/R^2 law times a gesture-specific envelope) and
    Doppler ``-2/lambda * dR/dt`` are sampled at the frame instants (dR/dt is
    the mean over the following frame interval).
    """
    kind = GestureKind.parse(kind)
    if not 0 < base_range:
        raise ValueError("base_range must be positive")
    if duration <= 0:
        raise ValueError("duration must be positive")
    total = onset + duration if total_duration is None else total_duration
    num_frames = int(round(total / cfg.frame_interval))
    if num_frames < 1:
        raise ValueError("track must span at least one frame")
    rng = np.random.default_rng(rng_seed)
    jitter = 1.0 + params.excursion_jitter * rng.uniform(-1, 1)
    carrier_phase = np.exp(2j * np.pi * rng.uniform())
    g = speed_scale * jitter
    R0 = base_range
    p = params

    def progress(t):
        return np.clip((t - onset) / duration, 0.0, 1.0)

    def warped(t):
        return _ramped(progress(t), p.ramp)

    def envelope(t):
        s = progress(t)
        if kind is GestureKind.SLIDE:
            x = g * p.slide_halfwidth * np.sin(2 * np.pi * warped(t))
            return np.exp(-(x / p.slide_beam) ** 2)
        if kind is GestureKind.UP_DOWN:
            z = p.updown_offset + g * p.updown_halfheight * np.sin(2 * np.pi * warped(t))
            return np.exp(-(z / p.updown_beam) ** 2)
        if kind is GestureKind.DOUBLE_PULSE:
            u = _pulse_phase(s, p.pulse_fraction)
            return 1 + p.pulse_gain * np.sin(np.pi * u) ** 2
        if kind is GestureKind.DOUBLE_ROTATE:
            return 1 + p.rotate_gain * np.sin(4 * np.pi * warped(t))
        return np.ones_like(s)

    def range_fn(t):
        s = progress(t)
        if kind is GestureKind.PUSH_PULL:
            return R0 - min(g * p.push_excursion, 0.5 * R0) * np.sin(np.pi * s) ** 2
        if kind is GestureKind.SLIDE:
            x = g * p.slide_halfwidth * np.sin(2 * np.pi * warped(t))
            return np.sqrt(R0**2 + x**2)
        if kind is GestureKind.UP_DOWN:
            z = p.updown_offset + g * p.updown_halfheight * np.sin(2 * np.pi * warped(t))
            return np.sqrt(R0**2 + z**2)
        if kind is GestureKind.DOUBLE_PULSE:
            u = _pulse_phase(s, p.pulse_fraction)
            return R0 - min(g * p.pulse_excursion, 0.5 * R0) * np.sin(np.pi * u) ** 2
        return R0 + g * p.rotate_radius * np.sin(4 * np.pi * warped(t))

    def amp_fn(t):
        return amplitude * envelope(t) * (R0 / range_fn(t)) ** 2

    times = np.arange(num_frames) * cfg.frame_interval
    delay, doppler, amp = _track_from_range(range_fn, amp_fn, times, cfg)
    start = int(np.ceil(onset / cfg.frame_interval - 1e-9))
    stop = min(num_frames, int(np.floor((onset + duration) / cfg.frame_interval + 1e-9)) + 1)
    return TargetTrack(delay, doppler, amp * carrier_phase, label_hint=kind, active=(start, stop))


def background_mover_track(
    range_m: float,
    velocity: float,
    duration: float,
    cfg: RadioConfig,
    *,
    amplitude: Optional[complex] = None,
    rcs: float = 0.5,
) -> TargetTrack:
    """Constant-velocity scatterer starting at ``range_m`` (positive velocity recedes).

    Amplitude defaults to :func:`radar_amplitude` of a person-sized reflector
    at the starting range.
    """
    if range_m <= 0:
        raise ValueError("range_m must be positive")
    num_frames = int(round(duration / cfg.frame_interval))
    if amplitude is None:
        amplitude = radar_amplitude(rcs, range_m)
    times = np.arange(num_frames) * cfg.frame_interval
    delay, doppler, _ = _track_from_range(lambda t: range_m + velocity * t, None, times, cfg)
    # the finite difference is exact up to rounding for a linear path
    doppler = np.full(num_frames, float(cfg.velocity_to_doppler(velocity)))
    return TargetTrack(delay, doppler, np.full(num_frames, amplitude, dtype=complex))


def static_track(range_m: float, num_frames: int, cfg: RadioConfig, amplitude: complex = 1.0) -> TargetTrack:
    delay = np.full(num_frames, float(cfg.range_to_delay(range_m)))
    return TargetTrack(delay, np.zeros(num_frames), np.full(num_frames, amplitude, dtype=complex))
