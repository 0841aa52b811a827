"""Delay calibration, common-phase correction and self-interference cancellation."""

from __future__ import annotations

import collections
import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sim import ChannelMatrix


@dataclass(frozen=True)
class SyncConfig:
    upsample_factor: int = 16
    history_len: int = 8
    phase_step: float = np.pi / 64

    def __post_init__(self):
        if self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        if not 0 < self.phase_step <= np.pi:
            raise ValueError("phase_step must lie in (0, pi]")


@dataclass(frozen=True)
class DelayEstimate:
    coarse: int
    fine: float

    @property
    def effective(self) -> float:
        return self.coarse + self.fine


@dataclass
class PhaseCorrectionLog:
    theta: np.ndarray
    reference: np.ndarray
    delta: np.ndarray
    fix: np.ndarray
    step: float = np.pi / 64

    @property
    def steps(self) -> np.ndarray:
        """Integer quantisation counts; ``fix == steps * step`` holds bit-exactly."""
        return np.rint(self.fix / self.step).astype(np.int64)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "theta", "reference", "delta", "fix", "steps"])
            for m, row in enumerate(zip(self.theta, self.reference, self.delta, self.fix)):
                w.writerow([m, *(repr(float(x)) for x in row), int(self.steps[m])])


def _as_array(D) -> np.ndarray:
    return np.asarray(D.data if isinstance(D, ChannelMatrix) else D)


def _rewrap(D, data):
    if isinstance(D, ChannelMatrix):
        return ChannelMatrix(data, D.cfg, D.aliased)
    return data


def _cross_spectrum(rx, ref, circular: bool):
    rx = np.asarray(rx, dtype=complex)
    ref = np.asarray(ref, dtype=complex)
    if rx.ndim != 1 or ref.ndim != 1 or len(rx) == 0 or len(ref) == 0:
        raise ValueError("sequences must be non-empty 1-D arrays")
    if len(ref) > len(rx):
        raise ValueError("reference must not be longer than the received sequence")
    if not np.any(rx) or not np.any(ref):
        raise ValueError("all-zero input has no correlation peak")
    if circular:
        if len(rx) != len(ref):
            raise ValueError("circular correlation needs equal-length sequences")
        P = len(rx)
    else:
        P = 1 << int(np.ceil(np.log2(len(rx) + len(ref) - 1)))
    return np.fft.fft(rx, P) * np.conj(np.fft.fft(ref, P)), P


def cross_correlation(rx, ref, circular: bool = False):
    """Return ``(lags, C)`` with ``C(l) = sum_n rx[n + l] * conj(ref[n])``.

    Linear mode covers lags ``-(len(ref)-1) .. len(rx)-1``; circular mode
    (equal lengths) covers ``-P/2 .. P/2-1``.
    """
    S, P = _cross_spectrum(rx, ref, circular)
    c = np.fft.ifft(S)
    if circular:
        lags = np.arange(-(P // 2), P - P // 2)
    else:
        lags = np.arange(-(len(ref) - 1), len(rx))
    return lags, c[lags % P]


def coarse_delay(rx, ref, circular: bool = False) -> int:
    """Integer lag maximising |C(l)|; ties go to the smallest lag."""
    lags, c = cross_correlation(rx, ref, circular)
    return int(lags[np.argmax(np.abs(c))])


def _interp_correlation(S: np.ndarray, P: int, lags: np.ndarray) -> np.ndarray:
    # band-limited evaluation of IFFT(S) at fractional lags (frequency-domain
    # zero padding); the signed bin set -P/2..P/2-1 matches the subcarrier
    # layout, so a flat-spectrum peak stays symmetric about the true delay
    q = np.fft.fftfreq(P, 1.0 / P)
    return np.exp(2j * np.pi * np.outer(lags, q) / P) @ S / P


def fine_delay(rx, ref, coarse: int, U: int, circular: bool = False) -> float:
    """Refine ``coarse`` on a 1/U grid spanning [-1/2, 1/2] around it."""
    if U < 1:
        raise ValueError("upsample factor must be >= 1")
    S, P = _cross_spectrum(rx, ref, circular)
    steps = np.arange(-(U // 2), U // 2 + 1)
    c = _interp_correlation(S, P, coarse + steps / U)
    return float(steps[np.argmax(np.abs(c))] / U)


def estimate_delay(rx, ref, U: int = 16, circular: bool = False) -> DelayEstimate:
    """Coarse + fine delay, normalised so the fine part lies in (-1/2, 1/2]."""
    coarse = coarse_delay(rx, ref, circular)
    fine = fine_delay(rx, ref, coarse, U, circular)
    if fine == -0.5:
        coarse, fine = coarse - 1, 0.5
    return DelayEstimate(coarse, fine)


def training_sequence(num_subcarriers: int, seed: int = 0) -> np.ndarray:
    """Known BPSK training symbol, one value per subcarrier (ascending order)."""
    rng = np.random.default_rng(seed)
    return rng.choice(np.array([-1.0, 1.0]), size=num_subcarriers).astype(complex)


def calibrate_delay(D, U: int = 16, ltf: Optional[np.ndarray] = None):
    """Estimate the common timing offset and undo it.

    The frame-averaged channel is dominated by the frame-constant direct
    coupling path, so its time-domain training symbol is the reference
    sequence delayed by the timing offset. Returns ``(aligned, DelayEstimate)``.
    """
    data = _as_array(D)
    N = data.shape[1]
    if ltf is None:
        ltf = training_sequence(N)
    rx = np.fft.ifft(np.fft.ifftshift(ltf * data.mean(axis=0)))
    ref = np.fft.ifft(np.fft.ifftshift(ltf))
    est = estimate_delay(rx, ref, U, circular=True)
    out = np.array(data, dtype=complex)
    if est.effective != 0:
        k = np.arange(N) - N // 2
        out *= np.exp(2j * np.pi * k * est.effective / N)[None, :]
    return _rewrap(D, out), est


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _wrap(x):
    return np.angle(np.exp(1j * x))


class PhaseCorrector:
    """Causal quantized common-phase correction for one frame stream.

    Each frame's mean phasor angle is compared with the circular mean of the
    last ``history_len`` corrected frames; the wrapped difference is rounded
    (half away from zero) to a multiple of ``phase_step`` and applied to all
    subcarriers. The first frame is the anchor and is never rotated.
    """

    def __init__(self, cfg: SyncConfig = SyncConfig()):
        self.cfg = cfg
        self._history = collections.deque(maxlen=cfg.history_len)

    def process(self, frame: np.ndarray):
        """Correct one frame; returns ``(frame, theta, reference, delta, fix)``."""
        frame = np.asarray(frame)
        if frame.size == 0:
            raise ValueError("empty frame")
        mean = frame.mean()
        if mean == 0:
            raise ValueError("all-zero frame has no defined phase")
        theta = float(np.angle(mean))
        if not self._history:
            ref, delta, fix = np.nan, 0.0, 0.0
        else:
            ref = float(np.angle(np.sum(self._history)))
            delta = float(_wrap(ref - theta))
            fix = float(_round_half_away(delta / self.cfg.phase_step) * self.cfg.phase_step)
        if fix != 0.0:
            frame = frame * np.exp(1j * fix)
        self._history.append(np.exp(1j * (theta + fix)))
        return frame, theta, ref, delta, fix


def phase_correct(D, cfg: SyncConfig = SyncConfig()):
    """Run :class:`PhaseCorrector` over every frame; returns ``(D', log)``."""
    data = _as_array(D)
    if data.ndim != 2 or data.shape[1] == 0:
        raise ValueError("channel matrix must be M x N with N > 0")
    if data.shape[0] < 2:
        raise ValueError("phase correction needs at least two frames")
    pc = PhaseCorrector(cfg)
    out = np.empty_like(data, dtype=complex)
    rows = []
    for m in range(data.shape[0]):
        out[m], *info = pc.process(data[m])
        rows.append(info)
    theta, ref, delta, fix = (np.array(col) for col in zip(*rows))
    return _rewrap(D, out), PhaseCorrectionLog(theta, ref, delta, fix, cfg.phase_step)


def cancel_self_interference(D):
    """Remove frame-constant components by subtracting the per-subcarrier temporal mean."""
    data = _as_array(D)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("self-interference cancellation needs at least two frames")
    # pivot on frame 0 so frame-constant input cancels to exactly zero
    centred = data - data[0]
    return _rewrap(D, centred - centred.mean(axis=0))


@dataclass
class SyncReport:
    delay: DelayEstimate
    phase: PhaseCorrectionLog


def synchronize(D, cfg: SyncConfig = SyncConfig(), ltf=None):
    """Delay calibration followed by phase correction (no SIC)."""
    aligned, est = calibrate_delay(D, cfg.upsample_factor, ltf)
    corrected, log = phase_correct(aligned, cfg)
    return corrected, SyncReport(est, log)


def sync_chain(D, cfg: SyncConfig = SyncConfig(), ltf=None):
    """Delay -> phase -> SIC over the whole matrix as one coherent interval."""
    corrected, report = synchronize(D, cfg, ltf)
    return cancel_self_interference(corrected), report
