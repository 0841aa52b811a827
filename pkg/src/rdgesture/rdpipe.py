"""Range-Doppler maps, SNR normalisation, clip segmentation and velocity spectrograms."""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.signal import windows

from .radio import SPEED_OF_LIGHT, RadioConfig
from .sim import ChannelMatrix, GestureKind
from .sync import cancel_self_interference


@dataclass(frozen=True)
class RDGrid:
    """Output grid of an RD map and the CPI framing of the slow-time axis."""

    range_min: float = 0.0
    range_max: float = 0.63
    range_cell: float = 0.0093
    velocity_span: float = 0.45
    velocity_cell: float = 0.015
    cpi_frames: int = 32
    cpi_hop: int = 4
    doppler_window: str = "rect"
    range_window: str = "rect"

    def __post_init__(self):
        if self.range_max <= self.range_min:
            raise ValueError("range_max must exceed range_min")
        if self.range_cell <= 0 or self.velocity_cell <= 0 or self.velocity_span <= 0:
            raise ValueError("cell sizes and velocity span must be positive")
        if self.cpi_frames < 2 or self.cpi_hop < 1:
            raise ValueError("need cpi_frames >= 2 and cpi_hop >= 1")
        for w in (self.doppler_window, self.range_window):
            if w not in ("rect", "hann"):
                raise ValueError("windows must be 'rect' or 'hann'")

    @property
    def range_axis(self) -> np.ndarray:
        n = int(np.floor((self.range_max - self.range_min) / self.range_cell + 1e-9)) + 1
        return self.range_min + self.range_cell * np.arange(n)

    @property
    def velocity_axis(self) -> np.ndarray:
        n = int(round(2 * self.velocity_span / self.velocity_cell)) + 1
        return -self.velocity_span + self.velocity_cell * np.arange(n)

    def aliased(self, cfg: RadioConfig) -> bool:
        return self.velocity_span > cfg.unambiguous_velocity * (1 + 1e-9)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RDGrid":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RDMap:
    """SNR in dB on (range cell, velocity cell) axes."""

    values: np.ndarray
    noise_floor: float
    timestamp: float = 0.0
    range_axis: Optional[np.ndarray] = None
    velocity_axis: Optional[np.ndarray] = None
    aliased: bool = False

    def peak(self) -> tuple[float, float]:
        """(range, velocity) of the strongest cell."""
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.range_axis[i]), float(self.velocity_axis[j])


@dataclass
class RDClip:
    """Normalised clip, frames x height x width in [0, 1] (32 x 64 x 64 by default)."""

    frames: np.ndarray
    label: Optional[GestureKind] = None
    user: int = 0
    location: str = "A"
    source: str = ""
    start_frame: int = 0
    frame_period: float = 0.1

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise ValueError("clip frames must be a 3-D array")
        if self.frames.size and (self.frames.min() < 0 or self.frames.max() > 1):
            raise ValueError("clip values must lie in [0, 1]")
        if self.label is not None:
            self.label = GestureKind.parse(self.label)

    @property
    def duration(self) -> float:
        return len(self.frames) * self.frame_period


@dataclass(frozen=True)
class Annotation:
    """Half-open frame interval [start, stop) during which ``label`` is performed."""

    start: int
    stop: int
    label: GestureKind


def _window(kind: str, n: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(n)
    w = windows.hann(n, sym=False)
    return w / np.sqrt(np.mean(w**2))


@functools.lru_cache(maxsize=32)
def _steering(cfg: RadioConfig, grid: RDGrid):
    k = cfg.subcarrier_offsets()
    tau = 2.0 * grid.range_axis / SPEED_OF_LIGHT
    range_sv = np.exp(2j * np.pi * cfg.subcarrier_spacing * np.outer(k, tau))
    range_sv = range_sv * _window(grid.range_window, len(k))[:, None]
    fd = cfg.velocity_to_doppler(grid.velocity_axis)
    m = np.arange(grid.cpi_frames)
    doppler_sv = np.exp(-2j * np.pi * cfg.frame_interval * np.outer(fd, m))
    doppler_sv = doppler_sv * _window(grid.doppler_window, grid.cpi_frames)[None, :]
    return range_sv, doppler_sv


def rd_power(D, cfg: RadioConfig, grid: RDGrid = RDGrid()) -> np.ndarray:
    """Linear RD power on the dense grid, shape (range cells, velocity cells).

    Both axes are direct DTFT evaluations (zoom transform), scaled so
    unit-variance white noise has unit mean power in every cell.
    """
    data = np.asarray(D.data if isinstance(D, ChannelMatrix) else D)
    M, N = data.shape
    if M != grid.cpi_frames:
        raise ValueError(f"expected {grid.cpi_frames} frames per CPI, got {M}")
    if N != cfg.num_subcarriers:
        raise ValueError(f"expected {cfg.num_subcarriers} subcarriers, got {N}")
    range_sv, doppler_sv = _steering(cfg, grid)
    Z = doppler_sv @ (data @ range_sv)
    return (np.abs(Z) ** 2).T / (M * N)


def estimate_noise_floor(power: np.ndarray, unbias: bool = False) -> float:
    """Median of linear power in dB.

    With ``unbias`` the median is divided by ln 2, which recovers the mean of
    exponentially distributed (complex Gaussian) noise power.
    """
    power = np.asarray(power, dtype=float)
    if power.size == 0:
        raise ValueError("empty power grid")
    med = float(np.median(power))
    if med <= 0:
        raise ValueError("noise floor undefined for a zero-median grid")
    if unbias:
        med /= np.log(2.0)
    return 10.0 * np.log10(med)


def to_db(power: np.ndarray) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(power, np.finfo(float).tiny))


def rd_map(
    D,
    cfg: RadioConfig,
    grid: RDGrid = RDGrid(),
    timestamp: float = 0.0,
    noise_floor: Optional[float] = None,
) -> RDMap:
    """RD map of one CPI of (normally SIC-processed) channel data, in dB SNR."""
    power = rd_power(D, cfg, grid)
    floor = estimate_noise_floor(power) if noise_floor is None else noise_floor
    return RDMap(
        to_db(power) - floor,
        floor,
        timestamp,
        grid.range_axis,
        grid.velocity_axis,
        grid.aliased(cfg),
    )


def doppler_spectrum(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Unitary M-point DFT along slow time."""
    return np.fft.fft(x, axis=axis, norm="ortho")


def normalize_frame(
    rd, size: int = 64, snr_range: tuple[float, float] = (5.0, 40.0)
) -> np.ndarray:
    """Clip SNR to ``snr_range``, scale to [0, 1] and bilinearly resize to size x size."""
    values = rd.values if isinstance(rd, RDMap) else np.asarray(rd, dtype=float)
    lo, hi = snr_range
    x = (np.clip(values, lo, hi) - lo) / (hi - lo)
    rows = np.linspace(0, x.shape[0] - 1, size)
    cols = np.linspace(0, x.shape[1] - 1, size)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = ndimage.map_coordinates(x, [rr, cc], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def segment_clips(
    frames,
    annotations: Sequence[Annotation] = (),
    window: int = 32,
    stride: int = 32,
    **meta,
) -> list[RDClip]:
    """Slide a ``window``-frame window over a normalised frame stream.

    A clip is labelled only when an annotated gesture lies entirely inside
    it (and no other gesture with a different label does); otherwise its
    label is None.
    """
    frames = np.asarray(frames)
    if stride < 1 or window < 1:
        raise ValueError("window and stride must be positive")
    clips = []
    for start in range(0, len(frames) - window + 1, stride):
        stop = start + window
        inside = {a.label for a in annotations if a.start >= start and a.stop <= stop}
        label = inside.pop() if len(inside) == 1 else None
        clips.append(RDClip(frames[start:stop], label, start_frame=start, **meta))
    return clips


def cpi_starts(num_frames: int, grid: RDGrid) -> range:
    return range(0, num_frames - grid.cpi_frames + 1, grid.cpi_hop)


def annotation_to_rd(start: int, stop: int, label, grid: RDGrid) -> Annotation:
    """Map an OFDM-frame interval to the RD-frame interval that observes it.

    A window of RD frames [w, w + W) sees OFDM frames
    [w * hop, (w + W - 1) * hop + cpi); the returned interval is contained in
    the window exactly when the gesture is.
    """
    a = start // grid.cpi_hop
    b = max(int(np.ceil((stop - grid.cpi_frames) / grid.cpi_hop)) + 1, a + 1)
    return Annotation(a, b, GestureKind.parse(label))


@dataclass
class Spectrogram:
    values: np.ndarray
    times: np.ndarray
    velocity_axis: np.ndarray
    mode: str
    noise_floor: float = field(init=False)

    def __post_init__(self):
        self.noise_floor = estimate_noise_floor(10 ** (self.values / 10))

    def snr(self) -> np.ndarray:
        return self.values - self.noise_floor


def retained_gates(cfg: RadioConfig, threshold: float) -> np.ndarray:
    """Signed native range gates whose whole extent lies within ``threshold`` metres."""
    dr = cfg.range_resolution
    N = cfg.num_subcarriers
    if not 0.5 * dr <= threshold <= (N // 2) * dr:
        raise ValueError(
            f"threshold {threshold} m must lie in [{0.5 * dr:.4f}, {(N // 2) * dr:.1f}] m"
        )
    g = np.fft.fftfreq(N, 1.0 / N).astype(int)
    return np.flatnonzero((np.abs(g) + 0.5) * dr <= threshold + 1e-12)


def velocity_spectrogram(
    D,
    cfg: RadioConfig,
    mode: str = "range_filtered",
    threshold: float = 1.0,
    grid: RDGrid = RDGrid(),
    range_window: str = "hann",
    sic: bool = True,
) -> Spectrogram:
    """Time x velocity power (dB) over sliding CPIs.

    ``all_subcarriers`` adds the Doppler power spectra of every subcarrier,
    which by Parseval counts every range gate equally (no range
    information). ``range_filtered`` forms the windowed native delay profile,
    keeps only gates lying wholly inside ``threshold`` and adds their Doppler
    power. The range window is scaled to unit energy so both modes share one
    noise-power scale and their rows compare directly.
    """
    if mode not in ("range_filtered", "all_subcarriers"):
        raise ValueError(f"unknown spectrogram mode {mode!r}")
    data = np.asarray(D.data if isinstance(D, ChannelMatrix) else D)
    gates = retained_gates(cfg, threshold) if mode == "range_filtered" else None
    _, doppler_sv = _steering(cfg, grid)
    w_range = _window(range_window, data.shape[1])
    M = grid.cpi_frames
    rows, times = [], []
    for s in cpi_starts(len(data), grid):
        block = data[s : s + M]
        if sic:
            block = cancel_self_interference(block)
        X = doppler_sv @ block
        if mode == "all_subcarriers":
            power = np.sum(np.abs(X) ** 2, axis=1)
        else:
            prof = np.fft.ifft(np.fft.ifftshift(X * w_range[None, :], axes=1), axis=1, norm="ortho")
            power = np.sum(np.abs(prof[:, gates]) ** 2, axis=1)
        rows.append(power / M)
        times.append((s + M / 2) * cfg.frame_interval)
    if not rows:
        raise ValueError("stream shorter than one CPI")
    return Spectrogram(to_db(np.array(rows)), np.array(times), grid.velocity_axis, mode)


def write_csv(path, values: np.ndarray, row_axis=None, col_axis=None) -> None:
    """Row-major CSV; the first row/column hold axis values when given."""
    values = np.asarray(values, dtype=float)
    with open(path, "w") as fh:
        if col_axis is not None:
            head = [""] if row_axis is not None else []
            fh.write(",".join(head + [repr(float(c)) for c in col_axis]) + "\n")
        for i, row in enumerate(values):
            cells = [repr(float(v)) for v in row]
            if row_axis is not None:
                cells.insert(0, repr(float(row_axis[i])))
            fh.write(",".join(cells) + "\n")


def write_pgm(path, values: np.ndarray, vmin: float, vmax: float, **axes) -> None:
    """8-bit binary PGM heatmap plus a JSON sidecar describing the axes."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    scaled = np.clip((values - vmin) / (vmax - vmin), 0, 1)
    pixels = np.round(scaled * 255).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes(order="C"))
    sidecar = {
        "rows": pixels.shape[0],
        "cols": pixels.shape[1],
        "vmin": vmin,
        "vmax": vmax,
        "order": "row-major",
    }
    sidecar.update({k: np.asarray(v).tolist() for k, v in axes.items()})
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
