"""Channel stream -> sync -> per-CPI SIC -> RD maps -> normalised clips."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .radio import RadioConfig
from .rdpipe import (
    RDGrid,
    RDMap,
    annotation_to_rd,
    cpi_starts,
    normalize_frame,
    rd_map,
    segment_clips,
)
from .sim import ChannelMatrix
from .sync import SyncConfig, SyncReport, cancel_self_interference, synchronize


@dataclass(frozen=True)
class PipelineConfig:
    radio: RadioConfig = field(default_factory=RadioConfig)
    grid: RDGrid = field(default_factory=RDGrid)
    sync: SyncConfig = field(default_factory=SyncConfig)
    window: int = 32
    stride: int = 32
    frame_size: int = 64
    snr_range: tuple = (5.0, 40.0)
    synchronize: bool = True

    @property
    def stream_frames(self) -> int:
        """OFDM frames needed for exactly one clip."""
        return (self.window - 1) * self.grid.cpi_hop + self.grid.cpi_frames

    @property
    def clip_duration(self) -> float:
        return self.window * self.grid.cpi_hop * self.radio.frame_interval

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_range"] = list(self.snr_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown pipeline keys: {sorted(unknown)}")
        if "radio" in d:
            d["radio"] = RadioConfig.from_dict(d["radio"])
        if "grid" in d:
            d["grid"] = RDGrid.from_dict(d["grid"])
        if "sync" in d:
            sync = dict(d["sync"])
            unknown = set(sync) - set(SyncConfig.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown sync keys: {sorted(unknown)}")
            d["sync"] = SyncConfig(**sync)
        if "snr_range" in d:
            d["snr_range"] = tuple(d["snr_range"])
        return cls(**d)


def rd_stream(
    D, pcfg: PipelineConfig = PipelineConfig(), threads: int = 1, ltf=None
) -> tuple[list[RDMap], Optional[SyncReport]]:
    """RD maps for every CPI of a stream, in timestamp order.

    CPIs are independent once the stream is synchronised, so they may be
    computed on worker threads; results are collected in CPI order.
    """
    data = np.asarray(D.data if isinstance(D, ChannelMatrix) else D)
    report = None
    if pcfg.synchronize:
        data, report = synchronize(data, pcfg.sync, ltf)
    grid, cfg = pcfg.grid, pcfg.radio
    M = grid.cpi_frames

    def one(s):
        block = cancel_self_interference(data[s : s + M])
        return rd_map(block, cfg, grid, timestamp=(s + M / 2) * cfg.frame_interval)

    starts = list(cpi_starts(len(data), grid))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            maps = list(pool.map(one, starts))
    else:
        maps = [one(s) for s in starts]
    return maps, report


def normalized_frames(maps: Sequence[RDMap], pcfg: PipelineConfig = PipelineConfig()) -> np.ndarray:
    size = pcfg.frame_size
    if not maps:
        return np.zeros((0, size, size), dtype=np.float32)
    return np.stack([normalize_frame(m, size, pcfg.snr_range) for m in maps]).astype(np.float32)


def process_stream(
    D,
    annotations: Sequence[tuple] = (),
    pcfg: PipelineConfig = PipelineConfig(),
    threads: int = 1,
    ltf=None,
    **meta,
):
    """Full pipeline for one stream.

    ``annotations`` are ``(start, stop, label)`` half-open OFDM-frame
    intervals. Returns the list of emitted clips.
    """
    if len(np.asarray(D.data if isinstance(D, ChannelMatrix) else D)) < pcfg.grid.cpi_frames:
        return []
    maps, _ = rd_stream(D, pcfg, threads, ltf)
    frames = normalized_frames(maps, pcfg)
    rd_ann = [annotation_to_rd(a, b, lab, pcfg.grid) for a, b, lab in annotations]
    period = pcfg.grid.cpi_hop * pcfg.radio.frame_interval
    return segment_clips(frames, rd_ann, pcfg.window, pcfg.stride, frame_period=period, **meta)
