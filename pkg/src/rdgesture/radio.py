"""Radio constants and unit conversions shared by every stage."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class RadioConfig:
    """OFDM sensing front end.

    Channel matrices store subcarriers in ascending frequency order: column
    ``j`` holds the subcarrier at offset ``j - N // 2`` from the carrier.
    """

    carrier_freq: float = 6.345e9
    bandwidth: float = 160e6
    num_subcarriers: int = 512
    frame_interval: float = 0.025

    def __post_init__(self):
        if self.num_subcarriers < 2:
            raise ValueError("num_subcarriers must be >= 2")
        if self.frame_interval <= 0:
            raise ValueError("frame_interval must be positive")
        if self.bandwidth <= 0 or self.carrier_freq <= 0:
            raise ValueError("bandwidth and carrier_freq must be positive")

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.num_subcarriers

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def sample_period(self) -> float:
        return 1.0 / self.bandwidth

    @property
    def range_resolution(self) -> float:
        """Native range bin c / (2B)."""
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth)

    @property
    def max_doppler(self) -> float:
        return 1.0 / (2.0 * self.frame_interval)

    @property
    def unambiguous_velocity(self) -> float:
        """Largest |v| representable without Doppler aliasing, lambda / (4T)."""
        return self.wavelength / (4.0 * self.frame_interval)

    def subcarrier_offsets(self) -> np.ndarray:
        n = self.num_subcarriers
        return np.arange(n) - n // 2

    def range_to_delay(self, r):
        return 2.0 * np.asarray(r, dtype=float) / SPEED_OF_LIGHT

    def delay_to_range(self, tau):
        return np.asarray(tau, dtype=float) * SPEED_OF_LIGHT / 2.0

    def velocity_to_doppler(self, v):
        # receding targets (dR/dt > 0) get negative Doppler
        return -2.0 * np.asarray(v, dtype=float) / self.wavelength

    def doppler_to_velocity(self, fd):
        return -np.asarray(fd, dtype=float) * self.wavelength / 2.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RadioConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown radio config keys: {sorted(unknown)}")
        return cls(**d)
