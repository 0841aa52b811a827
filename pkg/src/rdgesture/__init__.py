"""Monostatic Wi-Fi range-Doppler gesture sensing: simulation, sync, RD maps, CNN-GRU."""

__version__ = "0.1.0"
