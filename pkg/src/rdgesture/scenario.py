"""Scenario files (JSON) and channel archives.

A scenario lists streams; each stream has a duration, targets and optional
impairment overrides. Example::

    {
      "schema_version": 1,
      "rng_seed": 0,
      "radio": {"carrier_freq": 6.345e9},
      "impairments": {"noise_power": 1.0, "coupling_db": 60},
      "streams": [
        {"name": "rotate", "duration": 3.9,
         "targets": [
           {"type": "gesture", "gesture": "DoubleRotate", "base_range": 0.2,
            "onset": 0.5, "duration": 2.4},
           {"type": "mover", "range": 1.5, "velocity": 0.3}
         ]}
      ]
    }

Target types: ``gesture`` (gesture, base_range, duration, onset,
speed_scale, amplitude, seed), ``mover`` (range, velocity, rcs or
amplitude), ``static`` (range, amplitude). Coupling is given in dB relative
to unit amplitude (``coupling_db``) or as ``coupling_amplitude`` [re, im].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .radio import RadioConfig
from .sim import (
    ChannelMatrix,
    GestureKind,
    ImpairmentSpec,
    TargetTrack,
    apply_impairments,
    background_mover_track,
    gesture_track,
    static_track,
    synthesize_channel,
)

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "rng_seed", "radio", "impairments", "streams", "description"}
_STREAM_KEYS = {"name", "duration", "targets", "impairments"}
_IMP_KEYS = {"coupling_db", "coupling_amplitude", "noise_power", "timing_offset", "phase_drift_std"}
_TARGET_KEYS = {
    "gesture": {"type", "gesture", "base_range", "duration", "onset", "speed_scale", "amplitude", "seed"},
    "mover": {"type", "range", "velocity", "rcs", "amplitude"},
    "static": {"type", "range", "amplitude"},
}


class ScenarioError(ValueError):
    pass


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ScenarioError(f"{where} must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise ScenarioError(f"unknown keys in {where}: {sorted(unknown)}")


def _complex(value) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ScenarioError("complex values are [re, im] pairs")
        return complex(float(value[0]), float(value[1]))
    return complex(float(value))


def validate_scenario(sc: dict) -> dict:
    _reject_unknown(sc, _TOP_KEYS, "scenario")
    if sc.get("schema_version") != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version must be {SCHEMA_VERSION}")
    RadioConfig.from_dict(sc.get("radio", {}))
    _reject_unknown(sc.get("impairments", {}), _IMP_KEYS, "impairments")
    streams = sc.get("streams", [])
    if not isinstance(streams, list):
        raise ScenarioError("streams must be a list")
    for i, st in enumerate(streams):
        _reject_unknown(st, _STREAM_KEYS, f"stream {i}")
        if "duration" not in st or float(st["duration"]) <= 0:
            raise ScenarioError(f"stream {i} needs a positive duration")
        _reject_unknown(st.get("impairments", {}), _IMP_KEYS, f"stream {i} impairments")
        for j, tg in enumerate(st.get("targets", [])):
            kind = tg.get("type") if isinstance(tg, dict) else None
            if kind not in _TARGET_KEYS:
                raise ScenarioError(f"stream {i} target {j}: unknown type {kind!r}")
            _reject_unknown(tg, _TARGET_KEYS[kind], f"stream {i} target {j}")
            if kind == "gesture":
                GestureKind.parse(tg.get("gesture"))
                for key in ("base_range", "duration"):
                    if key not in tg:
                        raise ScenarioError(f"stream {i} target {j}: missing {key}")
            elif "range" not in tg:
                raise ScenarioError(f"stream {i} target {j}: missing range")
    return sc


def load_scenario(path) -> dict:
    try:
        sc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {path}: {exc}") from exc
    return validate_scenario(sc)


def _impairments(base: dict, override: dict, seed: int) -> ImpairmentSpec:
    d = {**base, **override}
    if "coupling_db" in d and "coupling_amplitude" in d:
        raise ScenarioError("give coupling_db or coupling_amplitude, not both")
    coupling = 0j
    if "coupling_db" in d:
        coupling = complex(10 ** (float(d["coupling_db"]) / 20))
    elif "coupling_amplitude" in d:
        coupling = _complex(d["coupling_amplitude"])
    return ImpairmentSpec(
        coupling_amplitude=coupling,
        noise_power=float(d.get("noise_power", 0.0)),
        timing_offset=float(d.get("timing_offset", 0.0)),
        phase_drift_std=float(d.get("phase_drift_std", 0.0)),
        rng_seed=seed,
    )


@dataclass
class SimulatedStream:
    name: str
    channel: ChannelMatrix
    tracks: list
    annotations: list = field(default_factory=list)
    impairments: Optional[ImpairmentSpec] = None


def simulate_scenario(sc: dict) -> tuple[RadioConfig, list[SimulatedStream]]:
    """Render every stream of a validated scenario (deterministic in rng_seed)."""
    validate_scenario(sc)
    cfg = RadioConfig.from_dict(sc.get("radio", {}))
    seed = int(sc.get("rng_seed", 0))
    out = []
    for i, st in enumerate(sc.get("streams", [])):
        duration = float(st["duration"])
        n = int(round(duration / cfg.frame_interval))
        tracks: list[TargetTrack] = []
        notes = []
        for j, tg in enumerate(st.get("targets", [])):
            kind = tg["type"]
            if kind == "gesture":
                g = GestureKind.parse(tg["gesture"])
                tr = gesture_track(
                    g,
                    float(tg["base_range"]),
                    float(tg.get("speed_scale", 1.0)),
                    float(tg["duration"]),
                    cfg,
                    rng_seed=int(tg.get("seed", np.random.SeedSequence([seed, i, j]).generate_state(1)[0])),
                    onset=float(tg.get("onset", 0.0)),
                    total_duration=duration,
                    amplitude=float(tg.get("amplitude", 1.0)),
                )
                notes.append((int(tr.active[0]), int(tr.active[1]), g))
            elif kind == "mover":
                amp = _complex(tg["amplitude"]) if "amplitude" in tg else None
                tr = background_mover_track(
                    float(tg["range"]), float(tg["velocity"]), duration, cfg,
                    amplitude=amp, rcs=float(tg.get("rcs", 0.5)),
                )
            else:
                tr = static_track(float(tg["range"]), n, cfg, _complex(tg.get("amplitude", 1.0)))
            tracks.append(tr)
        imp_seed = int(np.random.SeedSequence([seed, i, 1 << 20]).generate_state(1)[0])
        imp = _impairments(sc.get("impairments", {}), st.get("impairments", {}), imp_seed)
        D = apply_impairments(synthesize_channel(cfg, tracks, imp, n), imp)
        out.append(SimulatedStream(st.get("name", f"stream{i}"), D, tracks, notes, imp))
    return cfg, out


def save_archive(path, cfg: RadioConfig, streams: list[SimulatedStream]) -> Path:
    """Channel matrices to ``path`` (.npz) plus a ``.tracks.json`` ground-truth sidecar."""
    path = Path(path)
    arrays = {f"stream_{i:03d}": s.channel.data for i, s in enumerate(streams)}
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "radio": cfg.to_dict(),
        "streams": [
            {
                "key": f"stream_{i:03d}",
                "name": s.name,
                "frames": int(s.channel.data.shape[0]),
                "aliased": bool(s.channel.aliased),
                "annotations": [[a, b, g.value] for a, b, g in s.annotations],
                "tracks": [
                    {
                        "label": None if t.label_hint is None else t.label_hint.value,
                        "range": t.range.tolist(),
                        "doppler": t.doppler.tolist(),
                        "amplitude_re": t.amplitude.real.tolist(),
                        "amplitude_im": t.amplitude.imag.tolist(),
                    }
                    for t in s.tracks
                ],
            }
            for i, s in enumerate(streams)
        ],
    }
    side = sidecar_path(path)
    side.write_text(json.dumps(sidecar))
    return side


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".tracks.json")


def load_archive(path) -> tuple[RadioConfig, list[dict]]:
    """Returns the radio config and, per stream, ``{"name", "data", "annotations"}``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"archive not found: {path}")
    side = json.loads(sidecar_path(path).read_text())
    cfg = RadioConfig.from_dict(side["radio"])
    streams = []
    with np.load(path) as npz:
        for st in side["streams"]:
            streams.append(
                {
                    "name": st["name"],
                    "data": npz[st["key"]],
                    "annotations": [(a, b, GestureKind.parse(g)) for a, b, g in st["annotations"]],
                }
            )
    return cfg, streams
