"""Binary clip store, JSON manifest, and train/val/test split protocols.

Clip store layout (all little-endian)::

    header  : magic b"RDCLIPS\\0" | u16 version | u16 reserved |
              u32 frames | u32 height | u32 width | u32 count |
              u32 crc32(records) | u32 crc32(preceding header bytes)
    records : count x ( i16 label id (-1 = none) | u16 user id |
              u16 location id | f32[frames*height*width] row-major )

The manifest sidecar (same path, ``.json`` suffix) maps location ids to
names and records per-clip provenance.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .rdpipe import RDClip
from .sim import GESTURES, GestureKind

MAGIC = b"RDCLIPS\0"
VERSION = 1
_HEAD = struct.Struct("<8sHHIIIII")
_HEAD_CRC = struct.Struct("<I")
_REC = struct.Struct("<hHH")
HEADER_SIZE = _HEAD.size + _HEAD_CRC.size


class ClipStoreError(ValueError):
    pass


class TruncationError(ClipStoreError):
    pass


class ChecksumError(ClipStoreError):
    pass


class VersionError(ClipStoreError):
    pass


def manifest_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_clips(clips: Sequence[RDClip], path, clip_shape=(32, 64, 64)) -> int:
    """Write ``clips`` and the manifest; returns the number stored."""
    clips = list(clips)
    shape = tuple(clips[0].frames.shape) if clips else tuple(clip_shape)
    locations = sorted({c.location for c in clips})
    loc_id = {name: i for i, name in enumerate(locations)}
    body = bytearray()
    for c in clips:
        if c.frames.shape != shape:
            raise ClipStoreError(f"clip shape {c.frames.shape} differs from {shape}")
        if c.frames.size and (c.frames.min() < 0 or c.frames.max() > 1):
            raise ClipStoreError("clip values must lie in [0, 1]")
        label = -1 if c.label is None else c.label.label
        body += _REC.pack(label, c.user, loc_id[c.location])
        body += np.ascontiguousarray(c.frames, dtype="<f4").tobytes()
    head = _HEAD.pack(MAGIC, VERSION, 0, *shape, len(clips), zlib.crc32(body))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(_HEAD_CRC.pack(zlib.crc32(head)))
        fh.write(body)
    manifest = {
        "format": "rdgesture-clips",
        "version": VERSION,
        "count": len(clips),
        "clip_shape": list(shape),
        "labels": {str(g.label): g.value for g in GESTURES},
        "locations": {str(i): name for name, i in loc_id.items()},
        "clips": [
            {
                "index": i,
                "label": None if c.label is None else c.label.value,
                "user": c.user,
                "location": c.location,
                "source": c.source,
                "start_frame": c.start_frame,
                "frame_period": c.frame_period,
            }
            for i, c in enumerate(clips)
        ],
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=1))
    return len(clips)


def read_header(data: bytes) -> dict:
    if len(data) < HEADER_SIZE:
        raise TruncationError("file shorter than the clip-store header")
    fields = _HEAD.unpack_from(data)
    (crc,) = _HEAD_CRC.unpack_from(data, _HEAD.size)
    if fields[0] != MAGIC:
        raise ClipStoreError("not a clip store (bad magic)")
    if zlib.crc32(data[: _HEAD.size]) != crc:
        raise ChecksumError("header checksum mismatch")
    if fields[1] != VERSION:
        raise VersionError(f"unsupported clip-store version {fields[1]} (expected {VERSION})")
    frames, height, width, count, body_crc = fields[3:]
    return {
        "shape": (frames, height, width),
        "count": count,
        "crc": body_crc,
    }


def load_clips(path) -> list[RDClip]:
    data = Path(path).read_bytes()
    head = read_header(data)
    shape, count = head["shape"], head["count"]
    payload = int(np.prod(shape)) * 4
    rec_size = _REC.size + payload
    expected = HEADER_SIZE + count * rec_size
    if len(data) < expected:
        raise TruncationError(f"clip store truncated: {len(data)} of {expected} bytes")
    if len(data) > expected:
        raise ClipStoreError(f"{len(data) - expected} trailing bytes after the last record")
    body = memoryview(data)[HEADER_SIZE:]
    if zlib.crc32(body) != head["crc"]:
        raise ChecksumError("record checksum mismatch")
    mpath = manifest_path(path)
    manifest = json.loads(mpath.read_text()) if mpath.exists() else None
    if manifest is not None and manifest.get("count") != count:
        raise ClipStoreError("manifest count disagrees with the store header")
    locations = manifest["locations"] if manifest else {}
    clips = []
    for i in range(count):
        off = i * rec_size
        label, user, loc = _REC.unpack_from(body, off)
        frames = np.frombuffer(body, dtype="<f4", count=int(np.prod(shape)), offset=off + _REC.size)
        frames = frames.reshape(shape).astype(np.float32)
        if str(loc) not in locations and manifest is not None:
            raise ClipStoreError(f"location id {loc} missing from the manifest")
        meta = manifest["clips"][i] if manifest else {}
        clips.append(
            RDClip(
                frames,
                None if label < 0 else GESTURES[label],
                user=user,
                location=locations.get(str(loc), str(loc)),
                source=meta.get("source", ""),
                start_frame=meta.get("start_frame", 0),
                frame_period=meta.get("frame_period", 0.1),
            )
        )
    return clips


# ---------------------------------------------------------------- splits

PROTOCOLS = ("in_domain", "leave_one_user_out", "cross_location")


@dataclass(frozen=True)
class SplitSpec:
    protocol: str = "in_domain"
    user: Optional[int] = None
    train_locations: tuple = ()
    test_location: Optional[str] = None
    fractions: tuple = (0.7, 0.15, 0.15)
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "train_locations", tuple(self.train_locations))
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if len(self.fractions) != 3 or min(self.fractions) < 0 or abs(sum(self.fractions) - 1) > 1e-9:
            raise ValueError("fractions must be three non-negative numbers summing to 1")
        if self.protocol == "leave_one_user_out" and self.user is None:
            raise ValueError("leave_one_user_out needs a user")
        if self.protocol == "cross_location":
            if self.test_location is None or not self.train_locations:
                raise ValueError("cross_location needs train_locations and test_location")
            if self.test_location in self.train_locations:
                raise ValueError("test location must not be a training location")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        d["train_locations"] = list(self.train_locations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown split keys: {sorted(unknown)}")
        return cls(**d)


def _train_val(idx: np.ndarray, rng, f_train: float, f_val: float):
    idx = rng.permutation(idx)
    n_val = int(round(len(idx) * f_val / (f_train + f_val))) if f_train + f_val else 0
    return np.sort(idx[n_val:]), np.sort(idx[:n_val])


def split_indices(clips: Sequence[RDClip], spec: SplitSpec):
    """Index arrays (train, val, test) into ``clips``."""
    n = len(clips)
    rng = np.random.default_rng(spec.rng_seed)
    f_train, f_val, f_test = spec.fractions
    if spec.protocol == "in_domain":
        order = rng.permutation(n)
        n_train = int(round(n * f_train))
        n_val = int(round(n * f_val))
        parts = order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]
        return tuple(np.sort(p) for p in parts)
    if spec.protocol == "leave_one_user_out":
        users = np.array([c.user for c in clips])
        if spec.user not in set(users.tolist()):
            raise ValueError(f"unknown user id {spec.user}")
        test = np.flatnonzero(users == spec.user)
        train, val = _train_val(np.flatnonzero(users != spec.user), rng, f_train, f_val)
        return train, val, test
    locs = np.array([c.location for c in clips])
    present = set(locs.tolist())
    for loc in (*spec.train_locations, spec.test_location):
        if loc not in present:
            raise ValueError(f"unknown location id {loc!r}")
    test = np.flatnonzero(locs == spec.test_location)
    train, val = _train_val(np.flatnonzero(np.isin(locs, spec.train_locations)), rng, f_train, f_val)
    return train, val, test


def make_split(clips: Sequence[RDClip], spec: SplitSpec):
    """Partition ``clips`` into (train, val, test) lists.

    cross_location draws train and val from ``train_locations`` only; clips
    from any other location are left out of all three.
    """
    return tuple([clips[i] for i in part] for part in split_indices(clips, spec))


def write_split(path, spec: SplitSpec, parts) -> None:
    desc = {
        "spec": spec.to_dict(),
        "train": [int(i) for i in parts[0]],
        "val": [int(i) for i in parts[1]],
        "test": [int(i) for i in parts[2]],
    }
    Path(path).write_text(json.dumps(desc, indent=1))


def read_split(path):
    desc = json.loads(Path(path).read_text())
    spec = SplitSpec.from_dict(desc["spec"])
    return spec, tuple(np.array(desc[k], dtype=int) for k in ("train", "val", "test"))
