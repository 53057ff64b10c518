"""Binary on-disk formats: field rasters and model bundles.

Everything is little-endian with a 4-byte magic and a u32 version so
readers can reject foreign or stale files outright.

Field file (.ufnd): magic "UFND", u32 version, u32 resolution W, u32
channel count, then channels x W x W float32, row-major. Velocity files
store channel order (u, v); height rasters are a single channel.

Model file (.ufnm): magic "UFNM", u32 version, u32 metadata byte length,
metadata as canonical JSON (architecture, normalization stats, component,
training metadata), then the raw float32 weights in build order.
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError
from .raster import NormStats
from .surrogate import ModelBundle, UNetSpec

FIELD_MAGIC = b"UFND"
MODEL_MAGIC = b"UFNM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, resolution, channels
_MODEL_HEADER = struct.Struct("<4sII")  # magic, version, metadata length


def write_field_file(path: str | Path, channels: np.ndarray) -> None:
    """channels: (C, W, W) float32, row-major."""
    arr = np.ascontiguousarray(channels, dtype="<f4")
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise FormatError(f"field payload must be (C, W, W), got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, FORMAT_VERSION, arr.shape[1], arr.shape[0]))
        fh.write(arr.tobytes())


def read_field_file(path: str | Path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise IntegrityError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, w, c = _HEADER.unpack_from(blob)
    if magic != FIELD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FIELD_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported field version {version}")
    expected = _HEADER.size + c * w * w * 4
    if len(blob) != expected:
        raise IntegrityError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return data.reshape(c, w, w).copy()


def _stats_to_json(stats: NormStats) -> dict:
    return {"h_max": stats.h_max, "v_scale_u": stats.v_scale_u, "v_scale_v": stats.v_scale_v}


def _spec_to_json(spec: UNetSpec) -> dict:
    return {
        "depth": spec.depth,
        "base_channels": spec.base_channels,
        "kernel": spec.kernel,
        "in_channels": spec.in_channels,
        "out_channels": spec.out_channels,
    }


def canonical_json(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    meta = {
        "spec": _spec_to_json(bundle.spec),
        "stats": _stats_to_json(bundle.stats),
        "component": bundle.component,
        "metadata": bundle.metadata,
    }
    blob = canonical_json(meta)
    weights = np.ascontiguousarray(bundle.weights, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(weights.tobytes())


def load_model(path: str | Path) -> ModelBundle:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _MODEL_HEADER.size:
        raise IntegrityError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, meta_len = _MODEL_HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    if len(blob) < _MODEL_HEADER.size + meta_len:
        raise IntegrityError(f"{path}: truncated metadata block")
    try:
        meta = json.loads(blob[_MODEL_HEADER.size : _MODEL_HEADER.size + meta_len])
        spec = UNetSpec(**meta["spec"])
        stats = NormStats(**meta["stats"])
        component = meta["component"]
        metadata = meta["metadata"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed model metadata ({exc})") from exc
    payload = blob[_MODEL_HEADER.size + meta_len :]
    if len(payload) % 4:
        raise IntegrityError(f"{path}: weight payload not float32-aligned")
    weights = np.frombuffer(payload, dtype="<f4").copy()

    from .surrogate import parameter_count  # local to avoid import cycle at module load

    expect = parameter_count(spec)
    if weights.size != expect:
        raise IntegrityError(
            f"{path}: expected {expect} weights ({expect * 4} bytes), found {weights.size}"
        )
    return ModelBundle(spec, weights, stats, component, metadata)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
