"""Binary feature cache.

``features_<level>.bin`` (all integers little-endian)::

    magic     4 bytes  b"MHFF"
    version   uint16   (1)
    reserved  uint16   (0)
    T         uint32
    D         uint32
    n_users   uint32
    then per user:
        id_len  uint16, id bytes (UTF-8)
        values  T*D float64, row-major (day-major)
        mask    ceil(T*D / 8) bytes, bit-packed row-major, LSB first

``features_<level>.meta.json`` carries the layer name, T, D, feature names,
user ids and each user's 9 condition labels.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..cohort.types import CONDITIONS
from .frames import FeatureFrame, Layer

MAGIC = b"MHFF"
VERSION = 1
_HEADER = struct.Struct("<4sHHIII")


class CacheError(ValueError):
    pass


def cache_paths(directory: str | Path, layer: Layer | str) -> tuple[Path, Path]:
    level = Layer(layer).value
    d = Path(directory)
    return d / f"features_{level}.bin", d / f"features_{level}.meta.json"


def write_feature_cache(
    frames: list[FeatureFrame], labels: np.ndarray, directory: str | Path, layer: Layer | str, t_days: int
) -> tuple[Path, Path]:
    layer = Layer(layer)
    bin_path, meta_path = cache_paths(directory, layer)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    d = layer.dims
    with open(bin_path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, t_days, d, len(frames)))
        for f in frames:
            if f.values.shape != (t_days, d):
                raise CacheError(f"frame {f.user_id} has shape {f.values.shape}, expected {(t_days, d)}")
            uid = f.user_id.encode("utf-8")
            fh.write(struct.pack("<H", len(uid)))
            fh.write(uid)
            fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
            fh.write(np.packbits(f.mask.ravel(), bitorder="little").tobytes())
    from .frames import FEATURE_NAMES

    meta = {
        "layer": layer.value,
        "t_days": t_days,
        "dims": d,
        "feature_names": list(FEATURE_NAMES[:d]),
        "conditions": list(CONDITIONS),
        "user_ids": [f.user_id for f in frames],
        "labels": np.asarray(labels, dtype=int).tolist(),
    }
    with open(meta_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    return bin_path, meta_path


def read_feature_cache(directory: str | Path, layer: Layer | str) -> tuple[list[FeatureFrame], np.ndarray]:
    """Frames and the (n_users, 9) label matrix stored for one layer."""
    layer = Layer(layer)
    bin_path, meta_path = cache_paths(directory, layer)
    if not bin_path.exists() or not meta_path.exists():
        raise CacheError(f"no feature cache for layer {layer.value} in {directory}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    names = tuple(meta["feature_names"])
    buf = bin_path.read_bytes()
    magic, version, _, t, d, n = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CacheError(f"{bin_path}: bad magic {magic!r}")
    if version != VERSION:
        raise CacheError(f"{bin_path}: unsupported version {version}")
    if d != len(names):
        raise CacheError(f"{bin_path}: D={d} but meta lists {len(names)} features")
    pos = _HEADER.size
    n_mask = (t * d + 7) // 8
    frames = []
    for _ in range(n):
        (id_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        uid = buf[pos : pos + id_len].decode("utf-8")
        pos += id_len
        values = np.frombuffer(buf, dtype="<f8", count=t * d, offset=pos).reshape(t, d).copy()
        pos += 8 * t * d
        bits = np.frombuffer(buf, dtype=np.uint8, count=n_mask, offset=pos)
        pos += n_mask
        mask = np.unpackbits(bits, count=t * d, bitorder="little").astype(bool).reshape(t, d)
        frames.append(FeatureFrame(uid, layer, values, mask, names))
    if pos != len(buf):
        raise CacheError(f"{bin_path}: {len(buf) - pos} trailing bytes")
    labels = np.asarray(meta["labels"], dtype=np.int8).reshape(n, len(CONDITIONS))
    return frames, labels
