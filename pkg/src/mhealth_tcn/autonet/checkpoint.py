"""Model checkpoint files.

Layout (little-endian)::

    magic        4 bytes  b"MHTC"
    version      uint16   (1)
    ints         13 x uint32: n_channels, t_days, conv1 filters/width/stride,
                 conv2 filters/width/stride, pool width/stride, hidden,
                 n_tasks, share_extractors (0/1)
    dropout_p    float64
    parameters   float64, in PARAM_NAMES order, each array row-major

Parameter shapes follow from the config, so no per-array header is stored.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import PARAM_NAMES, ModelConfig, ModelParams, param_shapes

MAGIC = b"MHTC"
VERSION = 1
_HEAD = struct.Struct("<4sH13Id")
_INT_FIELDS = (
    "n_channels", "t_days", "conv1_filters", "conv1_width", "conv1_stride",
    "conv2_filters", "conv2_width", "conv2_stride", "pool_width", "pool_stride",
    "hidden", "n_tasks",
)


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: ModelParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ints = [getattr(cfg, f) for f in _INT_FIELDS] + [int(cfg.share_extractors)]
    shapes = param_shapes(cfg)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, *ints, cfg.dropout_p))
        for name in PARAM_NAMES:
            arr = getattr(params, name)
            if arr.shape != shapes[name]:
                raise CheckpointError(f"{name} has shape {arr.shape}, config implies {shapes[name]}")
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ModelParams]:
    buf = Path(path).read_bytes()
    if len(buf) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, *rest = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    ints, share, dropout_p = rest[:12], rest[12], rest[13]
    cfg = ModelConfig(**dict(zip(_INT_FIELDS, ints)), dropout_p=dropout_p, share_extractors=bool(share))
    cfg.validate()
    pos = _HEAD.size
    arrays = []
    for name, shape in param_shapes(cfg).items():
        count = int(np.prod(shape))
        if pos + 8 * count > len(buf):
            raise CheckpointError(f"{path}: truncated at parameter {name}")
        arrays.append(np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).copy())
        pos += 8 * count
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return cfg, ModelParams(*arrays)
