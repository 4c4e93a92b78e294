"""
Checkpoint files
================

Model parameters are stored in a small self-describing container::

    b"LCMT"                      magic
    uint32                       format version
    uint32 + bytes               ModelConfig as UTF-8 JSON
    uint32                       number of parameters
    per parameter:
        uint32 + bytes           name (UTF-8)
        uint32                   rank
        uint32 * rank            dimensions
        float32 * prod(dims)     row-major payload

All integers and floats are little-endian. Payloads are 32-bit, so a float32
model round-trips bit-exactly.

Optimizer and trainer state for resuming lives next to it in an ``.npz`` file
(plain arrays plus a JSON metadata string, no pickling).
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError, ConfigError
from .model import ModelConfig, TransformerModel
from .numerics import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"LCMT"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")


def save_checkpoint(path: str | Path, config: ModelConfig, parameters: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_bytes = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    chunks = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(config_bytes)), config_bytes, _U32.pack(len(parameters))]
    for name, value in parameters.items():
        value = np.asarray(value)
        name_bytes = name.encode("utf-8")
        chunks += [_U32.pack(len(name_bytes)), name_bytes, _U32.pack(value.ndim)]
        chunks += [_U32.pack(dim) for dim in value.shape]
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    logger.debug("saved checkpoint %s (%d parameters)", path, len(parameters))
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated at byte {self.offset} (wanted {n} more)")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not an LCMT checkpoint (bad magic)")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    try:
        config = ModelConfig.from_dict(json.loads(reader.take(reader.u32()).decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ConfigError, TypeError) as exc:
        raise CheckpointError(f"{path}: invalid embedded config ({exc})") from exc
    parameters: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        raw = reader.take(reader.u32())
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: invalid parameter name {raw!r} ({exc})") from exc
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        parameters[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if reader.offset != len(reader.data):
        raise CheckpointError(f"{path}: {len(reader.data) - reader.offset} trailing bytes")
    return config, parameters


def save_model(path: str | Path, model: TransformerModel) -> Path:
    return save_checkpoint(path, model.config, model.state_dict())


def load_model(path: str | Path, precision: str | None = None) -> TransformerModel:
    config, parameters = load_checkpoint(path)
    if precision is not None and precision != config.precision:
        config = config.replace(precision=precision)
    return TransformerModel(config, parameters=parameters)


def save_training_state(path: str | Path, state: AdamState, meta: Mapping) -> Path:
    """Adam moments plus JSON-serialisable trainer metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"m/{name}": value for name, value in state.m.items()}
    arrays.update({f"v/{name}": value for name, value in state.v.items()})
    arrays["meta"] = np.array(json.dumps({**meta, "adam_step": state.step}, sort_keys=True))
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)
    return path


def load_training_state(path: str | Path) -> tuple[AdamState, dict]:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta"]))
            state = AdamState(step=int(meta.pop("adam_step")))
            for key in archive.files:
                if key.startswith("m/"):
                    state.m[key[2:]] = archive[key].astype(np.float64)
                elif key.startswith("v/"):
                    state.v[key[2:]] = archive[key].astype(np.float64)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: invalid training state ({exc})") from exc
    return state, meta
