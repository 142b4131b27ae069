"""GCMCF1 tensor container.

Layout (all integers little-endian uint32)::

    b"GCMCF1" | version | header_len | header JSON (utf-8)
    entry_count
    per entry: name_len | name | ndim | dims... | float32 LE data

The header carries the ModelConfig for model checkpoints, plus the original
dtype of every entry so that loading restores it. The same container holds
raw counterfactual dumps and the oracle sidecar.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import torch

from src.core.artifacts import atomic_write_bytes
from src.core.errors import CheckpointFormatError
from src.core.logger import get_logger

from .model import GenerativeCausalModel, ModelConfig, build_model

logger = get_logger(__name__)

MAGIC = b"GCMCF1"
VERSION = 1

TensorLike = Union[torch.Tensor, np.ndarray]


def _to_numpy(value: TensorLike) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().numpy()
    return np.asarray(value)


def encode_tensors(tensors: Mapping[str, TensorLike], header: Optional[Dict[str, Any]] = None) -> bytes:
    arrays = OrderedDict((name, _to_numpy(t)) for name, t in tensors.items())
    meta = dict(header or {})
    meta["dtypes"] = {name: str(arr.dtype) for name, arr in arrays.items()}
    header_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    parts = [MAGIC, struct.pack("<II", VERSION, len(header_bytes)), header_bytes]
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(
                f"truncated container while reading {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def uint32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode_tensors(data: bytes) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    reader = _Reader(data)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.uint32("version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported container version {version}")
    header_len = reader.uint32("header length")
    try:
        header = json.loads(reader.take(header_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}")

    dtypes = header.get("dtypes", {})
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(reader.uint32("entry count")):
        name = reader.take(reader.uint32("name length"), "entry name").decode("utf-8")
        ndim = reader.uint32(f"ndim of {name}")
        dims = struct.unpack(f"<{ndim}I", reader.take(4 * ndim, f"dims of {name}"))
        count = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(reader.take(4 * count, f"data of {name}"), dtype="<f4").reshape(dims)
        tensors[name] = arr.astype(dtypes.get(name, "float32"))
    if reader.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - reader.pos} trailing bytes after last entry")
    return header, tensors


def save_tensors(
    path: Union[str, Path],
    tensors: Mapping[str, TensorLike],
    header: Optional[Dict[str, Any]] = None,
) -> Path:
    return atomic_write_bytes(path, encode_tensors(tensors, header))


def load_tensors(path: Union[str, Path]) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    return decode_tensors(Path(path).read_bytes())


def save_checkpoint(
    path: Union[str, Path],
    model: GenerativeCausalModel,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    header = {
        "kind": "model",
        "model_config": model.config.model_dump(mode="json"),
        "metadata": metadata or {},
    }
    target = save_tensors(path, model.state_dict(), header)
    logger.info(f"Checkpoint written to {target}")
    return target


def load_checkpoint(path: Union[str, Path]) -> Tuple[GenerativeCausalModel, Dict[str, Any]]:
    """Rebuild the model from its embedded config and restore every tensor."""
    header, arrays = load_tensors(path)
    if header.get("kind") != "model" or "model_config" not in header:
        raise CheckpointFormatError(f"{path} is not a model checkpoint")
    model = build_model(ModelConfig(**header["model_config"]))
    state = model.state_dict()
    missing = sorted(set(state) - set(arrays))
    unexpected = sorted(set(arrays) - set(state))
    if missing or unexpected:
        raise CheckpointFormatError(
            f"checkpoint entries do not match the model (missing={missing}, unexpected={unexpected})"
        )
    restored = OrderedDict()
    for name, ref in state.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointFormatError(
                f"entry {name} has shape {arr.shape}, model expects {tuple(ref.shape)}"
            )
        restored[name] = torch.from_numpy(np.array(arr)).to(ref.dtype)
    model.load_state_dict(restored)
    model.eval()
    return model, header.get("metadata", {})
