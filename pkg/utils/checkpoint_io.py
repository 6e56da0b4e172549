"""
Head checkpoint files.

Layout: magic "EGOHEAD1", u32 header length, UTF-8 JSON header, then the
raw float64 little-endian weights of every array listed in
``header["arrays"]`` (name + shape), concatenated in that order.

Author: EgoLeak Team
Version: 1.0.0
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from utils.constants import CHECKPOINT_MAGIC
from utils.error_handling import CheckpointError

_LENGTH = struct.Struct("<I")


def save_checkpoint(path: Union[str, Path], header: Dict[str, Any],
                    arrays: List[Tuple[str, np.ndarray]]) -> None:
    """Write a JSON header plus weight blob; array order is preserved."""
    header = dict(header)
    header["arrays"] = [{"name": name, "shape": list(np.shape(value))} for name, value in arrays]
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(value, dtype="<f8").tobytes() for _, value in arrays)
    Path(path).write_bytes(CHECKPOINT_MAGIC + _LENGTH.pack(len(raw_header)) + raw_header + blob)


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises:
        CheckpointError: missing file, bad magic, bad header or blob size mismatch
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = path.read_bytes()
    if payload[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a head checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    try:
        (header_len,) = _LENGTH.unpack_from(payload, offset)
        offset += _LENGTH.size
        header = json.loads(payload[offset:offset + header_len].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"malformed checkpoint header in {path}: {e}")
    offset += header_len

    arrays: Dict[str, np.ndarray] = {}
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        n_bytes = count * 8
        if offset + n_bytes > len(payload):
            raise CheckpointError(f"truncated weights for {entry['name']} in {path}")
        arrays[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += n_bytes
    if offset != len(payload):
        raise CheckpointError(f"{len(payload) - offset} unexpected trailing bytes in {path}")
    return header, arrays
