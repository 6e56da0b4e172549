"""
Embedding file reader and writer.

Binary layout (little-endian throughout):
    magic "EGOPRIV1", u32 n_clips, u32 dim, then per clip:
    u16 id length, UTF-8 id, u32 frame_count, frame_count x dim float32 row-major.

Author: EgoLeak Team
Version: 1.0.0
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from utils.constants import EMBEDDING_MAGIC, UNIT_NORM_TOLERANCE
from utils.error_handling import DataFormatError

_HEADER = struct.Struct("<II")
_ID_LEN = struct.Struct("<H")
_FRAMES = struct.Struct("<I")


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """
    Frame-level embeddings for one view.

    ``rows`` maps clip_id to a frame_count x dim float32 matrix.
    ``normalized`` records that every frame vector has unit L2 norm.
    """
    dim: int
    rows: Mapping[str, np.ndarray] = field(default_factory=dict)
    normalized: bool = False

    def __post_init__(self):
        if self.dim <= 0:
            raise DataFormatError(f"embedding dim must be positive, got {self.dim}")
        frozen = {}
        for clip_id, matrix in self.rows.items():
            matrix = np.asarray(matrix, dtype=np.float32)
            if matrix.ndim != 2 or matrix.shape[1] != self.dim:
                raise DataFormatError(
                    f"dimension mismatch for clip {clip_id}: expected {self.dim} columns, got shape {matrix.shape}"
                )
            if matrix.shape[0] == 0:
                raise DataFormatError(f"clip {clip_id} has no frames")
            matrix = matrix.copy()
            matrix.setflags(write=False)
            frozen[clip_id] = matrix
        object.__setattr__(self, "rows", frozen)
        if self.normalized:
            for clip_id, matrix in frozen.items():
                norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
                if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
                    raise DataFormatError(f"clip {clip_id} is flagged normalized but has non-unit frame vectors")

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self.rows

    def __len__(self) -> int:
        return len(self.rows)


def encode_embeddings(table: EmbeddingTable) -> bytes:
    """Serialize a table into the binary embedding layout, clips in sorted id order."""
    parts = [EMBEDDING_MAGIC, _HEADER.pack(len(table.rows), table.dim)]
    for clip_id in sorted(table.rows):
        raw_id = clip_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise DataFormatError(f"clip id too long: {clip_id[:40]}...")
        matrix = table.rows[clip_id]
        parts.append(_ID_LEN.pack(len(raw_id)))
        parts.append(raw_id)
        parts.append(_FRAMES.pack(matrix.shape[0]))
        parts.append(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_embeddings(payload: bytes, source: str = "<bytes>") -> EmbeddingTable:
    """
    Parse the binary embedding layout.

    Raises:
        DataFormatError: bad magic, truncated data, duplicate ids or trailing bytes
    """
    if payload[:len(EMBEDDING_MAGIC)] != EMBEDDING_MAGIC:
        raise DataFormatError(f"malformed header in {source}: bad magic bytes")
    offset = len(EMBEDDING_MAGIC)
    if len(payload) < offset + _HEADER.size:
        raise DataFormatError(f"malformed header in {source}: truncated")
    n_clips, dim = _HEADER.unpack_from(payload, offset)
    offset += _HEADER.size
    if dim == 0:
        raise DataFormatError(f"malformed header in {source}: dim is zero")

    rows: Dict[str, np.ndarray] = {}
    for _ in range(n_clips):
        try:
            (id_len,) = _ID_LEN.unpack_from(payload, offset)
            offset += _ID_LEN.size
            clip_id = payload[offset:offset + id_len].decode("utf-8")
            if len(clip_id.encode("utf-8")) != id_len:
                raise DataFormatError(f"truncated clip id in {source}")
            offset += id_len
            (frame_count,) = _FRAMES.unpack_from(payload, offset)
            offset += _FRAMES.size
        except struct.error:
            raise DataFormatError(f"truncated record in {source}")
        except UnicodeDecodeError as e:
            raise DataFormatError(f"malformed embedding record in {source}: clip id is not UTF-8 ({e.reason})")
        n_bytes = frame_count * dim * 4
        if offset + n_bytes > len(payload):
            raise DataFormatError(
                f"dimension mismatch in {source}: clip {clip_id} needs {n_bytes} bytes for {frame_count}x{dim} floats"
            )
        if clip_id in rows:
            raise DataFormatError(f"duplicate clip id {clip_id} in {source}")
        block = np.frombuffer(payload, dtype="<f4", count=frame_count * dim, offset=offset)
        rows[clip_id] = block.reshape(frame_count, dim).astype(np.float32)
        offset += n_bytes

    if offset != len(payload):
        raise DataFormatError(
            f"dimension mismatch in {source}: {len(payload) - offset} trailing bytes after {n_clips} clips of dim {dim}"
        )
    return EmbeddingTable(dim=dim, rows=rows, normalized=_all_unit_norm(rows))


def _all_unit_norm(rows: Mapping[str, np.ndarray]) -> bool:
    if not rows:
        return False
    for matrix in rows.values():
        norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
            return False
    return True


def read_embeddings(path: Union[str, Path]) -> EmbeddingTable:
    """Read an embedding file from disk."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"embedding file not found: {path}")
    return decode_embeddings(path.read_bytes(), source=str(path))


def write_embeddings(table: EmbeddingTable, path: Union[str, Path]) -> None:
    """Write an embedding table to disk."""
    Path(path).write_bytes(encode_embeddings(table))


def subsample_frames(matrix: np.ndarray, frames: Optional[int]) -> np.ndarray:
    """
    Uniformly subsample rows when a clip carries more than ``frames`` frames.

    Indices are ``round(linspace(0, n-1, frames))`` so the first and last
    frames are always kept.
    """
    if frames is None or matrix.shape[0] <= frames:
        return matrix
    if frames <= 0:
        raise DataFormatError(f"frames must be positive, got {frames}")
    index = np.rint(np.linspace(0, matrix.shape[0] - 1, frames)).astype(int)
    return matrix[index]
