import struct

import numpy as np
import pytest

from services.embedding_store import (
    EmbeddingTable,
    decode_embeddings,
    encode_embeddings,
    read_embeddings,
    subsample_frames,
    write_embeddings,
)
from utils.constants import EMBEDDING_MAGIC
from utils.error_handling import DataFormatError


def _table():
    rng = np.random.default_rng(3)
    return EmbeddingTable(3, {"b": rng.standard_normal((2, 3)), "a": rng.standard_normal((4, 3))})


class TestEncoding:
    def test_layout_starts_with_magic_and_header(self):
        payload = encode_embeddings(_table())
        assert payload[:8] == EMBEDDING_MAGIC
        assert struct.unpack_from("<II", payload, 8) == (2, 3)
        # clips are written in sorted id order
        assert struct.unpack_from("<H", payload, 16) == (1,)
        assert payload[18:19] == b"a"

    def test_decoded_values_match_float32_input(self, tmp_path):
        table = _table()
        write_embeddings(table, tmp_path / "x.emb")
        loaded = read_embeddings(tmp_path / "x.emb")
        assert loaded.dim == 3
        assert set(loaded.rows) == {"a", "b"}
        np.testing.assert_array_equal(loaded.rows["a"], table.rows["a"])

    def test_unit_rows_are_detected_as_normalized(self):
        rows = {"a": np.array([[1.0, 0.0], [0.0, 1.0]]), "b": np.array([[0.6, 0.8]])}
        assert decode_embeddings(encode_embeddings(EmbeddingTable(2, rows))).normalized
        assert not decode_embeddings(encode_embeddings(_table())).normalized


class TestMalformedFiles:
    def test_bad_magic(self):
        with pytest.raises(DataFormatError, match="malformed header"):
            decode_embeddings(b"NOTMAGIC" + b"\x00" * 8)

    def test_truncated_payload(self):
        payload = encode_embeddings(_table())
        with pytest.raises(DataFormatError, match="dimension mismatch"):
            decode_embeddings(payload[:-4])

    def test_trailing_bytes(self):
        payload = encode_embeddings(_table())
        with pytest.raises(DataFormatError, match="trailing bytes"):
            decode_embeddings(payload + b"\x00\x00\x00\x00")

    def test_clip_id_that_is_not_utf8(self):
        payload = EMBEDDING_MAGIC + struct.pack("<II", 1, 2) + struct.pack("<H", 2) + b"\xff\xfe"
        payload += struct.pack("<I", 1) + struct.pack("<2f", 0.6, 0.8)
        with pytest.raises(DataFormatError, match="malformed embedding record"):
            decode_embeddings(payload)

    def test_wrong_column_count(self):
        with pytest.raises(DataFormatError, match="dimension mismatch"):
            EmbeddingTable(3, {"a": np.zeros((2, 4))})

    def test_zero_frames(self):
        with pytest.raises(DataFormatError, match="no frames"):
            EmbeddingTable(3, {"a": np.zeros((0, 3))})

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFormatError, match="not found"):
            read_embeddings(tmp_path / "absent.emb")


class TestSubsampling:
    def test_keeps_first_and_last_frames(self):
        matrix = np.arange(16, dtype=np.float32).reshape(16, 1)
        picked = subsample_frames(matrix, 4)[:, 0]
        np.testing.assert_array_equal(picked, [0, 5, 10, 15])

    def test_short_clips_are_untouched(self):
        matrix = np.ones((3, 2))
        assert subsample_frames(matrix, 8) is matrix
        assert subsample_frames(matrix, None) is matrix

    def test_rows_are_read_only(self):
        table = _table()
        with pytest.raises(ValueError):
            table.rows["a"][0, 0] = 1.0
