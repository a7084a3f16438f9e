import json
import struct

import numpy as np
import pytest

from bridge.xemb import XembError, read_xemb, write_xemb


@pytest.fixture()
def sample(tmp_path):
    rng = np.random.default_rng(8)
    ids = [f"q{i}" for i in range(6)]
    matrix = rng.normal(size=(6, 4)).astype(np.float32)
    path = tmp_path / "sample.xemb"
    write_xemb(path, ids, matrix, provider="tinylm", layer=2, pooling="mean")
    return path, ids, matrix


def test_round_trip(sample, tmp_path):
    path, ids, matrix = sample
    got_ids, got_matrix, provenance = read_xemb(path)
    assert got_ids == ids
    np.testing.assert_array_equal(got_matrix, matrix)
    assert provenance == {"provider": "tinylm", "layer": 2, "pooling": "mean"}
    again = tmp_path / "again.xemb"
    write_xemb(again, got_ids, got_matrix, **provenance)
    assert again.read_bytes() == path.read_bytes()


def test_independent_byte_layout(sample):
    """Parse the file with raw struct reads instead of the package reader."""
    path, ids, matrix = sample
    blob = path.read_bytes()
    assert blob[:4] == b"XEMB"
    version, rows, dim = struct.unpack_from("<III", blob, 4)
    assert (version, rows, dim) == (1, 6, 4)
    (meta_len,) = struct.unpack_from("<I", blob, 16)
    meta = json.loads(blob[20 : 20 + meta_len].decode("utf-8"))
    assert meta["ids"] == ids
    assert meta["provenance"]["layer"] == 2
    payload = blob[20 + meta_len :]
    assert payload == np.ascontiguousarray(matrix, dtype="<f4").tobytes()


def test_write_rejects_bad_content(tmp_path):
    out = tmp_path / "x.xemb"
    with pytest.raises(XembError, match="matrix must be 2-d"):
        write_xemb(out, ["a"], np.ones(3), provider="p")
    with pytest.raises(XembError, match="2 ids but 3 matrix rows"):
        write_xemb(out, ["a", "b"], np.ones((3, 2)), provider="p")
    with pytest.raises(XembError, match="duplicate ids"):
        write_xemb(out, ["a", "a"], np.ones((2, 2)), provider="p")
    bad = np.ones((2, 2))
    bad[0, 0] = np.nan
    with pytest.raises(XembError, match="non-finite values"):
        write_xemb(out, ["a", "b"], bad, provider="p")


def test_read_rejects_corruption(sample, tmp_path):
    path, _, _ = sample
    blob = bytearray(path.read_bytes())

    wrong_magic = tmp_path / "magic.xemb"
    wrong_magic.write_bytes(b"NOPE" + bytes(blob[4:]))
    with pytest.raises(XembError, match="not an XEMB file"):
        read_xemb(wrong_magic)

    short = tmp_path / "short.xemb"
    short.write_bytes(bytes(blob[:-8]))
    with pytest.raises(XembError, match="truncated payload: expected 96 bytes, found 88"):
        read_xemb(short)

    versioned = tmp_path / "version.xemb"
    future = bytearray(blob)
    struct.pack_into("<I", future, 4, 9)
    versioned.write_bytes(bytes(future))
    with pytest.raises(XembError, match="unsupported XEMB version 9"):
        read_xemb(versioned)

    lying = tmp_path / "rows.xemb"
    inflated = bytearray(blob)
    struct.pack_into("<I", inflated, 8, 7)
    lying.write_bytes(bytes(inflated))
    with pytest.raises(XembError, match="declares 7 rows but metadata lists 6 ids"):
        read_xemb(lying)

    headerless = tmp_path / "header.xemb"
    headerless.write_bytes(b"XEMB\x01")
    with pytest.raises(XembError, match="truncated header"):
        read_xemb(headerless)

    meta_cut = tmp_path / "meta.xemb"
    meta_cut.write_bytes(bytes(blob[:40]))
    with pytest.raises(XembError, match="truncated metadata block"):
        read_xemb(meta_cut)
