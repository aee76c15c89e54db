"""Interchange container tests: round-trips and corruption handling."""

import json
import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from shapegraph.archive import (MAGIC, FeatureArchive, labels_path,
                                load_checkpoint, manifest_path, read_archive,
                                read_tensors, save_checkpoint, write_archive,
                                write_tensors)
from shapegraph.errors import (ArchiveShapeError, BadMagicError,
                               TruncatedArchiveError, UnlabeledItemError)


def _payload(rng, *shape):
    # float32-representable values so the f32 container round-trips exactly
    return rng.normal(size=shape).astype(np.float32).astype(np.float64)


def test_roundtrip_identity(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "alpha": _payload(rng, 3, 5),
        "beta": _payload(rng, 7),
        "gamma": _payload(rng, 2, 3, 4),
    }
    path = tmp_path / "x.mvhf"
    write_archive(path, tensors, {n: "cls" for n in tensors})
    arch = read_archive(path)
    assert set(arch.tensors) == set(tensors)
    for name in tensors:
        assert_array_equal(arch.tensors[name], tensors[name])
        assert arch.tensors[name].dtype == np.float64
    assert arch.labels == {n: "cls" for n in tensors}


def test_manifest_property(tmp_path):
    path = tmp_path / "m.mvhf"
    write_archive(path, {"t": np.ones((2, 4))}, {"t": "a"})
    arch = read_archive(path)
    assert arch.manifest == {"t": ((2, 4), "float32")}


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.mvhf"
    write_tensors(path, {"t": np.ones((2, 2))})
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError):
        read_tensors(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "v9.mvhf"
    write_tensors(path, {"t": np.ones((2, 2))})
    blob = bytearray(path.read_bytes())
    blob[4:6] = struct.pack("<H", 9)
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError):
        read_tensors(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "cut.mvhf"
    write_tensors(path, {"t": np.ones((4, 4))})
    blob = path.read_bytes()
    path.write_bytes(blob[:-7])
    with pytest.raises(TruncatedArchiveError):
        read_tensors(path)


def test_implausible_dims_rejected(tmp_path):
    path = tmp_path / "dims.mvhf"
    write_tensors(path, {"t": np.ones(3)})
    blob = bytearray(path.read_bytes())
    # dims field sits after magic(4) + version(2) + name_len(2) + name(1) + rank(1)
    off = 4 + 2 + 2 + 1 + 1
    blob[off:off + 4] = struct.pack("<I", 0xFFFFFFFF)
    path.write_bytes(bytes(blob))
    with pytest.raises(ArchiveShapeError):
        read_tensors(path)


def test_duplicate_tensor_name_rejected(tmp_path):
    path = tmp_path / "dup.mvhf"
    write_tensors(path, {"t": np.ones((2, 2))})
    blob = path.read_bytes()
    record = blob[6:]
    path.write_bytes(blob + record)
    with pytest.raises(ArchiveShapeError):
        read_tensors(path)


def test_excessive_rank_rejected(tmp_path):
    with pytest.raises(ArchiveShapeError):
        write_tensors(tmp_path / "r9.mvhf", {"t": np.ones((1,) * 9)})


def test_unlabeled_item_rejected_on_write(tmp_path):
    with pytest.raises(UnlabeledItemError):
        write_archive(tmp_path / "u.mvhf", {"a": np.ones(2), "b": np.ones(2)},
                      {"a": "x"})


def test_missing_sidecar_rejected_on_read(tmp_path):
    path = tmp_path / "nolabels.mvhf"
    write_tensors(path, {"a": np.ones(2)})
    with pytest.raises(UnlabeledItemError):
        read_archive(path)
    arch = read_archive(path, require_labels=False)
    assert arch.labels == {}


def test_sidecar_is_sorted_json(tmp_path):
    path = tmp_path / "s.mvhf"
    write_archive(path, {"b": np.ones(2), "a": np.ones(2)},
                  {"b": "y", "a": "x"})
    side = json.loads(labels_path(path).read_text())
    assert list(side) == ["a", "b"]


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "ckpt.mvhf"
    tensors = {"w1": _payload(rng, 4, 4), "b1": _payload(rng, 1, 4)}
    save_checkpoint(path, tensors, {"kind": "demo", "schedule": [6, 3]})
    loaded, manifest = load_checkpoint(path)
    for name in tensors:
        assert_array_equal(loaded[name], tensors[name])
    assert manifest["kind"] == "demo"
    assert manifest["tensors"]["w1"] == [4, 4]


def test_checkpoint_manifest_required(tmp_path):
    path = tmp_path / "c2.mvhf"
    save_checkpoint(path, {"w": np.ones((2, 2))}, {})
    manifest_path(path).unlink()
    with pytest.raises(UnlabeledItemError):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_detected(tmp_path):
    path = tmp_path / "c3.mvhf"
    save_checkpoint(path, {"w": np.ones((2, 2))}, {})
    meta = json.loads(manifest_path(path).read_text())
    meta["tensors"]["w"] = [3, 3]
    manifest_path(path).write_text(json.dumps(meta))
    with pytest.raises(ArchiveShapeError):
        load_checkpoint(path)


def test_byte_identical_rewrites(tmp_path):
    rng = np.random.default_rng(2)
    tensors = {"x": _payload(rng, 5, 3)}
    p1, p2 = tmp_path / "a.mvhf", tmp_path / "b.mvhf"
    write_archive(p1, tensors, {"x": "c"})
    write_archive(p2, tensors, {"x": "c"})
    assert p1.read_bytes() == p2.read_bytes()
    assert labels_path(p1).read_text() == labels_path(p2).read_text()
    assert p1.read_bytes()[:4] == MAGIC
