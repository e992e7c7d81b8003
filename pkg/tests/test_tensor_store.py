import json
import struct

import numpy as np
import pytest

from spectra import (
    CheckpointManifest,
    FormatError,
    ShapeMismatchError,
    match_layers,
    read_checkpoint,
    write_checkpoint,
)
from spectra.tensor_store import SkippedTensorWarning


def hand_built_file(path, entries, data, metadata=None):
    """Assemble container bytes directly from the format definition."""
    header = dict(entries)
    if metadata is not None:
        header["__metadata__"] = metadata
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(data)


def test_hand_built_fixture_parses(tmp_path):
    # one 2x2 F32 tensor w = [[1,2],[3,4]], row-major
    path = tmp_path / "fixture.safetensors"
    data = struct.pack("<4f", 1.0, 2.0, 3.0, 4.0)
    hand_built_file(
        path,
        {"w": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]}},
        data,
    )
    man = read_checkpoint(path)
    assert list(man.entries) == ["w"]
    rec = man.entries["w"]
    assert rec.shape == (2, 2)
    assert rec.data.dtype == np.float64
    assert np.array_equal(rec.data, [[1.0, 2.0], [3.0, 4.0]])


def test_metadata_round_trip(tmp_path):
    man = CheckpointManifest()
    man.add("w", np.arange(6.0).reshape(2, 3))
    man.metadata = {"origin": "unit-test"}
    path = tmp_path / "m.safetensors"
    write_checkpoint(man, path)
    back = read_checkpoint(path)
    assert back.metadata == {"origin": "unit-test"}


def test_write_read_identity_f64(tmp_path):
    man = CheckpointManifest()
    rng = np.random.default_rng(3)
    man.add("a", rng.standard_normal((4, 5)))
    man.add("b", rng.standard_normal((2, 2)))
    path = tmp_path / "rt.safetensors"
    write_checkpoint(man, path)
    back = read_checkpoint(path)
    for name in man.entries:
        assert np.array_equal(back[name], man[name])


def test_write_is_byte_deterministic(tmp_path):
    man = CheckpointManifest()
    man.add("z", np.ones((2, 2)))
    man.add("a", np.zeros((1, 3)))
    p1, p2 = tmp_path / "one.st", tmp_path / "two.st"
    write_checkpoint(man, p1)
    write_checkpoint(man, p2)
    assert p1.read_bytes() == p2.read_bytes()
    # names serialized lexicographically
    header_len = struct.unpack("<Q", p1.read_bytes()[:8])[0]
    header = json.loads(p1.read_bytes()[8 : 8 + header_len])
    assert list(header) == ["a", "z"]


def test_f32_storage_rounds_once(tmp_path):
    man = CheckpointManifest()
    man.add("w", np.array([[0.1]]))
    path = tmp_path / "f32.safetensors"
    write_checkpoint(man, path, dtype="F32")
    back = read_checkpoint(path)
    # oracle: a single rounding of 0.1 to binary32, then widened
    assert back["w"][0, 0] == float(np.float32(0.1))


def test_empty_manifest_round_trips(tmp_path):
    path = tmp_path / "empty.safetensors"
    write_checkpoint(CheckpointManifest(), path)
    man = read_checkpoint(path)
    assert man.entries == {}


def test_overlapping_ranges_rejected(tmp_path):
    path = tmp_path / "overlap.safetensors"
    data = struct.pack("<8f", *range(8))
    hand_built_file(
        path,
        {
            "a": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]},
            "b": {"dtype": "F32", "shape": [2, 2], "data_offsets": [8, 24]},
        },
        data,
    )
    with pytest.raises(FormatError, match="overlapping"):
        read_checkpoint(path)


def test_out_of_bounds_offsets_rejected(tmp_path):
    path = tmp_path / "oob.safetensors"
    hand_built_file(
        path,
        {"a": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]}},
        b"\x00" * 8,
    )
    with pytest.raises(FormatError, match="'a'"):
        read_checkpoint(path)


def test_bad_header_length_rejected(tmp_path):
    path = tmp_path / "hdr.safetensors"
    path.write_bytes(struct.pack("<Q", 1 << 40) + b"{}")
    with pytest.raises(FormatError, match="header length"):
        read_checkpoint(path)
    path.write_bytes(b"\x01\x02")
    with pytest.raises(FormatError, match="too short"):
        read_checkpoint(path)


def test_invalid_json_rejected(tmp_path):
    path = tmp_path / "json.safetensors"
    blob = b"{not json"
    path.write_bytes(struct.pack("<Q", len(blob)) + blob)
    with pytest.raises(FormatError, match="JSON"):
        read_checkpoint(path)


def test_duplicate_tensor_names_rejected(tmp_path):
    path = tmp_path / "dup.safetensors"
    blob = (
        b'{"w": {"dtype": "F32", "shape": [1], "data_offsets": [0, 4]},'
        b' "w": {"dtype": "F32", "shape": [1], "data_offsets": [4, 8]}}'
    )
    path.write_bytes(struct.pack("<Q", len(blob)) + blob + b"\x00" * 8)
    with pytest.raises(FormatError, match="duplicate"):
        read_checkpoint(path)


def test_loaded_tensors_are_read_only(tmp_path):
    man = CheckpointManifest()
    man.add("w", np.ones((2, 2)))
    path = tmp_path / "ro.safetensors"
    write_checkpoint(man, path)
    back = read_checkpoint(path)
    with pytest.raises(ValueError):
        back["w"][0, 0] = 5.0


def test_unsupported_dtype_rejected(tmp_path):
    path = tmp_path / "dtype.safetensors"
    hand_built_file(
        path,
        {"a": {"dtype": "BF16", "shape": [1], "data_offsets": [0, 2]}},
        b"\x00\x00",
    )
    with pytest.raises(FormatError, match="dtype"):
        read_checkpoint(path)


def test_non_finite_values_name_the_tensor(tmp_path):
    path = tmp_path / "nan.safetensors"
    data = struct.pack("<2d", 1.0, float("nan"))
    hand_built_file(
        path,
        {"bad.layer": {"dtype": "F64", "shape": [2], "data_offsets": [0, 16]}},
        data,
    )
    with pytest.raises(FormatError, match="bad.layer"):
        read_checkpoint(path)


def test_interop_with_reference_library(tmp_path):
    st = pytest.importorskip("safetensors.numpy")
    theirs = tmp_path / "theirs.safetensors"
    arrs = {
        "a.w": np.random.default_rng(0).standard_normal((3, 4)).astype(np.float32),
        "b.w": np.random.default_rng(1).standard_normal((5, 2)),
    }
    st.save_file(arrs, str(theirs), metadata={"who": "library"})
    man = read_checkpoint(theirs)
    assert sorted(man.entries) == ["a.w", "b.w"]
    assert man.metadata == {"who": "library"}
    assert np.array_equal(man["a.w"], arrs["a.w"].astype(np.float64))
    assert np.array_equal(man["b.w"], arrs["b.w"])

    ours = tmp_path / "ours.safetensors"
    mine = CheckpointManifest()
    mine.add("x", np.random.default_rng(2).standard_normal((4, 4)))
    write_checkpoint(mine, ours, dtype="F64")
    assert np.array_equal(st.load_file(str(ours))["x"], mine["x"])


# -- match_layers -----------------------------------------------------------


def manifest_of(**tensors):
    man = CheckpointManifest()
    for name, arr in tensors.items():
        man.add(name, np.asarray(arr, dtype=float))
    return man


def test_match_layers_identity_and_order():
    rng = np.random.default_rng(0)
    man = manifest_of(**{
        "b.w": rng.standard_normal((3, 4)),
        "a.w": rng.standard_normal((4, 4)),
    })
    pairs = match_layers(man, man, "*", 1)
    assert [p.name for p in pairs] == ["a.w", "b.w"]
    for p in pairs:
        assert np.array_equal(p.pre.values, p.post.values)


def test_match_layers_glob_filter():
    man = manifest_of(**{"a.ffn.w": np.ones((2, 2)), "a.attn.w": np.ones((2, 2))})
    pairs = match_layers(man, man, "*.ffn.*", 1)
    assert [p.name for p in pairs] == ["a.ffn.w"]


def test_match_layers_shape_conflict_names_tensor():
    pre = manifest_of(w=np.ones((4, 4)))
    post = manifest_of(w=np.ones((4, 3)))
    with pytest.raises(ShapeMismatchError, match="'w'"):
        match_layers(pre, post, "*", 1)


def test_match_layers_skips_non_rank2_with_warning():
    pre = manifest_of(w=np.ones((3, 3)), bias=np.ones(3))
    with pytest.warns(SkippedTensorWarning, match="bias"):
        pairs = match_layers(pre, pre, "*", 1)
    assert [p.name for p in pairs] == ["w"]


def test_match_layers_min_dim_filters_silently():
    pre = manifest_of(big=np.ones((5, 5)), small=np.ones((5, 2)))
    pairs = match_layers(pre, pre, "*", 3)
    assert [p.name for p in pairs] == ["big"]
