"""Checkpoint binary format: roundtrip, ordering, corruption detection."""

import numpy as np
import numpy.testing as npt
import pytest

from vtfpar.errors import DataError
from vtfpar.params import (CHECKPOINT_MAGIC, ParameterSet, load_checkpoint,
                           read_checkpoint_arrays, save_checkpoint)


def _pset(seed=0):
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    params.add("b.second", rng.normal(size=(3, 4)).astype(np.float32))
    params.add("a.first", rng.normal(size=(5,)).astype(np.float32))
    params.add("c.third", rng.normal(size=(2, 2, 2)).astype(np.float32), trainable=False)
    return params


def test_roundtrip_bitwise(tmp_path):
    params = _pset()
    path = tmp_path / "m.ckpt"
    save_checkpoint(params, path)
    fresh = _pset(seed=99)
    load_checkpoint(fresh, path)
    for p in params:
        npt.assert_array_equal(fresh[p.name].data, p.data)


def test_load_preserves_trainability(tmp_path):
    params = _pset()
    path = tmp_path / "m.ckpt"
    save_checkpoint(params, path)
    fresh = _pset()
    load_checkpoint(fresh, path)
    assert not fresh["c.third"].trainable
    assert fresh["a.first"].trainable


def test_header_and_sorted_name_order(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(_pset(), path)
    blob = path.read_bytes()
    assert blob.startswith(CHECKPOINT_MAGIC)
    names = list(read_checkpoint_arrays(path))
    assert names == sorted(names)
    assert blob.index(b"a.first") < blob.index(b"b.second") < blob.index(b"c.third")


def test_write_is_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(_pset(), p1)
    save_checkpoint(_pset(), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_crc_corruption_detected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(_pset(), path)
    blob = bytearray(path.read_bytes())
    blob[len(CHECKPOINT_MAGIC) + 10] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="CRC32"):
        read_checkpoint_arrays(path)


def test_bad_magic_detected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(_pset(), path)
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="magic"):
        read_checkpoint_arrays(path)


def test_truncation_detected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(_pset(), path)
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(DataError):
        read_checkpoint_arrays(path)


def test_name_mismatch_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(_pset(), path)
    other = ParameterSet()
    other.add("different", np.zeros(3, dtype=np.float32))
    with pytest.raises(DataError, match="names"):
        load_checkpoint(other, path)


def test_shape_mismatch_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(_pset(), path)
    other = ParameterSet()
    other.add("a.first", np.zeros(6, dtype=np.float32))
    other.add("b.second", np.zeros((3, 4), dtype=np.float32))
    other.add("c.third", np.zeros((2, 2, 2), dtype=np.float32))
    with pytest.raises(DataError, match="a.first"):
        load_checkpoint(other, path)


def test_float64_models_store_float32(tmp_path):
    params = ParameterSet()
    value = np.array([1.0 + 1e-12], dtype=np.float64)  # below f32 resolution
    params.add("w", value)
    path = tmp_path / "m.ckpt"
    save_checkpoint(params, path)
    stored = read_checkpoint_arrays(path)["w"]
    assert stored.dtype == np.float32
    assert stored[0] == np.float32(1.0)


def test_duplicate_parameter_names_rejected():
    params = ParameterSet()
    params.add("w", np.zeros(1))
    with pytest.raises(ValueError):
        params.add("w", np.zeros(1))
