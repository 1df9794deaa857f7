"""Checkpoint container round trips."""

import numpy as np
import pytest

from speechlab.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from speechlab.tensor import Tensor


def test_round_trip_values_and_meta(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"enc.w": rng.normal(size=(4, 3)), "enc.b": rng.normal(size=3),
               "head.w": Tensor(rng.normal(size=(3, 5)))}
    meta = {"kind": "asr", "step": 42, "model": {"model_dim": 16}}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors, meta)
    loaded, loaded_meta = load_checkpoint(path)
    assert loaded_meta == meta
    assert set(loaded) == set(tensors)
    for name in tensors:
        want = tensors[name].data if isinstance(tensors[name], Tensor) else tensors[name]
        np.testing.assert_allclose(loaded[name], want.astype(np.float32), rtol=0, atol=0)
        assert loaded[name].dtype == np.float64


def test_payload_is_little_endian_float32(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"w": np.array([1.0, -2.5])}, {})
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    assert np.frombuffer(raw[-8:], dtype="<f4").tolist() == [1.0, -2.5]


def test_non_checkpoint_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(path)


def test_save_is_atomic_no_temp_left(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.zeros(2)}, {"step": 1})
    save_checkpoint(path, {"w": np.ones(2)}, {"step": 2})
    leftovers = [p for p in tmp_path.iterdir() if p.suffix == ".tmp"]
    assert leftovers == []
    loaded, meta = load_checkpoint(path)
    assert meta["step"] == 2
    np.testing.assert_array_equal(loaded["w"], [1.0, 1.0])
