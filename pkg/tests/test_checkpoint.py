import struct

import numpy as np
import pytest

from histoswin.checkpoint import (
    MAGIC,
    checkpoint_hash,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from histoswin.errors import CheckpointError
from histoswin.model import HybridModelConfig, model_init


@pytest.fixture
def saved(tmp_path):
    cfg = HybridModelConfig(seed=7)
    params = model_init(cfg)
    params["head.bias"][0] = np.float32(np.nextafter(np.float32(0), np.float32(1)))  # subnormal survives
    path = save_checkpoint(tmp_path / "m.ckpt", params, cfg)
    return path, params, cfg


def test_round_trip_bit_exact(saved):
    path, params, cfg = saved
    loaded, lcfg = load_checkpoint(path)
    assert lcfg == cfg
    assert list(loaded) == list(params)
    for k in params:
        assert loaded[k].dtype == np.float32
        assert loaded[k].tobytes() == params[k].tobytes()


def test_header_layout(saved):
    path, params, _ = saved
    buf = path.read_bytes()
    assert buf[:4] == MAGIC
    assert struct.unpack("<II", buf[4:12]) == (1, len(params))
    (nlen,) = struct.unpack("<H", buf[12:14])
    assert buf[14:14 + nlen].decode() == next(iter(params))


def test_bad_magic(saved):
    path = saved[0]
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_version(saved):
    path = saved[0]
    buf = bytearray(path.read_bytes())
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(CheckpointError, match="unsupported version"):
        decode_checkpoint(bytes(buf))


@pytest.mark.parametrize("cut", [3, 10, 200, -5])
def test_truncated(saved, cut):
    buf = saved[0].read_bytes()
    with pytest.raises(CheckpointError):
        decode_checkpoint(buf[:cut])


def test_trailing_bytes(saved):
    with pytest.raises(CheckpointError):
        decode_checkpoint(saved[0].read_bytes() + b"\0")


def test_class_count_mismatch_names_tensor(saved):
    with pytest.raises(CheckpointError, match="config mismatch.*head.weight"):
        load_checkpoint(saved[0], HybridModelConfig(num_classes=3))


def test_missing_tensor():
    cfg = HybridModelConfig()
    params = model_init(cfg)
    del params["embed.bias"]
    with pytest.raises(CheckpointError, match="embed.bias"):
        decode_checkpoint(encode_checkpoint(params, cfg))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_hash_stable(saved):
    path, params, cfg = saved
    other = save_checkpoint(path.with_name("b.ckpt"), params, cfg)
    assert checkpoint_hash(path) == checkpoint_hash(other)
    assert len(checkpoint_hash(path)) == 64
