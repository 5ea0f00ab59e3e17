import struct

import numpy as np
import pytest

import megagan.checkpoint as ck
from megagan.checkpoint import Checkpoint, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from megagan.errors import BadMagicError, CheckpointError, ChecksumError, UnsupportedVersionError
from megagan.models import build_discriminator, build_generator
from megagan.training import TrainConfig, TrainState, make_checkpoint, restore_checkpoint


@pytest.fixture
def ckpt():
    G = build_generator(8, width_multiplier=0.125, dtype="float64")
    D = build_discriminator(8, width_multiplier=0.125, dtype="float64")
    state = TrainState.fresh(G, D, TrainConfig())
    state.loss_history.extend([(1, 1.3, 0.7), (2, 1.2, 0.8)])
    return make_checkpoint(G, D, state, {"train": TrainConfig().to_dict()})


def test_save_load_save_byte_identical(ckpt, tmp_path):
    a = save_checkpoint(tmp_path / "a.ganf", ckpt)
    b = save_checkpoint(tmp_path / "b.ganf", load_checkpoint(a))
    assert a.read_bytes() == b.read_bytes()


def test_round_trip_preserves_arrays(ckpt):
    back = from_bytes(to_bytes(ckpt))
    assert back.arrays.keys() == ckpt.arrays.keys()
    for k, v in ckpt.arrays.items():
        assert back.arrays[k].dtype == v.dtype
        np.testing.assert_array_equal(back.arrays[k], v)


def test_mixed_precision_round_trip():
    c = Checkpoint({}, {}, "float32", {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5])})
    back = from_bytes(to_bytes(c))
    assert back.arrays["a"].dtype == np.float32 and back.arrays["a"].shape == (2, 3)
    assert to_bytes(back) == to_bytes(c)


def test_restore_rebuilds_networks(ckpt):
    G, D, state = restore_checkpoint(from_bytes(to_bytes(ckpt)))
    assert G.spec.target_resolution == 8 and D.spec.role == "discriminator"
    assert list(state.loss_history) == [(1, 1.3, 0.7), (2, 1.2, 0.8)]


def test_flipped_payload_byte(ckpt):
    data = bytearray(to_bytes(ckpt))
    data[len(data) // 2] ^= 0x01
    with pytest.raises(ChecksumError):
        from_bytes(bytes(data))


def test_bad_magic(ckpt):
    data = b"PNG!" + to_bytes(ckpt)[4:]
    with pytest.raises(BadMagicError):
        from_bytes(data)
    with pytest.raises(BadMagicError):
        from_bytes(b"GA")


def test_future_version_rejected(ckpt):
    ckpt.version = 2
    with pytest.raises(UnsupportedVersionError, match="version 2"):
        from_bytes(to_bytes(ckpt))


def test_newer_reader_accepts_older_file(ckpt, monkeypatch):
    data = to_bytes(ckpt)
    monkeypatch.setattr(ck, "READER_MAX_VERSION", 2)
    assert from_bytes(data).version == 1


def test_errors_are_distinct():
    kinds = {BadMagicError, ChecksumError, UnsupportedVersionError}
    assert len({k.code for k in kinds}) == 3
    assert all(issubclass(k, CheckpointError) and k("x").exit_code == 3 for k in kinds)


def test_header_layout(ckpt):
    data = to_bytes(ckpt)
    magic, version, hlen = struct.unpack_from("<4sHI", data)
    assert (magic, version) == (b"GANF", 1)
    assert data[10 : 10 + hlen].startswith(b"{")


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ganf")


def test_save_is_atomic(ckpt, tmp_path):
    save_checkpoint(tmp_path / "x.ganf", ckpt)
    assert [p.name for p in tmp_path.iterdir()] == ["x.ganf"]
