import numpy as np
import pytest

from omnid.tensorgrad import CheckpointError, CounterRng, load_tensors, save_tensors
from omnid.tensorgrad.checkpoint import load_manifest


@pytest.fixture()
def sample(tmp_path):
    rng = CounterRng(1)
    tensors = {
        "ofg.queries": rng.normal((8, 4)).astype("<f4"),
        "ofg.encoder.layers.0.weight": rng.normal((4, 3, 3, 3)).astype("<f8"),
        "diffusion.cond_proj.bias": rng.normal((5,)).astype("<f4"),
    }
    path = tmp_path / "ckpt.omnd"
    save_tensors(path, tensors)
    return path, tensors


def test_bit_exact_round_trip(sample):
    path, tensors = sample
    loaded = load_tensors(path)
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert loaded[name].dtype == tensors[name].dtype
        assert np.array_equal(
            loaded[name].view(np.uint8), tensors[name].view(np.uint8)), name


def test_double_round_trip_identical_bytes(sample, tmp_path):
    path, _ = sample
    loaded = load_tensors(path)
    again = tmp_path / "again.omnd"
    save_tensors(again, loaded)
    assert path.read_bytes() == again.read_bytes()


def test_magic_mismatch_rejected(sample):
    path, _ = sample
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        load_tensors(path)


def test_version_mismatch_rejected(sample):
    path, _ = sample
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_tensors(path)


@pytest.mark.parametrize("offset", [16, 24, 40])
def test_any_header_byte_corruption_rejected(sample, offset):
    path, _ = sample
    blob = bytearray(path.read_bytes())
    blob[offset] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_tensors(path)


def test_truncated_payload_rejected_with_offsets(sample):
    path, _ = sample
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match=r"truncated payload.*\["):
        load_tensors(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="dtype"):
        save_tensors(tmp_path / "x.omnd", {"a": np.zeros(3, dtype=np.int16)})


def test_manifest_carries_meta(tmp_path):
    path = tmp_path / "m.omnd"
    save_tensors(path, {"a": np.zeros(2, dtype=np.float32)}, meta={"task": "demo"})
    manifest = load_manifest(path)
    assert manifest["meta"] == {"task": "demo"}
    _, meta = load_tensors(path, with_meta=True)
    assert meta == {"task": "demo"}


def test_payloads_are_little_endian(sample):
    path, _ = sample
    manifest = load_manifest(path)
    assert all(entry["dtype"].startswith("<") for entry in manifest["tensors"])
