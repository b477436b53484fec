"""Tests for the checkpoint container."""

import struct
from collections import OrderedDict

import numpy as np
import pytest

from creagen.checkpoint import MAGIC, Checkpoint, CheckpointError, from_bytes, load, pack_modules, save, to_bytes
from creagen.nets import NetworkSpec, build


def _ckpt(precision="float32"):
    rng = np.random.default_rng(0)
    tensors = OrderedDict([("G.w", rng.standard_normal((3, 4))), ("D.b", rng.standard_normal(5)), ("s", np.array(2.0))])
    return Checkpoint({"G": {"arch": "dcgan"}}, tensors, {"iteration": 7}, precision)


class TestFormat:
    def test_header_layout(self):
        blob = to_bytes(_ckpt())
        assert blob.startswith(MAGIC)
        version, hlen = struct.unpack_from("<II", blob, len(MAGIC))
        assert version == 1
        payload = len(blob) - len(MAGIC) - 8 - hlen
        assert payload == 4 * (12 + 5 + 1)

    def test_byte_exact_round_trip(self):
        blob = to_bytes(_ckpt())
        assert to_bytes(from_bytes(blob)) == blob

    def test_float32_values(self):
        c = _ckpt()
        back = from_bytes(to_bytes(c))
        for k, v in c.tensors.items():
            np.testing.assert_array_equal(back.tensors[k], v.astype(np.float32))
        assert back.meta == {"iteration": 7} and back.specs == c.specs

    def test_float64_lossless(self):
        c = _ckpt("float64")
        back = from_bytes(to_bytes(c))
        for k, v in c.tensors.items():
            np.testing.assert_array_equal(back.tensors[k], v)

    def test_bad_precision(self):
        with pytest.raises(CheckpointError):
            to_bytes(_ckpt("float16"))

    def test_bad_magic(self):
        with pytest.raises(CheckpointError, match="magic"):
            from_bytes(b"NOTACKPT" + bytes(20))

    def test_truncated(self):
        blob = to_bytes(_ckpt())
        with pytest.raises(CheckpointError):
            from_bytes(blob[:-8])

    def test_wrong_version(self):
        blob = bytearray(to_bytes(_ckpt()))
        struct.pack_into("<I", blob, len(MAGIC), 99)
        with pytest.raises(CheckpointError, match="version"):
            from_bytes(bytes(blob))

    def test_group(self):
        g = _ckpt().group("G")
        assert list(g) == ["w"]


class TestDisk:
    def test_save_load(self, tmp_path):
        p = save(tmp_path / "sub" / "a.ckpt", _ckpt())
        assert load(p).meta["iteration"] == 7
        assert not list(tmp_path.glob("sub/*.tmp"))

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load(tmp_path / "none.ckpt")

    def test_network_round_trip(self, tmp_path):
        spec = NetworkSpec(arch="dcgan", size=32, width_scale=1 / 16)
        g = build(spec, 3)
        c = Checkpoint({"G": spec.to_json()}, pack_modules({"G": g}), precision="float64")
        back = load(save(tmp_path / "g.ckpt", c))
        g2 = build(spec, 99)
        g2.load_state_dict(back.group("G"))
        for (n, a), (_, b) in zip(g.state_dict().items(), g2.state_dict().items()):
            assert np.array_equal(a, b), n
