import json
import struct

import numpy as np
import pytest

from urlknet import FormatError, Tensor4, build_model, build_named, forward, merge_for_deploy, model_astype
from urlknet.container import (
    MAGIC,
    load_model,
    load_tensor,
    read_container,
    save_model,
    save_tensor,
    write_container,
)
from urlknet.model import ArchConfig, iter_state

TOY = ArchConfig(depths=(1, 1, 1, 1), width=8, stage3_lark=1, stage3_smak=0,
                 num_classes=10)


def state_dict(model):
    return {name: arr for name, arr in iter_state(model)}


class TestRoundTrip:
    def test_model_roundtrip_bitwise(self, tmp_path):
        model = build_named("A", seed=3)
        path = tmp_path / "a.urlk"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.name == "A" and loaded.mode == "train-structure"
        original = state_dict(model)
        restored = state_dict(loaded)
        assert original.keys() == restored.keys()
        for name in original:
            np.testing.assert_array_equal(original[name], restored[name], err_msg=name)

    def test_merged_f32_roundtrip(self, tmp_path):
        model = model_astype(merge_for_deploy(build_named("A", seed=0)), np.float32)
        path = tmp_path / "a32.urlk"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.mode == "merged"
        assert loaded.dtype == np.float32
        for (n1, a1), (n2, a2) in zip(iter_state(model), iter_state(loaded)):
            assert n1 == n2 and a1.dtype == a2.dtype
            np.testing.assert_array_equal(a1, a2)

    def test_forward_after_roundtrip_is_bitwise_equal(self, tmp_path):
        model = build_named("A", seed=1)
        path = tmp_path / "w.urlk"
        save_model(path, model)
        loaded = load_model(path)
        x = Tensor4(np.random.default_rng(9).standard_normal((1, 3, 64, 64)))
        np.testing.assert_array_equal(forward(loaded, x), forward(model, x))

    def test_single_tensor_roundtrip(self, tmp_path):
        arr = np.random.default_rng(0).standard_normal((2, 3, 4, 5)).astype(np.float32)
        path = tmp_path / "t.urlk"
        save_tensor(path, "embedding", arr)
        name, back = load_tensor(path)
        assert name == "embedding"
        np.testing.assert_array_equal(back, arr)

    def test_manifest_contents(self, tmp_path):
        model = build_model(TOY, seed=0, name="custom")
        path = tmp_path / "toy.urlk"
        save_model(path, model)
        manifest, tensors = read_container(path)
        assert manifest["format_version"] == 1
        assert manifest["model_name"] == "custom"
        assert manifest["mode"] == "train-structure"
        assert len(manifest["tensors"]) == len(tensors)
        entry = manifest["tensors"][0]
        assert set(entry) == {"name", "shape", "dtype", "byte_offset", "byte_length"}
        # contiguous, no padding
        offset = 0
        for e in manifest["tensors"]:
            assert e["byte_offset"] == offset
            offset += e["byte_length"]


class TestMalformedFiles:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.urlk"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            read_container(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.urlk"
        save_tensor(path, "x", np.ones((4, 4)))
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(FormatError):
            read_container(path)

    def test_truncated_manifest(self, tmp_path):
        path = tmp_path / "tm.urlk"
        path.write_bytes(MAGIC + struct.pack("<I", 9999) + b"{}")
        with pytest.raises(FormatError, match="manifest"):
            read_container(path)

    def test_noncontiguous_offsets(self, tmp_path):
        manifest = json.dumps({
            "format_version": 1, "model_name": "", "mode": "data",
            "tensors": [{"name": "x", "shape": [2], "dtype": "f64",
                         "byte_offset": 8, "byte_length": 16}],
        }).encode()
        path = tmp_path / "gap.urlk"
        path.write_bytes(MAGIC + struct.pack("<I", len(manifest)) + manifest + b"\x00" * 24)
        with pytest.raises(FormatError, match="contiguous"):
            read_container(path)

    def test_shape_mismatch_vs_manifest(self, tmp_path):
        model = build_model(TOY, seed=0, name="custom-toy")
        arrays = state_dict(model)
        arrays["head.fc.bias"] = np.zeros(11)
        path = tmp_path / "shape.urlk"
        write_container(path, list(arrays.items()), model_name="A", mode="train-structure")
        with pytest.raises(FormatError):
            load_model(path)

    def test_missing_tensor(self, tmp_path):
        model = build_named("A", seed=0)
        arrays = state_dict(model)
        arrays.pop("head.fc.weight")
        path = tmp_path / "missing.urlk"
        write_container(path, list(arrays.items()), model_name="A", mode="train-structure")
        with pytest.raises(FormatError):
            load_model(path)

    def test_extra_tensor_rejected(self, tmp_path):
        model = build_named("A", seed=0)
        arrays = state_dict(model)
        arrays["stage9.block0.mystery"] = np.zeros(3)
        path = tmp_path / "extra.urlk"
        write_container(path, list(arrays.items()), model_name="A", mode="train-structure")
        with pytest.raises(FormatError, match="unexpected"):
            load_model(path)

    def test_unknown_model_name(self, tmp_path):
        path = tmp_path / "who.urlk"
        model = build_named("A", seed=0)
        write_container(path, list(iter_state(model)), model_name="Q", mode="train-structure")
        with pytest.raises(FormatError, match="unknown model"):
            load_model(path)

    def test_unknown_mode(self, tmp_path):
        path = tmp_path / "mode.urlk"
        model = build_named("A", seed=0)
        write_container(path, list(iter_state(model)), model_name="A", mode="eval")
        with pytest.raises(FormatError, match="mode"):
            load_model(path)


class TestCustomChannels:
    def test_audio_configured_model_roundtrip(self, tmp_path):
        model = build_named("A", seed=0, in_channels=1, num_classes=35)
        path = tmp_path / "audio.urlk"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.config.in_channels == 1
        assert loaded.config.num_classes == 35
        x = Tensor4(np.random.default_rng(4).standard_normal((1, 1, 128, 64)))
        np.testing.assert_array_equal(forward(loaded, x), forward(model, x))
