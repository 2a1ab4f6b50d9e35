import json

import numpy as np
import pytest

from grnppg.checkpoint import load_checkpoint, save_checkpoint
from grnppg.errors import IntegrityError
from grnppg.models import MlpConfig, TransformerConfig, build_classifier


@pytest.mark.parametrize("kind,cfg", [
    ("grn-transformer", TransformerConfig(n_layers=1, d_model=8, n_heads=2, ff_hidden=8)),
    ("grn-mlp", MlpConfig(hidden=(12, 12), grn_width=8)),
])
def test_round_trip_is_exact(tmp_path, kind, cfg):
    model = build_classifier(kind, cfg, seed=4)
    save_checkpoint(model, tmp_path / "m", seed=4, metrics={"f1": 0.5})
    back, manifest = load_checkpoint(tmp_path / "m.json")
    assert manifest["model"] == kind and manifest["seed"] == 4 and manifest["metrics"] == {"f1": 0.5}
    assert list(back.params) == list(model.params)
    for k in model.params:
        np.testing.assert_array_equal(back.params[k].data, model.params[k].data)
    X = np.random.default_rng(0).random((3, 256))
    np.testing.assert_array_equal(back.predict_proba(X), model.predict_proba(X))


def test_manifest_index_is_contiguous(tmp_path):
    model = build_classifier("mlp", MlpConfig(hidden=(4,)), seed=0)
    save_checkpoint(model, tmp_path / "m")
    manifest = json.loads((tmp_path / "m.json").read_text())
    offset = 0
    for entry in manifest["params"]:
        assert entry["offset"] == offset
        offset += int(np.prod(entry["shape"]))
    assert offset == manifest["n_values"] == (tmp_path / "m.bin").stat().st_size // 8


def test_saving_twice_gives_identical_bytes(tmp_path):
    model = build_classifier("mlp", MlpConfig(hidden=(4,)), seed=0)
    save_checkpoint(model, tmp_path / "a")
    save_checkpoint(model, tmp_path / "b")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    a = (tmp_path / "a.json").read_text().replace("a.bin", "X")
    b = (tmp_path / "b.json").read_text().replace("b.bin", "X")
    assert a == b


@pytest.mark.parametrize("damage", ["flip", "truncate", "delete"])
def test_damaged_blob_is_rejected(tmp_path, damage):
    model = build_classifier("mlp", MlpConfig(hidden=(4,)), seed=0)
    save_checkpoint(model, tmp_path / "m")
    blob = tmp_path / "m.bin"
    if damage == "flip":
        data = bytearray(blob.read_bytes())
        data[17] ^= 0x01
        blob.write_bytes(bytes(data))
    elif damage == "truncate":
        blob.write_bytes(blob.read_bytes()[:-8])
    else:
        blob.unlink()
    with pytest.raises(IntegrityError):
        load_checkpoint(tmp_path / "m")
