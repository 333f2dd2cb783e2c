import json

import numpy as np
import pytest

from trajformer.checkpoint import (
    MANIFEST_FILE, Checkpoint, load_checkpoint, save_checkpoint)
from trajformer.errors import CheckpointError
from trajformer.model import Trajformer
from trajformer.optim import AdamState, adam_step
from trajformer.trainer import evaluate, predict_scene
from tests.conftest import make_scene


def stepped_checkpoint(config: str = "tiny", dtype=np.float32) -> Checkpoint:
    model = Trajformer.initialize(config, seed=1, dtype=dtype)
    adam = AdamState.for_params(model.params)
    rng = np.random.default_rng(0)
    grads = {name: rng.normal(size=param.shape).astype(param.dtype)
             for name, param in model.params.items()}
    adam_step(adam, model.params, grads, lr=1e-3)
    return Checkpoint(model=model, adam=adam,
                      train_config={"seed": 1, "alpha": 0.5}, step=1)


def directory_bytes(path):
    return {item.name: item.read_bytes() for item in sorted(path.iterdir())}


def rewrite_manifest(path, change):
    manifest_path = path / MANIFEST_FILE
    manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    change(manifest)
    manifest_path.write_text(json.dumps(manifest), encoding='utf-8')


@pytest.fixture
def saved(tmp_path):
    directory = tmp_path / "ckpt"
    save_checkpoint(stepped_checkpoint(), directory)
    return directory


def test_save_load_save_is_byte_identical(tmp_path, saved):
    loaded = load_checkpoint(saved)
    save_checkpoint(loaded, tmp_path / "again")
    assert directory_bytes(saved) == directory_bytes(tmp_path / "again")


def test_loaded_state_matches(saved):
    original = stepped_checkpoint()
    loaded = load_checkpoint(saved)
    assert loaded.step == 1
    assert loaded.train_config == {"seed": 1, "alpha": 0.5}
    assert loaded.model.spec == original.model.spec
    assert loaded.adam.step == 1
    for name, param in original.model.params.items():
        np.testing.assert_array_equal(loaded.model.params[name].data,
                                      param.data)
        np.testing.assert_array_equal(loaded.adam.v[name],
                                      original.adam.v[name])


def test_64_bit_model_keeps_its_precision(tmp_path):
    directory = tmp_path / "ckpt64"
    save_checkpoint(stepped_checkpoint(dtype=np.float64), directory)
    loaded = load_checkpoint(directory)
    assert loaded.model.dtype == np.float64
    save_checkpoint(loaded, tmp_path / "again")
    assert directory_bytes(directory) == directory_bytes(tmp_path / "again")


def test_64_bit_reload_reproduces_predictions_exactly(tmp_path):
    directory = tmp_path / "ckpt64"
    original = stepped_checkpoint(dtype=np.float64)
    save_checkpoint(original, directory)
    manifest = json.loads((directory / MANIFEST_FILE).read_text(
        encoding='utf-8'))
    assert {entry["dtype"] for entry in manifest["tensors"]} == {"float64"}
    loaded = load_checkpoint(directory)
    for name, param in original.model.params.items():
        np.testing.assert_array_equal(loaded.model.params[name].data,
                                      param.data)
    scene = make_scene(2, seed=3, mask=np.ones((16, 16), dtype=bool))
    assert predict_scene(loaded, scene, k=4, seed=9) == \
        predict_scene(original, scene, k=4, seed=9)


def test_unsupported_tensor_dtype(saved):
    def change(manifest):
        manifest["tensors"][0]["dtype"] = "float16"
    rewrite_manifest(saved, change)
    with pytest.raises(CheckpointError, match="float16"):
        load_checkpoint(saved)


def test_reloaded_model_evaluates_identically(saved):
    scenes = [make_scene(2, seed=s, scene_id=f"s{s}",
                         mask=np.ones((16, 16), dtype=bool))
              for s in range(2)]
    before = evaluate(stepped_checkpoint(), scenes, k=3, seed=5)
    after = evaluate(load_checkpoint(saved), scenes, k=3, seed=5)
    assert before == after


def test_loaded_moments_are_writable(saved):
    loaded = load_checkpoint(saved)
    grads = {name: np.ones(param.shape, param.dtype)
             for name, param in loaded.model.params.items()}
    adam_step(loaded.adam, loaded.model.params, grads, lr=1e-3)
    assert loaded.adam.step == 2


def test_truncated_tensor_names_the_tensor(saved):
    target = saved / "flow.head.fc2.weight.bin"
    target.write_bytes(target.read_bytes()[:-4])
    with pytest.raises(CheckpointError,
                       match=r"Shape drift for tensor 'flow\.head\.fc2\.weight'"):
        load_checkpoint(saved)


def test_manifest_shape_drift_names_the_tensor(saved):
    def change(manifest):
        for entry in manifest["tensors"]:
            if entry["name"] == "encoder.latent_proj.bias":
                entry["shape"] = [2, 4]
    rewrite_manifest(saved, change)
    with pytest.raises(CheckpointError, match="encoder.latent_proj.bias"):
        load_checkpoint(saved)


def test_version_mismatch_names_both_versions(saved):
    rewrite_manifest(saved, lambda manifest: manifest.update(version=2))
    with pytest.raises(CheckpointError, match=r"version 2 .*expected 1"):
        load_checkpoint(saved)


def test_missing_tensor(saved):
    def change(manifest):
        manifest["tensors"] = [entry for entry in manifest["tensors"]
                               if entry["name"] != "flow.gru.reset.bias"]
    rewrite_manifest(saved, change)
    with pytest.raises(CheckpointError, match="Missing tensor: flow.gru"):
        load_checkpoint(saved)


def test_missing_moment(saved):
    def change(manifest):
        manifest["tensors"] = [entry for entry in manifest["tensors"]
                               if entry["name"] != "adam.m.flow.gru.reset.bias"]
    rewrite_manifest(saved, change)
    with pytest.raises(CheckpointError, match="adam.m.flow.gru.reset.bias"):
        load_checkpoint(saved)


def test_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError, match=MANIFEST_FILE):
        load_checkpoint(tmp_path)


def test_unparseable_manifest(saved):
    (saved / MANIFEST_FILE).write_text("{", encoding='utf-8')
    with pytest.raises(CheckpointError, match="line 1"):
        load_checkpoint(saved)


def test_deeper_model_writes_a_larger_checkpoint(tmp_path):
    sizes = {}
    for config in ("tf12-ref", "tf24-ref"):
        model = Trajformer.initialize(config, seed=0)
        save_checkpoint(Checkpoint(model=model,
                                   adam=AdamState.for_params(model.params)),
                        tmp_path / config)
        sizes[config] = sum(item.stat().st_size
                            for item in (tmp_path / config).iterdir())
    assert sizes["tf24-ref"] > sizes["tf12-ref"]
