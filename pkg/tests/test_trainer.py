import numpy as np
import pandas as pd
import pytest

import trajformer.trainer as trainer
from trajformer.checkpoint import load_checkpoint
from trajformer.errors import ConfigError, ContractError, NumericError
from trajformer.flow import validate_prediction_document
from trajformer.metrics import min_ade
from trajformer.model import Trajformer
from trajformer.optim import lr_at
from trajformer.trainer import (
    LOSS_CURVE_FILE, TrainConfig, batch_indices, evaluate,
    evaluate_predictions, predict_scene, train, train_with_history)
from tests.conftest import make_scene

OPEN = np.ones((16, 16), dtype=bool)
TINY_RUN = TrainConfig(batch_size=2, total_steps=6, warmup_steps=2,
                       peak_lr=1e-2, k_mc=2, seed=4, model_config="tiny",
                       dtype="float64", log_every=0)


@pytest.fixture(scope="module")
def dataset():
    return [make_scene(2, seed=s, scene_id=f"scene-{s}", mask=OPEN)
            for s in range(3)]


class TestBatching:
    def test_epochs_are_permutations_streamed_in_chunks(self):
        stream = batch_indices(5, 2, seed=1)
        indices = np.concatenate([next(stream) for _ in range(5)])
        assert sorted(indices[:5]) == list(range(5))
        assert sorted(indices[5:10]) == list(range(5))

    def test_same_seed_same_batches(self):
        first, second = batch_indices(7, 3, 2), batch_indices(7, 3, 2)
        for _ in range(4):
            np.testing.assert_array_equal(next(first), next(second))

    def test_large_batches_draw_with_replacement(self):
        batch = next(batch_indices(3, 8, seed=0))
        assert batch.shape == (8,)
        assert batch.min() >= 0 and batch.max() < 3


class TestTraining:
    def test_same_seed_is_reproducible(self, dataset):
        first, history_a = train_with_history(dataset, TINY_RUN)
        second, history_b = train_with_history(dataset, TINY_RUN)
        assert history_a == history_b
        for name, param in first.model.params.items():
            np.testing.assert_array_equal(param.data,
                                          second.model.params[name].data)

    def test_seed_changes_the_run(self, dataset):
        _, history_a = train_with_history(dataset, TINY_RUN)
        _, history_b = train_with_history(dataset, TINY_RUN._replace(seed=5))
        assert history_a != history_b

    def test_loss_curve_and_checkpoint_files(self, dataset, tmp_path):
        ckpt = train(dataset, TINY_RUN, out_dir=tmp_path)
        table = pd.read_csv(tmp_path / LOSS_CURVE_FILE,
                            float_precision="round_trip")
        assert list(table.columns) == ["step", "nll_term", "prior_term",
                                       "total", "lr"]
        assert table["step"].tolist() == list(range(1, 7))
        schedule = TINY_RUN.schedule()
        assert table["lr"].tolist() == [lr_at(schedule, step)
                                        for step in range(1, 7)]
        assert np.all(np.isfinite(table[["nll_term", "prior_term",
                                         "total"]].to_numpy()))
        np.testing.assert_allclose(
            table["total"], table["nll_term"] + 0.5 * table["prior_term"],
            rtol=1e-12)

        loaded = load_checkpoint(tmp_path)
        assert loaded.step == 6
        assert loaded.adam.step == 6
        assert loaded.train_config["model_config"] == "tiny"
        assert loaded.model.count_parameters() == \
            ckpt.model.count_parameters()

    def test_batch_larger_than_dataset(self, dataset):
        _, history = train_with_history(
            dataset[:1], TINY_RUN._replace(batch_size=3, total_steps=3))
        assert [record.step for record in history] == [1, 2, 3]

    def test_empty_dataset(self):
        with pytest.raises(ContractError):
            train([], TINY_RUN)

    def test_invalid_config(self, dataset):
        with pytest.raises(ConfigError):
            train(dataset, TINY_RUN._replace(warmup_steps=6))

    def test_non_finite_loss_names_the_step(self, dataset, monkeypatch):
        real_loss = trainer.total_loss
        calls = []

        def failing_loss(*args, **kwargs):
            calls.append(1)
            if len(calls) == 3:
                raise NumericError("exp produced a non-finite value")
            return real_loss(*args, **kwargs)

        monkeypatch.setattr(trainer, "total_loss", failing_loss)
        with pytest.raises(NumericError, match="training step 3"):
            train(dataset, TINY_RUN)

    @pytest.mark.slow
    def test_overfits_four_scenes(self):
        scenes = [make_scene(2, seed=20 + s, scene_id=f"fit-{s}", mask=OPEN)
                  for s in range(4)]
        cfg = TINY_RUN._replace(batch_size=4, total_steps=500,
                                warmup_steps=25)
        _, history = train_with_history(scenes, cfg)
        first = np.mean([record.nll_term for record in history[:5]])
        last = np.mean([record.nll_term for record in history[-5:]])
        assert last < first - 2.0

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_training_lowers_min_ade(self, seed):
        scenes = [make_scene(2, seed=40 + s, scene_id=f"ade-{s}", mask=OPEN)
                  for s in range(4)]
        cfg = TINY_RUN._replace(batch_size=4, total_steps=300,
                                warmup_steps=20, seed=seed)
        trained = train(scenes, cfg)
        untrained = Trajformer.initialize("tiny", seed=seed,
                                          dtype=np.float64)
        after = evaluate(trained, scenes, k=6, seed=seed).aggregate.min_ade
        before = evaluate(untrained, scenes, k=6, seed=seed).aggregate.min_ade
        assert after < before

    @pytest.mark.slow
    def test_zero_draw_mode_memorizes_training_scenes(self):
        scenes = [make_scene(2, seed=20 + s, scene_id=f"fit-{s}", mask=OPEN)
                  for s in range(4)]
        cfg = TINY_RUN._replace(batch_size=4, total_steps=500,
                                warmup_steps=25)
        model = train(scenes, cfg).model
        horizon = model.spec.flow.future_steps
        for scene in scenes:
            zeros = np.zeros((scene.num_agents, 1, horizon, 2))
            positions = model.sample(scene, 1, 0, z=zeros).positions
            for agent_samples, truth in zip(positions, scene.futures()):
                assert min_ade(agent_samples, truth) < 0.5


class TestPrediction:
    def test_ground_truth_predictions_score_perfectly(self, dataset):
        predictions = [np.repeat(scene.futures()[:, None], 3, axis=1)
                       for scene in dataset]
        report = evaluate_predictions(dataset, predictions)
        assert report.scene_ids == ["scene-0", "scene-1", "scene-2"]
        assert report.aggregate.min_ade == 0.0
        assert report.aggregate.min_fde == 0.0
        assert report.aggregate.dac == 1.0

    def test_prediction_count_mismatch(self, dataset):
        with pytest.raises(ContractError):
            evaluate_predictions(dataset, [])

    def test_prediction_document(self, dataset):
        ckpt = train(dataset, TINY_RUN._replace(total_steps=3))
        document = predict_scene(ckpt, dataset[1], k=4, seed=2)
        validate_prediction_document(document)
        assert document["scene_id"] == "scene-1"
        assert [agent["id"] for agent in document["agents"]] == \
            ["agent-0", "agent-1"]
        assert np.asarray(document["agents"][0]["samples"]).shape == (4, 6, 2)
        again = predict_scene(ckpt.model, dataset[1], k=4, seed=2)
        assert again == document
