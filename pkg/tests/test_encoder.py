import numpy as np
import pytest

import trajformer.numerics as num
from trajformer.encoder import (
    build_tokens, embed_patches, embed_poses, encode, encode_scenes,
    encoder_parameter_shapes, fuse, pos_encode, pos_encode_array,
    project_poses, split_sub_patches)
from trajformer.errors import ConfigError, DimensionError
from trajformer.model_specs import EncoderConfig, get_model_spec
from trajformer.scene import Pose, Scene
from tests.conftest import make_scene

TINY = get_model_spec("tiny").encoder


def params_for(cfg: EncoderConfig, seed: int = 0, zero_bias: bool = False):
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in encoder_parameter_shapes(cfg).items():
        values = rng.normal(0.0, 0.3, size=shape)
        if zero_bias and name.endswith("bias"):
            values = np.zeros(shape)
        params[name] = num.Tensor(values, np.float64, requires_grad=True)
    return params


def reference_single_block(params, tokens: np.ndarray, cfg: EncoderConfig):
    """One pre-norm block with one head, written out in plain numpy."""
    p = {name: tensor.data for name, tensor in params.items()}

    def norm(x, name):
        centered = x - x.mean(axis=-1, keepdims=True)
        scale = np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + 1e-5)
        return centered / scale * p[f"{name}.gain"] + p[f"{name}.bias"]

    width = cfg.model_dim
    block = "encoder.blocks.0"
    qkv = norm(tokens, f"{block}.ln1") @ p[f"{block}.attn.qkv.weight"] \
        + p[f"{block}.attn.qkv.bias"]
    q, k, v = qkv[:, :width], qkv[:, width:2 * width], qkv[:, 2 * width:]
    scores = q @ k.T / np.sqrt(width)
    weights = np.exp(scores - scores.max(axis=-1, keepdims=True))
    weights /= weights.sum(axis=-1, keepdims=True)
    x = tokens + (weights @ v) @ p[f"{block}.attn.out.weight"] \
        + p[f"{block}.attn.out.bias"]
    u = norm(x, f"{block}.ln2") @ p[f"{block}.mlp.fc1.weight"] \
        + p[f"{block}.mlp.fc1.bias"]
    hidden = 0.5 * u * (1.0 + np.tanh(np.sqrt(2.0 / np.pi)
                                      * (u + 0.044715 * u ** 3)))
    x = x + hidden @ p[f"{block}.mlp.fc2.weight"] + p[f"{block}.mlp.fc2.bias"]
    x = norm(x, "encoder.final_ln")
    last = x[cfg.past_steps - 1::cfg.past_steps]
    return last @ p["encoder.latent_proj.weight"] \
        + p["encoder.latent_proj.bias"]


class TestEmbeddings:
    def test_pose_projection_width(self):
        cfg = EncoderConfig()
        params = {name: num.Tensor(np.zeros(shape))
                  for name, shape in encoder_parameter_shapes(cfg).items()
                  if name.startswith("encoder.pose_proj")}
        past = np.cumsum(np.ones((6, 2)), axis=0)
        assert project_poses(params, past, cfg).shape == (6, 1024)

    def test_stationary_agent_with_zero_bias_embeds_to_zero(self):
        params = params_for(TINY, zero_bias=True)
        out = embed_poses(params, np.full((6, 2), 4.2), TINY)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_wrong_step_count(self):
        with pytest.raises(DimensionError):
            embed_poses(params_for(TINY), np.zeros((5, 2)), TINY)

    def test_one_sub_patch_for_equal_sizes(self):
        cfg = EncoderConfig(crop=16, sub_patch=16)
        assert split_sub_patches(np.zeros((16, 16, 3)), cfg).shape == \
            (1, 768)

    def test_four_sub_patches_for_double_crop(self):
        cfg = EncoderConfig(crop=32, sub_patch=16)
        patch = np.arange(32 * 32 * 3, dtype=float).reshape(32, 32, 3)
        flat = split_sub_patches(patch, cfg)
        assert flat.shape == (4, 16 * 16 * 3)
        np.testing.assert_array_equal(flat[1], patch[:16, 16:].reshape(-1))
        np.testing.assert_array_equal(flat[2], patch[16:, :16].reshape(-1))

    def test_zero_patch_with_zero_bias_embeds_to_zero(self):
        out = embed_patches(params_for(TINY, zero_bias=True),
                            np.zeros((4, 4, 3)), TINY)
        assert out.shape == (1, TINY.model_dim)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_sub_patch_must_divide_crop(self):
        with pytest.raises(ConfigError, match="does not divide"):
            EncoderConfig(crop=16, sub_patch=5).validate()

    def test_pose_projection_gradcheck(self):
        params = params_for(TINY, seed=1)
        past = np.random.default_rng(2).normal(size=(3, 6, 2))
        weights = np.random.default_rng(3).normal(size=(3, 6, TINY.model_dim))
        leaves = [params[name] for name in
                  ("encoder.pose_proj.weight", "encoder.pose_proj.bias",
                   "encoder.token_proj.weight")]
        error = num.gradcheck(
            lambda: (embed_poses(params, past, TINY) * weights).sum(), leaves)
        assert error <= 1e-4


class TestPositionalEncoding:
    def test_origin_at_time_zero_alternates(self):
        out = pos_encode(Pose(0.0, 0.0), 0, TINY)
        np.testing.assert_array_equal(out[0::2], 0.0)
        np.testing.assert_array_equal(out[1::2], 1.0)

    def test_deterministic_and_position_sensitive(self):
        first = pos_encode(Pose(3.0, -1.0), 2, TINY)
        np.testing.assert_array_equal(first, pos_encode(Pose(3.0, -1.0), 2,
                                                        TINY))
        assert not np.allclose(first, pos_encode(Pose(3.0, 1.0), 2, TINY))
        assert not np.allclose(first, pos_encode(Pose(3.0, -1.0), 3, TINY))

    @pytest.mark.parametrize("cfg", [TINY, EncoderConfig()])
    def test_grid_positions_are_distinct(self, cfg):
        cells = np.stack(np.meshgrid(np.arange(32.0), np.arange(32.0),
                                     indexing="ij"), axis=-1).reshape(-1, 2)
        codes = pos_encode_array(cells, np.full(len(cells), 5), cfg)
        gaps = np.linalg.norm(codes[:, None, :] - codes[None, :, :], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        assert gaps.min() > 0.0

    def test_width_below_three_quantities_is_rejected(self):
        with pytest.raises(ConfigError, match="model_dim 8"):
            TINY._replace(model_dim=8).validate()

    def test_fuse_width_mismatch(self):
        with pytest.raises(DimensionError):
            fuse(np.ones((6, 8)), np.ones((1, 4)), np.ones((6, 8)))

    def test_fuse_is_hadamard(self):
        e_obs = np.full((2, 4), 2.0)
        out = fuse(e_obs, np.ones((1, 4)), np.full((2, 4), 0.5))
        np.testing.assert_allclose(out.data, 3.0)


def permuted(scene: Scene, order) -> Scene:
    return scene._replace(tracks=tuple(scene.tracks[i] for i in order))


class TestEncoder:
    @pytest.mark.parametrize("agents", [2, 3, 4, 5, 6])
    def test_agent_permutation_equivariance(self, tiny_model, agents):
        rng = np.random.default_rng(agents)
        for trial in range(4):
            scene = make_scene(agents, seed=100 * agents + trial)
            order = rng.permutation(agents)
            codes = tiny_model.encode([scene])[0].data
            shuffled = tiny_model.encode([permuted(scene, order)])[0].data
            np.testing.assert_allclose(shuffled, codes[order], atol=1e-6)

    def test_single_block_matches_plain_numpy(self):
        cfg = TINY._replace(heads=1, layers=1)
        params = params_for(cfg, seed=7)
        scene = make_scene(3, seed=13)
        tokens = build_tokens(params, scene, cfg)
        codes = encode(params, tokens, cfg)
        expected = reference_single_block(params, tokens.tokens.data, cfg)
        np.testing.assert_allclose(codes.data, expected, rtol=1e-10,
                                   atol=1e-12)

    @pytest.mark.slow
    def test_permutation_equivariance_over_many_scenes(self, tiny_model):
        rng = np.random.default_rng(2024)
        for trial in range(100):
            agents = int(rng.integers(2, 7))
            scene = make_scene(agents, seed=5000 + trial)
            order = rng.permutation(agents)
            codes = tiny_model.encode([scene])[0].data
            shuffled = tiny_model.encode([permuted(scene, order)])[0].data
            np.testing.assert_allclose(shuffled, codes[order], atol=1e-6)

    def test_batched_scenes_match_separate_passes(self, tiny_model,
                                                  scene_pair):
        together = tiny_model.encode(list(scene_pair))
        for scene, block in zip(scene_pair, together):
            alone = tiny_model.encode([scene])[0]
            np.testing.assert_allclose(block.data, alone.data, atol=1e-9)

    def test_code_shape_and_attention_trace(self, tiny_model, scene_pair):
        scene = scene_pair[1]
        tokens = build_tokens(tiny_model.params, scene, TINY)
        trace = []
        codes = encode(tiny_model.params, tokens, TINY, trace=trace)
        assert codes.shape == (3, TINY.latent_dim)
        assert len(trace) == TINY.layers
        weights = trace[0]
        assert weights.shape == (TINY.heads, 18, 18)
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-9)

    def test_other_agents_influence_codes(self, tiny_model):
        scene = make_scene(2, seed=9)
        alone = scene._replace(tracks=scene.tracks[:1])
        with_neighbor = tiny_model.encode([scene])[0].data[0]
        solo = tiny_model.encode([alone])[0].data[0]
        assert not np.allclose(with_neighbor, solo)

    def test_per_timestep_crops(self, tiny_model):
        cfg = TINY._replace(per_timestep_crops=True)
        scene = make_scene(2, seed=5)
        codes = encode_scenes(tiny_model.params, [scene], cfg)[0]
        assert codes.shape == (2, TINY.latent_dim)

    def test_encoder_gradcheck(self, tiny_model):
        scene = make_scene(2, seed=11)
        weights = np.random.default_rng(0).normal(size=(2, TINY.latent_dim))
        leaves = [param for name, param in tiny_model.params.items()
                  if name.startswith("encoder.")]
        error = num.gradcheck(
            lambda: (tiny_model.encode([scene])[0] * weights).sum(), leaves)
        assert error <= 1e-4


def test_reference_parameter_totals():
    from trajformer.model import count_parameters
    assert count_parameters("tf12-ref") == 159_045
    assert count_parameters("tf24-ref") == 198_405
    assert abs(count_parameters("tf12-ref") - 164_000) <= 16_400
    assert abs(count_parameters("tf24-ref") - 192_000) <= 19_200
