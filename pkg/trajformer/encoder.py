"""
Trajectory encoder.

For every agent and past time step a token is built from three parts:
    e_obs   = token_proj(pose_proj(pose - last_pose))            (t, model_dim)
    e_patch = sum of patch_proj over the p x p sub-patches of the
              m x m raster crop around the agent                (model_dim,)
    pos     = sine-distance encoding of the pose and time index (t, model_dim)
and fused as e_obs * (pos + e_patch). The A * t tokens of a scene attend to
each other jointly (agents and time) through L pre-norm transformer blocks;
the final token of each agent is projected to its D-wide latent code.

Several scenes can be encoded in one pass: their token sets are
concatenated and a block-diagonal attention mask keeps scenes apart.
"""

from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

import trajformer.numerics as num
from trajformer.errors import ContractError, DimensionError
from trajformer.model_specs import EncoderConfig
from trajformer.scene import Pose, Scene, extract_patch

LatentCodes = num.Tensor
MASKED_SCORE = -1e9


class TokenSequence(NamedTuple):
    """Fused tokens with their agent, time and scene indices.

    Tokens are agent-major: token a * t + tau belongs to agent a at past
    step tau.
    """
    tokens: num.Tensor
    agent_index: np.ndarray
    time_index: np.ndarray
    segment: np.ndarray


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

def encoder_parameter_shapes(cfg: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    """Canonical parameter names and shapes, in a fixed order."""
    width = cfg.model_dim
    hidden = cfg.mlp_ratio * width
    flat_patch = cfg.sub_patch * cfg.sub_patch * cfg.channels
    shapes: Dict[str, Tuple[int, ...]] = {
        "encoder.pose_proj.weight": (2, cfg.pose_dim),
        "encoder.pose_proj.bias": (cfg.pose_dim,),
        "encoder.token_proj.weight": (cfg.pose_dim, width),
        "encoder.token_proj.bias": (width,),
        "encoder.patch_proj.weight": (flat_patch, width),
        "encoder.patch_proj.bias": (width,),
    }
    for layer in range(cfg.layers):
        prefix = f"encoder.blocks.{layer}"
        shapes.update({
            f"{prefix}.ln1.gain": (width,),
            f"{prefix}.ln1.bias": (width,),
            f"{prefix}.attn.qkv.weight": (width, 3 * width),
            f"{prefix}.attn.qkv.bias": (3 * width,),
            f"{prefix}.attn.out.weight": (width, width),
            f"{prefix}.attn.out.bias": (width,),
            f"{prefix}.ln2.gain": (width,),
            f"{prefix}.ln2.bias": (width,),
            f"{prefix}.mlp.fc1.weight": (width, hidden),
            f"{prefix}.mlp.fc1.bias": (hidden,),
            f"{prefix}.mlp.fc2.weight": (hidden, width),
            f"{prefix}.mlp.fc2.bias": (width,),
        })
    shapes.update({
        "encoder.final_ln.gain": (width,),
        "encoder.final_ln.bias": (width,),
        "encoder.latent_proj.weight": (width, cfg.latent_dim),
        "encoder.latent_proj.bias": (cfg.latent_dim,),
    })
    return shapes


def initial_value(
    name: str,
    shape: Tuple[int, ...],
    rng: np.random.Generator
) -> np.ndarray:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit gains."""
    if name.endswith(".gain"):
        return np.ones(shape)
    if name.endswith(".bias"):
        return np.zeros(shape)
    bound = 1.0 / np.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------------------
# Embeddings
# --------------------------------------------------------------------------

def project_poses(
    params: Dict[str, num.Tensor],
    past: np.ndarray,
    cfg: EncoderConfig
) -> num.Tensor:
    """(..., t, 2) poses -> (..., t, d), relative to each agent's last pose."""
    past = np.asarray(past)
    if past.shape[-2:] != (cfg.past_steps, 2):
        raise DimensionError(
            f"embed_poses expects (..., {cfg.past_steps}, 2) poses, "
            f"got {past.shape}")
    weight = params["encoder.pose_proj.weight"]
    centered = past - past[..., -1:, :]
    return num.as_tensor(centered, like=weight) @ weight \
        + params["encoder.pose_proj.bias"]


def embed_poses(
    params: Dict[str, num.Tensor],
    past: np.ndarray,
    cfg: EncoderConfig
) -> num.Tensor:
    """(..., t, 2) poses -> (..., t, model_dim) pose embeddings e_obs."""
    projected = project_poses(params, past, cfg)
    return projected @ params["encoder.token_proj.weight"] \
        + params["encoder.token_proj.bias"]


def split_sub_patches(patch: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """(..., m, m, C) -> (..., n_sub, p * p * C), row-major over sub-patches."""
    size, step = cfg.crop, cfg.sub_patch
    if size % step:
        raise DimensionError(
            f"sub_patch p={step} does not divide crop m={size}")
    if patch.shape[-3:] != (size, size, cfg.channels):
        raise DimensionError(
            f"embed_patches expects (..., {size}, {size}, {cfg.channels}) "
            f"patches, got {patch.shape}")
    count = size // step
    lead = patch.shape[:-3]
    blocks = patch.reshape(*lead, count, step, count, step, cfg.channels)
    order = tuple(range(len(lead))) + tuple(
        len(lead) + axis for axis in (0, 2, 1, 3, 4))
    return blocks.transpose(order).reshape(
        *lead, count * count, step * step * cfg.channels)


def embed_patches(
    params: Dict[str, num.Tensor],
    patch: np.ndarray,
    cfg: EncoderConfig
) -> num.Tensor:
    """(..., m, m, C) patch -> (..., n_sub, model_dim) sub-patch embeddings."""
    weight = params["encoder.patch_proj.weight"]
    flat = num.as_tensor(split_sub_patches(np.asarray(patch), cfg),
                         like=weight)
    return flat @ weight + params["encoder.patch_proj.bias"]


def pos_encode_array(
    positions: np.ndarray,
    time_index: np.ndarray,
    cfg: EncoderConfig
) -> np.ndarray:
    """
    Vectorized sine-distance encoding: (..., 2) positions and (...) time
    indices -> (..., model_dim).

    The first half holds (sin, cos) pairs of the distance from the scene
    origin, x and y in turn, each quantity at geometric frequencies
    base^(-k / n). The second half is the standard sinusoidal encoding of
    the time index.
    """
    positions = np.asarray(positions, dtype=np.float64)
    time_index = np.asarray(time_index, dtype=np.float64)
    width = cfg.model_dim
    space_pairs = width // 4
    time_pairs = width // 4
    quantities = np.stack([np.hypot(positions[..., 0], positions[..., 1]),
                           positions[..., 0], positions[..., 1]], axis=-1)
    levels = max(int(np.ceil(space_pairs / 3)), 1)

    encoding = np.zeros(positions.shape[:-1] + (width,))
    for pair in range(space_pairs):
        omega = cfg.pos_base ** (-(pair // 3) / levels)
        angle = quantities[..., pair % 3] * omega
        encoding[..., 2 * pair] = np.sin(angle)
        encoding[..., 2 * pair + 1] = np.cos(angle)
    offset = 2 * space_pairs
    for pair in range(time_pairs):
        omega = cfg.pos_base ** (-2.0 * pair / (width // 2))
        angle = time_index * omega
        encoding[..., offset + 2 * pair] = np.sin(angle)
        encoding[..., offset + 2 * pair + 1] = np.cos(angle)
    return encoding


def pos_encode(position: Pose, time_index: int, cfg: EncoderConfig) \
        -> np.ndarray:
    """Positional encoding of one pose at one past time index."""
    return pos_encode_array(np.array(position), np.array(time_index), cfg)


def fuse(e_obs, e_patch_sum, pos) -> num.Tensor:
    """
    Fused token(s) e_obs * (pos + e_patch_sum).

    Raises:
        DimensionError: If the operand widths differ
    """
    e_obs = num.as_tensor(e_obs)
    e_patch_sum = num.as_tensor(e_patch_sum, like=e_obs)
    pos = num.as_tensor(pos, like=e_obs)
    widths = {e_obs.shape[-1], e_patch_sum.shape[-1], pos.shape[-1]}
    if len(widths) != 1:
        raise DimensionError(
            f"fuse width mismatch: e_obs {e_obs.shape}, patch "
            f"{e_patch_sum.shape}, pos {pos.shape}")
    return e_obs * (pos + e_patch_sum)


def scene_patches(scene: Scene, cfg: EncoderConfig) -> np.ndarray:
    """(A, m, m, C) crops at each agent's last pose, or (A, t, m, m, C)
    crops at every past pose when per-timestep cropping is enabled."""
    if cfg.per_timestep_crops:
        return np.stack([
            np.stack([extract_patch(scene, Pose(*pose), cfg.crop)
                      for pose in track.past])
            for track in scene.tracks])
    return np.stack([extract_patch(scene, Pose(*track.past[-1]), cfg.crop)
                     for track in scene.tracks])


def build_tokens(
    params: Dict[str, num.Tensor],
    scene: Scene,
    cfg: EncoderConfig,
    segment: int = 0
) -> TokenSequence:
    """Fuse pose, patch and positional embeddings into A * t tokens."""
    agents, steps = scene.num_agents, cfg.past_steps
    pasts = scene.pasts()
    e_obs = embed_poses(params, pasts, cfg)
    e_patch = embed_patches(params, scene_patches(scene, cfg), cfg) \
        .sum(axis=-2)
    if not cfg.per_timestep_crops:
        e_patch = e_patch.reshape(agents, 1, cfg.model_dim)
    times = np.broadcast_to(np.arange(steps), (agents, steps))
    pos = pos_encode_array(pasts, times, cfg)
    fused = fuse(e_obs, e_patch, pos)
    return TokenSequence(
        tokens=fused.reshape(agents * steps, cfg.model_dim),
        agent_index=np.repeat(np.arange(agents), steps),
        time_index=np.tile(np.arange(steps), agents),
        segment=np.full(agents * steps, segment))


def concat_tokens(sequences: Sequence[TokenSequence]) -> TokenSequence:
    """Join the token sets of several scenes into one batch."""
    return TokenSequence(
        tokens=num.concat([seq.tokens for seq in sequences], axis=0),
        agent_index=np.concatenate([seq.agent_index for seq in sequences]),
        time_index=np.concatenate([seq.time_index for seq in sequences]),
        segment=np.concatenate([seq.segment for seq in sequences]))


# --------------------------------------------------------------------------
# Transformer
# --------------------------------------------------------------------------

def self_attention(
    x: num.Tensor,
    params: Dict[str, num.Tensor],
    prefix: str,
    heads: int,
    score_bias: Optional[np.ndarray] = None
) -> Tuple[num.Tensor, num.Tensor]:
    """Multi-head self-attention over the rows of x.

    Returns:
        The (N, model_dim) attention output and the (heads, N, N) weights
    """
    count, width = x.shape
    head_dim = width // heads
    qkv = x @ params[f"{prefix}.qkv.weight"] + params[f"{prefix}.qkv.bias"]

    def split(index: int) -> num.Tensor:
        part = qkv[:, index * width:(index + 1) * width]
        return part.reshape(count, heads, head_dim).transpose(1, 0, 2)

    queries, keys, values = split(0), split(1), split(2)
    scores = (queries @ keys.transpose(0, 2, 1)) * (1.0 / np.sqrt(head_dim))
    if score_bias is not None:
        scores = scores + score_bias
    weights = num.softmax(scores, axis=-1)
    context = (weights @ values).transpose(1, 0, 2).reshape(count, width)
    output = context @ params[f"{prefix}.out.weight"] \
        + params[f"{prefix}.out.bias"]
    return output, weights


def _dropout(
    x: num.Tensor,
    rate: float,
    rng: Optional[np.random.Generator]
) -> num.Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def encode(
    params: Dict[str, num.Tensor],
    tokens: TokenSequence,
    cfg: EncoderConfig,
    trace: Optional[List[np.ndarray]] = None,
    dropout_rng: Optional[np.random.Generator] = None
) -> LatentCodes:
    """
    Run the transformer over a token set and read out one code per agent.

    Args:
        params: Encoder parameters by canonical name
        tokens: Tokens of one scene, or of several joined by concat_tokens
        cfg: Encoder configuration
        trace: If given, the attention weights of every layer are appended
        dropout_rng: Enables dropout (training only)

    Returns:
        (agents, D) latent codes, agents ordered as in the token set

    Raises:
        ContractError: If the token set is empty
    """
    x = tokens.tokens
    if x.shape[0] == 0:
        raise ContractError("encode needs at least one token")

    score_bias = None
    if np.unique(tokens.segment).size > 1:
        same = tokens.segment[:, None] == tokens.segment[None, :]
        score_bias = np.where(same, 0.0, MASKED_SCORE).astype(x.dtype)

    for layer in range(cfg.layers):
        prefix = f"encoder.blocks.{layer}"
        normed = num.layer_norm(x, params[f"{prefix}.ln1.gain"],
                                params[f"{prefix}.ln1.bias"])
        attended, weights = self_attention(
            normed, params, f"{prefix}.attn", cfg.heads, score_bias)
        if trace is not None:
            trace.append(weights.data.copy())
        x = x + _dropout(attended, cfg.dropout, dropout_rng)

        normed = num.layer_norm(x, params[f"{prefix}.ln2.gain"],
                                params[f"{prefix}.ln2.bias"])
        hidden = num.gelu(normed @ params[f"{prefix}.mlp.fc1.weight"]
                          + params[f"{prefix}.mlp.fc1.bias"])
        mlp_out = hidden @ params[f"{prefix}.mlp.fc2.weight"] \
            + params[f"{prefix}.mlp.fc2.bias"]
        x = x + _dropout(mlp_out, cfg.dropout, dropout_rng)

    x = num.layer_norm(x, params["encoder.final_ln.gain"],
                       params["encoder.final_ln.bias"])
    readout = np.flatnonzero(tokens.time_index == cfg.past_steps - 1)
    return x[readout] @ params["encoder.latent_proj.weight"] \
        + params["encoder.latent_proj.bias"]


def encode_scenes(
    params: Dict[str, num.Tensor],
    scenes: Sequence[Scene],
    cfg: EncoderConfig,
    dropout_rng: Optional[np.random.Generator] = None
) -> List[LatentCodes]:
    """Encode several scenes in one batched pass; one code block per scene."""
    sequences = [build_tokens(params, scene, cfg, segment=index)
                 for index, scene in enumerate(scenes)]
    codes = encode(params, concat_tokens(sequences), cfg,
                   dropout_rng=dropout_rng)
    blocks = []
    start = 0
    for scene in scenes:
        blocks.append(codes[start:start + scene.num_agents])
        start += scene.num_agents
    return blocks
