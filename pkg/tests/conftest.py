"""Shared fixtures: small hand-built scenes and tiny 64-bit models."""

from typing import Dict, Tuple

import numpy as np
import pytest

import trajformer.numerics as num
from trajformer.encoder import initial_value
from trajformer.flow import flow_parameter_shapes
from trajformer.model import Trajformer
from trajformer.model_specs import FlowConfig, get_model_spec
from trajformer.scene import (
    AgentTrack, BevRaster, DrivableMask, Pose, Scene, build_prior)


def make_scene(
    num_agents: int = 2,
    seed: int = 0,
    grid: int = 16,
    resolution: float = 1.0,
    scene_id: str = "scene-0",
    mask: np.ndarray | None = None,
    past_steps: int = 6,
    future_steps: int = 6
) -> Scene:
    """Agents moving at constant velocity with small jitter, inside the grid."""
    rng = np.random.default_rng(seed)
    extent = grid * resolution
    steps = past_steps + future_steps
    tracks = []
    for agent in range(num_agents):
        start = rng.uniform(0.3 * extent, 0.5 * extent, size=2)
        velocity = rng.uniform(-0.4, 0.4, size=2) * resolution
        poses = start + velocity * np.arange(steps)[:, None] \
            + rng.normal(0.0, 0.02, size=(steps, 2))
        tracks.append(AgentTrack(agent_id=f"agent-{agent}",
                                 past=poses[:past_steps],
                                 future=poses[past_steps:]))
    if mask is None:
        mask = np.zeros((grid, grid), dtype=bool)
        mask[2:-2, 2:-2] = True
    raster = rng.uniform(0.0, 1.0, size=(grid, grid, 3)).astype(np.float32)
    drivable = DrivableMask(np.asarray(mask, dtype=bool))
    return Scene(
        scene_id=scene_id,
        raster=BevRaster(raster, resolution, Pose(0.0, 0.0)),
        mask=drivable,
        prior=build_prior(drivable, 1e-6),
        tracks=tuple(tracks))


def make_flow_params(
    cfg: FlowConfig,
    seed: int = 0,
    scale: float = 1.0
) -> Dict[str, num.Tensor]:
    """64-bit flow parameters with non-zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in flow_parameter_shapes(cfg).items():
        values = initial_value(name, shape, rng) * scale
        if name.endswith("bias"):
            values = rng.normal(0.0, 0.1, size=shape)
        params[name] = num.Tensor(values, dtype=np.float64,
                                  requires_grad=True, name=name)
    return params


@pytest.fixture
def tiny_model() -> Trajformer:
    return Trajformer.initialize(get_model_spec("tiny"), seed=3,
                                 dtype=np.float64)


@pytest.fixture
def scene_pair() -> Tuple[Scene, Scene]:
    return (make_scene(2, seed=1, scene_id="scene-a"),
            make_scene(3, seed=2, scene_id="scene-b"))
