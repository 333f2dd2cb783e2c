"""
Parameter store tying the encoder and the flow decoder together.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import trajformer.numerics as num
from trajformer.encoder import (
    LatentCodes, encode_scenes, encoder_parameter_shapes, initial_value)
from trajformer.errors import CheckpointError
from trajformer.flow import (
    TrajectorySamples, flow_parameter_shapes, sample, trajectory_log_probs)
from trajformer.model_specs import ModelSpec, get_model_spec
from trajformer.scene import Scene
from trajformer.seeding import substream


def parameter_shapes(spec: ModelSpec) -> Dict[str, Tuple[int, ...]]:
    """Canonical names and shapes of every trainable tensor."""
    shapes = encoder_parameter_shapes(spec.encoder)
    shapes.update(flow_parameter_shapes(spec.flow))
    return shapes


def count_parameters(spec: ModelSpec | str) -> int:
    """Total trainable parameter count of a configuration."""
    if isinstance(spec, str):
        spec = get_model_spec(spec)
    return int(sum(np.prod(shape) for shape in parameter_shapes(spec).values()))


@dataclass
class Trajformer:
    """Encoder and flow weights for one named configuration.

    Attributes:
        spec: Model configuration
        params: Trainable tensors by canonical name
    """
    spec: ModelSpec
    params: Dict[str, num.Tensor] = field(default_factory=dict)

    @classmethod
    def initialize(
        cls,
        spec: ModelSpec | str,
        seed: int,
        dtype=np.float32
    ) -> "Trajformer":
        """
        Fresh weights; each tensor draws from its own ("init", name)
        substream of `seed`.
        """
        if isinstance(spec, str):
            spec = get_model_spec(spec)
        params = {}
        for name, shape in parameter_shapes(spec).items():
            values = initial_value(name, shape, substream(seed, "init", name))
            params[name] = num.Tensor(values, dtype=dtype,
                                      requires_grad=True, name=name)
        return cls(spec=spec, params=params)

    @classmethod
    def from_arrays(
        cls,
        spec: ModelSpec,
        arrays: Dict[str, np.ndarray],
        dtype=np.float32
    ) -> "Trajformer":
        """
        Wrap stored arrays, checking names and shapes against the spec.

        Raises:
            CheckpointError: On a missing tensor or a shape that drifted
                from the configuration
        """
        params = {}
        for name, shape in parameter_shapes(spec).items():
            if name not in arrays:
                raise CheckpointError(f"Missing tensor: {name}")
            values = np.asarray(arrays[name])
            if values.shape != shape:
                raise CheckpointError(
                    f"Shape drift for tensor '{name}': stored "
                    f"{values.shape}, configuration expects {shape}")
            params[name] = num.Tensor(values, dtype=dtype,
                                      requires_grad=True, name=name)
        return cls(spec=spec, params=params)

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def count_parameters(self) -> int:
        return int(sum(param.size for param in self.params.values()))

    def leaves(self) -> List[num.Tensor]:
        return list(self.params.values())

    def encode(
        self,
        scenes: Sequence[Scene],
        dropout_rng: Optional[np.random.Generator] = None
    ) -> List[LatentCodes]:
        """One (A, D) latent-code block per scene, encoded in one pass."""
        return encode_scenes(self.params, scenes, self.spec.encoder,
                             dropout_rng=dropout_rng)

    def log_probs(self, scene: Scene, codes: LatentCodes) -> num.Tensor:
        """(A,) teacher-forced log-density of the scene's ground truth."""
        return trajectory_log_probs(self.params, self.spec.flow, codes,
                                    scene.pasts(), scene.futures())

    def sample(
        self,
        scene: Scene,
        k: int,
        seed: int,
        z: Optional[np.ndarray] = None
    ) -> TrajectorySamples:
        """k future hypotheses for every agent of `scene`."""
        codes = self.encode([scene])[0]
        return sample(self.params, self.spec.flow, codes, scene.pasts(), k,
                      seed, scene_key=scene.scene_id, z=z)
