"""
Model configuration records and the table of named configurations.

The reference configurations keep the trajectory projection width d=1024,
crop size m=16 and latent width D=256, and shrink the transformer width so
that the trainable parameter totals land near the reported model sizes:

    tf12-ref       12 layers, width 16   ->  159,045 parameters
    tf24-ref       24 layers, width 16   ->  198,405 parameters
    paper-default  12 layers, width 256  ->  far above either budget
    tiny           1 layer, width 12     ->  unit tests and overfit runs
"""

from typing import Dict, Final, NamedTuple

from trajformer.errors import ConfigError

# Position half holds one (sin, cos) pair each for distance, x and y
MIN_MODEL_DIM: Final = 12


class EncoderConfig(NamedTuple):
    """Hyperparameters of the trajectory encoder.

    Attributes:
        pose_dim: Width d of the single-layer pose projection
        model_dim: Transformer token width
        heads: Attention heads per block
        layers: Number L of pre-norm transformer blocks
        latent_dim: Width D of the per-agent latent code
        sub_patch: Sub-patch size p fed to the patch projection
        crop: Crop size m of the per-agent raster patch
        channels: Raster channels C
        mlp_ratio: Hidden width of the MLP block, as a multiple of model_dim
        dropout: Dropout rate applied to block outputs while training
        past_steps: Observed steps t per agent
        per_timestep_crops: Crop at every past pose instead of only the
            most recent one
        pos_base: Base of the geometric frequency ladder of the positional
            encoding
    """
    pose_dim: int = 1024
    model_dim: int = 16
    heads: int = 2
    layers: int = 12
    latent_dim: int = 256
    sub_patch: int = 16
    crop: int = 16
    channels: int = 3
    mlp_ratio: int = 4
    dropout: float = 0.0
    past_steps: int = 6
    per_timestep_crops: bool = False
    pos_base: float = 10000.0

    def validate(self) -> "EncoderConfig":
        """Raise ConfigError on an inconsistent configuration."""
        if self.model_dim % self.heads:
            raise ConfigError(
                f"model_dim {self.model_dim} is not divisible by heads "
                f"{self.heads}")
        if self.model_dim % 4 or self.model_dim < MIN_MODEL_DIM:
            raise ConfigError(
                f"model_dim {self.model_dim} must be a multiple of 4 and "
                f">= {MIN_MODEL_DIM}")
        if self.layers < 1 or self.latent_dim < 1 or self.pose_dim < 1:
            raise ConfigError("layers, latent_dim and pose_dim must be >= 1")
        if self.crop < 2 or self.crop % 2:
            raise ConfigError(f"crop m must be even and >= 2, got {self.crop}")
        if self.sub_patch < 1 or self.crop % self.sub_patch:
            raise ConfigError(
                f"sub_patch p={self.sub_patch} does not divide crop "
                f"m={self.crop}")
        if self.past_steps < 2:
            raise ConfigError("past_steps must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        return self

    @property
    def num_sub_patches(self) -> int:
        return (self.crop // self.sub_patch) ** 2


class FlowConfig(NamedTuple):
    """Hyperparameters of the autoregressive flow decoder.

    Attributes:
        latent_dim: Width D of the conditioning latent code
        hidden: Width of the gated recurrent state
        head_hidden: Hidden width of the conditioning head
        future_steps: Prediction horizon T
        sigma_floor: Added to the softplus diagonal of the scale factor
    """
    latent_dim: int = 256
    hidden: int = 64
    head_hidden: int = 64
    future_steps: int = 6
    sigma_floor: float = 1e-3

    def validate(self) -> "FlowConfig":
        if min(self.latent_dim, self.hidden, self.head_hidden,
               self.future_steps) < 1:
            raise ConfigError("flow widths and horizon must be >= 1")
        if self.sigma_floor <= 0:
            raise ConfigError("sigma_floor must be > 0")
        return self


class ModelSpec(NamedTuple):
    """A named encoder/decoder pair."""
    name: str
    encoder: EncoderConfig
    flow: FlowConfig
    description: str


MODEL_CONFIGS: Final[Dict[str, ModelSpec]] = {
    "tf12-ref": ModelSpec(
        name="tf12-ref",
        encoder=EncoderConfig(layers=12),
        flow=FlowConfig(),
        description="12-layer encoder sized to the small model budget"
    ),
    "tf24-ref": ModelSpec(
        name="tf24-ref",
        encoder=EncoderConfig(layers=24),
        flow=FlowConfig(),
        description="24-layer encoder sized to the large model budget"
    ),
    "paper-default": ModelSpec(
        name="paper-default",
        encoder=EncoderConfig(model_dim=256, heads=8, layers=12),
        flow=FlowConfig(),
        description="Full-width 12-layer encoder with d=1024"
    ),
    "tiny": ModelSpec(
        name="tiny",
        encoder=EncoderConfig(
            pose_dim=8, model_dim=12, heads=2, layers=1, latent_dim=8,
            sub_patch=4, crop=4, mlp_ratio=2),
        flow=FlowConfig(latent_dim=8, hidden=8, head_hidden=8),
        description="Test-sized model"
    ),
}

CLI_MODEL_CONFIGS: Final = ("tf12-ref", "tf24-ref", "paper-default")


def get_model_spec(name: str) -> ModelSpec:
    """Look up a named configuration and validate it."""
    if name not in MODEL_CONFIGS:
        raise ConfigError(
            f"Unknown model config: {name} "
            f"(choose from {', '.join(MODEL_CONFIGS)})")
    spec = MODEL_CONFIGS[name]
    spec.encoder.validate()
    spec.flow.validate()
    if spec.encoder.latent_dim != spec.flow.latent_dim:
        raise ConfigError(
            f"{name}: encoder latent_dim {spec.encoder.latent_dim} differs "
            f"from flow latent_dim {spec.flow.latent_dim}")
    return spec
