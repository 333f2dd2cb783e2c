"""
Autoregressive affine normalizing-flow decoder.

Each future step is an invertible affine map of a standard normal draw,
    s_t = sigma_t z_t + mu_t,    z_t ~ N(0, I_2),
with sigma_t = [[a, 0], [c, b]] lower triangular (a, b > 0) and
    mu_t = 2 s_{t-1} - s_{t-2} + mu_hat_t
anchored on constant-velocity extrapolation. (mu_hat, a, b, c) come from a
conditioning network over [c_latent ; s_{t-1} ; s_{t-1} - s_{t-2} ; h],
where h is a gated recurrent state updated every step.

Decoding runs in each agent's local frame (origin at its last observed
pose); positions are shifted back to the scene frame on output. Sampling
rolls out freely from its own draws; `log_prob` conditions every step on
the ground-truth prefix and returns the exact change-of-variables density.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

import trajformer.numerics as num
from trajformer.errors import ContractError, SceneFormatError
from trajformer.model_specs import FlowConfig
from trajformer.seeding import substream

LOG_TWO_PI = float(np.log(2.0 * np.pi))
RAW_OUTPUTS = 5


class FlowParams(NamedTuple):
    """Per-step affine parameters for R rows.

    Attributes:
        mu: (R, 2) mean in meters
        scale_x: (R, 1) sigma[0, 0] > 0
        scale_y: (R, 1) sigma[1, 1] > 0
        shear: (R, 1) sigma[1, 0]
    """
    mu: num.Tensor
    scale_x: num.Tensor
    scale_y: num.Tensor
    shear: num.Tensor

    def sigma(self) -> np.ndarray:
        """(R, 2, 2) lower-triangular scale factors, values only."""
        rows = self.mu.shape[0]
        matrix = np.zeros((rows, 2, 2), dtype=self.mu.dtype)
        matrix[:, 0, 0] = self.scale_x.data[:, 0]
        matrix[:, 1, 0] = self.shear.data[:, 0]
        matrix[:, 1, 1] = self.scale_y.data[:, 0]
        return matrix

    def log_det(self) -> num.Tensor:
        """(R,) log det sigma = log a + log b."""
        return (num.log(self.scale_x) + num.log(self.scale_y))[:, 0]

    def generate(self, z) -> num.Tensor:
        """Forward map s = sigma z + mu for (R, 2) draws."""
        z = num.as_tensor(z, like=self.mu)
        zx, zy = z[:, 0:1], z[:, 1:2]
        sx = self.scale_x * zx + self.mu[:, 0:1]
        sy = self.shear * zx + self.scale_y * zy + self.mu[:, 1:2]
        return num.concat([sx, sy], axis=1)

    def invert(self, s) -> num.Tensor:
        """Inverse map z = sigma^-1 (s - mu) for (R, 2) positions."""
        s = num.as_tensor(s, like=self.mu)
        zx = (s[:, 0:1] - self.mu[:, 0:1]) / self.scale_x
        zy = (s[:, 1:2] - self.mu[:, 1:2] - self.shear * zx) / self.scale_y
        return num.concat([zx, zy], axis=1)


class TrajectorySamples(NamedTuple):
    """k sampled futures for each of A agents.

    Attributes:
        positions: (A, k, T, 2) scene-frame positions
        z: (A, k, T, 2) base draws that generated them
        log_probs: (A, k) joint log-density of each sample
    """
    positions: np.ndarray
    z: np.ndarray
    log_probs: np.ndarray


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

def flow_parameter_shapes(cfg: FlowConfig) -> Dict[str, Tuple[int, ...]]:
    """Canonical parameter names and shapes, in a fixed order."""
    inputs = cfg.latent_dim + 4
    hidden = cfg.hidden
    shapes: Dict[str, Tuple[int, ...]] = {}
    for gate in ("update", "reset", "candidate"):
        shapes[f"flow.gru.{gate}.input_weight"] = (inputs, hidden)
        shapes[f"flow.gru.{gate}.state_weight"] = (hidden, hidden)
        shapes[f"flow.gru.{gate}.bias"] = (hidden,)
    shapes.update({
        "flow.head.fc1.weight": (inputs + hidden, cfg.head_hidden),
        "flow.head.fc1.bias": (cfg.head_hidden,),
        "flow.head.fc2.weight": (cfg.head_hidden, RAW_OUTPUTS),
        "flow.head.fc2.bias": (RAW_OUTPUTS,),
    })
    return shapes


# --------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------

def _gate(params, name: str, x: num.Tensor, state: num.Tensor) -> num.Tensor:
    return x @ params[f"flow.gru.{name}.input_weight"] \
        + state @ params[f"flow.gru.{name}.state_weight"] \
        + params[f"flow.gru.{name}.bias"]


def decode_step(
    params: Dict[str, num.Tensor],
    cfg: FlowConfig,
    codes: num.Tensor,
    s_prev,
    s_prev2,
    state: num.Tensor
) -> Tuple[FlowParams, num.Tensor]:
    """
    One autoregressive step for R rows.

    Args:
        params: Flow parameters by canonical name
        cfg: Flow configuration
        codes: (R, D) latent codes
        s_prev: (R, 2) previous position s_{t-1}
        s_prev2: (R, 2) position before that, s_{t-2}
        state: (R, hidden) recurrent state

    Returns:
        The step's FlowParams and the updated recurrent state
    """
    s_prev = num.as_tensor(s_prev, like=codes)
    s_prev2 = num.as_tensor(s_prev2, like=codes)
    features = num.concat([codes, s_prev, s_prev - s_prev2], axis=1)

    update = num.sigmoid(_gate(params, "update", features, state))
    reset = num.sigmoid(_gate(params, "reset", features, state))
    candidate = num.tanh(_gate(params, "candidate", features, reset * state))
    new_state = (1.0 - update) * state + update * candidate

    hidden = num.tanh(num.concat([features, new_state], axis=1)
                      @ params["flow.head.fc1.weight"]
                      + params["flow.head.fc1.bias"])
    raw = hidden @ params["flow.head.fc2.weight"] \
        + params["flow.head.fc2.bias"]

    anchor = 2.0 * s_prev - s_prev2
    flow_params = FlowParams(
        mu=anchor + raw[:, 0:2],
        scale_x=num.softplus(raw[:, 2:3]) + cfg.sigma_floor,
        scale_y=num.softplus(raw[:, 3:4]) + cfg.sigma_floor,
        shear=raw[:, 4:5])
    return flow_params, new_state


def _initial_state(codes: num.Tensor, cfg: FlowConfig) -> num.Tensor:
    return num.as_tensor(np.zeros((codes.shape[0], cfg.hidden)), like=codes)


def local_anchors(pasts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(R, t, 2) pasts -> scene-frame origins and local s_{-1}."""
    pasts = np.asarray(pasts, dtype=np.float64)
    origins = pasts[:, -1]
    return origins, pasts[:, -2] - origins


def rollout(
    params: Dict[str, num.Tensor],
    cfg: FlowConfig,
    codes: num.Tensor,
    s_before: np.ndarray,
    z
) -> Tuple[num.Tensor, num.Tensor]:
    """
    Generate local-frame trajectories from base draws.

    Args:
        codes: (R, D) latent codes
        s_before: (R, 2) local position one step before the origin
        z: (R, T, 2) base draws (array or tensor)

    Returns:
        (R, T, 2) local positions and (R,) joint log-densities; both are
        differentiable with respect to the parameters (reparameterized)
    """
    z = num.as_tensor(z, like=codes)
    rows = codes.shape[0]
    s_prev = num.as_tensor(np.zeros((rows, 2)), like=codes)
    s_prev2 = num.as_tensor(s_before, like=codes)
    state = _initial_state(codes, cfg)
    positions: List[num.Tensor] = []
    log_density = num.as_tensor(np.zeros(rows), like=codes)
    for step in range(cfg.future_steps):
        flow_params, state = decode_step(params, cfg, codes, s_prev,
                                         s_prev2, state)
        draw = z[:, step, :]
        s_next = flow_params.generate(draw)
        log_density = log_density + _step_log_density(draw, flow_params)
        positions.append(s_next)
        s_prev2, s_prev = s_prev, s_next
    return num.stack(positions, axis=1), log_density


def _step_log_density(z: num.Tensor, flow_params: FlowParams) -> num.Tensor:
    return -0.5 * (z * z).sum(axis=1) - LOG_TWO_PI - flow_params.log_det()


def log_prob(
    params: Dict[str, num.Tensor],
    cfg: FlowConfig,
    codes: num.Tensor,
    traj: np.ndarray,
    s_before: np.ndarray
) -> num.Tensor:
    """
    Exact log-density of local-frame trajectories under teacher forcing.

    Args:
        codes: (R, D) latent codes
        traj: (R, T, 2) local-frame trajectories
        s_before: (R, 2) local position one step before the origin

    Returns:
        (R,) sum over steps of -|z_t|^2 / 2 - log(2 pi) - log det sigma_t
    """
    traj = np.asarray(traj)
    if traj.shape[1:] != (cfg.future_steps, 2):
        raise ContractError(
            f"log_prob expects (R, {cfg.future_steps}, 2) trajectories, "
            f"got {traj.shape}")
    rows = codes.shape[0]
    history = np.concatenate(
        [np.asarray(s_before)[:, None], np.zeros((rows, 1, 2)), traj], axis=1)
    state = _initial_state(codes, cfg)
    total = num.as_tensor(np.zeros(rows), like=codes)
    for step in range(cfg.future_steps):
        flow_params, state = decode_step(
            params, cfg, codes, history[:, step + 1], history[:, step], state)
        z = flow_params.invert(traj[:, step])
        total = total + _step_log_density(z, flow_params)
    return total


def sample(
    params: Dict[str, num.Tensor],
    cfg: FlowConfig,
    codes: num.Tensor,
    pasts: np.ndarray,
    k: int,
    seed: int,
    scene_key: str | int = 0,
    z: Optional[np.ndarray] = None
) -> TrajectorySamples:
    """
    Draw k future hypotheses per agent.

    The base draws of agent a, draw j come from the substream
    ("sample", scene_key, a, j) of `seed`, so the result does not depend
    on how agents or draws are grouped.

    Args:
        codes: (A, D) latent codes
        pasts: (A, t, 2) observed poses, scene frame
        k: Hypotheses per agent
        seed: Master seed
        scene_key: Distinguishes scenes sharing one master seed
        z: Optional (A, k, T, 2) draws overriding the random ones

    Raises:
        ContractError: If k < 1
    """
    if k < 1:
        raise ContractError(f"sample needs k >= 1, got {k}")
    agents = codes.shape[0]
    steps = cfg.future_steps
    if z is None:
        z = np.stack([
            np.stack([substream(seed, "sample", scene_key, agent, draw)
                      .standard_normal((steps, 2)) for draw in range(k)])
            for agent in range(agents)])
    z = np.asarray(z, dtype=np.float64)
    origins, s_before = local_anchors(pasts)
    rows = np.repeat(np.arange(agents), k)
    local, log_density = rollout(
        params, cfg, codes[rows], s_before[rows],
        z.reshape(agents * k, steps, 2))
    positions = local.data.astype(np.float64).reshape(agents, k, steps, 2) \
        + origins[:, None, None, :]
    return TrajectorySamples(
        positions=positions,
        z=z,
        log_probs=log_density.data.astype(np.float64).reshape(agents, k))


def trajectory_log_probs(
    params: Dict[str, num.Tensor],
    cfg: FlowConfig,
    codes: num.Tensor,
    pasts: np.ndarray,
    futures: np.ndarray
) -> num.Tensor:
    """(A,) log-density of scene-frame futures given scene-frame pasts."""
    origins, s_before = local_anchors(pasts)
    return log_prob(params, cfg, codes,
                    np.asarray(futures) - origins[:, None, :], s_before)


# --------------------------------------------------------------------------
# Prediction files
# --------------------------------------------------------------------------

def prediction_document(
    scene_id: str,
    agent_ids: Sequence[str],
    samples: TrajectorySamples
) -> Dict[str, Any]:
    """Prediction file content for one scene."""
    return {
        "scene_id": scene_id,
        "agents": [
            {
                "id": agent_id,
                "samples": samples.positions[index].tolist(),
                "log_probs": samples.log_probs[index].tolist(),
            }
            for index, agent_id in enumerate(agent_ids)
        ],
    }


def validate_prediction_document(document: Any) -> Dict[str, Any]:
    """
    Check a prediction document against its schema:
    {scene_id: str, agents: [{id: str, samples: k x T x 2 numbers,
    log_probs: k numbers}]}, with k >= 1 and one T per document.

    Raises:
        SceneFormatError: Naming the offending field
    """
    if not isinstance(document, dict):
        raise SceneFormatError("prediction: top level must be an object")
    if not isinstance(document.get("scene_id"), str):
        raise SceneFormatError("prediction: 'scene_id' must be a string")
    agents = document.get("agents")
    if not isinstance(agents, list) or not agents:
        raise SceneFormatError("prediction: 'agents' must be a non-empty list")
    horizon = None
    for index, agent in enumerate(agents):
        where = f"prediction: agents[{index}]"
        if not isinstance(agent, dict) or not isinstance(agent.get("id"), str):
            raise SceneFormatError(f"{where}.id must be a string")
        try:
            samples = np.asarray(agent.get("samples"), dtype=np.float64)
            log_probs = np.asarray(agent.get("log_probs"), dtype=np.float64)
        except (TypeError, ValueError) as error:
            raise SceneFormatError(f"{where} holds non-numeric values") \
                from error
        if samples.ndim != 3 or samples.shape[0] < 1 or samples.shape[2] != 2:
            raise SceneFormatError(f"{where}.samples must be k x T x 2")
        if log_probs.shape != (samples.shape[0],):
            raise SceneFormatError(
                f"{where}.log_probs must hold one value per sample")
        if not (np.all(np.isfinite(samples))
                and np.all(np.isfinite(log_probs))):
            raise SceneFormatError(f"{where} holds non-finite values")
        if horizon is None:
            horizon = samples.shape[1]
        elif samples.shape[1] != horizon:
            raise SceneFormatError(f"{where}.samples horizon differs")
    return document


def write_prediction(document: Dict[str, Any], path: str | Path) -> None:
    """Validate and write a prediction file."""
    validate_prediction_document(document)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n",
                    encoding='utf-8')


def read_prediction(path: str | Path) -> Dict[str, Any]:
    """Read and validate a prediction file."""
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as error:
        raise SceneFormatError(
            f"{path}: line {error.lineno} column {error.colno}: "
            f"{error.msg}") from error
    except UnicodeDecodeError as error:
        raise SceneFormatError(
            f"{path}: not UTF-8 text (byte {error.start})") from error
    return validate_prediction_document(document)
