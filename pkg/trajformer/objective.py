"""
Symmetric cross-entropy training objective.

    total = nll_term + alpha * prior_term

nll_term is the forward cross-entropy H(p, q): the mean negative
log-likelihood of the ground-truth futures under the flow. prior_term is
the reverse cross-entropy H(q, prior): a Monte-Carlo average of
-log prior(s_t) over reparameterized samples s_t = sigma_t z_t + mu_t, so
its gradient reaches the decoder through the samples.
"""

from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

import trajformer.numerics as num
from trajformer.encoder import LatentCodes
from trajformer.errors import ContractError
from trajformer.flow import local_anchors, rollout
from trajformer.model import Trajformer
from trajformer.scene import Scene, prior_logprob_tensor
from trajformer.seeding import substream

DEFAULT_ALPHA = 0.5
DEFAULT_K_MC = 4


class LossBreakdown(NamedTuple):
    """Loss terms of one batch, in nats.

    Attributes:
        nll_term: Mean negative log-likelihood of the ground truth
        prior_term: Mean negative prior log-mass at sampled positions
        total: nll_term + alpha * prior_term
        alpha: Weight of the prior term
    """
    nll_term: num.Tensor
    prior_term: num.Tensor
    total: num.Tensor
    alpha: float

    def values(self) -> Dict[str, float]:
        return {
            "nll_term": self.nll_term.item(),
            "prior_term": self.prior_term.item(),
            "total": self.total.item(),
        }


def _check_batch(scenes: Sequence[Scene]) -> None:
    if not scenes:
        raise ContractError("Loss needs a non-empty batch of scenes")


def _codes_for(
    model: Trajformer,
    scenes: Sequence[Scene],
    codes: Optional[Sequence[LatentCodes]]
) -> Sequence[LatentCodes]:
    return model.encode(scenes) if codes is None else codes


def nll_term(
    model: Trajformer,
    scenes: Sequence[Scene],
    codes: Optional[Sequence[LatentCodes]] = None
) -> num.Tensor:
    """
    Mean over all agents of the batch of -log q(ground-truth future).

    Args:
        model: Model under training
        scenes: Batch of scenes
        codes: Latent codes per scene, if already encoded

    Raises:
        ContractError: If the batch is empty
    """
    _check_batch(scenes)
    codes = _codes_for(model, scenes, codes)
    per_agent = num.concat(
        [model.log_probs(scene, block) for scene, block in zip(scenes, codes)],
        axis=0)
    return -per_agent.mean()


def mc_draws(
    seed: int,
    scene: Scene,
    k_mc: int,
    horizon: int,
    draw_key: int = 0
) -> np.ndarray:
    """(A, k_mc, T, 2) standard normal draws for the prior term."""
    return np.stack([
        np.stack([substream(seed, "mc", draw_key, scene.scene_id, agent, draw)
                  .standard_normal((horizon, 2)) for draw in range(k_mc)])
        for agent in range(scene.num_agents)])


def prior_term(
    model: Trajformer,
    scenes: Sequence[Scene],
    k_mc: int = DEFAULT_K_MC,
    seed: int = 0,
    codes: Optional[Sequence[LatentCodes]] = None,
    draw_key: int = 0
) -> num.Tensor:
    """
    Monte-Carlo estimate of the reverse cross-entropy against each scene's
    prior: mean over agents, draws and time steps of -log prior(s_t).

    Args:
        model: Model under training
        scenes: Batch of scenes
        k_mc: Reparameterized samples per agent
        seed: Master seed of the draws
        codes: Latent codes per scene, if already encoded
        draw_key: Selects a fresh set of draws (the trainer passes the step)

    Raises:
        ContractError: If k_mc < 1 or the batch is empty
    """
    if k_mc < 1:
        raise ContractError(f"prior_term needs k_mc >= 1, got {k_mc}")
    _check_batch(scenes)
    codes = _codes_for(model, scenes, codes)
    flow_cfg = model.spec.flow
    horizon = flow_cfg.future_steps
    penalties: List[num.Tensor] = []
    for scene, block in zip(scenes, codes):
        agents = scene.num_agents
        z = mc_draws(seed, scene, k_mc, horizon, draw_key)
        origins, s_before = local_anchors(scene.pasts())
        rows = np.repeat(np.arange(agents), k_mc)
        local, _ = rollout(model.params, flow_cfg, block[rows],
                           s_before[rows], z.reshape(agents * k_mc, horizon, 2))
        positions = (local + origins[rows][:, None, :]) \
            .reshape(agents * k_mc * horizon, 2)
        log_mass = prior_logprob_tensor(scene.prior, positions,
                                        scene.raster.origin,
                                        scene.raster.resolution)
        penalties.append(-log_mass)
    return num.concat(penalties, axis=0).mean()


def total_loss(
    model: Trajformer,
    scenes: Sequence[Scene],
    alpha: float = DEFAULT_ALPHA,
    k_mc: int = DEFAULT_K_MC,
    seed: int = 0,
    draw_key: int = 0,
    dropout_rng: Optional[np.random.Generator] = None
) -> LossBreakdown:
    """
    Symmetric cross-entropy of a batch; scenes are encoded once and shared
    by both terms.

    Raises:
        ContractError: If alpha < 0, k_mc < 1 or the batch is empty
    """
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    _check_batch(scenes)
    codes = model.encode(scenes, dropout_rng=dropout_rng)
    nll = nll_term(model, scenes, codes)
    prior = prior_term(model, scenes, k_mc, seed, codes, draw_key)
    return LossBreakdown(
        nll_term=nll,
        prior_term=prior,
        total=nll + float(alpha) * prior,
        alpha=alpha)
