"""
Adam optimizer and linear warm-up / linear decay learning-rate schedule.
"""

from dataclasses import dataclass, field
from typing import Dict, NamedTuple

import numpy as np

from trajformer.errors import ConfigError, DimensionError
from trajformer.numerics import Tensor


@dataclass
class AdamState:
    """Moment estimates and step counter of the Adam optimizer.

    Attributes:
        step: Number of updates applied so far
        beta1: Decay rate of the first moment
        beta2: Decay rate of the second moment
        eps: Denominator floor
        m: First moments, by parameter name
        v: Second moments, by parameter name
    """
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Dict[str, Tensor], **hyper) -> "AdamState":
        """Create zero moments shaped like `params`."""
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            **hyper)


def adam_step(
    state: AdamState,
    params: Dict[str, Tensor],
    grads: Dict[str, np.ndarray],
    lr: float
) -> AdamState:
    """
    Apply one bias-corrected Adam update in place.

    Args:
        state: Optimizer state; moments are updated in place
        params: Parameters by name; `data` is overwritten
        grads: Gradients by name, same shapes as the parameters
        lr: Learning rate for this step

    Returns:
        The same state object with `step` incremented

    Raises:
        DimensionError: If a gradient is missing or a gradient or moment
            shape differs from its parameter; state and parameters are
            left unchanged
    """
    # nothing is touched until every shape checks out
    for name, param in params.items():
        if name not in grads:
            raise DimensionError(
                f"Adam step is missing a gradient for '{name}'")
        shapes = [np.shape(grads[name])] + [
            moments[name].shape for moments in (state.m, state.v)
            if name in moments]
        if any(shape != param.shape for shape in shapes):
            raise DimensionError(
                f"Adam shape mismatch for '{name}': parameter {param.shape}, "
                f"gradient and moments {shapes}")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads[name]
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        update = lr * m_hat / (np.sqrt(v_hat) + state.eps)
        param.data -= update.astype(param.dtype)
    return state


class LrSchedule(NamedTuple):
    """Linear warm-up from 0 to `peak_lr`, then linear decay to 0.

    Attributes:
        peak_lr: Learning rate reached at the end of warm-up
        warmup_steps: Length of the warm-up ramp
        total_steps: Step at which the rate returns to 0
    """
    peak_lr: float
    warmup_steps: int
    total_steps: int

    def validate(self) -> "LrSchedule":
        if not 0 < self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"Schedule needs 0 < warmup_steps < total_steps, got "
                f"{self.warmup_steps} and {self.total_steps}")
        if self.peak_lr < 0:
            raise ConfigError(f"peak_lr must be >= 0, got {self.peak_lr}")
        return self


def lr_at(sched: LrSchedule, step: int) -> float:
    """
    Learning rate at `step`.

    Steps below 0 or above `total_steps` are clamped to the nearest
    endpoint, so the rate is 0 outside the schedule.
    """
    step = min(max(step, 0), sched.total_steps)
    if step <= sched.warmup_steps:
        return sched.peak_lr * step / sched.warmup_steps
    remaining = sched.total_steps - step
    return sched.peak_lr * remaining / (sched.total_steps
                                        - sched.warmup_steps)
