"""Full-batch adaptive first-order optimizer on real coordinate vectors.

The loss functions in this package are real-valued over complex
parameters; callers flatten parameters into real/imaginary coordinates and
provide exact gradients. The step-size schedule decays geometrically from
lr_start to lr_end over the configured iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class OptimizerConfig:
    iterations: int = 250
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_spread: float = 2e-2
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValidationError(
                "step sizes must be positive and non-increasing"
            )
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("moment decay rates must lie in [0, 1)")
        if self.eps <= 0 or self.init_spread < 0:
            raise ValidationError("eps must be positive, init_spread >= 0")

    def step_size(self, t: int) -> float:
        """Geometric interpolation lr_start * (lr_end/lr_start)^(t/T)."""
        return self.lr_start * (self.lr_end / self.lr_start) ** (
            t / self.iterations
        )


def truncated_normal(rng: np.random.Generator, size, sd: float) -> np.ndarray:
    """Normal draws with |x| <= 2 sd, resampled beyond the bound."""
    if sd == 0:
        return np.zeros(size)
    out = rng.normal(0.0, sd, size=size)
    bad = np.abs(out) > 2 * sd
    while np.any(bad):
        out[bad] = rng.normal(0.0, sd, size=int(np.count_nonzero(bad)))
        bad = np.abs(out) > 2 * sd
    return out


def adam_minimize(x0: np.ndarray, loss_grad, config: OptimizerConfig,
                  post_step=None):
    """Run bias-corrected adaptive moment descent from x0.

    ``loss_grad(x)`` returns (loss, gradient); ``post_step``, when given,
    projects the iterate back into the feasible set after each update. The
    returned trace holds the loss at every iterate including the initial
    and final ones (length iterations + 1).
    """
    x = np.asarray(x0, dtype=float).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trace = np.empty(config.iterations + 1)
    for t in range(config.iterations):
        loss, grad = loss_grad(x)
        trace[t] = loss
        m = config.beta1 * m + (1 - config.beta1) * grad
        v = config.beta2 * v + (1 - config.beta2) * grad * grad
        m_hat = m / (1 - config.beta1 ** (t + 1))
        v_hat = v / (1 - config.beta2 ** (t + 1))
        x = x - config.step_size(t) * m_hat / (np.sqrt(v_hat) + config.eps)
        if post_step is not None:
            x = post_step(x)
    trace[config.iterations], _ = loss_grad(x)
    return x, trace
