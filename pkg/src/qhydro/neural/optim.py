"""Adam with global gradient-norm clipping.

Bias-corrected first and second moments; the defaults below are the
values the training pipeline ships with.  With a zero gradient the
parameters stay put while the moment estimates keep decaying.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_LR = 0.001
DEFAULT_BETA1 = 0.89
DEFAULT_BETA2 = 0.97
DEFAULT_EPS = 1e-8
DEFAULT_CLIP_NORM = 5.0


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale gradients so their joint L2 norm is at most ``max_norm``.

    Returns the (possibly rescaled) gradients and the pre-clip norm.
    """
    if max_norm <= 0.0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return [g * scale for g in grads], total


@dataclass
class AdamState:
    """Optimizer moments, one slot per parameter tensor."""

    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")


def init_adam(
    shapes: list[tuple[int, ...]],
    lr: float = DEFAULT_LR,
    beta1: float = DEFAULT_BETA1,
    beta2: float = DEFAULT_BETA2,
    eps: float = DEFAULT_EPS,
) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        step=0,
        m=[np.zeros(s) for s in shapes],
        v=[np.zeros(s) for s in shapes],
    )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    Parameters are updated in place and also returned.  The very first
    step moves each coordinate by about ``lr`` (exactly, as eps -> 0),
    regardless of the gradient's scale.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state slots must align")
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / (1.0 - state.beta1**t)
        v_hat = state.v[i] / (1.0 - state.beta2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
