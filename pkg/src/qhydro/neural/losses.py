"""Quantile (pinball) loss.

For quantile level tau, each element contributes

    tau * (y - yhat)          if y >= yhat
    (tau - 1) * (y - yhat)    if y <  yhat

and the loss is the mean over every element of the batch.  A prediction
sitting exactly on the target contributes zero either way; gradients at
the kink take the ``y >= yhat`` branch.  At tau=0.5 this is half the mean
absolute error.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def _check_tau(tau: float) -> float:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    return float(tau)


def tilted_loss(pred: np.ndarray, target: np.ndarray, tau: float) -> float:
    """Pinball loss on plain arrays, averaged over all elements."""
    tau = _check_tau(tau)
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty arrays")
    diff = target - pred
    return float(np.mean(np.where(diff < 0.0, (tau - 1.0) * diff, tau * diff)))


def tilted_loss_tensor(pred: Tensor, target: np.ndarray, tau: float) -> Tensor:
    """Graph version of :func:`tilted_loss` for a prediction tensor.

    The branch factor is computed from the forward values and treated as
    constant, which is exactly the subgradient choice documented above.
    """
    tau = _check_tau(tau)
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.data.shape} vs {target.shape}")
    diff_values = target - pred.data
    factor = np.where(diff_values < 0.0, tau - 1.0, tau)
    diff = Tensor(target) - pred
    return (diff * Tensor(factor)).mean()
