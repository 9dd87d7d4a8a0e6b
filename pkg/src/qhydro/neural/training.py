"""Single-quantile model training.

Full-batch or mini-batch gradient descent with Adam and norm clipping.
Training is deterministic for a fixed spec and config: weight init comes
from the spec seed, batch shuffling from the config seed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .losses import tilted_loss, tilted_loss_tensor
from .models import Model, ModelSpec, build_model
from .optim import (
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_CLIP_NORM,
    DEFAULT_LR,
    adam_step,
    clip_gradients,
    init_adam,
)

logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = 200


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the epoch it happened in."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int | None = None
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    clip_norm: float = DEFAULT_CLIP_NORM
    val_fraction: float = 0.0
    patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 when set")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 when set")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "clip_norm": self.clip_norm,
            "val_fraction": self.val_fraction,
            "patience": self.patience,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainResult:
    model: Model
    tau: float
    train_trace: list[float]
    val_trace: list[float] | None
    epochs_run: int
    best_epoch: int


def train_quantile_model(
    spec: ModelSpec,
    inputs: np.ndarray,
    targets: np.ndarray,
    tau: float,
    config: TrainConfig | None = None,
) -> TrainResult:
    """Fit one model to one quantile level.

    Parameters
    ----------
    spec : ModelSpec
    inputs : ndarray, shape (m, alpha, width)
    targets : ndarray, shape (m, horizon)
        Both already normalized.
    tau : float in (0, 1)
    config : TrainConfig, optional

    Returns
    -------
    TrainResult
        The fitted model plus per-epoch loss traces (full-data loss after
        each epoch's updates).  When validation with patience is enabled,
        the weights of the best validation epoch are restored.

    Raises
    ------
    TrainingDivergedError
        If the loss ever turns NaN or infinite.
    """
    if config is None:
        config = TrainConfig()
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs and targets must have matching first dimension")
    if targets.ndim != 2 or targets.shape[1] != spec.horizon:
        raise ValueError(f"targets must be (m, {spec.horizon}), got {targets.shape}")
    m = inputs.shape[0]
    if m < 1:
        raise ValueError("no training windows")

    n_val = int(np.floor(config.val_fraction * m))
    if n_val > 0:
        train_x, val_x = inputs[: m - n_val], inputs[m - n_val :]
        train_y, val_y = targets[: m - n_val], targets[m - n_val :]
    else:
        train_x, train_y = inputs, targets
        val_x = val_y = None
    if train_x.shape[0] < 1:
        raise ValueError("validation fraction leaves no training windows")

    model = build_model(spec)
    state = init_adam(
        [p.data.shape for p in model.parameters()],
        lr=config.lr, beta1=config.beta1, beta2=config.beta2,
    )
    rng = np.random.default_rng(config.seed)
    n_train = train_x.shape[0]
    batch = config.batch_size or n_train

    train_trace: list[float] = []
    val_trace: list[float] | None = [] if val_x is not None else None
    best_val = np.inf
    best_epoch = 0
    best_state = None
    epochs_run = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train) if batch < n_train else np.arange(n_train)
        for start in range(0, n_train, batch):
            take = order[start : start + batch]
            model.zero_grad()
            pred = model.forward_tensor(train_x[take])
            loss = tilted_loss_tensor(pred, train_y[take], tau)
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(epoch, float(loss.data))
            loss.backward()
            grads = [p.grad for p in model.parameters()]
            grads, _ = clip_gradients(grads, config.clip_norm)
            adam_step([p.data for p in model.parameters()], grads, state)

        epoch_loss = tilted_loss(forward_data(model, train_x), train_y, tau)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, epoch_loss)
        train_trace.append(epoch_loss)
        epochs_run = epoch

        if val_x is not None:
            val_loss = tilted_loss(forward_data(model, val_x), val_y, tau)
            val_trace.append(val_loss)
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_epoch = epoch
                best_state = model.state_arrays()
            elif config.patience is not None and epoch - best_epoch >= config.patience:
                logger.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                break
        else:
            best_epoch = epoch

    if best_state is not None:
        model.load_state_arrays(best_state)

    logger.info(
        "trained %s tau=%.2f: loss %.5f -> %.5f over %d epochs",
        spec.arch, tau, train_trace[0], train_trace[-1], epochs_run,
    )
    return TrainResult(
        model=model,
        tau=tau,
        train_trace=train_trace,
        val_trace=val_trace,
        epochs_run=epochs_run,
        best_epoch=best_epoch,
    )


def forward_data(model: Model, inputs: np.ndarray) -> np.ndarray:
    return model.forward_tensor(inputs).data


def write_trace_csv(path: str | Path, trace: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, value in enumerate(trace, start=1):
            writer.writerow([i, f"{value:.10g}"])


def grad_check(
    spec: ModelSpec,
    inputs: np.ndarray,
    targets: np.ndarray,
    tau: float,
    epsilon: float = 1e-4,
) -> float:
    """Compare backprop gradients against central finite differences.

    Returns the maximum relative error over all checked parameter
    elements.  Elements whose +-epsilon perturbation flips any residual's
    sign are skipped: the loss is not differentiable across the kink, so
    finite differences straddling it are meaningless there.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    model = build_model(spec)

    model.zero_grad()
    loss = tilted_loss_tensor(model.forward_tensor(inputs), targets, tau)
    loss.backward()
    analytic = [p.grad.copy() for p in model.parameters()]

    def loss_and_signs() -> tuple[float, np.ndarray]:
        pred = model.forward_tensor(inputs).data
        return tilted_loss(pred, targets, tau), np.sign(targets - pred)

    worst = 0.0
    for p, grad in zip(model.parameters(), analytic):
        flat = p.data.reshape(-1)
        flat_grad = grad.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + epsilon
            up, signs_up = loss_and_signs()
            flat[j] = original - epsilon
            down, signs_down = loss_and_signs()
            flat[j] = original
            if np.any(signs_up != signs_down):
                continue
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(numeric), abs(flat_grad[j]), 1e-8)
            worst = max(worst, abs(numeric - flat_grad[j]) / denom)
    return worst
