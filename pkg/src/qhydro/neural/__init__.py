"""Neural quantile forecasters: autodiff engine, architectures, training."""

from .autodiff import Tensor, concat, stack
from .losses import tilted_loss, tilted_loss_tensor
from .models import (
    ARCHITECTURES,
    Model,
    ModelSpec,
    build_model,
    forward,
    load_model,
    save_model,
)
from .optim import AdamState, adam_step, clip_gradients, init_adam
from .training import (
    TrainConfig,
    TrainResult,
    TrainingDivergedError,
    grad_check,
    train_quantile_model,
    write_trace_csv,
)

__all__ = [
    "ARCHITECTURES",
    "AdamState",
    "Model",
    "ModelSpec",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "adam_step",
    "build_model",
    "clip_gradients",
    "concat",
    "forward",
    "grad_check",
    "init_adam",
    "load_model",
    "save_model",
    "stack",
    "tilted_loss",
    "tilted_loss_tensor",
    "train_quantile_model",
    "write_trace_csv",
]
