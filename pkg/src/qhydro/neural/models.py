"""Forecasting network architectures.

Every model maps a normalized input block of shape (m, alpha, width) to
an (m, horizon) prediction.  Four architectures are provided:

``mlp``
    Flattened input through tanh hidden layers.
``rnn``
    A single tanh recurrent layer read out from the final hidden state.
``cnn1d``
    Two valid 1-D convolutions (kernel 3) over the time axis, global
    average pooling, linear head.
``lstm_encdec``
    An LSTM encoder over the input window; a decoder LSTM unrolled one
    step per lead day, fed its own previous prediction, with a shared
    linear head.

Weights are drawn uniformly from +-1/sqrt(fan_in) with a seeded
generator; biases start at zero.  Construction is deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat, stack

ARCHITECTURES = ("mlp", "rnn", "cnn1d", "lstm_encdec")

DEFAULT_LAYERS = {
    "mlp": (64, 32),
    "rnn": (32,),
    "cnn1d": (16, 32),
    "lstm_encdec": (32,),
}

CNN_KERNEL = 3


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters.

    ``layers`` means hidden widths for ``mlp``, the recurrent width for
    ``rnn`` and ``lstm_encdec`` (single entry), and the channel counts of
    the two convolutions for ``cnn1d``.
    """

    arch: str
    alpha: int
    horizon: int
    width: int = 9
    layers: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}, pick one of {ARCHITECTURES}")
        if self.alpha < 1 or self.horizon < 1 or self.width < 1:
            raise ValueError("alpha, horizon and width must be >= 1")
        if self.layers is None:
            layers = DEFAULT_LAYERS[self.arch]
        else:
            layers = tuple(int(x) for x in self.layers)
        object.__setattr__(self, "layers", layers)
        if any(x < 1 for x in layers):
            raise ValueError("layer sizes must be >= 1")
        if self.arch in ("rnn", "lstm_encdec") and len(layers) != 1:
            raise ValueError(f"{self.arch} takes a single recurrent width, got {layers}")
        if self.arch == "cnn1d":
            if len(layers) != 2:
                raise ValueError(f"cnn1d takes two channel counts, got {layers}")
            if self.alpha < 2 * (CNN_KERNEL - 1) + 1:
                raise ValueError(
                    f"alpha={self.alpha} too short for two valid kernel-{CNN_KERNEL} convolutions"
                )

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "alpha": self.alpha,
            "horizon": self.horizon,
            "width": self.width,
            "layers": list(self.layers),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            arch=d["arch"],
            alpha=int(d["alpha"]),
            horizon=int(d["horizon"]),
            width=int(d["width"]),
            layers=tuple(d["layers"]),
            seed=int(d["seed"]),
        )


class Model:
    """A parameterised forecaster: named weight tensors plus a forward pass."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(spec.seed)
        self._build(rng)

    # subclasses fill self.params and implement _forward
    def _build(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _forward(self, x: np.ndarray) -> Tensor:
        raise NotImplementedError

    def _weight(self, rng, name: str, fan_in: int, shape: tuple[int, ...]) -> Tensor:
        limit = 1.0 / np.sqrt(fan_in)
        tensor = Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)
        self.params[name] = tensor
        return tensor

    def _bias(self, name: str, size: int) -> Tensor:
        tensor = Tensor(np.zeros(size), requires_grad=True)
        self.params[name] = tensor
        return tensor

    def parameters(self) -> list[Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward_tensor(self, inputs: np.ndarray) -> Tensor:
        """Forward pass returning a graph node, for training."""
        inputs = np.asarray(inputs, dtype=np.float64)
        expected = (self.spec.alpha, self.spec.width)
        if inputs.ndim != 3 or inputs.shape[1:] != expected:
            raise ValueError(
                f"inputs must be (m, {expected[0]}, {expected[1]}), got {inputs.shape}"
            )
        out = self._forward(inputs)
        if out.data.shape != (inputs.shape[0], self.spec.horizon):
            raise AssertionError(
                f"forward produced {out.data.shape}, expected "
                f"({inputs.shape[0]}, {self.spec.horizon})"
            )
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ValueError("parameter names do not match this architecture")
        for name, values in state.items():
            current = self.params[name].data
            values = np.asarray(values, dtype=np.float64)
            if values.shape != current.shape:
                raise ValueError(f"parameter {name!r}: shape {values.shape} != {current.shape}")
            self.params[name].data = values.copy()
            self.params[name].zero_grad()


def forward(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Plain-array forward pass of shape (m, horizon)."""
    return model.forward_tensor(inputs).data


class Mlp(Model):
    def _build(self, rng):
        fan_in = self.spec.alpha * self.spec.width
        for i, width in enumerate(self.spec.layers):
            self._weight(rng, f"w{i}", fan_in, (fan_in, width))
            self._bias(f"b{i}", width)
            fan_in = width
        self._weight(rng, "head_w", fan_in, (fan_in, self.spec.horizon))
        self._bias("head_b", self.spec.horizon)

    def _forward(self, x: np.ndarray) -> Tensor:
        m = x.shape[0]
        h = Tensor(x.reshape(m, -1))
        for i in range(len(self.spec.layers)):
            h = (h @ self.params[f"w{i}"] + self.params[f"b{i}"]).tanh()
        return h @ self.params["head_w"] + self.params["head_b"]


class Rnn(Model):
    def _build(self, rng):
        width = self.spec.layers[0]
        self._weight(rng, "wx", self.spec.width, (self.spec.width, width))
        self._weight(rng, "wh", width, (width, width))
        self._bias("b", width)
        self._weight(rng, "head_w", width, (width, self.spec.horizon))
        self._bias("head_b", self.spec.horizon)

    def _forward(self, x: np.ndarray) -> Tensor:
        m = x.shape[0]
        width = self.spec.layers[0]
        h = Tensor(np.zeros((m, width)))
        for t in range(self.spec.alpha):
            xt = Tensor(x[:, t, :])
            h = (xt @ self.params["wx"] + h @ self.params["wh"] + self.params["b"]).tanh()
        return h @ self.params["head_w"] + self.params["head_b"]


class Cnn1d(Model):
    def _build(self, rng):
        c1, c2 = self.spec.layers
        self._weight(rng, "conv1_w", CNN_KERNEL * self.spec.width,
                     (CNN_KERNEL * self.spec.width, c1))
        self._bias("conv1_b", c1)
        self._weight(rng, "conv2_w", CNN_KERNEL * c1, (CNN_KERNEL * c1, c2))
        self._bias("conv2_b", c2)
        self._weight(rng, "head_w", c2, (c2, self.spec.horizon))
        self._bias("head_b", self.spec.horizon)

    @staticmethod
    def _conv(x: Tensor, w: Tensor, b: Tensor, n_steps: int, in_width: int) -> Tensor:
        # Valid convolution along the time axis as a stack of windowed matmuls.
        m = x.data.shape[0]
        outputs = []
        for t in range(n_steps - CNN_KERNEL + 1):
            window = x[:, t : t + CNN_KERNEL, :].reshape(m, CNN_KERNEL * in_width)
            outputs.append((window @ w + b).tanh())
        return stack(outputs, axis=1)

    def _forward(self, x: np.ndarray) -> Tensor:
        c1, _ = self.spec.layers
        h = Tensor(x)
        h = self._conv(h, self.params["conv1_w"], self.params["conv1_b"],
                       self.spec.alpha, self.spec.width)
        t1 = self.spec.alpha - CNN_KERNEL + 1
        h = self._conv(h, self.params["conv2_w"], self.params["conv2_b"], t1, c1)
        pooled = h.mean(axis=1)
        return pooled @ self.params["head_w"] + self.params["head_b"]


class LstmEncDec(Model):
    """Sequence-to-sequence forecaster.

    The encoder consumes the input window and hands its final (h, c) to
    the decoder, which runs one step per lead day.  The decoder input at
    the first step is zero and thereafter the previous step's prediction,
    so multi-step forecasts stay consistent with how the model is used.
    Gate layout in the packed weight matrices is (input, forget, cell,
    output).
    """

    def _build(self, rng):
        width = self.spec.layers[0]
        self._weight(rng, "enc_wx", self.spec.width, (self.spec.width, 4 * width))
        self._weight(rng, "enc_wh", width, (width, 4 * width))
        self._bias("enc_b", 4 * width)
        self._weight(rng, "dec_wx", 1, (1, 4 * width))
        self._weight(rng, "dec_wh", width, (width, 4 * width))
        self._bias("dec_b", 4 * width)
        self._weight(rng, "head_w", width, (width, 1))
        self._bias("head_b", 1)

    @staticmethod
    def _cell(gates: Tensor, c: Tensor, width: int) -> tuple[Tensor, Tensor]:
        i = gates[:, 0 * width : 1 * width].sigmoid()
        f = gates[:, 1 * width : 2 * width].sigmoid()
        g = gates[:, 2 * width : 3 * width].tanh()
        o = gates[:, 3 * width : 4 * width].sigmoid()
        c_new = f * c + i * g
        h_new = o * c_new.tanh()
        return h_new, c_new

    def _forward(self, x: np.ndarray) -> Tensor:
        m = x.shape[0]
        width = self.spec.layers[0]
        h = Tensor(np.zeros((m, width)))
        c = Tensor(np.zeros((m, width)))
        for t in range(self.spec.alpha):
            xt = Tensor(x[:, t, :])
            gates = xt @ self.params["enc_wx"] + h @ self.params["enc_wh"] + self.params["enc_b"]
            h, c = self._cell(gates, c, width)

        y_prev: Tensor = Tensor(np.zeros((m, 1)))
        steps = []
        for _ in range(self.spec.horizon):
            gates = (
                y_prev @ self.params["dec_wx"]
                + h @ self.params["dec_wh"]
                + self.params["dec_b"]
            )
            h, c = self._cell(gates, c, width)
            y_prev = h @ self.params["head_w"] + self.params["head_b"]
            steps.append(y_prev)
        return concat(steps, axis=1)


_MODEL_CLASSES = {
    "mlp": Mlp,
    "rnn": Rnn,
    "cnn1d": Cnn1d,
    "lstm_encdec": LstmEncDec,
}


def build_model(spec: ModelSpec) -> Model:
    """Instantiate the architecture named by the spec, seeded weights."""
    return _MODEL_CLASSES[spec.arch](spec)


def save_model(path: str | Path, model: Model, meta: dict | None = None) -> None:
    """Persist spec, weights and optional metadata as a single NPZ."""
    payload = {f"param_{k}": v.data for k, v in model.params.items()}
    header = {"spec": model.spec.to_dict(), "meta": meta or {}}
    np.savez_compressed(path, header=np.frombuffer(
        json.dumps(header).encode(), dtype=np.uint8
    ), **payload)


def load_model(path: str | Path) -> tuple[Model, dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["header"].tobytes()).decode())
        model = build_model(ModelSpec.from_dict(header["spec"]))
        state = {
            key[len("param_"):]: z[key] for key in z.files if key.startswith("param_")
        }
    model.load_state_arrays(state)
    return model, header["meta"]
