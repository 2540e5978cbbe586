"""Parameters, layers and the SGD update built on :mod:`ingra.autograd`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError


class ParamStore:
    """Named trainable tensors, each with a gradient buffer of the same shape."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad.fill(0.0)

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) ^ set(state)
        if missing:
            raise ConfigError(f"parameter names differ: {sorted(missing)}")
        for name, value in state.items():
            p = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != p.data.shape:
                raise ConfigError(f"{name}: shape {value.shape} != {p.data.shape}")
            p.data[...] = value


def sgd_step(store: ParamStore, learning_rate: float, skip: tuple[str, ...] = ()) -> None:
    """``p <- p - lr * grad`` for every parameter, then zero all gradients."""
    if not learning_rate > 0:
        raise ConfigError(f"learning rate must be positive, got {learning_rate}")
    for name, p in store.items():
        if name not in skip:
            p.data -= learning_rate * p.grad
    store.zero_grad()
    store.step_count += 1


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ------------------------------------------------------------------ layers

ACTIVATIONS = {"tanh": ag.tanh, "identity": lambda t: t}


@dataclass
class Dense:
    """Affine map ``x @ weight + bias`` followed by an activation.

    Weights may carry leading stack axes, e.g. ``(S, n_in, n_out)`` for S
    independent layers applied to an ``(S, B, n_in)`` input.
    """
    weight: Tensor
    bias: Tensor
    activation: str = "identity"

    @property
    def n_in(self) -> int:
        return self.weight.shape[-2]

    @property
    def n_out(self) -> int:
        return self.weight.shape[-1]


def add_dense(store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator,
              activation: str = "identity", stack: tuple = ()) -> Dense:
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    w = store.add(f"{name}.weight", uniform_init(rng, stack + (n_in, n_out), n_in))
    b = store.add(f"{name}.bias", uniform_init(rng, stack + (1, n_out), n_in))
    return Dense(w, b, activation)


def dense_forward(x, layer: Dense) -> Tensor:
    x = ag.as_tensor(x)
    if x.shape[-1] != layer.n_in:
        raise ConfigError(f"dense input width {x.shape[-1]} != layer width {layer.n_in}")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    out = ACTIVATIONS[layer.activation](x @ layer.weight + layer.bias)
    return out.reshape(out.shape[-1]) if squeeze and layer.weight.ndim == 2 else out


@dataclass
class LSTMCell:
    """Weights for one (or a stack of) scalar-input LSTM cells."""
    w_x: Tensor
    w_h: Tensor
    bias: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[-2]


def add_lstm(store: ParamStore, name: str, hidden: int, rng: np.random.Generator,
             stack: tuple = ()) -> LSTMCell:
    return LSTMCell(
        store.add(f"{name}.w_x", uniform_init(rng, stack + (1, 4 * hidden), hidden)),
        store.add(f"{name}.w_h", uniform_init(rng, stack + (hidden, 4 * hidden), hidden)),
        store.add(f"{name}.bias", uniform_init(rng, stack + (1, 4 * hidden), hidden)),
    )


@dataclass
class RecurrentCellState:
    hidden: Tensor
    cell: Tensor


def zero_state(batch_shape: tuple, hidden: int) -> RecurrentCellState:
    return RecurrentCellState(Tensor(np.zeros(batch_shape + (hidden,))),
                              Tensor(np.zeros(batch_shape + (hidden,))))


def recurrent_step(x, state: RecurrentCellState, cell: LSTMCell) -> RecurrentCellState:
    """Advance an LSTM cell by one scalar input.

    ``x`` may be a float, or an array of shape ``batch_shape + (1,)`` matching
    the leading axes of ``state``.
    """
    hidden = cell.hidden_size
    if state.hidden.shape[-1] != hidden or state.cell.shape != state.hidden.shape:
        raise ConfigError(
            f"state shapes {state.hidden.shape}/{state.cell.shape} do not match hidden size {hidden}")
    x = ag.as_tensor(x)
    single = state.hidden.ndim == 1
    hc = ag.concat([state.hidden, state.cell], axis=-1)
    if single:
        hc = hc.reshape(1, 2 * hidden)
        x = x.reshape(1, 1)
    elif x.ndim == 0:
        x = x.reshape(1)
    out = ag.lstm_step(x, hc, cell.w_x, cell.w_h, cell.bias)
    if single:
        out = out.reshape(2 * hidden)
    return RecurrentCellState(out[..., :hidden], out[..., hidden:])
