"""The InGRA network.

Each variable has its own LSTM encoder and prediction head. Two kinds of
auxiliary heads read concatenated embeddings: one sees every variable, and
one per variable sees all the others. The drop in squared error when a
variable is added gives its Granger attribution. Normalised attributions
are mixed with a prototype attention and used to weight the per-variable
predictions.

All per-variable parameters are stacked along a leading axis of size S so
that a batch of windows is processed with a handful of batched matmuls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from . import prototypes as proto
from .autograd import Tensor
from .config import ModelConfig
from .data import WindowedExample
from .errors import ConfigError, ContractError, DataError, NumericError
from .nn import ParamStore, add_dense, add_lstm, dense_forward

CHECKPOINT_FORMAT = "ingra-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class AttentionRecord:
    q: np.ndarray
    r: np.ndarray
    a: np.ndarray
    prototype_index: int
    delta_eps: np.ndarray


@dataclass
class Forward:
    """Every intermediate of one batched pass; shapes use B = batch size."""
    predictions: Tensor  # (B, S) per-variable forecasts
    eps_all: Tensor  # (B,)
    eps_without: Tensor  # (B, S)
    delta_eps: Tensor  # (B, S)
    q: Tensor  # (B, S)
    r: Optional[Tensor]  # (B, S), None when the prototype path is off
    a: Tensor  # (B, S)
    y_hat: Tensor  # (B,)
    similarity: Optional[Tensor]  # (B, K)
    e: Optional[Tensor]  # (B, K)


# ------------------------------------------------------------ attention ops

def granger_attribution(eps_all, eps_without) -> Tensor:
    """``ReLU(eps_without[s] - eps_all)``; ``eps_all`` is broadcast over variables."""
    eps_all, eps_without = ag.as_tensor(eps_all), ag.as_tensor(eps_without)
    if eps_all.ndim == eps_without.ndim - 1:
        eps_all = eps_all.reshape(eps_all.shape + (1,))
    return ag.relu(eps_without - eps_all)


def granger_attention(delta_eps) -> Tensor:
    """Normalise attributions onto the simplex (uniform if they sum to < 1e-12)."""
    delta_eps = ag.as_tensor(delta_eps)
    if (delta_eps.data < 0).any():
        raise ContractError("Granger attributions must be non-negative")
    return proto.normalize_simplex(delta_eps)


def mix_attention(q, r, alpha: float) -> Tensor:
    if r is None:
        if alpha != 1.0:
            raise ConfigError("prototype attention is required when alpha < 1")
        return ag.as_tensor(q)
    return ag.add(ag.mul(q, alpha), ag.mul(r, 1.0 - alpha))


def predict_target(a, predictions) -> Tensor:
    """``sum_s a_s * prediction_s`` along the last axis."""
    return ag.tsum(ag.mul(a, predictions), axis=-1)


# ------------------------------------------------------------------ network

class IngraModel:
    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        S, H, K = config.num_variables, config.hidden_size, config.num_prototypes
        self.params = ParamStore()
        self.encoder = add_lstm(self.params, "encoder", H, rng, stack=(S,))
        self.head_hidden = add_dense(self.params, "head.hidden", H, H, rng, "tanh", stack=(S,))
        self.head_out = add_dense(self.params, "head.out", H, 1, rng, stack=(S,))
        self.aux_all_hidden = add_dense(self.params, "aux_all.hidden", S * H, H, rng, "tanh")
        self.aux_all_out = add_dense(self.params, "aux_all.out", H, 1, rng)
        self.aux_wo_hidden = add_dense(self.params, "aux_without.hidden", (S - 1) * H, H, rng,
                                       "tanh", stack=(S,))
        self.aux_wo_out = add_dense(self.params, "aux_without.out", H, 1, rng, stack=(S,))
        self.prototypes = self.params.add("prototypes", rng.uniform(0.0, 1.0, size=(K, S)))
        # row s lists the variables fed to the leave-s-out head, ascending
        self._without = np.array([[j for j in range(S) if j != s] for s in range(S)])

    @property
    def bank(self) -> proto.PrototypeBank:
        return proto.PrototypeBank(self.prototypes, self.config.tau, self.config.gamma)

    # ------------------------------------------------------------- stages

    def _check_inputs(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 2:
            inputs = inputs[None]
        S, T = self.config.num_variables, self.config.window_length
        if inputs.ndim != 3 or inputs.shape[1:] != (S, T):
            raise DataError(f"expected windows of shape (B, {S}, {T}), got {inputs.shape}")
        return inputs

    def encode_all(self, inputs: np.ndarray) -> Tensor:
        """Final LSTM hidden state per variable, shape ``(S, B, H)``."""
        inputs = self._check_inputs(inputs)
        B, S, T = inputs.shape
        H = self.config.hidden_size
        series = np.transpose(inputs, (1, 0, 2))[..., None]  # (S, B, T, 1)
        hc = Tensor(np.zeros((S, B, 2 * H)))
        enc = self.encoder
        for t in range(T):
            hc = ag.lstm_step(series[:, :, t], hc, enc.w_x, enc.w_h, enc.bias)
        return hc[..., :H]

    def per_variable_predictions(self, embeddings: Tensor) -> Tensor:
        """``(B, S)`` forecasts, head s reading only embedding s."""
        hidden = dense_forward(embeddings, self.head_hidden)
        out = dense_forward(hidden, self.head_out)  # (S, B, 1)
        return ag.transpose(out.reshape(out.shape[:2]))

    def auxiliary_predictions(self, embeddings: Tensor) -> tuple[Tensor, Tensor]:
        """All-variable forecast ``(B,)`` and leave-one-out forecasts ``(B, S)``."""
        S, B, H = embeddings.shape
        by_example = ag.transpose(embeddings, (1, 0, 2))  # (B, S, H)
        everything = by_example.reshape(B, S * H)
        y_all = dense_forward(dense_forward(everything, self.aux_all_hidden), self.aux_all_out)
        without = ag.take_rows(by_example, self._without, axis=1).reshape(B, S, (S - 1) * H)
        without = ag.transpose(without, (1, 0, 2))  # (S, B, (S-1)H)
        y_wo = dense_forward(dense_forward(without, self.aux_wo_hidden), self.aux_wo_out)
        return y_all.reshape(B), ag.transpose(y_wo.reshape(S, B))

    def auxiliary_errors(self, embeddings: Tensor, targets) -> tuple[Tensor, Tensor]:
        targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        if not np.isfinite(targets).all():
            raise DataError("non-finite target value")
        y_all, y_wo = self.auxiliary_predictions(embeddings)
        return ag.square(y_all - targets), ag.square(y_wo - targets[:, None])

    # ------------------------------------------------------------ full pass

    def forward(self, inputs: np.ndarray, targets, mode: str = "train",
                rng: Optional[np.random.Generator] = None,
                alpha: Optional[float] = None) -> Forward:
        """Batched pass. ``mode='train'`` samples prototypes with Gumbel noise
        from ``rng``; ``mode='inference'`` picks the most similar prototype.
        ``alpha=1`` skips the prototype path entirely."""
        if mode not in ("train", "inference"):
            raise ConfigError(f"unknown mode {mode!r}")
        alpha = self.config.alpha if alpha is None else alpha
        emb = self.encode_all(inputs)
        preds = self.per_variable_predictions(emb)
        eps_all, eps_wo = self.auxiliary_errors(emb, targets)
        delta = granger_attribution(eps_all, eps_wo)
        q = granger_attention(delta)
        r = d = e = None
        if alpha < 1.0:
            d = proto.similarity(q, self.prototypes)
            if mode == "train":
                if rng is None:
                    raise ConfigError("training mode needs a random generator")
                e = proto.gumbel_softmax(d, self.config.tau, proto.gumbel_noise(rng, d.shape))
            else:
                e = Tensor(proto.argmax_onehot(d))
            r = proto.prototypical_attention(self.prototypes, e)
        a = mix_attention(q, r, alpha)
        y_hat = predict_target(a, preds)
        if not np.isfinite(y_hat.data).all():
            raise NumericError("non-finite prediction")
        return Forward(preds, eps_all, eps_wo, delta, q, r, a, y_hat, d, e)

    def infer(self, example: WindowedExample, mode: str = "inference",
              rng: Optional[np.random.Generator] = None) -> tuple[float, AttentionRecord]:
        out = self.forward(example.inputs[None], [example.target_next], mode=mode, rng=rng)
        return float(out.y_hat.data[0]), self._record(out, 0)

    def _record(self, out: Forward, n: int) -> AttentionRecord:
        q = out.q.data[n].copy()
        if out.r is not None:
            r = out.r.data[n].copy()
            k = int(out.e.data[n].argmax())
        else:
            r, k = self.attention_from_q(q)[1:3]
        return AttentionRecord(q, r, out.a.data[n].copy(), k, out.delta_eps.data[n].copy())

    def attention_from_q(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
        """Deterministic prototype attention for a fixed ``q``: returns (a, r, k)."""
        d = proto.similarity(q, Tensor(self.prototypes.data)).data
        k = int(d.argmax())
        r = self.bank.normalized()[k]
        alpha = self.config.alpha
        a = q if alpha == 1.0 else alpha * q + (1.0 - alpha) * r
        return a, r, k

    # ------------------------------------------------------------ persistence

    def state(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "parameters": {name: {"shape": list(p.data.shape), "values": p.data.reshape(-1).tolist()}
                           for name, p in self.params.items()},
        }

    def save(self, path: str | Path) -> None:
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(json.dumps(self.state()) + "\n", encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def from_state(cls, state: dict) -> "IngraModel":
        if state.get("format") != CHECKPOINT_FORMAT:
            raise DataError("not an InGRA checkpoint")
        if state.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {state.get('version')}")
        model = cls(ModelConfig.from_dict(state["config"]), np.random.default_rng(0))
        model.params.load_state_dict({
            name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in state["parameters"].items()})
        return model

    @classmethod
    def load(cls, path: str | Path) -> "IngraModel":
        return cls.from_state(json.loads(Path(path).read_text(encoding="utf-8")))
