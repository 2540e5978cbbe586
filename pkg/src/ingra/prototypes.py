"""Prototype bank: cosine scoring, Gumbel-Softmax selection, diversity
penalty and spherical k-means initialisation.

Prototypes are stored unconstrained; every use except the diversity
penalty goes through a ReLU so that similarities are non-negative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ContractError

SIM_FLOOR = 1e-8
DEGENERATE_SUM = 1e-12


@dataclass
class PrototypeBank:
    prototypes: Tensor  # (K, S)
    tau: float = 0.5
    gamma: float = 0.5

    def __post_init__(self):
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 1:
            raise ConfigError("prototype bank needs shape (K, S) with K >= 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    def normalized(self) -> np.ndarray:
        """ReLU-projected prototypes, each scaled to sum to one."""
        p = np.maximum(self.prototypes.data, 0.0)
        total = p.sum(axis=1, keepdims=True)
        uniform = np.full_like(p, 1.0 / p.shape[1])
        return np.where(total > DEGENERATE_SUM, p / np.where(total > 0, total, 1.0), uniform)


@dataclass
class GumbelSample:
    e: Tensor  # (..., K) relaxed one-hot
    noise: np.ndarray


def _row_norm(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """L2 norm along the last axis, with zero rows mapped to 1 (and flagged)."""
    sq = ag.tsum(ag.square(x), axis=-1, keepdims=True)
    valid = sq.data > 0.0
    return ag.sqrt(ag.where(valid, sq, 1.0)), valid


def similarity(q, prototypes) -> Tensor:
    """Cosine between each attention vector and each ReLU-projected prototype.

    ``q`` is ``(S,)`` or ``(B, S)``; returns ``(K,)`` or ``(B, K)`` clamped to
    ``[1e-8, 1]``.
    """
    q, prototypes = ag.as_tensor(q), ag.as_tensor(prototypes)
    single = q.ndim == 1
    if single:
        q = q.reshape(1, -1)
    if q.shape[-1] != prototypes.shape[-1]:
        raise ConfigError(f"attention length {q.shape[-1]} != prototype length {prototypes.shape[-1]}")
    projected = ag.relu(prototypes)
    q_norm, q_ok = _row_norm(q)
    if not q_ok.all():
        raise ContractError("zero-norm attention vector")
    p_norm, p_ok = _row_norm(projected)
    cos = (q @ ag.transpose(projected)) / (q_norm * ag.transpose(p_norm))
    cos = ag.where(p_ok.T, cos, SIM_FLOOR)
    d = ag.clip(cos, SIM_FLOOR, 1.0)
    return d.reshape(d.shape[-1]) if single else d


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def gumbel_softmax(d, tau: float, noise: np.ndarray) -> Tensor:
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    return ag.softmax((ag.log(d) + noise) * (1.0 / tau), axis=-1)


def gumbel_softmax_select(d, tau: float, rng: np.random.Generator) -> GumbelSample:
    """Relaxed one-hot sample ``softmax((log d + g) / tau)`` with Gumbel(0, 1) noise."""
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    d = ag.as_tensor(d)
    noise = gumbel_noise(rng, d.shape)
    return GumbelSample(gumbel_softmax(d, tau, noise), noise)


def argmax_onehot(d) -> np.ndarray:
    data = d.data if isinstance(d, Tensor) else np.asarray(d)
    out = np.zeros_like(data)
    idx = data.argmax(axis=-1)
    np.put_along_axis(out, np.expand_dims(idx, -1), 1.0, axis=-1)
    return out


def prototypical_attention(prototypes, e) -> Tensor:
    """Mix the projected prototypes by ``e`` and normalise onto the simplex."""
    prototypes, e = ag.as_tensor(prototypes), ag.as_tensor(e)
    mixed = e @ ag.relu(prototypes) if e.ndim > 1 else (e.reshape(1, -1) @ ag.relu(prototypes)).reshape(-1)
    return normalize_simplex(mixed)


def normalize_simplex(x: Tensor) -> Tensor:
    """``x / sum(x)`` along the last axis, uniform where the sum is < 1e-12."""
    total = ag.tsum(x, axis=-1, keepdims=True)
    degenerate = total.data < DEGENERATE_SUM
    size = x.shape[-1]
    safe = ag.where(degenerate, 1.0, total)
    return ag.where(np.broadcast_to(degenerate, x.shape), 1.0 / size, x / safe)


def diversity_loss(prototypes, gamma: float) -> Tensor:
    """``sum_{i<j} max(gamma, cos(p_i, p_j))`` on the raw prototypes."""
    prototypes = ag.as_tensor(prototypes)
    k = prototypes.shape[0]
    if k < 2:
        return ag.mul(ag.tsum(prototypes), 0.0)
    norm, ok = _row_norm(prototypes)
    unit = prototypes / norm
    cos = unit @ ag.transpose(unit)
    iu = np.triu_indices(k, 1)
    pair_ok = (ok[:, 0][iu[0]] & ok[:, 0][iu[1]])
    pairs = ag.where(pair_ok, cos[iu], 0.0)
    return ag.tsum(ag.maximum(pairs, gamma))


# -------------------------------------------------------------- k-means init

def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def _seed_centers(unit: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with cosine distance."""
    n = unit.shape[0]
    chosen = [int(rng.integers(n))]
    closest = 1.0 - unit @ unit[chosen[0]]
    for _ in range(1, k):
        weights = np.maximum(closest, 0.0) ** 2
        total = weights.sum()
        if total > 0:
            idx = int(rng.choice(n, p=weights / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, 1.0 - unit @ unit[idx])
    return unit[chosen].copy()


def kmeans_init(vectors: np.ndarray, k: int, rng: np.random.Generator,
                max_iter: int = 100) -> np.ndarray:
    """Spherical k-means; returns ``(k, S)`` unit-norm cluster centres."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ConfigError("k-means input must be a 2-D array")
    n = vectors.shape[0]
    if k < 1 or n < k:
        raise ConfigError(f"k-means needs 1 <= k <= n, got k={k}, n={n}")
    unit = _unit_rows(vectors)
    centers = _seed_centers(unit, k, rng)
    labels = None
    for _ in range(max_iter):
        sims = unit @ centers.T
        new_labels = sims.argmax(axis=1)
        for c in range(k):
            if not (new_labels == c).any():
                # reseed from the point worst served by its current centre
                own = sims[np.arange(n), new_labels]
                far = int(own.argmin())
                new_labels[far] = c
                sims[far] = -np.inf
                sims[far, c] = 1.0
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = _unit_rows(np.stack([unit[labels == c].mean(axis=0) for c in range(k)]))
    return centers


def write_prototypes_csv(bank: PrototypeBank, names: list[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["prototype"] + list(names))
        for k, row in enumerate(bank.normalized()):
            writer.writerow([k] + [repr(float(v)) for v in row])
