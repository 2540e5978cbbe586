"""Synthetic heterogeneous benchmarks, windowing and CSV/dataset I/O.

A sample stores its target series in row 0 and exogenous series in rows
1..S_exo. Ground-truth parent indicators refer to the exogenous rows only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, GenerationError

NOISE_STD = 0.1  # variance 0.01
COEF_STD = math.sqrt(0.1)  # N(0, 0.1) read as variance 0.1
DIVERGENCE_LIMIT = 1e3
MAX_REGENERATIONS = 20
DATASET_FORMAT = "ingra-dataset"
DATASET_VERSION = 1


@dataclass
class NarmaParams:
    alpha: float
    beta: float
    gamma: float
    order: int = 10
    noise_std: float = NOISE_STD

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError("NARMA order must be >= 1")
        if not self.noise_std > 0:
            raise ConfigError("noise_std must be positive")


@dataclass
class TargetGenParams:
    omega: np.ndarray
    eta: np.ndarray
    lag: int

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.int64)
        self.eta = np.asarray(self.eta, dtype=np.float64)
        if not np.isin(self.omega, (0, 1)).all() or self.omega.sum() < 1:
            raise ConfigError("omega must be a 0/1 vector with at least one 1")
        if self.lag < 1 or self.eta.shape != (self.omega.size, self.lag):
            raise ConfigError(f"eta must have shape ({self.omega.size}, {self.lag})")


@dataclass
class MtsSample:
    id: str
    values: np.ndarray
    names: list[str] = field(default_factory=list)
    ground_truth: Optional[np.ndarray] = None
    structure_id: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"{self.id}: values must be a 2-D array")
        if not np.isfinite(self.values).all():
            raise DataError(f"{self.id}: values contain NaN or Inf")
        if not self.names:
            self.names = ["target"] + [f"x{s}" for s in range(1, self.num_variables)]

    @property
    def num_variables(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowedExample:
    inputs: np.ndarray
    target_next: float
    sample_id: str
    offset: int


# ---------------------------------------------------------------- generators

def draw_narma_params(rng: np.random.Generator, order: int = 10) -> NarmaParams:
    a, b, g = rng.normal(0.0, COEF_STD, size=3)
    return NarmaParams(float(a), float(b), float(g), order)


def _narma_once(p: NarmaParams, length: int, rng: np.random.Generator) -> np.ndarray:
    eps = rng.normal(0.0, p.noise_std, size=length)
    x = np.empty(length)
    d = p.order
    x[:d] = eps[:d]
    window = x[:d].sum()  # sum of x[t-d .. t-1]
    for t in range(d, length):
        prev = x[t - 1]
        x[t] = (p.alpha * prev + p.beta * prev * window
                + p.gamma * eps[t - d] * eps[t - 1] + eps[t])
        if not abs(x[t]) <= DIVERGENCE_LIMIT:
            return x[: t + 1]
        window += x[t] - x[t - d]
    return x


def narma_generate(length: int, rng: np.random.Generator, params: Optional[NarmaParams] = None,
                   order: int = 10) -> tuple[np.ndarray, NarmaParams]:
    """NARMA series of ``length`` values; returns the series and the coefficients used.

    Without ``params`` the coefficients are drawn at random and redrawn when
    the series diverges.
    """
    d = params.order if params is not None else order
    if length <= d:
        raise ConfigError(f"length {length} must exceed NARMA order {d}")
    for _ in range(MAX_REGENERATIONS):
        p = params if params is not None else draw_narma_params(rng, order)
        x = _narma_once(p, length, rng)
        if x.size == length:
            return x, p
    raise GenerationError(f"NARMA series diverged {MAX_REGENERATIONS} times")


def target_generate(exogenous: np.ndarray, params: TargetGenParams, rng: np.random.Generator,
                    noise_std: float = NOISE_STD) -> np.ndarray:
    """``y_t = sum_s omega_s * eta_s . tanh(x_s[t-p:t]) + noise`` for t >= p."""
    exogenous = np.asarray(exogenous, dtype=np.float64)
    n_exo, length = exogenous.shape
    p = params.lag
    if n_exo != params.omega.size:
        raise ConfigError(f"{n_exo} exogenous series but omega has {params.omega.size} entries")
    if p >= length:
        raise ConfigError(f"lag {p} must be smaller than series length {length}")
    y = rng.normal(0.0, noise_std, size=length)
    # lagged[s, t - p, j] = x_s[t - p + j]
    lagged = np.lib.stride_tricks.sliding_window_view(np.tanh(exogenous), p, axis=1)[:, :-1, :]
    weights = params.omega[:, None] * params.eta
    y[p:] += np.einsum("stj,sj->t", lagged, weights)
    return y


def _draw_structures(count: int, n_exo: int, rng: np.random.Generator) -> np.ndarray:
    lo = min(2, n_exo)
    hi = max(lo, n_exo - 1)
    available = sum(math.comb(n_exo, k) for k in range(lo, hi + 1))
    if count > available:
        raise ConfigError(f"cannot draw {count} distinct structures over {n_exo} variables")
    seen, out = set(), []
    while len(out) < count:
        k = int(rng.integers(lo, hi + 1))
        omega = np.zeros(n_exo, dtype=np.int64)
        omega[rng.choice(n_exo, size=k, replace=False)] = 1
        key = omega.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(omega)
    return np.array(out)


@dataclass
class Benchmark:
    samples: list[MtsSample]
    train_ids: list[str]
    unseen_ids: list[str]
    structures: np.ndarray
    settings: dict

    def by_id(self) -> dict[str, MtsSample]:
        return {s.id: s for s in self.samples}

    def split(self, name: str) -> list[MtsSample]:
        ids = {"train": self.train_ids, "unseen": self.unseen_ids}[name]
        index = self.by_id()
        return [index[i] for i in ids]

    @property
    def num_variables(self) -> int:
        return self.samples[0].num_variables


def make_individual(index: int, omega: np.ndarray, length: int, lag: int, seed: int,
                    order: int = 10) -> tuple[np.ndarray, TargetGenParams]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))
    exo = np.stack([narma_generate(length, rng, order=order)[0] for _ in range(omega.size)])
    eta = rng.choice(np.array([-1.0, 1.0]), size=(omega.size, lag))
    params = TargetGenParams(omega, eta, lag)
    y = target_generate(exo, params, rng)
    return np.vstack([y[None, :], exo]), params


def make_benchmark(num_structures: int, per_structure: int, num_exogenous: int, length: int,
                   lag: int = 3, seed: int = 0, order: int = 10,
                   unseen_fraction: float = 0.2) -> Benchmark:
    """Heterogeneous benchmark: ``per_structure`` individuals for each of
    ``num_structures`` distinct parent sets, split per structure into
    training and unseen individuals."""
    if num_structures < 1 or per_structure < 1:
        raise ConfigError("need at least one structure and one individual per structure")
    if num_exogenous < 1:
        raise ConfigError("need at least one exogenous variable")
    if length <= max(lag, order):
        raise ConfigError(f"length {length} too short for lag {lag} / order {order}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    structures = _draw_structures(num_structures, num_exogenous, rng)
    n_unseen = int(round(per_structure * unseen_fraction))
    samples, train_ids, unseen_ids = [], [], []
    index = 0
    for c, omega in enumerate(structures):
        members = []
        for _ in range(per_structure):
            values, _params = make_individual(index, omega, length, lag, seed, order)
            sample = MtsSample(f"ind{index:05d}", values, ground_truth=omega.copy(), structure_id=c)
            samples.append(sample)
            members.append(sample.id)
            index += 1
        order_ = rng.permutation(per_structure)
        held = set(order_[per_structure - n_unseen:].tolist())
        for j, sid in enumerate(members):
            (unseen_ids if j in held else train_ids).append(sid)
    settings = dict(num_structures=num_structures, per_structure=per_structure,
                    num_exogenous=num_exogenous, length=length, lag=lag, seed=seed,
                    order=order, unseen_fraction=unseen_fraction)
    return Benchmark(samples, train_ids, unseen_ids, structures, settings)


# ----------------------------------------------------------------- windowing

def window_offsets(length: int, window: int, stride: int = 1) -> np.ndarray:
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if length < window + 1:
        raise DataError(f"series of length {length} is shorter than window + 1 = {window + 1}")
    return np.arange(0, length - window, stride)


def window_arrays(sample: MtsSample, window: int, stride: int = 1,
                  target_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stacked windows: inputs ``(N, S, window)`` and next-step targets ``(N,)``."""
    offsets = window_offsets(sample.length, window, stride)
    view = np.lib.stride_tricks.sliding_window_view(sample.values, window, axis=1)
    inputs = np.ascontiguousarray(np.transpose(view[:, offsets, :], (1, 0, 2)))
    targets = sample.values[target_index, offsets + window].copy()
    return inputs, targets


def standardize(sample: MtsSample) -> MtsSample:
    """Copy of ``sample`` with every series shifted to mean 0 and scaled to
    unit variance; constant series are only centred."""
    mean = sample.values.mean(axis=1, keepdims=True)
    std = sample.values.std(axis=1, keepdims=True)
    values = (sample.values - mean) / np.where(std > 0, std, 1.0)
    return MtsSample(sample.id, values, list(sample.names), sample.ground_truth, sample.structure_id)


def window_series(sample: MtsSample, window: int, stride: int = 1,
                  target_index: int = 0) -> list[WindowedExample]:
    inputs, targets = window_arrays(sample, window, stride, target_index)
    offsets = window_offsets(sample.length, window, stride)
    return [WindowedExample(inputs[n], float(targets[n]), sample.id, int(offsets[n]))
            for n in range(len(offsets))]


# ----------------------------------------------------------------- CSV I/O

def write_csv(sample: MtsSample, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(sample.names)
        for row in sample.values.T:
            writer.writerow([repr(float(v)) for v in row])


def load_csv(path: str | Path, target: Optional[str] = None,
             sample_id: Optional[str] = None) -> MtsSample:
    """Read one individual: header row of variable names, one row per time step.

    The target column is ``target`` (by name) or the column named "target".
    It is moved to row 0 of the returned sample.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    want = target if target is not None else "target"
    if want not in header:
        raise DataError(f"{path}: no target column {want!r} in header {header}")
    values = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r}, column {header[c]!r}: "
                                f"non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r}, column {header[c]!r}: non-finite value {cell!r}")
            values[r - 2, c] = v
    t = header.index(want)
    order = [t] + [c for c in range(len(header)) if c != t]
    return MtsSample(sample_id or path.stem, values[:, order].T,
                     names=[header[c] for c in order])


# -------------------------------------------------------------- dataset dirs

def write_dataset(bench: Benchmark, out_dir: str | Path) -> None:
    """Manifest JSON, ground-truth JSON and one CSV per individual."""
    out = Path(out_dir)
    (out / "series").mkdir(parents=True, exist_ok=True)
    for sample in bench.samples:
        write_csv(sample, out / "series" / f"{sample.id}.csv")
    truth = {s.id: {"omega": s.ground_truth.tolist(), "structure_id": s.structure_id}
             for s in bench.samples if s.ground_truth is not None}
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "num_variables": bench.num_variables,
        "target_index": 0,
        "settings": bench.settings,
        "structures": bench.structures.tolist(),
        "splits": {"train": bench.train_ids, "unseen": bench.unseen_ids},
    }
    _write_json(out / "ground_truth.json", truth)
    _write_json(out / "manifest.json", manifest)


def read_dataset(in_dir: str | Path) -> Benchmark:
    src = Path(in_dir)
    manifest_path = src / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"{src}: no manifest.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != DATASET_FORMAT:
        raise DataError(f"{manifest_path}: not an {DATASET_FORMAT} manifest")
    truth_path = src / "ground_truth.json"
    truth = json.loads(truth_path.read_text(encoding="utf-8")) if truth_path.is_file() else {}
    ids = manifest["splits"]["train"] + manifest["splits"]["unseen"]
    samples = []
    for sid in sorted(ids):
        sample = load_csv(src / "series" / f"{sid}.csv", sample_id=sid)
        if sid in truth:
            sample.ground_truth = np.asarray(truth[sid]["omega"], dtype=np.int64)
            sample.structure_id = truth[sid]["structure_id"]
        samples.append(sample)
    structures = np.asarray(manifest.get("structures", []), dtype=np.int64)
    return Benchmark(samples, list(manifest["splits"]["train"]),
                     list(manifest["splits"]["unseen"]), structures,
                     manifest.get("settings", {}))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
