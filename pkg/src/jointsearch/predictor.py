"""Accuracy predictor: a small numpy MLP with hand-written backprop.

Architecture is ``in -> hidden -> hidden -> 1`` with ReLU hidden units and a
sigmoid output, trained on mean squared error with Adam.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .encoding import layout
from .errors import (
    CorruptCheckpointError,
    DegenerateTestSetError,
    DimensionMismatchError,
    FingerprintWarning,
    NonFiniteLossError,
)
from .space import SearchSpaceConfig

MAGIC = b"APQPRED1"
HIDDEN = 400
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    variant: str = "fp"
    space_fingerprint: Optional[str] = None

    def __post_init__(self):
        d, h = self.W1.shape
        shapes = {"b1": (h,), "W2": (h, h), "b2": (h,), "W3": (h, 1), "b3": (1,)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatchError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return replace(self, **dict(zip(PARAM_NAMES, arrays)))

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def equal(self, other: "MlpParams") -> bool:
        """Bitwise equality of all weights plus metadata."""
        return (
            self.variant == other.variant
            and self.space_fingerprint == other.space_fingerprint
            and all(a.shape == b.shape and a.tobytes() == b.tobytes()
                    for a, b in zip(self.arrays(), other.arrays()))
        )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


# Short fine-tuning schedule used after transfer_init.
TRANSFER_TRAIN_DEFAULTS = {"learning_rate": 1e-4, "epochs": 30}


@dataclass
class LabeledSample:
    encoding: np.ndarray
    accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


@dataclass
class TrainResult:
    params: MlpParams
    final_mse: float
    loss_history: list = field(default_factory=list)


def init_params(input_dim: int, hidden: int = HIDDEN, seed: int = 0, scale: float = 1.0,
                variant: str = "fp", space_fingerprint: Optional[str] = None) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        s = scale * np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=(fan_in, fan_out))

    return MlpParams(
        glorot(input_dim, hidden), np.zeros(hidden),
        glorot(hidden, hidden), np.zeros(hidden),
        glorot(hidden, 1), np.zeros(1),
        variant=variant, space_fingerprint=space_fingerprint,
    )


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise DimensionMismatchError(f"input has shape {np.shape(x)}, predictor expects {params.input_dim}")
    return X, single


def _first_layer_ordered(X: np.ndarray, W1: np.ndarray, b1: np.ndarray) -> np.ndarray:
    # Accumulate b1 + sum_j x_j W1[j] over nonzero x_j in ascending j. Inserting
    # zero-weight coordinates cannot change the result, which keeps a
    # transferred predictor bitwise equal to its source.
    n, d = X.shape
    nz = X != 0
    m = int(nz.sum(axis=1).max()) if n else 0
    cols = np.where(nz, np.arange(d), d)
    cols.sort(axis=1)
    idx = cols[:, :m]
    Xp = np.concatenate([X, np.zeros((n, 1))], axis=1)
    Wp = np.concatenate([W1, np.zeros((1, W1.shape[1]))], axis=0)
    vals = np.take_along_axis(Xp, idx, axis=1)
    h = np.broadcast_to(b1, (n, W1.shape[1])).copy()
    for t in range(m):
        h += vals[:, t:t + 1] * Wp[idx[:, t]]
    return h


def forward(params: MlpParams, x):
    """Predicted accuracy for one encoding (returns float) or a batch (returns array)."""
    X, single = _as_batch(params, x)
    a1 = np.maximum(_first_layer_ordered(X, params.W1, params.b1), 0.0)
    a2 = np.maximum(a1 @ params.W2 + params.b2, 0.0)
    y = _sigmoid((a2 @ params.W3 + params.b3)[:, 0])
    return float(y[0]) if single else y


def _forward_cache(params: MlpParams, X: np.ndarray):
    z1 = X @ params.W1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.W2 + params.b2
    a2 = np.maximum(z2, 0.0)
    y = _sigmoid((a2 @ params.W3 + params.b3)[:, 0])
    return z1, a1, z2, a2, y


def _backward(params: MlpParams, X, t, cache) -> list[np.ndarray]:
    z1, a1, z2, a2, y = cache
    n = X.shape[0]
    dy = 2.0 * (y - t) / n
    dz3 = (dy * y * (1.0 - y))[:, None]
    gW3 = a2.T @ dz3
    gb3 = dz3.sum(axis=0)
    dz2 = (dz3 @ params.W3.T) * (z2 > 0)
    gW2 = a1.T @ dz2
    gb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ params.W2.T) * (z1 > 0)
    gW1 = X.T @ dz1
    gb1 = dz1.sum(axis=0)
    return [gW1, gb1, gW2, gb2, gW3, gb3]


def _stack(samples) -> tuple[np.ndarray, np.ndarray]:
    # also accepts an already-stacked (X, t) pair
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        X, t = samples
        return np.asarray(X, dtype=float), np.asarray(t, dtype=float)
    X = np.stack([np.asarray(s.encoding, dtype=float) for s in samples])
    t = np.array([s.accuracy for s in samples], dtype=float)
    return X, t


def loss(params: MlpParams, samples) -> float:
    X, t = _stack(samples)
    y = forward(params, X)
    return float(np.mean((y - t) ** 2))


def grad(params: MlpParams, samples) -> MlpParams:
    """Exact gradient of the batch-mean squared error, shaped like ``params``."""
    X, t = _stack(samples)
    if len(t) == 0:
        raise ValueError("empty batch")
    if X.shape[1] != params.input_dim:
        raise DimensionMismatchError(f"batch dim {X.shape[1]} != predictor dim {params.input_dim}")
    return params.with_arrays(_backward(params, X, t, _forward_cache(params, X)))


def train(init: MlpParams, data, cfg: TrainConfig) -> TrainResult:
    """Adam on shuffled mini-batches. Deterministic for fixed (init, data, cfg)."""
    X, t = _stack(data)
    if len(t) == 0:
        raise ValueError("no training data")
    if X.shape[1] != init.input_dim:
        raise DimensionMismatchError(f"data dim {X.shape[1]} != predictor dim {init.input_dim}")
    params = init.copy()
    if cfg.epochs == 0:
        return TrainResult(params, float(np.mean((forward(params, X) - t) ** 2)), [])

    rng = np.random.default_rng(cfg.seed)
    theta = params.arrays()
    m = [np.zeros_like(p) for p in theta]
    v = [np.zeros_like(p) for p in theta]
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate
    step = 0
    history = []
    n = len(t)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sq_err = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb, tb = X[idx], t[idx]
            cache = _forward_cache(params, Xb)
            sq_err += float(np.sum((cache[-1] - tb) ** 2))
            grads = _backward(params, Xb, tb, cache)
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for p, g, mi, vi in zip(theta, grads, m, v):
                mi *= b1
                mi += (1.0 - b1) * g
                vi *= b2
                vi += (1.0 - b2) * g * g
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        epoch_mse = sq_err / n
        if not np.isfinite(epoch_mse) or not all(np.all(np.isfinite(p)) for p in theta):
            raise NonFiniteLossError(epoch)
        history.append(epoch_mse)
    final = float(np.mean((_forward_cache(params, X)[-1] - t) ** 2))
    return TrainResult(params, final, history)


def transfer_init(fp: MlpParams, space: SearchSpaceConfig) -> MlpParams:
    """Widen a full-precision predictor's input to the joint encoding.

    Rows of the first layer move to their arch coordinates inside the joint
    layout; rows for the new bit coordinates start at zero, so the widened
    predictor reproduces the source predictor exactly until fine-tuned.
    """
    lay = layout(space)
    if fp.input_dim != lay.arch_dim:
        raise DimensionMismatchError(f"fp predictor has input_dim {fp.input_dim}, space arch_dim is {lay.arch_dim}")
    W1 = np.zeros((lay.joint_dim, fp.hidden_dim))
    W1[lay.arch_index_in_joint] = fp.W1
    return MlpParams(W1, fp.b1.copy(), fp.W2.copy(), fp.b2.copy(), fp.W3.copy(), fp.b3.copy(),
                     variant="mp-transfer", space_fingerprint=fp.space_fingerprint)


def pairwise_accuracy_from_scores(pred, labels, chunk: int = 1024) -> float:
    pred = np.asarray(pred, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n = len(labels)
    if n < 2:
        raise DegenerateTestSetError("need at least two test samples")
    correct = 0
    total = 0
    for s in range(0, n, chunk):
        rows = slice(s, min(s + chunk, n))
        i = np.arange(rows.start, rows.stop)[:, None]
        upper = np.arange(n)[None, :] > i
        dl = np.sign(labels[rows, None] - labels[None, :])
        dp = np.sign(pred[rows, None] - pred[None, :])
        counted = upper & (dl != 0)
        total += int(counted.sum())
        correct += int((counted & (dp == dl)).sum())
    if total == 0:
        raise DegenerateTestSetError("all test labels are equal")
    return correct / total


def pairwise_accuracy(params: MlpParams, test) -> float:
    """Share of distinct-label pairs ranked correctly; predicted ties count as wrong."""
    X, t = _stack(test)
    return pairwise_accuracy_from_scores(forward(params, X), t)


# -- checkpoint I/O ---------------------------------------------------------

def save(params: MlpParams, path) -> None:
    header = {
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "space_fingerprint": params.space_fingerprint,
        "variant": params.variant,
    }
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        f.write(b"\n")
        f.write(blob)


def load(path, expected_fingerprint: Optional[str] = None) -> MlpParams:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CorruptCheckpointError(f"{path}: bad magic bytes")
    nl = raw.find(b"\n", len(MAGIC))
    if nl < 0:
        raise CorruptCheckpointError(f"{path}: header not terminated")
    try:
        header = json.loads(raw[len(MAGIC):nl])
        d, h = int(header["input_dim"]), int(header["hidden_dim"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header") from exc
    shapes = [(d, h), (h,), (h, h), (h,), (h, 1), (1,)]
    sizes = [int(np.prod(s)) for s in shapes]
    blob = raw[nl + 1:]
    if len(blob) != 8 * sum(sizes):
        raise CorruptCheckpointError(f"{path}: expected {8 * sum(sizes)} weight bytes, found {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f8").astype(float)
    arrays, off = [], 0
    for shape, size in zip(shapes, sizes):
        arrays.append(flat[off:off + size].reshape(shape).copy())
        off += size
    try:
        params = MlpParams(*arrays, variant=header.get("variant", "fp"),
                           space_fingerprint=header.get("space_fingerprint"))
    except ValueError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from exc
    if expected_fingerprint is not None and params.space_fingerprint != expected_fingerprint:
        warnings.warn(
            f"checkpoint built for space {params.space_fingerprint}, expected {expected_fingerprint}",
            FingerprintWarning, stacklevel=2,
        )
    return params

