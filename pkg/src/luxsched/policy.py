"""Behavior cloning of oracle schedules into a per-frame light controller.

The controller sees hand-crafted statistics of the current (clipped) image
together with the previously commanded level and outputs a grid index via a
softmax classifier, optionally with one tanh hidden layer.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .energy import IntensityGrid
from .errors import ValidationError
from .imaging import as_image, luminance, luminance_stats

HIST_BINS = 8
DEFAULT_STRIDES = (8, 10, 12)


def image_features(frame):
    """Four luminance statistics followed by an 8-bin luminance histogram."""
    img = as_image(frame)
    stats = luminance_stats(img)
    lum = np.clip(luminance(img), 0.0, 1.0)
    hist, _ = np.histogram(lum, bins=HIST_BINS, range=(0.0, 1.0))
    hist = hist / lum.size
    return np.concatenate([np.asarray(stats, dtype=np.float64), hist])


def feature_vector(frame, prev_index, n_levels):
    if not 0 <= prev_index < n_levels:
        raise ValidationError(f"previous level index {prev_index} outside [0, {n_levels})")
    onehot = np.zeros(n_levels)
    onehot[prev_index] = 1.0
    return np.concatenate([image_features(frame), onehot])


class Example(NamedTuple):
    frame: np.ndarray
    prev_action: int
    action: int
    stride: int
    time: int


@dataclass
class SupervisionSet:
    examples: list
    grid: IntensityGrid
    strides: tuple

    def __len__(self):
        return len(self.examples)

    def arrays(self):
        """Stack raw feature vectors and labels."""
        n_k = len(self.grid)
        x = np.array([feature_vector(e.frame, e.prev_action, n_k) for e in self.examples])
        y = np.array([e.action for e in self.examples], dtype=np.int64)
        return x, y

    def extend(self, other):
        if other.grid != self.grid:
            raise ValidationError("cannot merge supervision built on different grids")
        self.examples.extend(other.examples)
        self.strides = tuple(sorted(set(self.strides) | set(other.strides)))
        return self


def build_supervision(frames, schedule, strides=DEFAULT_STRIDES, grid=None, mode="holdover"):
    """Training tuples ``(I_t, k*_{t-s}) -> k*_t`` for every stride ``s``.

    ``frames[t][k]`` is the clipped image at time ``t`` under level ``k``.
    In ``"holdover"`` mode the input image is frame ``t`` lit at the level
    scheduled ``s`` frames earlier (the light is held between decisions);
    ``"teacher"`` uses the frame lit at the oracle's own level.  Each stride
    contributes ``T - s`` tuples.
    """
    assignment = [int(i) for i in getattr(schedule, "assignment", schedule)]
    n_t = len(assignment)
    if len(frames) != n_t:
        raise ValidationError(f"{len(frames)} frames but schedule has {n_t} entries")
    strides = tuple(int(s) for s in strides)
    if not strides:
        raise ValidationError("empty stride set")
    for s in strides:
        if s < 1:
            raise ValidationError(f"stride must be >= 1, got {s}")
        if s >= n_t:
            raise ValidationError(f"stride {s} >= sequence length {n_t}")
    if mode not in ("holdover", "teacher"):
        raise ValidationError(f"unknown supervision mode {mode!r}")
    n_k = len(frames[0]) if grid is None else len(grid)
    grid = grid if grid is not None else IntensityGrid(tuple(np.linspace(0, 1, n_k).round(10)))
    if max(assignment) >= n_k:
        raise ValidationError("schedule index outside the grid")

    examples = []
    for s in strides:
        for t in range(s, n_t):
            prev, cur = assignment[t - s], assignment[t]
            lit = prev if mode == "holdover" else cur
            examples.append(Example(frames[t][lit], prev, cur, s, t))
    return SupervisionSet(examples, grid, strides)


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 200
    batch: int = 64
    hidden: int = 0  # 0 -> linear softmax; otherwise tanh hidden width
    seed: int = 0
    full_batch: bool = False


@dataclass(eq=False)
class PolicyModel:
    grid: IntensityGrid
    feature_mean: np.ndarray
    feature_std: np.ndarray
    feature_index: np.ndarray  # columns of the raw feature vector kept after dropping constants
    weights: np.ndarray  # (inputs + 1, K), bias in the last row
    hidden_weights: np.ndarray | None = None  # (features + 1, H)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.asarray(self.feature_std) <= 0):
            raise ValidationError("feature_std must be positive")
        n_in = self.hidden_weights.shape[1] if self.hidden_weights is not None else len(self.feature_index)
        if self.weights.shape != (n_in + 1, len(self.grid)):
            raise ValidationError(
                f"weights shape {self.weights.shape} inconsistent with {n_in} inputs and {len(self.grid)} levels"
            )

    @property
    def params(self):
        return _pack(self.weights, self.hidden_weights)

    def normalize(self, x_raw):
        x_raw = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
        return (x_raw[:, self.feature_index] - self.feature_mean) / self.feature_std

    def logits(self, x_raw):
        return _forward(self.params, self.normalize(x_raw))[0]

    def to_dict(self):
        doc = {
            "grid": list(self.grid.levels),
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "feature_index": [int(i) for i in self.feature_index],
            "weights": self.weights.reshape(-1).tolist(),
            "weights_shape": list(self.weights.shape),
            "hidden": None,
            "metadata": self.metadata,
        }
        if self.hidden_weights is not None:
            doc["hidden"] = {
                "weights": self.hidden_weights.reshape(-1).tolist(),
                "shape": list(self.hidden_weights.shape),
            }
        return doc

    @classmethod
    def from_dict(cls, doc):
        try:
            hidden = None
            if doc.get("hidden"):
                hidden = np.asarray(doc["hidden"]["weights"], dtype=np.float64).reshape(doc["hidden"]["shape"])
            return cls(
                grid=IntensityGrid(tuple(doc["grid"])),
                feature_mean=np.asarray(doc["feature_mean"], dtype=np.float64),
                feature_std=np.asarray(doc["feature_std"], dtype=np.float64),
                feature_index=np.asarray(doc["feature_index"], dtype=np.int64),
                weights=np.asarray(doc["weights"], dtype=np.float64).reshape(doc["weights_shape"]),
                hidden_weights=hidden,
                metadata=dict(doc.get("metadata") or {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed policy model: {exc}") from exc


def save_model(path, model: PolicyModel):
    with open(path, "w") as f:
        json.dump(model.to_dict(), f)


def load_model(path) -> PolicyModel:
    with open(path) as f:
        return PolicyModel.from_dict(json.load(f))


def _pack(weights, hidden):
    return {"out": weights} if hidden is None else {"out": weights, "hidden": hidden}


def _affine(x, w):
    return x @ w[:-1] + w[-1]


def _forward(params, x):
    if "hidden" in params:
        h = np.tanh(_affine(x, params["hidden"]))
        return _affine(h, params["out"]), h
    return _affine(x, params["out"]), None


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(params, x, y):
    """Mean cross-entropy of ``params`` on normalized inputs and its gradient."""
    logits, h = _forward(params, x)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = x.shape[0]
    loss = -log_p[np.arange(n), y].mean()

    d_logits = np.exp(log_p)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n

    grads = {}
    inputs = h if h is not None else x
    grads["out"] = np.vstack([inputs.T @ d_logits, d_logits.sum(axis=0)])
    if h is not None:
        d_h = (d_logits @ params["out"][:-1].T) * (1.0 - h * h)
        grads["hidden"] = np.vstack([x.T @ d_h, d_h.sum(axis=0)])
    return float(loss), grads


def _init_params(n_in, n_out, hidden, rng):
    if hidden:
        w1 = np.zeros((n_in + 1, hidden))
        w1[:-1] = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, hidden))
        w2 = np.zeros((hidden + 1, n_out))
        w2[:-1] = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, n_out))
        return {"out": w2, "hidden": w1}
    return {"out": np.zeros((n_in + 1, n_out))}


def fit(x_raw, y, grid: IntensityGrid, config: TrainConfig = TrainConfig()):
    """Train on a raw feature matrix; returns ``(model, loss_history)``."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n_k = len(grid)
    if x_raw.ndim != 2 or x_raw.shape[0] == 0:
        raise ValidationError("empty supervision")
    if x_raw.shape[0] != y.shape[0]:
        raise ValidationError("feature and label counts differ")
    if y.min() < 0 or y.max() >= n_k:
        raise ValidationError("label outside the intensity grid")

    mean = x_raw.mean(axis=0)
    std = x_raw.std(axis=0)
    keep = np.flatnonzero(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    if keep.size < x_raw.shape[1]:
        dropped = sorted(set(range(x_raw.shape[1])) - set(keep.tolist()))
        warnings.warn(f"dropping zero-variance feature columns {dropped}", stacklevel=2)
    mean, std = mean[keep], std[keep]
    x = (x_raw[:, keep] - mean) / std

    rng = np.random.default_rng(config.seed)
    params = _init_params(x.shape[1], n_k, config.hidden, rng)
    n = x.shape[0]
    batch = n if config.full_batch else max(1, min(config.batch, n))
    history = []
    for _ in range(config.epochs):
        order = np.arange(n) if config.full_batch else rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            _, grads = loss_and_grad(params, x[idx], y[idx])
            for name in params:
                params[name] = params[name] - config.learning_rate * grads[name]
        history.append(loss_and_grad(params, x, y)[0])

    logits, _ = _forward(params, x)
    accuracy = float(np.mean(logits.argmax(axis=1) == y))
    model = PolicyModel(
        grid=grid,
        feature_mean=mean,
        feature_std=std,
        feature_index=keep,
        weights=params["out"],
        hidden_weights=params.get("hidden"),
        metadata={
            "seed": config.seed,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "batch": batch,
            "hidden": config.hidden,
            "loss": history[-1] if history else float("nan"),
            "accuracy": accuracy,
            "n_examples": int(n),
        },
    )
    return model, history


def train(sup: SupervisionSet, config: TrainConfig = TrainConfig()) -> PolicyModel:
    """Fit a controller to a supervision set by mini-batch gradient descent."""
    if len(sup) == 0:
        raise ValidationError("empty supervision")
    x, y = sup.arrays()
    model, _ = fit(x, y, sup.grid, config)
    model.metadata["strides"] = list(sup.strides)
    return model


def predict_proba(model: PolicyModel, frame, prev_index):
    x = feature_vector(frame, prev_index, len(model.grid))
    return softmax(model.logits(x))[0]


def predict(model: PolicyModel, frame, prev_index) -> int:
    """Next grid index; ties go to the lowest index."""
    x = feature_vector(frame, prev_index, len(model.grid))
    return int(np.argmax(model.logits(x)[0]))


class PolicyController:
    """Adapter exposing a trained model through the rollout controller protocol."""

    def __init__(self, model: PolicyModel):
        self.model = model

    def __call__(self, t, observation, prev_index):
        return predict(self.model, observation, prev_index)
