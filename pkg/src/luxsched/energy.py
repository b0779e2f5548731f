"""Unary and pairwise potentials of the light-schedule energy.

For a sequence of ``T`` frames observed under each level of an intensity
grid, the energy of an assignment is the sum of per-frame unary costs
(image penalty and power draw) and per-transition pairwise costs (matching
deficit and intensity jump).  :func:`build_cost_tensors` evaluates every
term into dense arrays that :mod:`luxsched.oracle` minimizes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ._parallel import ordered_map
from .errors import DimensionMismatchError, NumericalError, ValidationError
from .imaging import (
    SATURATION_LEVEL,
    as_image,
    gradient_magnitude,
    luminance,
    luminance_stats,
)

POWER_SLOPE = 21.3636
POWER_INTERCEPT = 9.5455

PENALTY_WEIGHTS = (0.4, 0.4, 0.2)  # saturation, darkness, texture loss

MATCH_GRID = 16
CELL_DARK_MEAN = 0.05
CELL_SATURATED_MAX = 0.5
SALIENCY_THRESHOLD = 0.02


@dataclass(frozen=True)
class IntensityGrid:
    levels: tuple = tuple(round(0.1 * i, 10) for i in range(11))

    def __post_init__(self):
        levels = tuple(float(x) for x in self.levels)
        if not levels:
            raise ValidationError("intensity grid is empty")
        if any(not (0.0 <= x <= 1.0) or math.isnan(x) for x in levels):
            raise ValidationError(f"grid levels must lie in [0, 1]: {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValidationError(f"grid levels must be strictly increasing: {levels}")
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    def __iter__(self):
        return iter(self.levels)

    def as_array(self):
        return np.asarray(self.levels, dtype=np.float64)

    def index_of(self, k, tol=1e-9):
        for i, level in enumerate(self.levels):
            if abs(level - k) <= tol:
                return i
        raise ValidationError(f"level {k} is not on the grid {self.levels}")

    @classmethod
    def parse(cls, text):
        """Parse ``"start:stop:step"`` (endpoints inclusive) or ``"a,b,c"``."""
        text = text.strip()
        if ":" in text:
            try:
                start, stop, step = (float(p) for p in text.split(":"))
            except ValueError as exc:
                raise ValidationError(f"bad level range {text!r}") from exc
            if step <= 0 or stop < start:
                raise ValidationError(f"bad level range {text!r}")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return cls(tuple(round(start + i * step, 10) for i in range(n)))
        try:
            return cls(tuple(float(p) for p in text.split(",") if p.strip()))
        except ValueError as exc:
            raise ValidationError(f"bad level list {text!r}") from exc


@dataclass(frozen=True)
class EnergyModel:
    lambda_d: float = 1.0
    lambda_p: float = 0.01
    lambda_m: float = 1.0
    lambda_s: float = 0.1
    power_slope: float = POWER_SLOPE
    power_intercept: float = POWER_INTERCEPT
    grid: IntensityGrid = field(default_factory=IntensityGrid)

    def __post_init__(self):
        for name in ("lambda_d", "lambda_p", "lambda_m", "lambda_s"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)
        if not isinstance(self.grid, IntensityGrid):
            object.__setattr__(self, "grid", IntensityGrid(tuple(self.grid)))

    def scaled(self, c):
        return replace(
            self,
            lambda_d=self.lambda_d * c,
            lambda_p=self.lambda_p * c,
            lambda_m=self.lambda_m * c,
            lambda_s=self.lambda_s * c,
        )

    def to_dict(self):
        return {
            "lambda_d": self.lambda_d,
            "lambda_p": self.lambda_p,
            "lambda_m": self.lambda_m,
            "lambda_s": self.lambda_s,
            "grid": list(self.grid.levels),
            "power_slope": self.power_slope,
            "power_intercept": self.power_intercept,
        }

    @classmethod
    def from_dict(cls, doc):
        known = {"lambda_d", "lambda_p", "lambda_m", "lambda_s", "power_slope", "power_intercept"}
        unknown = set(doc) - known - {"grid"}
        if unknown:
            raise ValidationError(f"unknown weight keys: {sorted(unknown)}")
        kwargs = {k: float(v) for k, v in doc.items() if k in known}
        if "grid" in doc:
            kwargs["grid"] = IntensityGrid(tuple(doc["grid"]))
        return cls(**kwargs)


def load_weights(path) -> EnergyModel:
    with open(path) as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: weights must be a JSON object")
    return EnergyModel.from_dict(doc)


def save_weights(path, model: EnergyModel):
    with open(path, "w") as f:
        json.dump(model.to_dict(), f, indent=2)


def power(model: EnergyModel, k):
    """Electrical power in watts drawn at intensity fraction ``k``."""
    return model.power_slope * k + model.power_intercept


def image_utility_penalty(stats, weights=PENALTY_WEIGHTS):
    """Penalty in [0, 1] for saturation, darkness and missing texture."""
    w_sat, w_dark, w_tex = weights
    d = (
        w_sat * stats.saturated_fraction
        + w_dark * stats.dark_fraction
        + w_tex * (1.0 - stats.gradient_energy)
    )
    return min(max(d, 0.0), 1.0)


def _cell_edges(n, g):
    return np.linspace(0, n, g + 1).round().astype(int)


def salient_cells(frame, grid=MATCH_GRID, threshold=SALIENCY_THRESHOLD):
    """Boolean ``(grid, grid)`` mask of cells holding a usable gradient peak.

    A cell is skipped when its mean luminance is below 0.05 or more than half
    of its pixels are saturated; otherwise it is salient when its strongest
    forward-difference gradient reaches ``threshold``.
    """
    img = as_image(frame, "frame")
    h, w, _ = img.shape
    if h < grid + 1 or w < grid + 1:
        raise ValidationError(f"frame {h}x{w} too small for a {grid}x{grid} match grid")
    lum = luminance(img)
    mag = np.zeros((h, w))
    mag[:-1, :-1] = gradient_magnitude(lum)
    saturated = np.any(img >= SATURATION_LEVEL, axis=2)
    ys, xs = _cell_edges(h, grid), _cell_edges(w, grid)
    area = np.outer(np.diff(ys), np.diff(xs))

    def cell_sum(x):
        return np.add.reduceat(np.add.reduceat(x, ys[:-1], axis=0), xs[:-1], axis=1)

    mean_lum = cell_sum(lum) / area
    sat_frac = cell_sum(saturated.astype(np.float64)) / area
    peak = np.maximum.reduceat(np.maximum.reduceat(mag, ys[:-1], axis=0), xs[:-1], axis=1)
    valid = (mean_lum >= CELL_DARK_MEAN) & (sat_frac <= CELL_SATURATED_MAX)
    return valid & (peak >= threshold)


def matching_score(frame_a, frame_b, grid=MATCH_GRID):
    """Fraction of grid cells that are salient in both frames."""
    a = as_image(frame_a, "frame_a")
    b = as_image(frame_b, "frame_b")
    if a.shape != b.shape:
        raise DimensionMismatchError(f"frame shapes differ: {a.shape} vs {b.shape}")
    both = salient_cells(a, grid) & salient_cells(b, grid)
    return int(both.sum()) / (grid * grid)


@dataclass(frozen=True, eq=False)
class CostTensors:
    unary: np.ndarray
    pairwise: np.ndarray

    def __post_init__(self):
        unary = np.asarray(self.unary, dtype=np.float64)
        pairwise = np.asarray(self.pairwise, dtype=np.float64)
        if unary.ndim != 2 or unary.shape[0] < 1 or unary.shape[1] < 1:
            raise ValidationError(f"unary must be a nonempty T x K matrix, got {unary.shape}")
        t, k = unary.shape
        if t == 1 and pairwise.size == 0:
            pairwise = pairwise.reshape(0, k, k)
        if pairwise.shape != (t - 1, k, k):
            raise ValidationError(f"pairwise shape {pairwise.shape} != {(t - 1, k, k)}")
        if np.isnan(unary).any() or np.isnan(pairwise).any():
            raise NumericalError("cost tensors contain NaN")
        if not (np.isfinite(unary).all() and np.isfinite(pairwise).all()):
            raise NumericalError("cost tensors contain infinite values")
        object.__setattr__(self, "unary", unary)
        object.__setattr__(self, "pairwise", pairwise)

    @property
    def n_frames(self):
        return self.unary.shape[0]

    @property
    def n_levels(self):
        return self.unary.shape[1]


def _frame_array(frames):
    if isinstance(frames, np.ndarray):
        if frames.ndim != 5 or frames.shape[-1] != 3:
            raise ValidationError(f"frames array must be (T, K, H, W, 3), got {frames.shape}")
        return [list(row) for row in frames]
    rows = [list(row) for row in frames]
    if not rows:
        raise ValidationError("no frames")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValidationError("ragged frame array: every time step needs one frame per level")
    return rows


def frame_features(frame, grid=MATCH_GRID):
    """Per-frame quantities the cost terms need: stats and salient cell mask."""
    img = as_image(frame)
    return luminance_stats(img), salient_cells(img, grid)


class CostTerms(NamedTuple):
    """Unweighted ingredients of the cost tensors."""

    penalty: np.ndarray  # (T, K) image utility penalty
    watts: np.ndarray  # (K,) power draw per level
    matching: np.ndarray  # (T-1, K, K) matching score
    jump: np.ndarray  # (K, K) |level_k - level_l|

    def combine(self, model: EnergyModel) -> CostTensors:
        unary = model.lambda_d * self.penalty + model.lambda_p * self.watts[None, :]
        pairwise = model.lambda_m * (1.0 - self.matching) + model.lambda_s * self.jump[None, :, :]
        return CostTensors(unary, pairwise)


def cost_terms(model: EnergyModel, frames, matching=None) -> CostTerms:
    rows = _frame_array(frames)
    n_t, n_k = len(rows), len(rows[0])
    if n_k != len(model.grid):
        raise ValidationError(f"frames have {n_k} levels, grid has {len(model.grid)}")
    shapes = {np.shape(f) for row in rows for f in row}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"frames have differing shapes: {sorted(shapes)}")

    feats = ordered_map(frame_features, [f for row in rows for f in row])
    penalty = np.array([image_utility_penalty(s) for s, _ in feats]).reshape(n_t, n_k)

    if matching is None:
        masks = np.array([m.reshape(-1) for _, m in feats], dtype=np.int64).reshape(n_t, n_k, -1)
        counts = np.einsum("tkc,tlc->tkl", masks[:-1], masks[1:])
        matching = counts / masks.shape[-1]
    else:
        matching = np.asarray(matching, dtype=np.float64)
        if matching.shape != (n_t - 1, n_k, n_k):
            raise ValidationError(f"matching shape {matching.shape} != {(n_t - 1, n_k, n_k)}")
        if np.any(matching < 0) or np.any(matching > 1):
            raise ValidationError("matching scores must lie in [0, 1]")
    levels = model.grid.as_array()
    return CostTerms(
        penalty=penalty,
        watts=power(model, levels),
        matching=matching,
        jump=np.abs(levels[:, None] - levels[None, :]),
    )


def build_cost_tensors(model: EnergyModel, frames=None, matching=None) -> CostTensors:
    """Evaluate unary and pairwise energies.

    ``frames[t][k]`` is the clipped observation at time ``t`` under
    ``model.grid[k]``; a path to a cost manifest is loaded instead.
    ``matching`` optionally replaces the built-in matcher with a
    ``(T-1, K, K)`` array of scores in [0, 1].
    """
    if isinstance(frames, (str, os.PathLike)):
        costs, _ = load_costs(frames)
        return costs
    return cost_terms(model, frames, matching).combine(model)


def save_costs(directory, costs: CostTensors, grid=None, name="costs"):
    """Write ``<name>.json`` plus two little-endian float64 blobs; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    unary_file, pairwise_file = f"{name}_unary.bin", f"{name}_pairwise.bin"
    with open(os.path.join(directory, unary_file), "wb") as f:
        f.write(np.ascontiguousarray(costs.unary, dtype="<f8").tobytes())
    with open(os.path.join(directory, pairwise_file), "wb") as f:
        f.write(np.ascontiguousarray(costs.pairwise, dtype="<f8").tobytes())
    manifest = {
        "T": costs.n_frames,
        "K": costs.n_levels,
        "unary": unary_file,
        "pairwise": pairwise_file,
        "dtype": "<f8",
    }
    if grid is not None:
        manifest["grid"] = list(IntensityGrid(tuple(grid)).levels)
    path = os.path.join(directory, f"{name}.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def load_costs(manifest_path):
    """Read a cost manifest; returns ``(CostTensors, grid or None)``."""
    with open(manifest_path) as f:
        doc = json.load(f)
    base = os.path.dirname(os.path.abspath(manifest_path))
    try:
        n_t, n_k = int(doc["T"]), int(doc["K"])
        unary_path = os.path.join(base, doc["unary"])
        pairwise_path = os.path.join(base, doc["pairwise"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{manifest_path}: malformed cost manifest") from exc
    unary = np.fromfile(unary_path, dtype="<f8")
    pairwise = np.fromfile(pairwise_path, dtype="<f8")
    if unary.size != n_t * n_k or pairwise.size != max(n_t - 1, 0) * n_k * n_k:
        raise ValidationError(f"{manifest_path}: binary sizes do not match T={n_t}, K={n_k}")
    grid = IntensityGrid(tuple(doc["grid"])) if doc.get("grid") else None
    costs = CostTensors(
        unary.astype(np.float64).reshape(n_t, n_k),
        pairwise.astype(np.float64).reshape(max(n_t - 1, 0), n_k, n_k),
    )
    return costs, grid
