"""Exact minimization of the chain energy over light schedules.

:func:`solve_ois` runs min-sum dynamic programming over the ``T x K``
trellis; :func:`brute_force_ois` enumerates every assignment and exists to
check it.  Both break ties toward the lowest grid index: the last frame's
level is chosen first, then each predecessor via its backpointer.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .energy import CostTensors, EnergyModel, power
from .errors import InstanceTooLargeError, ValidationError

BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class TrellisState:
    prefix_energy: np.ndarray  # F[t, k]
    backpointers: np.ndarray  # row 0 holds -1


@dataclass(frozen=True)
class Schedule:
    assignment: tuple
    total_energy: float
    mean_intensity: float = float("nan")
    mean_power: float = float("nan")

    def __len__(self):
        return len(self.assignment)


def _check(costs):
    if not isinstance(costs, CostTensors):
        costs = CostTensors(*costs)
    return costs


def forward_pass(costs: CostTensors) -> TrellisState:
    costs = _check(costs)
    unary, pairwise = costs.unary, costs.pairwise
    n_t, n_k = unary.shape
    f = np.empty((n_t, n_k))
    back = np.full((n_t, n_k), -1, dtype=np.int64)
    f[0] = unary[0]
    cols = np.arange(n_k)
    for t in range(1, n_t):
        # cand[l, k] = F[t-1, l] + V[t-1](l, k); argmin keeps the first (lowest) l
        cand = f[t - 1][:, None] + pairwise[t - 1]
        best = cand.argmin(axis=0)
        back[t] = best
        f[t] = unary[t] + cand[best, cols]
    return TrellisState(f, back)


def backtrack(state: TrellisState):
    f, back = state.prefix_energy, state.backpointers
    n_t = f.shape[0]
    path = np.empty(n_t, dtype=np.int64)
    path[-1] = int(np.argmin(f[-1]))
    for t in range(n_t - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def _summarize(assignment, energy, model):
    if model is None:
        return Schedule(tuple(int(i) for i in assignment), float(energy))
    levels = model.grid.as_array()[np.asarray(assignment)]
    return Schedule(
        tuple(int(i) for i in assignment),
        float(energy),
        mean_intensity=float(levels.mean()),
        mean_power=float(np.mean(power(model, levels))),
    )


def solve_ois(costs: CostTensors, model: EnergyModel | None = None) -> Schedule:
    """Globally optimal schedule in O(T K^2) time and O(T K) memory.

    When ``model`` is given the schedule also carries its mean intensity and
    mean power draw.
    """
    costs = _check(costs)
    state = forward_pass(costs)
    path = backtrack(state)
    energy = state.prefix_energy[-1, path[-1]]
    return _summarize(path, energy, model)


def evaluate_schedule(costs: CostTensors, assignment) -> float:
    """Energy of ``assignment``, summed in the same order as the forward pass."""
    costs = _check(costs)
    idx = np.asarray(assignment, dtype=np.int64).reshape(-1)
    if idx.shape[0] != costs.n_frames:
        raise ValidationError(f"assignment has {idx.shape[0]} entries, expected {costs.n_frames}")
    if idx.size and (idx.min() < 0 or idx.max() >= costs.n_levels):
        raise ValidationError("assignment index out of range")
    energy = costs.unary[0, idx[0]]
    for t in range(1, costs.n_frames):
        energy = costs.unary[t, idx[t]] + (energy + costs.pairwise[t - 1, idx[t - 1], idx[t]])
    return float(energy)


def brute_force_ois(costs: CostTensors, model: EnergyModel | None = None, chunk=1 << 18) -> Schedule:
    """Exhaustive minimum over all ``K**T`` assignments.

    Assignments are enumerated with the last frame as the most significant
    digit so that the first minimum found matches the DP's tie-breaking.
    """
    costs = _check(costs)
    n_t, n_k = costs.unary.shape
    total = n_k**n_t
    if total > BRUTE_FORCE_LIMIT:
        raise InstanceTooLargeError(f"{n_k}^{n_t} = {total} assignments exceeds {BRUTE_FORCE_LIMIT}")
    radix = n_k ** np.arange(n_t, dtype=np.int64)  # frame t has weight K**t
    best_energy, best_index = np.inf, -1
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (codes[:, None] // radix[None, :]) % n_k
        energy = costs.unary[0, digits[:, 0]]
        for t in range(1, n_t):
            energy = costs.unary[t, digits[:, t]] + (
                energy + costs.pairwise[t - 1, digits[:, t - 1], digits[:, t]]
            )
        i = int(np.argmin(energy))
        if energy[i] < best_energy:
            best_energy, best_index = float(energy[i]), int(codes[i])
    assignment = [(best_index // int(r)) % n_k for r in radix]
    return _summarize(assignment, best_energy, model)


def schedule_rows(costs: CostTensors, assignment, grid):
    idx = [int(i) for i in assignment]
    rows = []
    for t, k in enumerate(idx):
        to_next = costs.pairwise[t, k, idx[t + 1]] if t + 1 < len(idx) else 0.0
        rows.append(
            {
                "frame": t,
                "intensity_index": k,
                "intensity": grid[k],
                "unary": float(costs.unary[t, k]),
                "pairwise_to_next": float(to_next),
            }
        )
    return rows


SCHEDULE_FIELDS = ["frame", "intensity_index", "intensity", "unary", "pairwise_to_next"]


def write_schedule(csv_path, json_path, costs, schedule: Schedule, grid):
    """Write the per-frame CSV and the JSON summary for ``schedule``."""
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SCHEDULE_FIELDS)
        writer.writeheader()
        for row in schedule_rows(costs, schedule.assignment, grid):
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    summary = {
        "total_energy": schedule.total_energy,
        "mean_intensity": schedule.mean_intensity,
        "mean_power_watts": schedule.mean_power,
        "n_frames": len(schedule),
    }
    with open(json_path, "w") as f:
        json.dump(summary, f, indent=2)


def read_schedule_csv(path):
    """Return the ``(indices, rows)`` stored in a schedule CSV."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "intensity_index" not in reader.fieldnames:
            raise ValidationError(f"{path}: not a schedule CSV")
        rows = list(reader)
    rows.sort(key=lambda r: int(r["frame"]))
    return [int(r["intensity_index"]) for r in rows], rows
