"""Synthetic co-located-light sequences, closed-loop rollouts and trajectory metrics.

A generated scene is a textured wall panned past the camera.  Each frame has
a ground-truth :class:`~luxsched.imaging.Decomposition`; observations at a
light level are relit, corrupted with brightness-dependent read noise and
clipped.  Tracking is approximated by thresholding the frame-to-frame
matching score, which yields a surviving trajectory length and noisy pose
estimates for the trajectory-ratio and weighted-RMSE metrics.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from ._parallel import ordered_map
from .energy import EnergyModel, IntensityGrid, build_cost_tensors, matching_score, power
from .errors import ValidationError
from .imaging import Decomposition, clip_sensor, relight
from .oracle import evaluate_schedule, solve_ois
from .pfm import load_decomposition, save_decomposition

METERS_PER_PIXEL = 0.01
TRACKING_THRESHOLD = 0.15
POSE_NOISE = 0.05
# baseline tracker error per frame, even on perfect matches
POSE_FLOOR = 0.002


@dataclass(frozen=True)
class SpecularPatch:
    """Highlight of the co-located light, fixed in image coordinates.

    ``box`` is ``(x0, y0, x1, y1)`` in fractions of the frame; ``frames`` is
    the ``[start, stop)`` fraction of the sequence where it is visible.
    """

    box: tuple
    gain: float
    frames: tuple = (0.0, 1.0)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    width: int = 96
    height: int = 64
    length: int = 60
    ambient_level: float = 0.3
    texture_scale: float = 1.0
    specular_patches: tuple = ()
    depth_falloff: float = 2.0
    noise_sigma_dark: float = 0.03
    pan_speed: float = 1.0
    flash_gain: float = 0.5
    light_rgb: tuple = (1.0, 0.93, 0.82)
    ambient_rgb: tuple = (0.95, 1.0, 1.05)
    # (start, stop, level): ambient level over a fraction of the sequence
    ambient_segments: tuple = ()
    ramp_frames: int = 5

    def __post_init__(self):
        if self.length < 2:
            raise ValidationError("scene length must be >= 2")
        if self.width < 1 or self.height < 1:
            raise ValidationError("scene dimensions must be positive")
        magnitudes = [self.ambient_level, self.texture_scale, self.depth_falloff,
                      self.noise_sigma_dark, self.pan_speed, self.flash_gain]
        if any(m < 0 for m in magnitudes):
            raise ValidationError("scene magnitudes must be >= 0")
        patches = tuple(p if isinstance(p, SpecularPatch) else SpecularPatch(**p)
                        for p in self.specular_patches)
        if any(p.gain < 0 for p in patches):
            raise ValidationError("specular gain must be >= 0")
        object.__setattr__(self, "specular_patches", patches)
        object.__setattr__(self, "ambient_segments", tuple(tuple(s) for s in self.ambient_segments))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["specular_patches"] = tuple(SpecularPatch(**p) for p in doc.get("specular_patches", ()))
        for key in ("light_rgb", "ambient_rgb"):
            if key in doc:
                doc[key] = tuple(doc[key])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(f"bad scene spec: {exc}") from exc


def harsh_scene(seed=0, **overrides) -> SceneSpec:
    """Moderate start, a near-dark stretch, then a bright segment washed by a frame-wide highlight."""
    params = dict(
        seed=seed,
        length=60,
        ambient_level=0.3,
        ambient_segments=((0.35, 0.6, 0.003), (0.6, 1.0, 0.45)),
        specular_patches=(SpecularPatch(box=(0.02, 0.02, 0.98, 0.98), gain=1.0, frames=(0.6, 1.0)),),
        flash_gain=0.5,
        noise_sigma_dark=0.03,
    )
    params.update(overrides)
    return SceneSpec(**params)


@dataclass(eq=False)
class Sequence:
    decompositions: list
    poses: np.ndarray  # (T, 3): x, y, theta
    noise_sigma_dark: float = 0.0
    seed: int = 0
    spec: SceneSpec | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.decompositions)

    def _noise(self, t):
        d = self.decompositions[t]
        rng = np.random.default_rng([self.seed, t, 1])
        return rng.standard_normal(d.shape)

    def render(self, t, k):
        """Clipped, noisy observation of frame ``t`` at intensity ``k``."""
        radiance = relight(self.decompositions[t], k)
        if self.noise_sigma_dark > 0:
            brightness = np.clip(radiance.mean(axis=2, keepdims=True), 0.0, 1.0)
            radiance = radiance + self.noise_sigma_dark * (1.0 - brightness) * self._noise(t)
        return clip_sensor(radiance)

    def frames(self, grid: IntensityGrid):
        """Nested ``T x K`` list of observations, cached per grid."""
        key = tuple(grid)
        if key not in self._cache:
            rows = ordered_map(lambda t: [self.render(t, k) for k in key], range(len(self)))
            self._cache[key] = rows
        return self._cache[key]


def _ambient_profile(spec):
    n = spec.length
    prof = np.full(n, spec.ambient_level, dtype=np.float64)
    for start, stop, level in spec.ambient_segments:
        prof[int(round(start * n)):int(round(stop * n))] = level
    if spec.ramp_frames > 1 and spec.ambient_segments:
        width = int(spec.ramp_frames)
        padded = np.pad(prof, (width // 2, width - 1 - width // 2), mode="edge")
        prof = np.convolve(padded, np.ones(width) / width, mode="valid")
    return prof


def generate_sequence(spec: SceneSpec) -> Sequence:
    """Deterministic synthetic sequence: per-frame decompositions and poses."""
    rng = np.random.default_rng(spec.seed)
    n, h, w = spec.length, spec.height, spec.width
    strip_w = w + int(np.ceil(spec.pan_speed * (n - 1))) + 1
    field_ = gaussian_filter(rng.standard_normal((h, strip_w)), sigma=2.0, mode="wrap")
    field_ /= field_.std() or 1.0
    albedo = np.clip(0.5 + 0.25 * spec.texture_scale * field_, 0.05, 1.0)

    phase = rng.uniform(0, 2 * np.pi)
    depth = 1.0 + 0.25 * np.sin(2 * np.pi * np.arange(n) / n + phase)
    ambient_level = _ambient_profile(spec)
    ambient_rgb = np.asarray(spec.ambient_rgb, dtype=np.float64)
    light_rgb = np.asarray(spec.light_rgb, dtype=np.float64)
    color = light_rgb / light_rgb.sum()
    # the luminance of S_F (x) color is S_F / 3
    to_map = 3.0

    ys, xs = np.mgrid[0:h, 0:w]
    decomps = []
    for t in range(n):
        off = int(round(t * spec.pan_speed))
        gray = albedo[:, off:off + w]
        ambient = ambient_level[t] * gray[..., None] * ambient_rgb
        light = spec.flash_gain * depth[t] ** (-spec.depth_falloff) * gray
        frac = t / n
        for p in spec.specular_patches:
            if not p.frames[0] <= frac < p.frames[1]:
                continue
            x0, y0, x1, y1 = p.box
            inside = (xs >= x0 * w) & (xs < x1 * w) & (ys >= y0 * h) & (ys < y1 * h)
            light = light + p.gain * inside
        # float32-representable so saving to PFM and reloading is lossless
        decomps.append(
            Decomposition(
                ambient.astype(np.float32).astype(np.float64),
                (to_map * light).astype(np.float32).astype(np.float64),
                color,
            )
        )

    steps = np.arange(n)
    poses = np.column_stack(
        [
            steps * spec.pan_speed * METERS_PER_PIXEL,
            0.05 * np.sin(2 * np.pi * steps / n + phase),
            np.zeros(n),
        ]
    )
    return Sequence(decomps, poses, spec.noise_sigma_dark, spec.seed, spec)


def save_sequence(directory, seq: Sequence):
    """Write per-frame decomposition directories, ``poses.csv`` and ``manifest.json``."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for t, d in enumerate(seq.decompositions):
        name = f"frame_{t:04d}"
        save_decomposition(os.path.join(directory, name), d)
        names.append(name)
    write_poses(os.path.join(directory, "poses.csv"), seq.poses)
    manifest = {
        "frames": names,
        "poses": "poses.csv",
        "noise_sigma_dark": seq.noise_sigma_dark,
        "seed": seq.seed,
        "spec": seq.spec.to_dict() if seq.spec is not None else None,
    }
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def load_sequence(manifest_path) -> Sequence:
    with open(manifest_path) as f:
        doc = json.load(f)
    base = os.path.dirname(os.path.abspath(manifest_path))
    try:
        frames = [load_decomposition(os.path.join(base, name)) for name in doc["frames"]]
        poses = read_poses(os.path.join(base, doc["poses"]))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{manifest_path}: malformed sequence manifest") from exc
    if len(poses) != len(frames):
        raise ValidationError(f"{manifest_path}: {len(frames)} frames but {len(poses)} poses")
    spec = SceneSpec.from_dict(doc["spec"]) if doc.get("spec") else None
    return Sequence(frames, poses, float(doc.get("noise_sigma_dark", 0.0)), int(doc.get("seed", 0)), spec)


def write_poses(path, poses):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "x", "y", "theta"])
        for t, (x, y, th) in enumerate(np.asarray(poses)):
            writer.writerow([t, repr(float(x)), repr(float(y)), repr(float(th))])


def read_poses(path):
    with open(path, newline="") as f:
        rows = sorted(csv.DictReader(f), key=lambda r: int(r["frame"]))
    return np.array([[float(r["x"]), float(r["y"]), float(r["theta"])] for r in rows]).reshape(-1, 3)


# controllers: callable(t, observation, current_index) -> index for frame t + 1


class FixedController:
    def __init__(self, index):
        self.initial = int(index)

    def __call__(self, t, observation, current):
        return self.initial


class ScheduleController:
    def __init__(self, assignment):
        self.assignment = [int(i) for i in getattr(assignment, "assignment", assignment)]
        self.initial = self.assignment[0]

    def __call__(self, t, observation, current):
        return self.assignment[min(t + 1, len(self.assignment) - 1)]


class Rollout(NamedTuple):
    executed: list
    observations: list


def rollout(controller, seq: Sequence, grid: IntensityGrid, initial=None, control_stride=1) -> Rollout:
    """Run ``controller`` in closed loop over ``seq``.

    Frame ``t`` is observed at the level in force, and the controller's
    answer is applied from frame ``t + 1``.  With ``control_stride > 1`` new
    commands are accepted only every ``control_stride`` frames.
    """
    if isinstance(controller, (int, np.integer)):
        controller = FixedController(controller)
    elif not callable(controller):
        controller = ScheduleController(controller)
    if initial is None:
        initial = getattr(controller, "initial", len(grid) // 2)
    level = int(initial)
    n_k = len(grid)
    executed, observations = [], []
    for t in range(len(seq)):
        if not 0 <= level < n_k:
            raise ValidationError(f"controller commanded index {level} outside the grid")
        obs = seq.render(t, grid[level])
        executed.append(level)
        observations.append(obs)
        if t + 1 < len(seq):
            command = int(controller(t, obs, level))
            if (t + 1) % control_stride == 0:
                level = command
    return Rollout(executed, observations)


class ProxyTrack(NamedTuple):
    pred_length: int
    poses: np.ndarray
    scores: np.ndarray


def proxy_tracking(observations, gt_poses, threshold=TRACKING_THRESHOLD, pose_noise=POSE_NOISE, seed=0,
                   pose_floor=POSE_FLOOR):
    """Stand-in tracker: survives while consecutive matching scores stay >= ``threshold``.

    Tracked frames get their ground-truth pose plus zero-mean Gaussian noise
    with standard deviation ``pose_floor + pose_noise * (1 - score)``.
    """
    obs = list(observations)
    if len(obs) < 2:
        raise ValidationError("proxy tracking needs at least two observations")
    gt = np.asarray(gt_poses, dtype=np.float64)
    scores = np.array(ordered_map(lambda t: matching_score(obs[t], obs[t + 1]), range(len(obs) - 1)))
    failed = np.flatnonzero(scores < threshold)
    pred_length = int(failed[0]) + 1 if failed.size else len(obs)

    rng = np.random.default_rng([seed, 2])
    link = np.concatenate([[scores[0]], scores])[:pred_length]
    sigma = pose_floor + pose_noise * (1.0 - link)
    noise = rng.standard_normal((len(obs), gt.shape[1]))[:pred_length] * sigma[:, None]
    poses = gt[:pred_length] + noise
    if gt.shape[1] == 3:
        poses[:, 2] = gt[:pred_length, 2]
    return ProxyTrack(pred_length, poses, scores)


def rigid_align(source, target):
    """Rotation ``R`` and translation ``t`` minimizing ``|R @ source + t - target|``."""
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    cov = (target - mu_t).T @ (source - mu_s)
    u, _, vt = np.linalg.svd(cov)
    fix = np.eye(source.shape[1])
    fix[-1, -1] = np.sign(np.linalg.det(u @ vt)) or 1.0
    rot = u @ fix @ vt
    return rot, mu_t - rot @ mu_s


def ate_rmse(gt, pred, align=True):
    """Absolute trajectory error (RMSE of positions) after rigid alignment."""
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.ndim == 1:
        gt, pred = gt[:, None], pred[:, None]
    if gt.shape[0] == 0:
        raise ValidationError("empty trajectory")
    if gt.shape != pred.shape:
        raise ValidationError(f"trajectory shapes differ: {gt.shape} vs {pred.shape}")
    if align:
        rot, trans = rigid_align(pred, gt)
        pred = pred @ rot.T + trans
    return float(np.sqrt(np.mean(np.sum((pred - gt) ** 2, axis=1))))


def trajectory_ratio(pred_length, gt_length):
    if gt_length == 0:
        raise ValidationError("ground-truth trajectory is empty")
    return 1.0 - abs(pred_length - gt_length) / gt_length


def weighted_rmse(ate, ratio):
    return ate / ratio**2 if ratio > 0 else float("inf")


class RunScore(NamedTuple):
    gt_length: int
    pred_length: int
    ate_rmse: float
    trajectory_ratio: float
    wrmse: float
    mean_intensity: float
    mean_power: float


def score_run(gt_poses, pred_poses, executed, model: EnergyModel, align=True) -> RunScore:
    """Trajectory ratio, weighted RMSE and power accounting for one run.

    ``pred_poses`` covers the tracked prefix; positions are the first two
    pose columns when poses carry a heading.
    """
    gt = np.asarray(gt_poses, dtype=np.float64)
    pred = np.asarray(pred_poses, dtype=np.float64)
    gt_length, pred_length = len(gt), len(pred)
    if gt_length == 0:
        raise ValidationError("T_gt == 0")
    if pred_length > gt_length:
        raise ValidationError("prediction longer than ground truth")
    if len(executed) != gt_length:
        raise ValidationError("executed schedule length differs from ground truth")
    pos = slice(0, 2) if gt.ndim == 2 and gt.shape[1] == 3 else slice(None)
    if pred_length:
        ate = ate_rmse(gt[:pred_length, pos], pred[:, pos], align=align)
    else:
        ate = 0.0
    ratio = trajectory_ratio(pred_length, gt_length)
    levels = model.grid.as_array()[np.asarray(executed, dtype=np.int64)]
    return RunScore(
        gt_length=gt_length,
        pred_length=pred_length,
        ate_rmse=ate,
        trajectory_ratio=ratio,
        wrmse=weighted_rmse(ate, ratio),
        mean_intensity=float(levels.mean()),
        mean_power=float(np.mean(power(model, levels))),
    )


def evaluate_run(seq, executed, observations, model, costs=None, threshold=TRACKING_THRESHOLD, seed=0):
    """Score one executed schedule and attach its energy under ``costs``."""
    track = proxy_tracking(observations, seq.poses, threshold=threshold, seed=seed)
    score = score_run(seq.poses, track.poses, executed, model)
    row = {
        "C": score.trajectory_ratio,
        "wrmse": score.wrmse,
        "ate": score.ate_rmse,
        "light_mu_pct": 100.0 * score.mean_intensity,
        "power_w": score.mean_power,
        "pred_length": score.pred_length,
        "gt_length": score.gt_length,
    }
    if costs is not None:
        row["energy"] = evaluate_schedule(costs, executed)
    return row


def compare_methods(seq, model: EnergyModel, policy=None, threshold=TRACKING_THRESHOLD, control_stride=1):
    """Table-style comparison of the fixed 0%/100% baselines, the policy and the oracle.

    Returns ``(report, traces)``: per-method metrics and per-frame executed
    intensities.
    """
    from .policy import PolicyController

    grid = model.grid
    costs = build_cost_tensors(model, seq.frames(grid))
    oracle = solve_ois(costs, model)
    controllers = {
        "fixed_0": FixedController(grid.index_of(0.0) if 0.0 in grid.levels else 0),
        "fixed_100": FixedController(grid.index_of(1.0) if 1.0 in grid.levels else len(grid) - 1),
        "oracle": ScheduleController(oracle.assignment),
    }
    if policy is not None:
        controllers["ilc"] = PolicyController(policy)
    report, traces = {}, {}
    for name, ctrl in controllers.items():
        stride = control_stride if name == "ilc" else 1
        run = rollout(ctrl, seq, grid, control_stride=stride)
        row = evaluate_run(seq, run.executed, run.observations, model, costs, threshold, seq.seed)
        row["action_match"] = float(np.mean(np.asarray(run.executed) == np.asarray(oracle.assignment)))
        report[name] = row
        traces[name] = [grid[i] for i in run.executed]
    return report, traces


GRID_SEARCH_VALUES = (0.1, 1.0, 10.0)


def grid_search(seq, model: EnergyModel, values=GRID_SEARCH_VALUES, threshold=TRACKING_THRESHOLD):
    """Try every ``(lambda_d, lambda_m, lambda_s)`` triple from ``values``.

    ``lambda_p`` and the grid come from ``model``.  Each oracle schedule is
    replayed through the proxy tracker; results are sorted by WRMSE with
    ties broken by mean power.
    """
    from itertools import product

    from .energy import cost_terms

    terms = cost_terms(model, seq.frames(model.grid))
    results = []
    for lam_d, lam_m, lam_s in product(values, repeat=3):
        trial = EnergyModel(lam_d, model.lambda_p, lam_m, lam_s, model.power_slope,
                            model.power_intercept, model.grid)
        schedule = solve_ois(terms.combine(trial), trial)
        run = rollout(ScheduleController(schedule.assignment), seq, model.grid)
        row = evaluate_run(seq, run.executed, run.observations, trial, None, threshold, seq.seed)
        row.update(lambda_d=lam_d, lambda_m=lam_m, lambda_s=lam_s, total_energy=schedule.total_energy)
        results.append(row)
    results.sort(key=lambda r: (r["wrmse"], r["power_w"]))
    return results
