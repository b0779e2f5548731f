"""Command-line entry point.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
Every command validates and computes before it writes anything.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from . import energy, imaging, oracle, pfm, policy, sim
from .errors import NumericalError, ValidationError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _fail(msg):
    raise ValidationError(msg)


def _require_file(path, what):
    if not os.path.isfile(path):
        _fail(f"{what} not found: {path}")


def _level_tag(k):
    return f"k{int(round(k * 100)):03d}"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(type(obj))


def _dump_json(path, doc):
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x

    with open(path, "w") as f:
        json.dump(clean(doc), f, indent=2, default=_json_default)


def _load_model(args):
    if getattr(args, "weights", None):
        _require_file(args.weights, "--weights")
        return energy.load_weights(args.weights)
    return energy.EnergyModel()


def _read_image(path, what):
    _require_file(path, what)
    return imaging.as_image(pfm.read_pfm(path), what)


# -- decompose ---------------------------------------------------------------


def cmd_decompose(args):
    if args.k_a == args.k_b:
        _fail(f"degenerate pair: --k-a and --k-b are both {args.k_a}")
    for k in (args.k_a, args.k_b):
        if not 0.0 <= k <= 1.0:
            _fail(f"light level {k} outside [0, 1]")
    img_a = _read_image(args.image_a, "--image-a")
    img_b = _read_image(args.image_b, "--image-b")
    d = imaging.decompose_paired(img_a, args.k_a, img_b, args.k_b)
    if not np.any(d.light_map):
        print("warning: inputs show no light contribution; light map is zero", file=sys.stderr)
    psnr_a = imaging.psnr(imaging.relight(d, args.k_a), img_a)
    psnr_b = imaging.psnr(imaging.relight(d, args.k_b), img_b)
    pfm.save_decomposition(args.out, d)
    print(f"round-trip PSNR  k={args.k_a:g}: {psnr_a:.2f} dB  k={args.k_b:g}: {psnr_b:.2f} dB")
    print(f"light color: {' '.join(f'{c:.6f}' for c in d.light_color)}")
    return EXIT_OK


# -- relight -----------------------------------------------------------------


def cmd_relight(args):
    grid = energy.IntensityGrid.parse(args.levels)
    if not os.path.isdir(args.decomposition):
        _fail(f"decomposition directory not found: {args.decomposition}")
    d = pfm.load_decomposition(args.decomposition)
    images = []
    for k in grid:
        img = imaging.relight(d, k)
        if args.clip:
            img = imaging.clip_sensor(img)
        images.append((k, img))
    os.makedirs(args.out, exist_ok=True)
    for k, img in images:
        pfm.write_pfm(os.path.join(args.out, f"frame_{_level_tag(k)}.pfm"), img)
    print(f"wrote {len(images)} images to {args.out}")
    return EXIT_OK


# -- simulate ----------------------------------------------------------------


def _scene_spec(args, seed):
    if getattr(args, "spec", None):
        _require_file(args.spec, "--spec")
        with open(args.spec) as f:
            doc = json.load(f)
        doc["seed"] = seed
        return sim.SceneSpec.from_dict(doc)
    return sim.harsh_scene(seed)


def cmd_simulate(args):
    spec = _scene_spec(args, args.seed)
    seq = sim.generate_sequence(spec)
    path = sim.save_sequence(args.out, seq)
    print(f"wrote {len(seq)} frames, manifest {path}")
    return EXIT_OK


# -- solve -------------------------------------------------------------------


def cmd_solve(args):
    if bool(args.frames_manifest) == bool(args.costs):
        _fail("give exactly one of --frames-manifest or --costs")
    if args.weights:
        _require_file(args.weights, "--weights")
    model = _load_model(args)
    search = None
    seq = None

    if args.costs:
        _require_file(args.costs, "--costs")
        if args.grid_search:
            _fail("--grid-search needs --frames-manifest (it replays schedules on the sequence)")
        costs, cost_grid = energy.load_costs(args.costs)
        if cost_grid is not None and not args.weights:
            model = energy.EnergyModel(grid=cost_grid)
        if costs.n_levels != len(model.grid):
            _fail(f"costs have {costs.n_levels} levels but the grid has {len(model.grid)}")
    else:
        _require_file(args.frames_manifest, "--frames-manifest")
        seq = sim.load_sequence(args.frames_manifest)
        if args.seed is not None:
            seq.seed = args.seed
        if args.grid_search:
            search = sim.grid_search(seq, model)
            best = search[0]
            model = energy.EnergyModel(best["lambda_d"], model.lambda_p, best["lambda_m"], best["lambda_s"],
                                       model.power_slope, model.power_intercept, model.grid)
        costs = energy.build_cost_tensors(model, seq.frames(model.grid))

    schedule = oracle.solve_ois(costs, model)
    levels = [model.grid[i] for i in schedule.assignment]

    from .plotting import plot_grid_search, plot_schedule

    os.makedirs(args.out, exist_ok=True)
    oracle.write_schedule(os.path.join(args.out, "schedule.csv"), os.path.join(args.out, "summary.json"),
                          costs, schedule, model.grid)
    if args.save_costs:
        energy.save_costs(args.out, costs, model.grid)
    plot_schedule(levels, os.path.join(args.out, "schedule.png"), unary=costs.unary.min(axis=1))
    if search is not None:
        _dump_json(os.path.join(args.out, "grid_search.json"), {"best": search[0], "results": search})
        plot_grid_search(search, os.path.join(args.out, "grid_search.png"))
        print(f"grid search best: lambda_d={model.lambda_d:g} lambda_m={model.lambda_m:g} "
              f"lambda_s={model.lambda_s:g} wrmse={search[0]['wrmse']:.4f}")
    print(f"total energy {schedule.total_energy:.6f}  mean intensity {100 * schedule.mean_intensity:.1f}%  "
          f"mean power {schedule.mean_power:.2f} W")
    return EXIT_OK


# -- train-policy --------------------------------------------------------------


def _parse_strides(text):
    try:
        strides = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        _fail(f"bad stride list {text!r}")
    if not strides:
        _fail("empty stride list")
    return strides


def cmd_train_policy(args):
    model = _load_model(args)
    strides = _parse_strides(args.strides)
    if not args.sequences:
        _fail("empty supervision: no sequences given")
    if args.schedules and len(args.schedules) != len(args.sequences):
        _fail("--schedules must list one schedule CSV per sequence")
    for path in args.sequences:
        _require_file(path, "sequence manifest")
    for path in args.schedules or []:
        _require_file(path, "schedule CSV")

    sup = None
    for i, path in enumerate(args.sequences):
        seq = sim.load_sequence(path)
        frames = seq.frames(model.grid)
        if args.schedules:
            assignment, _ = oracle.read_schedule_csv(args.schedules[i])
            if len(assignment) != len(seq):
                _fail(f"{args.schedules[i]}: {len(assignment)} rows for a {len(seq)}-frame sequence")
        else:
            assignment = oracle.solve_ois(energy.build_cost_tensors(model, frames)).assignment
        part = policy.build_supervision(frames, assignment, strides, model.grid, mode=args.mode)
        sup = part if sup is None else sup.extend(part)
    if sup is None or len(sup) == 0:
        _fail("empty supervision")

    config = policy.TrainConfig(args.learning_rate, args.epochs, args.batch, args.hidden, args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        trained = policy.train(sup, config)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out_dir = os.path.dirname(os.path.abspath(args.out_model))
    os.makedirs(out_dir, exist_ok=True)
    policy.save_model(args.out_model, trained)
    meta = trained.metadata
    print(f"trained on {meta['n_examples']} tuples: loss {meta['loss']:.4f}, accuracy {100 * meta['accuracy']:.1f}%")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

REPORT_COLUMNS = ("C", "wrmse", "ate", "light_mu_pct", "power_w", "energy", "action_match")


def render_table(report):
    """Human-readable table of a report's per-method mean rows."""
    rows = report["mean"]
    lines = [f"{'method':<10}" + "".join(f"{c:>14}" for c in REPORT_COLUMNS)]
    for name, row in rows.items():
        cells = []
        for c in REPORT_COLUMNS:
            v = row.get(c, float("nan"))
            cells.append(f"{v:>14.4f}" if isinstance(v, (int, float)) else f"{v!s:>14}")
        lines.append(f"{name:<10}" + "".join(cells))
    return "\n".join(lines)


def _mean_rows(per_seed):
    methods = next(iter(per_seed.values())).keys()
    out = {}
    for m in methods:
        out[m] = {c: float(np.mean([per_seed[s][m][c] for s in per_seed])) for c in REPORT_COLUMNS}
    return out


def cmd_eval(args):
    model = _load_model(args)
    _require_file(args.model, "--model")
    controller_model = policy.load_model(args.model)
    if controller_model.grid != model.grid:
        _fail("policy grid differs from the energy grid")
    if args.n_scenes < 1:
        _fail("--n-scenes must be >= 1")
    seeds = [args.seed + i for i in range(args.n_scenes)]
    specs = [_scene_spec(args, s) for s in seeds]

    per_seed, traces = {}, {}
    for spec in specs:
        seq = sim.generate_sequence(spec)
        report, trace = sim.compare_methods(seq, model, controller_model, args.threshold, args.control_stride)
        per_seed[str(spec.seed)] = report
        traces[spec.seed] = (trace, {m: r["pred_length"] for m, r in report.items()})
    doc = {
        "weights": model.to_dict(),
        "threshold": args.threshold,
        "control_stride": args.control_stride,
        "per_seed": per_seed,
        "mean": _mean_rows(per_seed),
    }

    from .plotting import plot_intensity_traces

    os.makedirs(args.out, exist_ok=True)
    _dump_json(os.path.join(args.out, "report.json"), doc)
    with open(os.path.join(args.out, "intensities.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        methods = list(next(iter(traces.values()))[0])
        writer.writerow(["seed", "frame", *methods])
        for seed, (trace, _) in traces.items():
            for t in range(len(trace[methods[0]])):
                writer.writerow([seed, t, *(trace[m][t] for m in methods)])
    for seed, (trace, tracked) in traces.items():
        plot_intensity_traces(trace, os.path.join(args.out, f"traces_seed{seed}.png"),
                              title=f"scene seed {seed}", tracked=tracked)
    if args.pretty:
        print(render_table(doc))
    else:
        print(json.dumps(doc["mean"], default=_json_default))
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="luxsched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=0, help="single source of randomness")

    p = sub.add_parser("decompose", help="split two captures into ambient and light components")
    p.add_argument("--image-a", required=True)
    p.add_argument("--k-a", type=float, required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument("--k-b", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("relight", help="synthesize images at a list of light levels")
    p.add_argument("--decomposition", required=True)
    p.add_argument("--levels", default="0.0:1.0:0.1")
    p.add_argument("--clip", action="store_true", help="apply the sensor clamp")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("simulate", parents=[seeded], help="generate a synthetic sequence")
    p.add_argument("--spec", help="scene spec JSON (default: built-in harsh scene)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="compute the optimal intensity schedule")
    p.add_argument("--frames-manifest")
    p.add_argument("--costs")
    p.add_argument("--weights")
    p.add_argument("--grid-search", action="store_true")
    p.add_argument("--save-costs", action="store_true")
    p.add_argument("--seed", type=int, default=None, help="override the sequence noise seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train-policy", parents=[seeded], help="behavior-clone oracle schedules")
    p.add_argument("--sequences", nargs="+", required=True)
    p.add_argument("--schedules", nargs="+")
    p.add_argument("--strides", default="8,10,12")
    p.add_argument("--mode", choices=("holdover", "teacher"), default="holdover")
    p.add_argument("--weights")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--hidden", type=int, default=0)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("eval", parents=[seeded], help="compare baselines, policy and oracle")
    p.add_argument("--model", required=True)
    p.add_argument("--spec")
    p.add_argument("--weights")
    p.add_argument("--n-scenes", type=int, default=1)
    p.add_argument("--threshold", type=float, default=sim.TRACKING_THRESHOLD)
    p.add_argument("--control-stride", type=int, default=1)
    p.add_argument("--pretty", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
