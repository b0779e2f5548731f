import json
import os
import re

import numpy as np
import pytest

from luxsched.cli import main
from luxsched.energy import CostTensors, EnergyModel, IntensityGrid, save_costs, save_weights
from luxsched.oracle import read_schedule_csv
from luxsched.pfm import load_decomposition, read_pfm, write_pfm
from luxsched.imaging import relight

from conftest import random_decomposition


@pytest.fixture
def pair(tmp_path, rng):
    d = random_decomposition(rng, 12, 10, amb_max=0.4, light_max=0.5)
    # stay below the clip point so the pair is exactly representable
    a, b = relight(d, 0.2), relight(d, 0.9)
    write_pfm(tmp_path / "a.pfm", a)
    write_pfm(tmp_path / "b.pfm", b)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def test_decompose_round_trip(pair, capsys):
    code = run("decompose", "--image-a", pair / "a.pfm", "--k-a", 0.2, "--image-b", pair / "b.pfm",
               "--k-b", 0.9, "--out", pair / "dec")
    out = capsys.readouterr().out
    assert code == 0
    values = [float(v) for v in re.findall(r"([\d.]+|inf) dB", out)]
    assert len(values) == 2 and min(values) >= 60
    assert {"ambient.pfm", "light_map.pfm", "light_color.json"} <= set(os.listdir(pair / "dec"))


def test_decompose_identical_images_warns(pair, capsys):
    code = run("decompose", "--image-a", pair / "a.pfm", "--k-a", 0.2, "--image-b", pair / "a.pfm",
               "--k-b", 0.9, "--out", pair / "dec")
    err = capsys.readouterr().err
    assert code == 0
    assert "light map is zero" in err


def test_decompose_degenerate_pair(pair, capsys):
    code = run("decompose", "--image-a", pair / "a.pfm", "--k-a", 0.5, "--image-b", pair / "b.pfm",
               "--k-b", 0.5, "--out", pair / "dec")
    assert code == 2
    assert "degenerate pair" in capsys.readouterr().err
    assert not (pair / "dec").exists()


def test_decompose_missing_input(pair):
    code = run("decompose", "--image-a", pair / "nope.pfm", "--k-a", 0.0, "--image-b", pair / "b.pfm",
               "--k-b", 1.0, "--out", pair / "dec")
    assert code == 2
    assert not (pair / "dec").exists()


@pytest.fixture
def decomposed(pair):
    assert run("decompose", "--image-a", pair / "a.pfm", "--k-a", 0.2, "--image-b", pair / "b.pfm",
               "--k-b", 0.9, "--out", pair / "dec") == 0
    return pair / "dec"


def test_relight_default_levels(decomposed, tmp_path):
    assert run("relight", "--decomposition", decomposed, "--out", tmp_path / "rl") == 0
    names = sorted(os.listdir(tmp_path / "rl"))
    assert len(names) == 11
    assert names[0] == "frame_k000.pfm" and names[-1] == "frame_k100.pfm"


def test_relight_zero_is_ambient(decomposed, tmp_path):
    assert run("relight", "--decomposition", decomposed, "--levels", "0.0", "--out", tmp_path / "rl") == 0
    img = read_pfm(tmp_path / "rl" / "frame_k000.pfm")
    amb = read_pfm(decomposed / "ambient.pfm")
    assert img.tobytes() == amb.tobytes()


def test_relight_matches_decomposition(decomposed, tmp_path):
    assert run("relight", "--decomposition", decomposed, "--levels", "0.5", "--out", tmp_path / "rl") == 0
    d = load_decomposition(decomposed)
    np.testing.assert_allclose(read_pfm(tmp_path / "rl" / "frame_k050.pfm"), relight(d, 0.5), atol=1e-6)


@pytest.mark.parametrize("levels", ["1.5", "-0.1", "0:1:0", "abc"])
def test_relight_bad_levels(decomposed, tmp_path, levels):
    assert run("relight", "--decomposition", decomposed, "--levels", levels, "--out", tmp_path / "rl") == 2
    assert not (tmp_path / "rl").exists()


def toy_costs(directory):
    unary = np.array([[0.0, 1.0], [2.0, 0.0], [0.0, 3.0]])
    jump = np.array([[0.0, 1.5], [1.5, 0.0]])
    return save_costs(directory, CostTensors(unary, np.stack([jump, jump])), IntensityGrid((0.0, 1.0)))


def test_solve_toy_costs(tmp_path):
    manifest = toy_costs(tmp_path / "c")
    assert run("solve", "--costs", manifest, "--out", tmp_path / "s") == 0
    # by hand: 0-1-0 costs 0+0+0+1.5+1.5 = 3; 0-0-0 costs 2; 1-1-1 costs 4
    indices, rows = read_schedule_csv(tmp_path / "s" / "schedule.csv")
    assert indices == [0, 0, 0]
    summary = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert summary["total_energy"] == 2.0
    assert summary["n_frames"] == 3
    assert (tmp_path / "s" / "schedule.png").stat().st_size > 0


@pytest.fixture(scope="module")
def small_seq(tmp_path_factory):
    root = tmp_path_factory.mktemp("seq")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"length": 20, "width": 48, "height": 32, "ambient_level": 0.2}))
    assert run("simulate", "--spec", spec, "--seed", 5, "--out", root / "seq") == 0
    return root / "seq" / "manifest.json"


def test_solve_heavy_power_stays_dark(small_seq, tmp_path):
    save_weights(tmp_path / "w.json", EnergyModel(lambda_p=1e6))
    assert run("solve", "--frames-manifest", small_seq, "--weights", tmp_path / "w.json",
               "--save-costs", "--out", tmp_path / "s") == 0
    indices, _ = read_schedule_csv(tmp_path / "s" / "schedule.csv")
    assert indices == [0] * 20
    assert (tmp_path / "s" / "costs.json").exists()


def test_solve_missing_manifest(tmp_path, capsys):
    assert run("solve", "--frames-manifest", tmp_path / "none.json", "--out", tmp_path / "s") == 2
    assert "not found" in capsys.readouterr().err
    assert not (tmp_path / "s").exists()


def test_solve_needs_one_source(tmp_path):
    assert run("solve", "--out", tmp_path / "s") == 2


def test_solve_nan_costs_exit_numeric(tmp_path):
    manifest = toy_costs(tmp_path / "c")
    blob = tmp_path / "c" / "costs_unary.bin"
    data = np.frombuffer(blob.read_bytes(), dtype="<f8").copy()
    data[1] = np.nan
    blob.write_bytes(data.tobytes())
    assert run("solve", "--costs", manifest, "--out", tmp_path / "s") == 3
    assert not (tmp_path / "s").exists()


def test_train_policy_stride_too_long(small_seq, tmp_path):
    code = run("train-policy", "--sequences", small_seq, "--strides", "40", "--out-model", tmp_path / "m.json")
    assert code == 2
    assert not (tmp_path / "m.json").exists()


def test_train_policy_schedule_mismatch(small_seq, tmp_path):
    manifest = toy_costs(tmp_path / "c")
    assert run("solve", "--costs", manifest, "--out", tmp_path / "s") == 0
    code = run("train-policy", "--sequences", small_seq, "--schedules", tmp_path / "s" / "schedule.csv",
               "--out-model", tmp_path / "m.json")
    assert code == 2
    assert not (tmp_path / "m.json").exists()


@pytest.fixture(scope="module")
def trained(small_seq, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "policy.json"
    assert run("train-policy", "--sequences", small_seq, "--strides", "2,4", "--epochs", 50,
               "--out-model", out) == 0
    return out


def test_train_policy_writes_model(trained):
    doc = json.loads(trained.read_text())
    assert doc["grid"] == list(IntensityGrid().levels)
    assert doc["metadata"]["n_examples"] == (20 - 2) + (20 - 4)


def test_eval_oracle_beats_baselines(trained, tmp_path):
    assert run("eval", "--model", trained, "--seed", 0, "--out", tmp_path / "e1") == 0
    report = json.loads((tmp_path / "e1" / "report.json").read_text())
    mean = report["mean"]
    for baseline in ("fixed_0", "fixed_100"):
        assert mean["oracle"]["wrmse"] < float(mean[baseline]["wrmse"])
    assert (tmp_path / "e1" / "traces_seed0.png").exists()
    assert (tmp_path / "e1" / "intensities.csv").read_text().startswith("seed,frame,")

    assert run("eval", "--model", trained, "--seed", 0, "--out", tmp_path / "e2") == 0
    assert (tmp_path / "e1" / "report.json").read_bytes() == (tmp_path / "e2" / "report.json").read_bytes()
    assert (tmp_path / "e1" / "intensities.csv").read_bytes() == (tmp_path / "e2" / "intensities.csv").read_bytes()


def test_eval_pretty_table(trained, tmp_path, capsys):
    assert run("eval", "--model", trained, "--pretty", "--out", tmp_path / "e") == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[:3] == ["method", "C", "wrmse"]
    assert "oracle" in out


def test_eval_missing_model(tmp_path):
    assert run("eval", "--model", tmp_path / "none.json", "--out", tmp_path / "e") == 2
    assert not (tmp_path / "e").exists()
