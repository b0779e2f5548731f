import warnings

import numpy as np
import pytest

from luxsched.energy import IntensityGrid
from luxsched.errors import ValidationError
from luxsched.policy import (
    PolicyModel,
    TrainConfig,
    build_supervision,
    feature_vector,
    fit,
    image_features,
    load_model,
    loss_and_grad,
    predict,
    predict_proba,
    save_model,
    softmax,
    train,
)

GRID = IntensityGrid()


def fake_frames(n_t, n_k, h=8, w=8):
    # frame value encodes (t, k) so tuples can be traced back
    return [[np.full((h, w, 3), (t * n_k + k) / (n_t * n_k)) for k in range(n_k)] for t in range(n_t)]


def test_supervision_adjacent():
    frames = fake_frames(5, 3)
    sup = build_supervision(frames, [0, 1, 2, 1, 0], strides=(1,), grid=IntensityGrid((0.0, 0.5, 1.0)))
    assert len(sup) == 4
    assert [(e.prev_action, e.action) for e in sup.examples] == [(0, 1), (1, 2), (2, 1), (1, 0)]
    # holdover: frame t lit at the level scheduled one step earlier
    e = sup.examples[1]
    assert e.time == 2 and e.frame is frames[2][1]


def test_supervision_stride_ten():
    frames = fake_frames(30, 2)
    schedule = list(range(30))
    schedule = [i % 2 for i in schedule]
    sup = build_supervision(frames, schedule, strides=(10,), grid=IntensityGrid((0.0, 1.0)))
    assert len(sup) == 20
    assert [(e.time - 10, e.time) for e in sup.examples[:2]] == [(0, 10), (1, 11)]


def test_supervision_counts_per_stride():
    sup = build_supervision(fake_frames(30, 2), [0] * 30, strides=(8, 10, 12), grid=IntensityGrid((0.0, 1.0)))
    assert len(sup) == (30 - 8) + (30 - 10) + (30 - 12)
    assert {e.action for e in sup.examples} == {0}


def test_supervision_teacher_mode():
    frames = fake_frames(4, 2)
    sup = build_supervision(frames, [0, 1, 1, 0], strides=(1,), grid=IntensityGrid((0.0, 1.0)), mode="teacher")
    assert sup.examples[0].frame is frames[1][1]


@pytest.mark.parametrize("strides", [(5,), (0,), ()])
def test_supervision_bad_strides(strides):
    with pytest.raises(ValidationError):
        build_supervision(fake_frames(5, 2), [0] * 5, strides=strides, grid=IntensityGrid((0.0, 1.0)))


def test_features_layout():
    img = np.random.default_rng(0).uniform(size=(10, 10, 3))
    x = feature_vector(img, 3, 11)
    assert x.shape == (4 + 8 + 11,)
    assert x[4:12].sum() == pytest.approx(1.0, abs=1e-9)
    assert x[12:].sum() == 1.0 and x[12 + 3] == 1.0
    assert image_features(np.ones((4, 4, 3)))[4:12][-1] == 1.0


@pytest.mark.parametrize("hidden", [0, 6])
def test_gradient_matches_finite_differences(hidden):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(12, 5))
    y = rng.integers(0, 4, size=12)
    params = {"out": rng.normal(size=((hidden or 5) + 1, 4))}
    if hidden:
        params["hidden"] = rng.normal(size=(6, hidden))
    _, grads = loss_and_grad(params, x, y)
    eps = 1e-6
    for name, w in params.items():
        numeric = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + eps
            up = loss_and_grad(params, x, y)[0]
            w[idx] = orig - eps
            down = loss_and_grad(params, x, y)[0]
            w[idx] = orig
            numeric[idx] = (up - down) / (2 * eps)
        rel = np.linalg.norm(numeric - grads[name]) / max(np.linalg.norm(numeric), 1e-12)
        assert rel < 1e-5


def _separable_set(rng, n=120):
    frames, labels, prev = [], [], []
    for i in range(n):
        if i % 2:
            frames.append(np.clip(rng.normal(0.03, 0.02, size=(12, 12, 3)), 0, 1))  # dark
            labels.append(9)
        else:
            frames.append(np.clip(rng.normal(0.97, 0.05, size=(12, 12, 3)), 0, 1))  # blown out
            labels.append(1)
        prev.append(int(rng.integers(0, 11)))
    x = np.array([feature_vector(f, p, 11) for f, p in zip(frames, prev)])
    return x, np.array(labels)


def test_separable_accuracy(rng):
    x, y = _separable_set(rng)
    model, _ = fit(x, y, GRID, TrainConfig(seed=1))
    assert model.metadata["accuracy"] >= 0.95


def test_single_label_collapse(rng):
    x = rng.normal(size=(40, 23))
    y = np.full(40, 6)
    model, history = fit(x, y, GRID, TrainConfig(epochs=200, seed=0))
    assert history[-1] < 0.01
    assert (model.logits(rng.normal(size=(25, 23))).argmax(axis=1) == 6).all()


def test_full_batch_loss_non_increasing(rng):
    x, y = _separable_set(rng, 60)
    _, history = fit(x, y, GRID, TrainConfig(learning_rate=0.05, epochs=50, full_batch=True))
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


@pytest.mark.parametrize("hidden", [0, 32])
def test_deterministic_per_seed(rng, hidden):
    x, y = _separable_set(rng, 50)
    a, _ = fit(x, y, GRID, TrainConfig(epochs=20, seed=5, hidden=hidden))
    b, _ = fit(x, y, GRID, TrainConfig(epochs=20, seed=5, hidden=hidden))
    assert a.weights.tobytes() == b.weights.tobytes()
    if hidden:
        assert a.hidden_weights.tobytes() == b.hidden_weights.tobytes()


def test_rescaled_inputs_same_logits(rng):
    x, y = _separable_set(rng, 60)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, _ = fit(x, y, GRID, TrainConfig(epochs=30, seed=2))
        b, _ = fit(10 * x, y, GRID, TrainConfig(epochs=30, seed=2))
    np.testing.assert_allclose(a.logits(x), b.logits(10 * x), atol=1e-6)


def test_zero_variance_columns_dropped(rng):
    x = rng.normal(size=(20, 4))
    x[:, 2] = 7.0
    with pytest.warns(UserWarning, match="zero-variance"):
        model, _ = fit(x, rng.integers(0, 2, size=20), IntensityGrid((0.0, 1.0)), TrainConfig(epochs=2))
    assert list(model.feature_index) == [0, 1, 3]
    assert (model.feature_std > 0).all()


def test_softmax_normalized(rng):
    p = softmax(rng.normal(scale=30, size=(50, 11)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def _zero_model():
    n = 4 + 8 + 11
    return PolicyModel(GRID, np.zeros(n), np.ones(n), np.arange(n), np.zeros((n + 1, 11)))


def test_predict_zero_weights_ties_to_lowest():
    img = np.full((8, 8, 3), 0.4)
    assert predict(_zero_model(), img, 5) == 0
    np.testing.assert_allclose(predict_proba(_zero_model(), img, 5), np.full(11, 1 / 11))


def test_train_single_label_predicts_it():
    frames = fake_frames(12, 11)
    sup = build_supervision(frames, [4] * 12, strides=(1, 2), grid=GRID)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = train(sup, TrainConfig(epochs=200))
    assert model.metadata["loss"] < 0.01
    rng = np.random.default_rng(0)
    for prev in (0, 4, 10):
        assert predict(model, rng.uniform(size=(8, 8, 3)), prev) == 4


def test_empty_supervision():
    with pytest.raises(ValidationError):
        fit(np.zeros((0, 3)), np.zeros(0, dtype=int), GRID)


def test_model_json_round_trip(tmp_path, rng):
    x, y = _separable_set(rng, 40)
    model, _ = fit(x, y, GRID, TrainConfig(epochs=5, hidden=8))
    save_model(tmp_path / "m.json", model)
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.logits(x), model.logits(x))
    assert back.metadata["seed"] == 0 and "loss" in back.metadata
