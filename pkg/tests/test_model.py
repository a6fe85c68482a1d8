import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fformation import nn
from fformation.data_io import SynthConfig, generate_synthetic
from fformation.geometry import Agent, Scene, augment_flip_vertical, rigid_transform
from fformation.model import (
    AffinityMatrix,
    ModelConfig,
    ModelParams,
    TrainConfig,
    affinity_matrix,
    backward_batch,
    context_transform,
    directed_affinities,
    dyad_transform,
    forward_affinity,
    forward_batch,
    loss_and_grads,
    train,
)

from conftest import jitter_biases, random_config, random_scene


def identity_params(use_context=True):
    cfg = ModelConfig((4,), (4,), (1,), use_context=use_context)
    p = ModelParams.init(cfg, seed=0)
    p.dyad_mlp[0] = nn.DenseLayer(np.eye(4), np.zeros(4), "identity")
    if use_context:
        p.context_mlp[0] = nn.DenseLayer(np.eye(4), np.zeros(4), "identity")
    return p


def test_dyad_transform_identity():
    p = identity_params()
    out = dyad_transform(np.array([-1.0, 0, 1, 0]), np.array([1.0, 0, 1, 0]), p)
    np.testing.assert_array_equal(out, [-1, 0, 1, 0, 1, 0, 1, 0])
    swapped = dyad_transform(np.array([1.0, 0, 1, 0]), np.array([-1.0, 0, 1, 0]), p)
    np.testing.assert_array_equal(swapped, np.concatenate([out[4:], out[:4]]))


def test_dyad_transform_compositional(small_params, rng):
    fi, fj = rng.normal(size=4), rng.normal(size=4)
    manual = np.concatenate([nn.mlp_apply(small_params.dyad_mlp, fi), nn.mlp_apply(small_params.dyad_mlp, fj)])
    np.testing.assert_array_equal(dyad_transform(fi, fj, small_params), manual)


def test_context_transform_examples(small_params, rng):
    np.testing.assert_array_equal(context_transform(np.zeros((0, 4)), small_params), np.zeros(12))
    p = identity_params()
    np.testing.assert_array_equal(context_transform([[1, 0, 0, 0], [0, 2, 0, 0]], p), [1, 2, 0, 0])
    F = rng.normal(size=(5, 4))
    base = context_transform(F, small_params)
    for _ in range(5):
        np.testing.assert_array_equal(context_transform(F[rng.permutation(5)], small_params), base)


def test_zero_head_gives_one_half(small_params, rng):
    head = small_params.combiner_mlp[-1]
    head.weights[:] = 0.0
    head.bias[:] = 0.0
    s = random_scene(rng, 5)
    assert forward_affinity(s, s.ids[0], s.ids[3], small_params) == 0.5


def test_forward_affinity_errors(small_params):
    s = Scene("f", (Agent("a", (0, 0), 0.0),))
    with pytest.raises(ValueError):
        forward_affinity(s, "a", "a", small_params)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_forward_affinity_invariances(seed):
    rng = np.random.default_rng(seed)
    params = ModelParams.init(random_config(rng), seed=seed)
    s = random_scene(rng, int(rng.integers(2, 9)))
    i, j = s.ids[0], s.ids[1]
    a = forward_affinity(s, i, j, params)
    perm = rng.permutation(len(s))
    shuffled = Scene(s.frame_id, tuple(s.agents[k] for k in perm), s.ground_truth)
    assert forward_affinity(shuffled, i, j, params) == a
    moved = rigid_transform(s, rng.uniform(0, 2 * math.pi), rng.uniform(-20, 20, 2))
    assert abs(forward_affinity(moved, i, j, params) - a) <= 1e-9


def test_affinity_matrix_structure(small_params, rng):
    for n in range(2, 9):
        s = random_scene(rng, n)
        for mode in ("flip", "swap"):
            A = affinity_matrix(s, small_params, mode)
            assert A.values.shape == (n, n)
            assert np.array_equal(A.values, A.values.T)
            assert np.all(np.diag(A.values) == 0)
            assert np.all((A.values >= 0) & (A.values <= 1))


def test_affinity_matrix_averages_directed_predictions(small_params, rng):
    s = random_scene(rng, 5)
    d = directed_affinities(s, small_params)
    assert d[1, 3] == pytest.approx(forward_affinity(s, s.ids[1], s.ids[3], small_params), abs=1e-14)
    swap = affinity_matrix(s, small_params, "swap").values
    assert swap[1, 3] == pytest.approx((d[1, 3] + d[3, 1]) / 2, abs=1e-15)
    m = directed_affinities(augment_flip_vertical(s), small_params)
    flip = affinity_matrix(s, small_params, "flip").values
    assert flip[1, 3] == pytest.approx((d[1, 3] + d[3, 1] + m[1, 3] + m[3, 1]) / 4, abs=1e-15)


def test_swap_symmetrization_is_the_mean(monkeypatch, small_params):
    import fformation.model as model

    monkeypatch.setattr(model, "directed_affinities", lambda s, p: np.array([[0.0, 0.8], [0.6, 0.0]]))
    s = Scene("f", (Agent("a", (0, 0), 0.0), Agent("b", (1, 0), 0.0)))
    A = model.affinity_matrix(s, small_params, "swap")
    assert A.values[0, 1] == A.values[1, 0] == pytest.approx(0.7)


def test_single_and_two_agent_scenes(small_params):
    one = Scene("f", (Agent("a", (0, 0), 0.0),))
    A = affinity_matrix(one, small_params)
    assert A.values.shape == (1, 1) and A.values[0, 0] == 0
    two = Scene("f", (Agent("a", (0, 0), 0.0), Agent("b", (1, 0), math.pi)))
    A = affinity_matrix(two, small_params, "swap")
    assert A.values[0, 1] == A.values[1, 0] > 0


def test_affinity_matrix_rejects_asymmetric():
    with pytest.raises(ValueError):
        AffinityMatrix(("a", "b"), np.array([[0, 0.2], [0.3, 0]]))


def test_masked_context_rows_get_no_gradient(small_params, rng):
    dyad = rng.normal(size=(3, 2, 4))
    ctx = rng.normal(size=(3, 4, 4))
    mask = np.array([[True, True, False, False], [False] * 4, [True] * 4])
    p1, _ = forward_batch(small_params, dyad, ctx, mask)
    ctx2 = ctx.copy()
    ctx2[~mask] = rng.normal(size=(int((~mask).sum()), 4)) * 100
    p2, _ = forward_batch(small_params, dyad, ctx2, mask)
    np.testing.assert_array_equal(p1, p2)


def test_backward_requires_forward(small_params):
    with pytest.raises(nn.UsageError):
        backward_batch(small_params, None, np.ones(2))


@pytest.mark.parametrize("use_context", [True, False])
def test_gradients_match_finite_differences(use_context):
    rng = np.random.default_rng(11 if use_context else 12)
    params = jitter_biases(ModelParams.init(random_config(rng, max_width=6, use_context=use_context), seed=5), rng)
    dyad = rng.normal(size=(4, 2, 4))
    ctx = rng.normal(size=(4, 3, 4))
    mask = rng.random((4, 3)) < 0.6
    labels = np.array([0, 1, 1, 0.0])
    _, grads = loss_and_grads(params, dyad, ctx, mask, labels)
    h = 1e-4
    for arr, g in zip(params.arrays(), grads):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = loss_and_grads(params, dyad, ctx, mask, labels)[0]
            arr[idx] = old - h
            lm = loss_and_grads(params, dyad, ctx, mask, labels)[0]
            arr[idx] = old
            fd = (lp - lm) / (2 * h)
            assert abs(fd - g[idx]) <= max(1e-4 * max(abs(fd), abs(g[idx])), 1e-6)


def test_checkpoint_round_trip(tmp_path, small_params):
    path = tmp_path / "m.bin"
    small_params.save(path, {"threshold": 0.3})
    loaded, extra = ModelParams.load(path)
    assert extra == {"threshold": 0.3}
    assert loaded.config == small_params.config
    for a, b in zip(loaded.arrays(), small_params.arrays()):
        assert a.tobytes() == b.tobytes()


def test_checkpoint_shape_validation(tmp_path, small_params):
    path = tmp_path / "m.bin"
    small_params.save(path)
    header, tensors = nn.load_archive(path)
    header["config"]["dyad_widths"] = [8, 9]
    nn.save_archive(path, header, tensors)
    with pytest.raises(ValueError):
        ModelParams.load(path)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(dyad_widths=())
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert ModelConfig().combiner_in == 2 * 64 + 128
    assert ModelConfig(use_context=False).combiner_in == 128


def test_training_reduces_loss_and_is_deterministic():
    corpus = generate_synthetic(SynthConfig(scenes=40), seed=3)
    cfg = ModelConfig((16, 16), (16, 16), (32,))
    tc = TrainConfig(max_epochs=3, learning_rate=1e-3, seed=9)
    p1, h1 = train(corpus.scenes[:30], corpus.scenes[30:], cfg, tc)
    p2, h2 = train(corpus.scenes[:30], corpus.scenes[30:], cfg, tc)
    assert h1.train_loss[-1] < h1.train_loss[0]
    assert h1.val_loss == h2.val_loss
    for a, b in zip(p1.arrays(), p2.arrays()):
        assert a.tobytes() == b.tobytes()


def test_early_stopping_keeps_best_epoch():
    corpus = generate_synthetic(SynthConfig(scenes=20), seed=4)
    cfg = ModelConfig((8,), (8,), (8,))
    _, h = train(corpus.scenes[:15], corpus.scenes[15:], cfg, TrainConfig(max_epochs=30, patience=2, learning_rate=0.05))
    assert h.best_epoch == int(np.argmin(h.val_loss))
    assert len(h.val_loss) <= 30


def test_position_scale_matches_scaled_coordinates(rng):
    scene = random_scene(rng, 5)
    scaled = Scene(scene.frame_id, tuple(Agent(a.id, (2 * a.position[0], 2 * a.position[1]), a.heading) for a in scene.agents))
    base = jitter_biases(ModelParams.init(ModelConfig((8,), (8,), (8,)), seed=1), rng)
    twice = ModelParams(ModelConfig((8,), (8,), (8,), position_scale=2.0), base.dyad_mlp, base.context_mlp, base.combiner_mlp)
    np.testing.assert_allclose(directed_affinities(scene, twice), directed_affinities(scaled, base), atol=1e-14)
    with pytest.raises(ValueError):
        ModelConfig(position_scale=0.0)
