import math

import numpy as np
import pytest

from oodlab import autodiff as ad
from oodlab.data import LatentBatch
from oodlab.nets import BoundaryGenerator, MlpClassifier, load_checkpoint, save_checkpoint


def _params_equal(a, b):
    return all(np.array_equal(x.data, y.data) for x, y in zip(a.parameters(), b.parameters()))


def test_seeded_init_is_bit_identical():
    assert _params_equal(MlpClassifier([2, 16, 3], seed=7), MlpClassifier([2, 16, 3], seed=7))


def test_weight_shapes_are_out_by_in():
    model = MlpClassifier([2, 16, 3], seed=0)
    assert model.weights[0].shape == (16, 2)
    assert model.weights[1].shape == (3, 16)
    assert model.biases[0].shape == (16,)


def test_weight_mean_near_zero_relative_to_bound():
    # 10^4 draws with fan_in 4: the empirical mean must sit within
    # +/- 0.05 * sqrt(2/fan_in) of zero.
    model = MlpClassifier([4, 2500], seed=123)
    bound = math.sqrt(2.0 / 4.0)
    w = model.weights[0].data
    assert w.size == 10_000
    assert abs(w.mean()) < 0.05 * bound
    assert np.abs(w).max() <= bound


def test_zeroed_network_produces_zero_logits():
    model = MlpClassifier([2, 8, 3], seed=5)
    for p in model.parameters():
        p.data[...] = 0.0
    logits = model.forward_logits(np.array([[0.3, -0.7], [1.0, 2.0]]))
    np.testing.assert_array_equal(logits.data, np.zeros((2, 3)))


def test_single_linear_layer_identity():
    model = MlpClassifier([2, 2], seed=0)
    model.weights[0].data[...] = np.eye(2)
    model.biases[0].data[...] = 0.0
    logits = model.forward_logits(np.array([[3.0, 4.0]]))
    np.testing.assert_array_equal(logits.data, [[3.0, 4.0]])


def test_forward_matches_straight_line_reevaluation():
    rng = np.random.default_rng(17)
    model = MlpClassifier([3, 8, 5, 4], activation="relu", seed=99)
    x = rng.normal(size=(6, 3))
    # independent re-evaluation with frozen parameters
    h = x.copy()
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.data.T + b.data
        if i != len(model.weights) - 1:
            h = np.maximum(h, 0.0)
    np.testing.assert_array_equal(model.forward_logits(x).data, h)
    np.testing.assert_array_equal(model.forward_array(x), h)


def test_generator_identity_pass_through():
    gen = BoundaryGenerator([2, 2], seed=0)
    gen.weights[0].data[...] = np.eye(2)
    gen.biases[0].data[...] = 0.0
    latents = LatentBatch(np.random.default_rng(1).normal(size=(4, 2)), seed=1)
    np.testing.assert_array_equal(gen.generate(latents).data, latents.values)


def test_zero_parameter_generator_outputs_zeros():
    gen = BoundaryGenerator([3, 8, 2], seed=2)
    for p in gen.parameters():
        p.data[...] = 0.0
    out = gen.generate(np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(out.data, np.zeros((5, 2)))


def test_generate_shape_contract():
    gen = BoundaryGenerator([3, 16, 2], seed=4)
    out = gen.generate(np.zeros((5, 3)))
    assert out.shape == (5, 2)
    assert gen.latent_dim == 3 and gen.data_dim == 2


def test_dimension_mismatch_is_loud():
    model = MlpClassifier([2, 4, 3], seed=0)
    with pytest.raises(ad.ShapeMismatchError):
        model.forward_logits(np.zeros((4, 5)))


def test_invalid_layer_sizes_rejected():
    with pytest.raises(ValueError):
        MlpClassifier([3], seed=0)
    with pytest.raises(ValueError):
        MlpClassifier([3, 0, 2], seed=0)
    with pytest.raises(ValueError):
        MlpClassifier([3, 2], activation="sigmoid", seed=0)


def test_forward_gradients_pass_grad_check():
    model = MlpClassifier([3, 6, 2], activation="tanh", seed=21)
    x = np.random.default_rng(8).normal(size=(4, 3))
    report = ad.check_gradients(
        lambda: ad.reduce_mean(ad.mul(model.forward_logits(x), model.forward_logits(x))),
        model.parameters(),
        h=1e-5,
        rel_tol=1e-4,
    )
    assert report.passed, str(report)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = MlpClassifier([2, 9, 3], activation="tanh", seed=31)
    path = tmp_path / "clf.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert isinstance(loaded, MlpClassifier)
    assert loaded.layer_sizes == model.layer_sizes
    assert loaded.activation == "tanh"
    assert _params_equal(model, loaded)
    # and a second save produces identical bytes
    path2 = tmp_path / "clf2.ckpt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_generator_checkpoint_keeps_kind(tmp_path):
    gen = BoundaryGenerator([4, 6, 2], seed=11)
    path = tmp_path / "gen.ckpt"
    save_checkpoint(gen, path)
    loaded = load_checkpoint(path)
    assert isinstance(loaded, BoundaryGenerator)
    assert loaded.latent_dim == 4


def test_load_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("not a checkpoint\n", encoding="utf-8")
    with pytest.raises(ValueError, match="not an oodlab checkpoint"):
        load_checkpoint(path)


def test_freeze_unfreeze_round_trip():
    model = MlpClassifier([2, 4, 2], seed=0)
    model.freeze()
    assert model.is_frozen
    assert all(p.grad is None for p in model.parameters())
    logits = model.forward_logits(np.zeros((1, 2)))
    assert not logits.requires_grad
    model.unfreeze()
    assert not model.is_frozen
    assert all(p.grad is not None for p in model.parameters())
