import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trailmark.errors import AllMasksEmpty, ConfigError, DataError, DimensionMismatch, EmptyDataset
from trailmark.model import (SGD, ModelConfig, ReconstructionModel, TrainConfig, batch_loss_and_grad,
                             build_network, load_checkpoint, masked_loss, masked_loss_gradient, reconstruct,
                             resize, resize_mask, save_checkpoint, train)


def test_loss_two_by_one():
    x = np.array([[0.0, 1.0]])
    x_hat = np.array([[1.0, 1.0]])
    m = np.ones((1, 2))
    assert masked_loss(x, x_hat, m) == 0.5
    assert masked_loss_gradient(x, x_hat, m).tolist() == [[1.0, 0.0]]


def test_loss_zero_cases(rng):
    x = rng.random((5, 7, 3))
    m = rng.random((5, 7)) < 0.5
    assert masked_loss(x, x, m) == 0.0
    assert not masked_loss_gradient(x, x, m).any()
    assert masked_loss(x, rng.random((5, 7, 3)), np.zeros((5, 7))) == 0.0


def test_loss_hand_computed_rgb():
    x = np.zeros((1, 2, 3))
    x_hat = np.array([[[0.3, 0.6, 0.0], [1.0, 1.0, 1.0]]])
    m = np.array([[1, 0]])
    # channel mean of (0.09, 0.36, 0) over w*h = 2
    assert masked_loss(x, x_hat, m) == pytest.approx((0.09 + 0.36) / 3 / 2, abs=1e-15)
    assert masked_loss(x, x_hat, m, normalization="mask") == pytest.approx((0.09 + 0.36) / 3, abs=1e-15)


def test_loss_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        masked_loss(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 2)))
    with pytest.raises(DimensionMismatch):
        masked_loss(np.zeros((2, 2)), np.zeros((2, 2)), np.ones((2, 3)))


def test_loss_gradient_finite_differences(rng):
    for _ in range(20):
        h, w, c = rng.integers(1, 6, 3)
        x, x_hat = rng.random((h, w, c)), rng.random((h, w, c))
        m = rng.random((h, w)) < 0.6
        g = masked_loss_gradient(x, x_hat, m)
        fd = np.zeros_like(x_hat)
        for idx in np.ndindex(*x_hat.shape):
            e = np.zeros_like(x_hat)
            e[idx] = 1e-5
            fd[idx] = (masked_loss(x, x_hat + e, m) - masked_loss(x, x_hat - e, m)) / 2e-5
        assert np.linalg.norm(fd - g) <= 1e-4 * max(np.linalg.norm(fd), 1e-12) + 1e-12


small = arrays(float, (3, 4, 2), elements=st.floats(0, 1))


@settings(max_examples=100, deadline=None)
@given(small, small, arrays(bool, (3, 4)), arrays(bool, (3, 4)))
def test_loss_nonnegative_and_mask_monotone(x, x_hat, m1, m2):
    a = masked_loss(x, x_hat, m1)
    b = masked_loss(x, x_hat, m1 | m2)
    assert a >= 0.0 and b >= a
    assert (a == 0.0) == bool(np.all((x == x_hat).all(axis=-1) | ~m1))


def fd_check(arch, rng, **kw):
    mc = ModelConfig(architecture=arch, **kw)
    size = (16, 16)
    net = build_network(mc, size, 2)
    params = net.init_params(rng)
    xs = rng.random((2, 16, 16, 2))
    ms = rng.random((2, 16, 16)) < 0.5
    _, grads = batch_loss_and_grad(net, params, xs, ms)
    for name, p in params.items():
        flat = p.reshape(-1)
        pick = rng.choice(flat.size, size=min(12, flat.size), replace=False)
        fd = []
        for i in pick:
            old = flat[i]
            flat[i] = old + 1e-5
            lp, _ = batch_loss_and_grad(net, params, xs, ms, with_grad=False)
            flat[i] = old - 1e-5
            lm, _ = batch_loss_and_grad(net, params, xs, ms, with_grad=False)
            flat[i] = old
            fd.append((lp - lm) / 2e-5)
        fd = np.array(fd)
        an = grads[name].reshape(-1)[pick]
        err = np.linalg.norm(fd - an) / max(np.linalg.norm(fd), np.linalg.norm(an), 1e-30)
        assert err < 1e-4, (arch, name, err)


def test_patch_linear_parameter_gradients(rng):
    for _ in range(3):
        fd_check("patch_linear", rng, bottleneck=5, patch_size=4)


def test_small_conv_parameter_gradients(rng):
    for _ in range(3):
        fd_check("small_conv", rng, bottleneck=6, conv_channels=(3, 4, 2))


@pytest.mark.parametrize("arch", ["patch_linear", "small_conv"])
def test_small_step_never_increases_loss(arch, rng):
    mc = ModelConfig(architecture=arch, bottleneck=8, patch_size=8, conv_channels=(3, 4, 3))
    net = build_network(mc, (16, 16), 3)
    for trial in range(20):
        params = net.init_params(np.random.default_rng(trial))
        xs = rng.random((4, 16, 16, 3))
        ms = rng.random((4, 16, 16)) < 0.7
        before, grads = batch_loss_and_grad(net, params, xs, ms)
        SGD(1e-6).step(params, grads)
        after, _ = batch_loss_and_grad(net, params, xs, ms, with_grad=False)
        assert after <= before


def test_patch_linear_skips_unmasked_patches(rng):
    mc = ModelConfig(bottleneck=4, patch_size=4)
    net = build_network(mc, (8, 8), 1)
    params = net.init_params(rng)
    x = rng.random((1, 8, 8, 1))
    m = np.zeros((1, 8, 8), dtype=bool)
    m[0, 0, 0] = True
    out, _ = net.forward(params, x, m)
    assert not out[0, 4:].any() and not out[0, :, 4:].any() and out[0, :4, :4].any()
    full, _ = net.forward(params, x)
    assert masked_loss(x[0], out[0], m[0]) == masked_loss(x[0], full[0], m[0])


def test_resize_examples(rng):
    x = rng.random((5, 7, 3))
    assert np.array_equal(resize(x, 7, 5), x)
    c = np.full((30, 20, 3), 0.37)
    assert np.array_equal(resize(resize(c, 7, 11), 20, 30), c)
    checker = np.array([[True, False], [False, True]])
    big = resize_mask(checker, 4, 4)
    assert np.array_equal(big, np.kron(checker, np.ones((2, 2), dtype=bool)))
    assert big.dtype == bool


def test_resize_bilinear_midpoint():
    x = np.array([[0.0, 1.0]])
    y = resize(x, 4, 1)
    assert np.allclose(y, [[0.0, 0.25, 0.75, 1.0]])


def constant_dataset(n=100, size=(32, 32), value=0.5):
    img = np.full((size[1], size[0], 3), value)
    return [(img, np.ones((size[1], size[0]), dtype=bool)) for _ in range(n)]


def test_constant_images_are_learned():
    # 80 training frames -> 20 steps per epoch at the default learning rate
    tc = TrainConfig(input_size=(32, 32), epochs=100)
    model = train(constant_dataset(), ModelConfig(bottleneck=16), tc)
    assert model.history[-1][1] < 1e-4
    x = np.full((32, 32, 3), 0.5)
    assert np.abs(reconstruct(model, x) - x).max() < 1e-2


def test_training_is_deterministic(rng):
    data = [(rng.random((16, 16, 3)), rng.random((16, 16)) < 0.5) for _ in range(6)]
    tc = TrainConfig(input_size=(16, 16), epochs=5)
    mc = ModelConfig(bottleneck=4, patch_size=8)
    a, b = train(data, mc, tc), train(data, mc, tc)
    assert a.best_val_loss == b.best_val_loss and a.history == b.history
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_best_snapshot_is_min_validation(rng):
    data = [(rng.random((16, 16, 3)), np.ones((16, 16), dtype=bool)) for _ in range(5)]
    model = train(data, ModelConfig(bottleneck=4, patch_size=8), TrainConfig(input_size=(16, 16), epochs=8))
    vals = [h[2] for h in model.history]
    assert model.best_val_loss == min(vals)
    assert model.best_epoch == 1 + vals.index(min(vals))


def test_training_errors():
    tc = TrainConfig(input_size=(16, 16), epochs=1)
    with pytest.raises(EmptyDataset):
        train([], ModelConfig(), tc)
    empty = [(np.zeros((16, 16, 3)), np.zeros((16, 16), dtype=bool))] * 3
    with pytest.raises(AllMasksEmpty):
        train(empty, ModelConfig(patch_size=8), tc)
    with pytest.raises(DimensionMismatch):
        train([(np.zeros((16, 16, 3)), np.ones((8, 8), dtype=bool))], ModelConfig(patch_size=8), tc)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(bottleneck=0)
    with pytest.raises(ConfigError):
        ModelConfig(architecture="resnet")
    with pytest.raises(ConfigError):
        TrainConfig(split=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        build_network(ModelConfig(patch_size=16), (20, 16), 3)


def test_default_hyperparameters():
    mc, tc = ModelConfig(), TrainConfig()
    assert (tc.learning_rate, tc.batch_size, tc.epochs, tc.input_size, tc.split) == (1e-4, 4, 100, (224, 224), 0.8)
    assert mc.bottleneck == 256


@pytest.mark.parametrize("arch", ["patch_linear", "small_conv"])
def test_reconstruct_shape_and_range(arch):
    mc = ModelConfig(architecture=arch, init="zeros")
    tc = TrainConfig()
    net = build_network(mc, tc.input_size, 3)
    model = ReconstructionModel(mc, tc, 3, net.init_params(np.random.default_rng(0), zeros=True))
    out = model.reconstruct(np.zeros((224, 224, 3)))
    assert out.shape == (224, 224, 3) and np.all(np.isfinite(out))
    with pytest.raises(DimensionMismatch):
        model.reconstruct(np.zeros((100, 224, 3)))
    rand = ReconstructionModel(mc, tc, 3, net.init_params(np.random.default_rng(0)))
    out = rand.reconstruct(np.random.default_rng(1).random((224, 224, 3)) * 50)
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("arch", ["patch_linear", "small_conv"])
def test_checkpoint_roundtrip(arch, tmp_path, rng):
    data = [(rng.random((16, 16, 3)), rng.random((16, 16)) < 0.5) for _ in range(4)]
    mc = ModelConfig(architecture=arch, bottleneck=3, patch_size=8, conv_channels=(2, 3, 2), seed=5)
    model = train(data, mc, TrainConfig(input_size=(16, 16), epochs=2, seed=9))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.model_config == model.model_config and back.train_config == model.train_config
    assert back.history == model.history and back.best_val_loss == model.best_val_loss
    assert back.train_frames == model.train_frames
    assert sorted(back.params) == sorted(model.params)
    for k in model.params:
        assert np.array_equal(back.params[k], model.params[k])
    save_checkpoint(back, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\0" * 20)
    with pytest.raises(DataError):
        load_checkpoint(p)
    good = tmp_path / "good.ckpt"
    mc = ModelConfig(bottleneck=2, patch_size=8)
    net = build_network(mc, (8, 8), 1)
    save_checkpoint(ReconstructionModel(mc, TrainConfig(input_size=(8, 8)), 1,
                                        net.init_params(np.random.default_rng(0))), good)
    p.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(DataError):
        load_checkpoint(p)
