import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socdiff.denoiser import (AnalyticGaussianDenoiser, DenoiserError, DenoiserSpec, GaussianPrior,
                              NetworkDenoiser, TemporalConvNet, TrainConfig, _conv, denoising_loss,
                              load_checkpoint, new_network_denoiser, predict_eps, sample_prior, save_checkpoint,
                              smoothed, train)
from socdiff.diffusion import make_schedule, reverse_step
from socdiff.geometry import RobotModel

TINY = DenoiserSpec(hidden_channels=8, depth=2, time_embed_dim=8)


def test_spec_validation():
    with pytest.raises(DenoiserError):
        DenoiserSpec(kernel_size=4)
    with pytest.raises(DenoiserError):
        DenoiserSpec(kind="UNet")
    with pytest.raises(DenoiserError):
        TrainConfig(steps=0)


@pytest.mark.parametrize("dil", [1, 2, 4])
def test_conv_matches_direct_loop(dil):
    rng = np.random.default_rng(dil)
    k, c_in, c_out, n = 5, 3, 4, 11
    x = rng.standard_normal((2, n, c_in))
    w = rng.standard_normal((k * c_in, c_out))
    out, _ = _conv(x, w, k, dil)
    ref = np.zeros((2, n, c_out))
    for b in range(2):
        for i in range(n):
            for j in range(k):
                src = i + (j - k // 2) * dil
                if 0 <= src < n:
                    ref[b, i] += x[b, src] @ w[j * c_in:(j + 1) * c_in]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_network_backward_matches_fd():
    sched = make_schedule(50, "cosine")
    net = TemporalConvNet(12, 2, TINY, seed=1)
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-1, 1, (4, 12, 2))
    t = rng.integers(1, 51, 4)
    noise = rng.standard_normal(x0.shape)
    for clamp in (False, True):
        _, g = denoising_loss(net, x0, t, noise, sched, clamp_boundaries=clamp)
        for name in sorted(net.params):
            arr = net.params[name]
            i = tuple(rng.integers(s) for s in arr.shape)
            old, h = arr[i], 1e-6
            arr[i] = old + h
            lp = denoising_loss(net, x0, t, noise, sched, grad=False, clamp_boundaries=clamp)
            arr[i] = old - h
            lm = denoising_loss(net, x0, t, noise, sched, grad=False, clamp_boundaries=clamp)
            arr[i] = old
            fd = (lp - lm) / (2 * h)
            assert g[name][i] == pytest.approx(fd, rel=1e-5, abs=1e-9), name


def _grid_posterior_eps(tau_t, ab, var=1.0):
    z = np.linspace(-12, 12, 200_001)
    logw = -0.5 * z ** 2 / var - 0.5 * (tau_t - np.sqrt(ab) * z) ** 2 / (1 - ab)
    w = np.exp(logw - logw.max())
    eps = (tau_t - np.sqrt(ab) * z) / np.sqrt(1 - ab)
    return float(np.sum(w * eps) / np.sum(w))


def test_analytic_eps_matches_grid_quadrature():
    sched = make_schedule(64, "linear")
    prior = GaussianPrior(np.zeros((3, 1)), np.eye(3))
    den = AnalyticGaussianDenoiser(prior, sched)
    tau = np.array([[-1.3], [0.2], [2.1]])
    for t in (1, 10, 40, 64):
        ab = sched.alpha_bar_at(t)
        got = den.predict_eps(tau, t)
        want = [_grid_posterior_eps(v, ab) for v in tau[:, 0]]
        np.testing.assert_allclose(got[:, 0], want, atol=1e-6)


def test_analytic_eps_zero_at_scaled_mean():
    sched = make_schedule(32, "cosine")
    mean = np.random.default_rng(1).standard_normal((5, 2))
    den = AnalyticGaussianDenoiser(GaussianPrior(mean, 0.3 * np.eye(5)), sched)
    for t in (1, 16, 32):
        np.testing.assert_allclose(den.predict_eps(np.sqrt(sched.alpha_bar_at(t)) * mean, t), 0.0, atol=1e-12)


def test_sample_prior():
    rng = np.random.default_rng(0)
    mean = rng.standard_normal((6, 2))
    prior = GaussianPrior.smooth(mean, length_scale=2.0, variance=0.5)
    x = sample_prior(prior, np.random.default_rng(1), 100_000)
    for d in range(2):
        cov = np.cov(x[:, :, d], rowvar=False)
        assert np.linalg.norm(cov - prior.cov[d]) / np.linalg.norm(prior.cov[d]) < 0.05
    a = sample_prior(prior, np.random.default_rng(3))
    b = sample_prior(prior, np.random.default_rng(3))
    assert a.tobytes() == b.tobytes()
    tight = GaussianPrior(mean, 1e-12 * np.eye(6))
    np.testing.assert_allclose(sample_prior(tight, rng), mean, atol=1e-4)
    with pytest.raises(np.linalg.LinAlgError):
        GaussianPrior(mean, -np.eye(6))


def test_sampler_oracle_reproduces_prior():
    """Full reverse chain with the exact denoiser: mean and covariance within 5% Frobenius."""
    t0 = time.perf_counter()
    L, D, n = 16, 2, 10_000
    sched = make_schedule(128, "cosine")
    base = np.linspace(-0.8, 0.8, L)
    mean = np.stack([base, 0.5 * np.sin(3 * base)], axis=1)
    prior = GaussianPrior.smooth(mean, length_scale=3.0, variance=0.2)
    den = AnalyticGaussianDenoiser(prior, sched)
    rng = np.random.default_rng(2024)
    x = rng.standard_normal((n, L, D))
    for t in range(sched.T, 0, -1):
        x = reverse_step(x, den.predict_eps(x, t), t, sched, rng)
    assert np.linalg.norm(x.mean(0) - mean) / np.linalg.norm(mean) < 0.05
    for d in range(D):
        cov = np.cov(x[:, :, d], rowvar=False)
        assert np.linalg.norm(cov - prior.cov[d]) / np.linalg.norm(prior.cov[d]) < 0.05
    assert time.perf_counter() - t0 < 120


def test_network_predict_eps_shapes_and_determinism():
    robot = RobotModel.point()
    a = new_network_denoiser(10, robot, make_schedule(20), TINY, seed=3)
    b = new_network_denoiser(10, robot, make_schedule(20), TINY, seed=3)
    x = np.random.default_rng(0).standard_normal((4, 10, 2))
    ya = predict_eps(a, x, 7)
    assert ya.shape == x.shape and np.isfinite(ya).all()
    assert ya.tobytes() == predict_eps(b, x, 7).tobytes()
    assert predict_eps(a, x[0], 7).shape == (10, 2)
    with pytest.raises(DenoiserError):
        a.predict_eps(np.zeros((9, 2)), 3)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(1, 20))
def test_network_output_finite(scale, t):
    model = new_network_denoiser(8, RobotModel.point(), make_schedule(20), TINY, seed=0)
    x = scale * np.random.default_rng(0).standard_normal((8, 2))
    assert np.isfinite(model.predict_eps(x, t)).all()


def _tiny_training(lr=1e-2, steps=200, data=None, seed=0):
    robot = RobotModel.point()
    model = new_network_denoiser(8, robot, make_schedule(20, "cosine"), TINY, seed=1)
    if data is None:
        data = np.random.default_rng(0).uniform(-1, 1, (32, 8, 2))
    cfg = TrainConfig(steps=steps, batch_size=16, learning_rate=lr, seed=seed)
    return train(model, data, cfg)


def test_zero_learning_rate_keeps_parameters():
    before = new_network_denoiser(8, RobotModel.point(), make_schedule(20, "cosine"), TINY, seed=1).net.params
    model, losses = _tiny_training(lr=0.0, steps=20)
    for k, v in before.items():
        np.testing.assert_array_equal(model.net.params[k], v.astype(np.float32).astype(np.float64))


def test_identical_data_loss_decreases():
    traj = np.stack([np.linspace(-0.5, 0.5, 8), np.linspace(0.3, -0.2, 8)], axis=1)
    _, losses = _tiny_training(data=np.repeat(traj[None], 16, axis=0), steps=400)
    s = smoothed(losses, 50)
    assert np.all(np.diff(s) < 0.02)
    assert s[-1] < 0.6 * s[0] and s[-1] < 1.0


def test_training_is_seeded():
    _, a = _tiny_training(steps=30)
    _, b = _tiny_training(steps=30)
    assert a.tobytes() == b.tobytes()
    _, c = _tiny_training(steps=30, seed=5)
    assert a.tobytes() != c.tobytes()


def test_train_rejects_bad_data():
    model = new_network_denoiser(8, RobotModel.point(), make_schedule(20), TINY)
    with pytest.raises(DenoiserError):
        train(model, np.zeros((0, 8, 2)), TrainConfig(steps=1))
    with pytest.raises(DenoiserError):
        train(model, np.zeros((4, 9, 2)), TrainConfig(steps=1))


def test_checkpoint_roundtrip(tmp_path):
    model = new_network_denoiser(8, RobotModel.arm((0.5, 0.5)), make_schedule(20, "cosine"), TINY, seed=2)
    path = tmp_path / "m.json"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert isinstance(back, NetworkDenoiser) and back.robot == model.robot
    np.testing.assert_array_equal(back.schedule.beta, model.schedule.beta)
    x = np.random.default_rng(0).standard_normal((8, 2))
    assert back.predict_eps(x, 5).tobytes() == model.predict_eps(x, 5).tobytes()
