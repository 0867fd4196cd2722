import json

import numpy as np
import pytest

from artifact_guidance.diffusion_core import clean_estimate_diffusion, make_sigma_schedule
from artifact_guidance.errors import InputError, SingularityError
from artifact_guidance.flow_core import clean_estimate_flow
from artifact_guidance.guidance import run_trajectory
from artifact_guidance.models import (DecoderSpec, MixtureDenoiser, MixtureSpec, MixtureVelocity, MLPVelocity,
                                      decode, decode_transpose, load_model, mixture_denoiser,
                                      mixture_denoiser_jacobian, mixture_velocity, mixture_velocity_jacobian,
                                      save_model, train_mlp_velocity)

from .oracles import jacobian_fd, mc_denoiser, mc_velocity, rel_err


def test_point_mass_velocity_example():
    spec = MixtureSpec([1.0], [[0.0, 0.0]], [0.0])
    np.testing.assert_array_equal(mixture_velocity([2.0, 0.0], 0.5, spec), [4.0, 0.0])
    with pytest.raises(SingularityError):
        mixture_velocity([2.0, 0.0], 0.0, spec)


def test_data_equals_noise_velocity(rng):
    # x0 and x1 are exchangeable only at t=1/2; elsewhere E[x1-x0|x_t] = (2t-1)/((1-t)^2+t^2) x
    spec = MixtureSpec([1.0], [[0.0, 0.0]], [1.0])
    for x in rng.normal(size=(5, 2)):
        np.testing.assert_allclose(mixture_velocity(x, 0.5, spec), 0.0, atol=1e-15)
        t = 0.8
        np.testing.assert_allclose(mixture_velocity(x, t, spec), (2 * t - 1) / ((1 - t) ** 2 + t**2) * x, rtol=1e-13)
    x = np.array([1.0, -0.5])
    assert rel_err(mixture_velocity(x, 0.8, spec), mc_velocity(x, 0.8, spec, 400_000, rng)) < 0.02


def test_velocity_matches_monte_carlo_two_mode(two_mode, rng):
    for x, t in [([1.5, 0.3], 0.4), ([-0.5, 1.0], 0.7), ([2.5, -1.0], 0.9)]:
        x = np.array(x)
        assert rel_err(mixture_velocity(x, t, two_mode), mc_velocity(x, t, two_mode, 400_000, rng)) < 0.02


def test_denoiser_examples():
    spec = MixtureSpec([1.0], [[1.0, 1.0]], [0.0])
    np.testing.assert_array_equal(mixture_denoiser([3.0, 1.0], 2.0, spec), [1.0, 0.0])
    np.testing.assert_array_equal(mixture_denoiser([1.0, 1.0], 0.3, spec), [0.0, 0.0])
    with pytest.raises(SingularityError):
        mixture_denoiser([1.0, 1.0], 0.0, spec)


def test_denoiser_matches_monte_carlo(two_mode, rng):
    for x, s in [([1.5, 0.3], 0.8), ([1.0, 2.0], 2.0), ([-3.0, 1.0], 0.4)]:
        x = np.array(x)
        assert rel_err(mixture_denoiser(x, s, two_mode), mc_denoiser(x, s, two_mode, 400_000, rng)) < 0.02


def test_clean_estimate_exactness(point_mass, rng):
    for _ in range(50):
        x, t = rng.normal(size=2) * 3, rng.uniform(0.01, 1.0)
        np.testing.assert_allclose(clean_estimate_flow(x, mixture_velocity(x, t, point_mass), t),
                                   point_mass.means[0], atol=1e-9)
        s = rng.uniform(0.01, 50.0)
        np.testing.assert_allclose(clean_estimate_diffusion(x, mixture_denoiser(x, s, point_mass), s),
                                   point_mass.means[0], atol=1e-9)


def test_coincident_components_reduce_to_single_gaussian(rng):
    mu = [0.5, -1.0, 2.0]
    mixed = MixtureSpec([0.2, 0.3, 0.5], [mu, mu, mu], [0.7, 0.7, 0.7])
    single = MixtureSpec([1.0], [mu], [0.7])
    for _ in range(10):
        x, t = rng.normal(size=3), rng.uniform(0.05, 1.0)
        np.testing.assert_allclose(mixture_velocity(x, t, mixed), mixture_velocity(x, t, single), rtol=1e-12)
        np.testing.assert_allclose(mixture_denoiser(x, t, mixed), mixture_denoiser(x, t, single), rtol=1e-12)


def test_small_t_responsibilities_stay_finite(two_mode):
    v = mixture_velocity([30.0, 0.0], 1e-4, MixtureSpec([0.5, 0.5], [[-2, 0], [2, 0]], [0.0, 1e-3]))
    assert np.all(np.isfinite(v))


def test_jacobians_match_finite_differences(two_mode, rng):
    for _ in range(10):
        x, t = rng.normal(size=2) * 2, rng.uniform(0.1, 1.0)
        J = mixture_velocity_jacobian(x, t, two_mode)
        np.testing.assert_allclose(J, jacobian_fd(lambda y: mixture_velocity(y, t, two_mode), x), atol=1e-6)
        s = rng.uniform(0.2, 5.0)
        J = mixture_denoiser_jacobian(x, s, two_mode)
        np.testing.assert_allclose(J, jacobian_fd(lambda y: mixture_denoiser(y, s, two_mode), x), atol=1e-6)


def test_field_vjp(two_mode, rng):
    x, c = rng.normal(size=2), rng.normal(size=2)
    np.testing.assert_allclose(MixtureVelocity(two_mode).vjp(x, 0.3, c),
                               mixture_velocity_jacobian(x, 0.3, two_mode).T @ c)
    np.testing.assert_allclose(MixtureDenoiser(two_mode).vjp(x, 0.3, c),
                               mixture_denoiser_jacobian(x, 0.3, two_mode).T @ c)


def test_diffusion_samples_land_near_a_mode(two_mode):
    rng = np.random.default_rng(7)
    sch = make_sigma_schedule(40, 20.0, "karras")
    den = MixtureDenoiser(two_mode)
    dec = DecoderSpec("identity", 1, 2)
    from artifact_guidance.detector import DetectorSpec
    det = DetectorSpec("radial", centers=([50.0, 50.0],), radii=(1.0,))
    inside = 0
    for _ in range(1000):
        x, _ = run_trajectory(20.0 * rng.standard_normal(2), "diffusion", den, dec, det, None, sch)
        k = np.argmin(np.linalg.norm(two_mode.means - x, axis=1))
        inside += np.all(np.abs(x - two_mode.means[k]) <= 3 * two_mode.stds[k])
    assert inside >= 990


def test_mixture_spec_validation():
    with pytest.raises(InputError):
        MixtureSpec([0.5, 0.6], [[0, 0], [1, 1]], [1, 1])
    with pytest.raises(InputError):
        MixtureSpec([1.0], [[0, 0]], [-1.0])
    assert MixtureSpec([1.0], [[0, 0]], [0.0]).has_point_mass


def test_decode_examples():
    np.testing.assert_array_equal(decode([1, 2, 3, 4], DecoderSpec("identity", 2, 2)), [[1, 2], [3, 4]])
    np.testing.assert_array_equal(decode([1, 2], DecoderSpec("linear", 2, 2, np.zeros((4, 2)))), np.zeros((2, 2)))
    np.testing.assert_array_equal(decode([3, 4], DecoderSpec("linear", 1, 2, [[1, 0], [0, 2]])), [[3, 8]])
    with pytest.raises(InputError):
        decode([1, 2, 3], DecoderSpec("identity", 2, 2))
    with pytest.raises(InputError):
        DecoderSpec("identity", 2, 2, None) and DecoderSpec("linear", 2, 2, np.zeros((3, 2)))


def test_decode_linearity_and_adjoint(rng):
    spec = DecoderSpec("linear", 3, 4, rng.normal(size=(12, 5)))
    x, y = rng.normal(size=5), rng.normal(size=5)
    a, b = 1.7, -0.3
    np.testing.assert_allclose(decode(a * x + b * y, spec), a * decode(x, spec) + b * decode(y, spec), atol=1e-12)
    c = rng.normal(size=(3, 4))
    assert np.isclose(np.sum(decode(x, spec) * c), x @ decode_transpose(c, spec), rtol=1e-12)


def test_mlp_one_step_and_determinism(two_mode):
    with pytest.raises(InputError):
        train_mlp_velocity(two_mode, steps=0)
    net = train_mlp_velocity(two_mode, widths=(8,), steps=1, seed=3)
    assert net([0.1, 0.2], 0.5).shape == (2,) and len(net.loss_history) == 1
    a = train_mlp_velocity(two_mode, widths=(16, 16), steps=50, seed=11)
    b = train_mlp_velocity(two_mode, widths=(16, 16), steps=50, seed=11)
    for Wa, Wb in zip(a.weights + a.biases, b.weights + b.biases):
        assert np.array_equal(Wa, Wb)


def test_mlp_vjp_matches_finite_differences(two_mode, rng):
    net = train_mlp_velocity(two_mode, widths=(12, 12), steps=20, seed=0)
    x, c = rng.normal(size=2), rng.normal(size=2)
    J = jacobian_fd(lambda y: net(y, 0.4), x)
    np.testing.assert_allclose(net.vjp(x, 0.4, c), J.T @ c, atol=1e-7)


def test_mlp_learns_point_mass_field():
    mu = np.array([1.0, -0.5])
    spec = MixtureSpec([1.0], [mu], [0.0])
    net = train_mlp_velocity(spec, widths=(64, 64), steps=3000, lr=3e-3, seed=0)
    rng = np.random.default_rng(99)
    ts = np.linspace(0.1, 1.0, 10)
    zs = rng.standard_normal((50, 2))
    err = num = 0.0
    for t in ts:
        xs = (1 - t) * mu + t * zs
        pred = net.batch(xs, t)
        true = (xs - mu) / t
        err += np.sum((pred - true) ** 2)
        num += np.sum(true**2)
    assert np.sqrt(err / num) < 0.10


def test_model_json_roundtrip(tmp_path, two_mode):
    net = train_mlp_velocity(two_mode, widths=(4,), steps=2, seed=0)
    path = tmp_path / "m.json"
    save_model(path, two_mode, net)
    d = json.loads(path.read_text())
    assert set(d) == {"weights", "means", "stds", "layers"}
    spec, net2 = load_model(path)
    assert np.array_equal(spec.means, two_mode.means)
    assert np.array_equal(net2([0.3, 0.1], 0.2), net([0.3, 0.1], 0.2))
    spec3, none = load_model(two_mode.to_dict())
    assert none is None and spec3.K == 2
    assert isinstance(MLPVelocity.from_dict(net.to_dict()), MLPVelocity)
