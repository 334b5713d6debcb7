"""Mixture velocity field, flow-matching losses and the psi transport"""

import numpy as np
import pytest
from scipy import optimize

from mpfm.backend.flow.field import (
    FlowModel,
    FlowSettings,
    GMVelocity,
    data_scales,
    draw_endpoints,
    draw_time,
    gm_nll,
    interpolate,
    loss_flow_anomaly,
    loss_flow_normal,
    mixture_mean,
    predict_velocity,
    push_forward_psi,
    schedule_at,
    true_velocity,
)
from mpfm.backend.flow.prototype import GMPrototype
from mpfm.backend.models.config import ModeFlags
from mpfm.backend.models.enum import EndpointSource
from mpfm.backend.models.errors import RejectedInputError
from mpfm.backend.nn.gradcheck import finite_diff_check
from mpfm.backend.nn.tensor import Tensor, backward, log_softmax


def _model(k=2, d=2, hidden=(5,), std=1.0, seed=0, final="random", **settings):
    rng = np.random.default_rng(seed)
    proto = GMPrototype(np.ones(k), rng.normal(size=(k, d)), std)
    model = FlowModel.create(proto, list(hidden), rng=rng, settings=FlowSettings(**settings))
    if final == "random":
        last = model.net.weights[-1]
        last.data = rng.normal(scale=0.5, size=last.shape)
    elif final == "zero":
        model.net.zero_output()
    return model


def test_schedule_and_time_range():
    assert schedule_at(0.3) == pytest.approx((0.7, 0.3))
    with pytest.raises(RejectedInputError):
        schedule_at(1.5)


def test_interpolation_recovers_the_velocity():
    rng = np.random.default_rng(0)
    for _ in range(100):
        z0, zT = rng.normal(size=(2, 3))
        t = rng.uniform(0.1, 1.0)
        got = (interpolate(z0, zT, t) - z0) / t
        assert np.allclose(got, true_velocity(z0, zT), rtol=0, atol=1e-12)


def test_interpolation_with_per_row_times():
    z0 = np.zeros((3, 2))
    zT = np.ones((3, 2))
    out = interpolate(z0, zT, np.array([0.0, 0.5, 1.0]))
    assert np.array_equal(out[:, 0], [0.0, 0.5, 1.0])


def test_endpoint_shape_mismatch():
    with pytest.raises(RejectedInputError):
        true_velocity(np.zeros(2), np.zeros(3))


def test_fresh_model_predicts_uniform_weights_and_distinct_means():
    model = _model(k=3, final="init")
    pred = predict_velocity(model, np.ones((4, 2)), 0.5)
    assert np.allclose(pred.weights, 1 / 3, rtol=0, atol=1e-15)
    means = pred.means.data
    assert np.all(np.linalg.norm(means[:, 0] - means[:, 1], axis=-1) > 1e-3)
    assert np.all(np.linalg.norm(means[:, 1] - means[:, 2], axis=-1) > 1e-3)
    assert pred.s == model.prototype.std


def test_fresh_components_receive_different_gradients():
    model = _model(k=2, d=2, final="init")
    rng = np.random.default_rng(2)
    z0 = rng.normal(size=(8, 2))
    (g,) = backward(loss_flow_normal(model, z0, rng), [model.net.weights[-1]])
    assert not np.allclose(g[:, 2:4], g[:, 4:6])


def test_default_preconditioning_is_the_identity():
    settings = FlowSettings()
    assert settings.input_center is None
    assert settings.input_scale == settings.velocity_scale == 1.0


def test_preconditioning_centers_and_scales_the_network():
    plain = _model(k=2, d=2, seed=3)
    scaled = _model(k=2, d=2, seed=3, input_center=[1.0, -2.0], input_scale=4.0, velocity_scale=3.0)
    z = np.random.default_rng(0).normal(size=(5, 2))
    shifted = (z - [1.0, -2.0]) / 4.0
    a = predict_velocity(plain, shifted, 0.3)
    b = predict_velocity(scaled, z, 0.3)
    assert b.weights == pytest.approx(a.weights, abs=1e-12)
    assert b.means.data == pytest.approx(3.0 * a.means.data, abs=1e-12)


def test_data_scales():
    rng = np.random.default_rng(0)
    z = rng.normal(loc=[5.0, -1.0, 0.0], scale=2.0, size=(20_000, 3))
    scales = data_scales(z)
    assert scales["input_center"] == pytest.approx([5.0, -1.0, 0.0], abs=0.05)
    assert scales["input_scale"] == pytest.approx(2.0, rel=0.02)
    assert scales["velocity_scale"] == pytest.approx(np.sqrt(3 + 12 + 26), rel=0.02)
    FlowSettings(**scales)


def test_data_scales_fall_back_on_constant_data():
    scales = data_scales(np.ones((4, 2)))
    assert scales["input_scale"] == 1.0
    with pytest.raises(RejectedInputError):
        data_scales(np.ones((1, 2)))


def test_predicted_weights_lie_on_the_simplex():
    model = _model(k=4, d=3, hidden=(8,))
    rng = np.random.default_rng(1)
    pred = predict_velocity(model, rng.normal(size=(1000, 3)) * 3, rng.uniform(0, 1, 1000))
    assert np.all(pred.weights > 0)
    assert np.allclose(pred.weights.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_single_state_prediction():
    model = _model()
    pred = predict_velocity(model, np.zeros(2), 0.2)
    assert pred.weights.shape == (2,)
    assert pred.means.shape == (2, 2)


def test_single_component_nll_is_scaled_l2():
    rng = np.random.default_rng(0)
    s = 0.7
    for _ in range(20):
        mu, u = rng.normal(size=(2, 3))
        pred = GMVelocity.from_arrays([1.0], mu[None], s)
        expected = 0.5 * np.sum((u - mu) ** 2) / s**2 + 1.5 * np.log(2 * np.pi * s**2)
        assert gm_nll(pred, u).item() == pytest.approx(expected, rel=1e-12)


def test_single_component_gradient_is_l2_gradient_over_variance():
    rng = np.random.default_rng(1)
    s = 0.4
    for _ in range(100):
        mu, u = rng.normal(size=(2, 2))
        means = Tensor(mu[None], requires_grad=True)
        pred = GMVelocity(log_softmax(Tensor([0.0])), means, Tensor(s))
        (grad,) = backward(gm_nll(pred, u), [means])
        l2_grad = mu - u
        assert np.allclose(grad[0], l2_grad / s**2, rtol=1e-10, atol=1e-14)


def test_far_components_are_negligible():
    s = 0.5
    weights = np.array([0.2, 0.3, 0.5])
    means = np.array([[0.0, 0.0], [20 * s, 0.0], [0.0, -25 * s]])
    pred = GMVelocity.from_arrays(weights, means, s)
    expected = -np.log(0.2) + np.log(2 * np.pi * s**2)
    assert gm_nll(pred, means[0]).item() == pytest.approx(expected, abs=1e-9)


def test_nll_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    means = Tensor(rng.normal(size=(4, 3, 2)), requires_grad=True)
    std = Tensor(0.8, requires_grad=True)
    u = rng.normal(size=(4, 2))

    def loss():
        return gm_nll(GMVelocity(log_softmax(logits, axis=-1), means, std), u).mean()

    assert finite_diff_check(loss, [logits, means, std]) < 1e-4


def test_nll_shape_mismatch():
    pred = GMVelocity.from_arrays([0.5, 0.5], np.zeros((2, 2)), 1.0)
    with pytest.raises(RejectedInputError):
        gm_nll(pred, np.zeros(3))


def test_mixture_mean():
    pred = GMVelocity.from_arrays([0.25, 0.75], [[4.0, 0.0], [0.0, 4.0]], 1.0)
    assert mixture_mean(pred).data == pytest.approx([1.0, 3.0], abs=1e-12)


@pytest.mark.parametrize("s", [0.1, 0.5, 1.0])
def test_nll_fit_aligns_mixture_mean_with_velocity_mean(s):
    rng = np.random.default_rng(11)
    n, k, d = 10_000, 3, 2
    modes = np.array([[-3.0, 1.0], [2.0, -1.0]])
    u = modes[rng.integers(2, size=n)] + rng.normal(scale=0.6, size=(n, d))

    def objective(theta):
        logits = Tensor(theta[:k], requires_grad=True)
        means = Tensor(theta[k:].reshape(k, d), requires_grad=True)
        # one frozen z_t shared by every sample
        pred = GMVelocity(
            log_softmax(logits + np.zeros((n, k)), axis=-1),
            means + np.zeros((n, k, d)),
            Tensor(s),
        )
        loss = gm_nll(pred, u).mean()
        g_logits, g_means = backward(loss, [logits, means])
        return loss.item(), np.concatenate([g_logits, g_means.reshape(-1)])

    theta0 = np.concatenate([np.zeros(k), u[:k].reshape(-1)])
    result = optimize.minimize(
        objective, theta0, jac=True, method="L-BFGS-B",
        options={"maxiter": 2000, "gtol": 1e-10, "ftol": 1e-15},
    )
    logits, means = result.x[:k], result.x[k:].reshape(k, d)
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    fitted = weights @ means

    se = u.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(fitted - u.mean(axis=0)) < 3 * se)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_flow_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    k, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    model = _model(
        k=k, d=d, hidden=(int(rng.integers(2, 6)),), std=rng.uniform(0.5, 1.5), seed=seed,
        input_center=rng.normal(size=d).tolist(), input_scale=rng.uniform(0.5, 2.0),
        velocity_scale=rng.uniform(0.5, 2.0), repulsion_clip=1e6,
    )
    z0, zT = rng.normal(size=(2, 5, d))
    t = rng.uniform(0.1, 1.0, 5)
    params = model.parameters()

    def normal():
        return loss_flow_normal(model, z0, rng, t=t, z_end=zT)

    def anomaly():
        return loss_flow_anomaly(model, z0, rng, t=t, z_end=zT)

    assert finite_diff_check(normal, params) < 1e-4
    assert finite_diff_check(anomaly, params) < 1e-4


def test_anomaly_gradient_negates_normal_gradient():
    model = _model(repulsion_clip=1e6)
    rng = np.random.default_rng(4)
    z0, zT = rng.normal(size=(2, 1, 2))
    t = np.array([0.4])
    params = model.parameters()
    normal = backward(loss_flow_normal(model, z0, rng, t=t, z_end=zT), params)
    anomaly = backward(loss_flow_anomaly(model, z0, rng, t=t, z_end=zT), params)
    for gn, ga in zip(normal, anomaly):
        assert np.allclose(ga, -gn, rtol=1e-12, atol=1e-15)


def test_active_clip_stops_the_repulsion():
    model = _model(std=1.0, repulsion_clip=0.5)
    rng = np.random.default_rng(5)
    z0, zT = rng.normal(size=(2, 3, 2))
    loss = loss_flow_anomaly(model, z0, rng, t=np.full(3, 0.5), z_end=zT)
    assert loss.item() == -0.5
    assert all(np.all(g == 0) for g in backward(loss, model.parameters()))


def test_flow_loss_rejects_bad_batches():
    model = _model()
    rng = np.random.default_rng(0)
    with pytest.raises(RejectedInputError):
        loss_flow_normal(model, np.zeros((0, 2)), rng)
    with pytest.raises(RejectedInputError):
        loss_flow_normal(model, np.zeros((3, 4)), rng)


def test_flow_loss_is_reproducible_for_a_seed():
    model = _model()
    z0 = np.random.default_rng(0).normal(size=(6, 2))
    a = loss_flow_normal(model, z0, np.random.default_rng(7)).item()
    b = loss_flow_normal(model, z0, np.random.default_rng(7)).item()
    assert a == b


def test_default_settings_share_one_time_per_batch():
    assert FlowSettings().per_sample_t is ModeFlags().per_sample_t is False
    model = _model()
    z0 = np.random.default_rng(0).normal(size=(6, 2))
    rng = np.random.default_rng(7)
    t = np.full(6, rng.uniform(model.settings.t_min, 1.0))
    z_end = draw_endpoints(model, z0, rng)
    expected = loss_flow_normal(model, z0, rng, t=t, z_end=z_end).item()
    assert loss_flow_normal(model, z0, np.random.default_rng(7)).item() == expected


def test_draw_time():
    rng = np.random.default_rng(0)
    t = draw_time(rng, 1000, 1e-3, per_sample=True)
    assert t.min() >= 1e-3 and t.max() <= 1.0 and len(set(t)) > 1
    shared = draw_time(rng, 10, 1e-3, per_sample=False)
    assert len(set(shared)) == 1


@pytest.mark.parametrize(
    "source", [EndpointSource.PRIOR, EndpointSource.NOISE, EndpointSource.PROTOTYPE_MEAN]
)
def test_endpoint_sources(source):
    model = _model(endpoint_source=source)
    z0 = np.random.default_rng(0).normal(size=(7, 2))
    zT = draw_endpoints(model, z0, np.random.default_rng(1))
    assert zT.shape == z0.shape
    if source == EndpointSource.PROTOTYPE_MEAN:
        assert np.array_equal(zT, model.prototype.means.data[model.prototype.assign(z0)])


def test_zero_velocity_transport_is_identity():
    model = _model(final="zero")
    z = np.random.default_rng(0).normal(size=(5, 2))
    assert np.array_equal(push_forward_psi(model, z).data, z)


def test_constant_velocity_transport_adds_the_velocity():
    model = _model(k=2, d=2, final="zero")
    v = np.array([0.5, -2.0])
    model.net.biases[-1].data = np.concatenate([np.zeros(2), v, v])
    z = np.random.default_rng(0).normal(size=(5, 2))
    for steps in (1, 8, 16):
        assert push_forward_psi(model, z, steps).data == pytest.approx(z + v, abs=1e-12)


def test_one_step_transport():
    model = _model(one_step_psi=True)
    z = np.random.default_rng(0).normal(size=(3, 2))
    expected = z + mixture_mean(predict_velocity(model, z, 0.0)).data
    assert np.array_equal(push_forward_psi(model, z).data, expected)


def test_transport_needs_a_step():
    model = _model()
    with pytest.raises(RejectedInputError):
        push_forward_psi(model, np.zeros((1, 2)), steps=0)
    with pytest.raises(RejectedInputError):
        push_forward_psi(model, np.zeros((1, 3)))
