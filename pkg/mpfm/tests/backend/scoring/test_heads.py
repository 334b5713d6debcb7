"""Scoring heads, combined score and head losses"""

import numpy as np
import pytest
from scipy import special

from mpfm.backend.flow.field import FlowModel, push_forward_psi
from mpfm.backend.flow.prototype import GMPrototype, log_density
from mpfm.backend.models.enum import Activation, Pooling, Term
from mpfm.backend.models.errors import RejectedInputError
from mpfm.backend.nn.gradcheck import finite_diff_check
from mpfm.backend.nn.tensor import Tensor, backward
from mpfm.backend.scoring.heads import (
    FeatureBatch,
    FeatureSample,
    ScoreBreakdown,
    ScoringHeads,
    binary_score_loss,
    combined_score,
    deviation_loss,
    flow_dim,
    global_scores,
    local_scores,
    normal_scores,
    read_score_file,
    residual_scores,
    score_batch,
    score_global,
    score_local,
    score_normal,
    score_residual,
    top_count,
    write_score_file,
)

P, C = 6, 3


def _randomize(params, rng, scale=0.5):
    for p in params:
        p.data = np.asarray(rng.normal(scale=scale, size=p.shape))


def _setup(seed=0, k=3, pooling=Pooling.MEAN):
    rng = np.random.default_rng(seed)
    d = flow_dim(P, C, pooling)
    proto = GMPrototype(np.ones(k), rng.normal(size=(k, d)), 0.8)
    model = FlowModel.create(proto, [5], rng=rng)
    heads = ScoringHeads(C, d, hidden=4, rng=rng)
    _randomize([model.net.weights[-1], model.net.biases[-1]], rng, 0.3)
    _randomize(heads.parameters(), rng)
    return model, heads


def _samples(n=5, seed=1):
    rng = np.random.default_rng(seed)
    return [FeatureSample(i, rng.normal(size=(P, C)), int(i % 2)) for i in range(n)]


@pytest.mark.parametrize(
    "fraction, patches, expected",
    [(0.10, 10, 1), (0.30, 10, 3), (0.10, 16, 2), (1.0, 7, 7), (1e-6, 10, 1)],
)
def test_top_count(fraction, patches, expected):
    assert top_count(fraction, patches) == expected


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_top_count_rejects_fractions(fraction):
    with pytest.raises(RejectedInputError):
        top_count(fraction, 10)


@pytest.mark.parametrize("fraction, expected", [(0.10, 9.0), (0.30, 8.0)])
def test_local_score_averages_the_top_patches(fraction, expected):
    heads = ScoringHeads(1, 1, hidden=1, activation=Activation.RELU)
    heads.head_a.weights[0].data = np.array([[1.0]])
    heads.head_a.weights[1].data = np.array([[1.0]])
    patches = np.random.default_rng(0).permutation(10).astype(float).reshape(1, 10, 1)
    assert local_scores(heads, patches, fraction).data[0] == expected
    sample = FeatureSample(0, patches[0])
    assert score_local(heads, sample, fraction) == expected


def test_global_score_is_transported_log_density():
    model, _ = _setup()
    for sample in _samples():
        y = push_forward_psi(model, sample.pooled[None]).data[0]
        expected = -log_density(model.prototype, y)
        assert score_global(model, sample) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_global_score_at_the_mean_of_a_standard_prototype():
    model = FlowModel.create(GMPrototype([1.0], [[0.0]], 1.0), [3], rng=np.random.default_rng(0))
    model.net.zero_output()
    sample = FeatureSample(0, np.zeros((4, 1)), 0)
    assert score_global(model, sample) == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-12)


def test_normal_score_runs_on_the_mean_patch():
    _, heads = _setup()
    for sample in _samples():
        expected = heads.head_n(sample.patches.mean(axis=0)[None]).data[0, 0]
        assert score_normal(heads, sample) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_residual_uses_the_nearest_component():
    model, heads = _setup()
    proto = model.prototype
    for sample in _samples():
        y = push_forward_psi(model, sample.pooled[None]).data[0]
        nearest = np.argmin(((proto.means.data - y) ** 2).sum(axis=1))
        expected = heads.head_r(((y - proto.means.data[nearest]) / proto.std)[None]).data[0, 0]
        assert score_residual(model, heads, sample) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_combined_score():
    s = ScoreBreakdown.combine(3, 1.0, 2.0, 0.5, 4.0, label=1)
    assert s.S == 6.5
    assert s.to_dict()["sample_id"] == 3


def test_batch_scoring_matches_single_samples():
    model, heads = _setup()
    samples = _samples(7)
    batch = score_batch(model, heads, FeatureBatch.from_samples(samples), o_fraction=0.3)
    for sample, got in zip(samples, batch):
        single = combined_score(model, heads, sample, o_fraction=0.3)
        assert got.sample_id == single.sample_id == sample.sample_id
        assert got.label == sample.label
        for key in ("S_g", "S_a", "S_n", "S_r", "S"):
            assert getattr(got, key) == pytest.approx(getattr(single, key), rel=1e-12, abs=1e-12)


def test_flattened_pooling():
    model, heads = _setup(pooling=Pooling.FLATTEN)
    batch = FeatureBatch.from_samples(_samples(3))
    assert batch.pooled(Pooling.FLATTEN).shape == (3, P * C)
    scores = score_batch(model, heads, batch, pooling=Pooling.FLATTEN)
    assert all(np.isfinite(s.S) for s in scores)


def test_disabled_heads_score_zero():
    model, heads = _setup()
    batch = FeatureBatch.from_samples(_samples(3))
    scores = score_batch(model, heads, batch, disabled=[Term.GLOBAL, Term.NORMAL])
    for s in scores:
        assert s.S_g == 0.0 and s.S_n == 0.0
        assert s.S == s.S_a + s.S_r
    none = score_batch(model, heads, batch, disabled=Term.ALL)
    assert all(s.S == 0.0 for s in none)


def test_untrained_heads_score_zero():
    rng = np.random.default_rng(0)
    heads = ScoringHeads(C, C, hidden=4, rng=rng)
    batch = FeatureBatch.from_samples(_samples(2))
    assert np.array_equal(local_scores(heads, batch.patches, 0.1).data, [0.0, 0.0])
    assert np.array_equal(normal_scores(heads, batch.mean_patch).data, [0.0, 0.0])


def test_logistic_loss_gradient_is_sigmoid_residual():
    raw = Tensor([-2.0, 0.3, 1.5, 4.0], requires_grad=True)
    labels = np.array([0.0, 1.0, 0.0, 1.0])
    (grad,) = backward(binary_score_loss(raw, labels), [raw])
    assert np.allclose(grad, (special.expit(raw.data) - labels) / 4, rtol=1e-12, atol=0)
    assert finite_diff_check(lambda: binary_score_loss(raw, labels), [raw]) < 1e-6


def test_deviation_loss_values():
    raw = Tensor([-1.0, 2.0, 3.0, 7.0])
    labels = [0, 0, 1, 1]
    assert deviation_loss(raw, labels).item() == pytest.approx((1.0 + 2.0 + 2.0 + 0.0) / 4)


@pytest.mark.parametrize("loss", [binary_score_loss, deviation_loss])
def test_losses_reject_bad_labels(loss):
    with pytest.raises(RejectedInputError):
        loss(Tensor([0.1, 0.2]), [0, 2])
    with pytest.raises(RejectedInputError):
        loss(Tensor([0.1, 0.2]), [0, 1, 1])


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_head_loss_gradients_match_finite_differences(seed):
    model, heads = _setup(seed=seed, k=1 + seed % 3)
    batch = FeatureBatch.from_samples(_samples(4, seed=100 + seed))
    labels = batch.labels
    z = batch.pooled()

    def global_loss():
        return binary_score_loss(heads.gain * global_scores(model, z) + heads.bias, labels)

    def local_loss():
        return binary_score_loss(local_scores(heads, batch.patches, 0.3), labels)

    def normal_loss():
        return binary_score_loss(normal_scores(heads, batch.mean_patch), 1.0 - labels)

    def residual_loss():
        y = push_forward_psi(model, z)
        return binary_score_loss(residual_scores(model, heads, y), labels)

    every = model.parameters() + heads.parameters()
    for loss in (global_loss, local_loss, normal_loss, residual_loss):
        assert finite_diff_check(loss, every) < 1e-4


def test_feature_sample_validation_and_equality():
    patches = np.arange(6.0).reshape(2, 3)
    a = FeatureSample(1, patches, 1)
    assert np.array_equal(a.pooled, [1.5, 2.5, 3.5])
    assert a == FeatureSample(1, patches.copy(), 1)
    assert a != FeatureSample(1, np.nextafter(patches, np.inf), 1)
    with pytest.raises(RejectedInputError):
        FeatureSample(0, np.zeros(3))
    with pytest.raises(RejectedInputError):
        FeatureSample(0, np.zeros((2, 3)), label=2)


def test_batch_needs_a_common_grid():
    with pytest.raises(RejectedInputError):
        FeatureBatch.from_samples([FeatureSample(0, np.zeros((2, 3))), FeatureSample(1, np.zeros((3, 3)))])
    with pytest.raises(RejectedInputError):
        FeatureBatch.from_samples([])
    batch = FeatureBatch.from_samples(_samples(4))
    assert len(batch.subset([0, 2])) == 2
    with pytest.raises(RejectedInputError):
        batch.pooled("max")


def test_head_state_round_trip():
    _, heads = _setup(seed=4)
    other = ScoringHeads(C, C, hidden=4, rng=np.random.default_rng(9))
    other.load_state_dict(heads.state_dict())
    assert all(
        np.array_equal(a.data, b.data) for a, b in zip(heads.parameters(), other.parameters())
    )
    with pytest.raises(RejectedInputError):
        ScoringHeads(C, C, hidden=5).load_state_dict(heads.state_dict())


def test_score_file_round_trip(tmp_path):
    model, heads = _setup()
    scores = score_batch(model, heads, FeatureBatch.from_samples(_samples(5)))
    scores.append(ScoreBreakdown.combine(99, 0.1, 0.2, 0.3, 0.4))
    path = str(tmp_path / "scores.csv")
    write_score_file(path, scores)
    assert read_score_file(path) == scores
    with open(path, encoding="utf-8") as f:
        assert f.readline().strip() == "sample_id,S_g,S_a,S_n,S_r,S,label"
