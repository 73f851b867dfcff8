import numpy as np
import pytest

from app.core.exceptions import (
    DimensionError,
    FeedbackError,
)
from app.engine import tensor as T
from app.engine.gradcheck import gradcheck
from app.engine.tensor import DiffTensor
from app.tools.models.network_model import (
    AblationMode,
    ModelConfig,
)
from app.tools.models.prior_model import PriorVector
from app.tools.models.sequence_model import (
    N_FRAMES,
    N_LIP_POINTS,
)
from app.tools.network import (
    BIAS_INIT,
    NEUTRAL_FEEDBACK,
    LipMotionNet,
    count_parameters,
    init_feedback,
    rfm_apply,
    update_feedback,
)
from tests.conftest import micro_config


@pytest.fixture
def prior(rng) -> PriorVector:
    return PriorVector(base=rng.uniform(0.05, 0.95, size=N_LIP_POINTS))


def batch(rng, n: int = 2, scale: float = 1.0) -> np.ndarray:
    return scale * rng.normal(size=(n, 3, N_FRAMES, N_LIP_POINTS))


def randomize_classifier(model: LipMotionNet, rng) -> None:
    last = len(model.config.fc_dims) - 1
    weight = model.params[f"fc.{last}.weight"]
    weight.values[...] = rng.normal(scale=0.5, size=weight.shape)


# ─── feedback gate ───
def test_rfm_with_zero_theta_is_identity(rng):
    w = DiffTensor(batch(rng))
    out = rfm_apply(w, DiffTensor(np.zeros(N_LIP_POINTS)))
    np.testing.assert_array_equal(out.values, w.values)


def test_rfm_with_unit_theta_doubles(rng):
    w = DiffTensor(batch(rng))
    out = rfm_apply(w, DiffTensor(np.ones(N_LIP_POINTS)))
    np.testing.assert_array_equal(out.values, 2 * w.values)


def test_rfm_scales_one_landmark(rng):
    w = DiffTensor(batch(rng, 1))
    theta = np.zeros(N_LIP_POINTS)
    theta[17] = 0.5
    out = rfm_apply(w, DiffTensor(theta)).values
    np.testing.assert_allclose(out[..., 17], 1.5 * w.values[..., 17], rtol=1e-15)
    np.testing.assert_array_equal(np.delete(out, 17, axis=-1), np.delete(w.values, 17, axis=-1))


def test_init_feedback_per_mode(prior):
    assert init_feedback(AblationMode.BASELINE, prior) is None
    np.testing.assert_array_equal(init_feedback(AblationMode.RFM_ONLY, None).theta.values, NEUTRAL_FEEDBACK)
    np.testing.assert_array_equal(init_feedback(AblationMode.RFM_PRIOR, prior).theta.values, prior.p)
    np.testing.assert_allclose(init_feedback(AblationMode.RFM_PRIOR_OPPOSED, prior).theta.values, 1 - prior.p)


@pytest.mark.parametrize("mode", ["rfm_prior", "rfm_prior_opposed"])
def test_prior_modes_need_a_prior(mode):
    with pytest.raises(FeedbackError):
        init_feedback(mode, None)


def test_theta_is_a_copy_of_the_prior(prior):
    feedback = init_feedback(AblationMode.RFM_PRIOR, prior)
    feedback.theta.values[0] += 1.0
    assert prior.p[0] != feedback.theta.values[0]


def test_update_feedback_is_plain_sgd(prior):
    feedback = init_feedback(AblationMode.RFM_PRIOR, prior)
    grad = np.linspace(-1, 1, N_LIP_POINTS)
    before = feedback.theta.values.copy()
    update_feedback(feedback, grad, 0.1)
    np.testing.assert_allclose(feedback.theta.values, before - 0.1 * grad, rtol=1e-15)


def test_update_feedback_rejects_baseline():
    with pytest.raises(FeedbackError):
        update_feedback(None, np.zeros(N_LIP_POINTS), 0.1)


# ─── forward pass ───
def test_logit_shape(rng, prior):
    model = LipMotionNet(micro_config(num_speakers=3), prior, seed=0)
    assert model(batch(rng, 4)).shape == (4, 3)


def test_stream_shapes(rng, prior):
    model = LipMotionNet(micro_config(channels=2), prior, seed=0)
    w = DiffTensor(batch(rng, 1))
    assert model.landmark_stream(w).shape == (1, 2, N_FRAMES, N_LIP_POINTS)
    assert model.frame_stream(w).shape == (1, 2, N_FRAMES, N_LIP_POINTS)


def test_untrained_model_gives_uniform_logits(rng, prior):
    model = LipMotionNet(micro_config(num_speakers=5, mode="rfm_prior"), prior, seed=0)
    logits = model.predict(batch(rng, 3))
    np.testing.assert_array_equal(logits, 0.0)
    np.testing.assert_allclose(T.softmax(logits), 0.2, rtol=1e-15)


def test_softmax_rows_sum_to_one(rng, prior):
    model = LipMotionNet(micro_config(num_speakers=4), prior, seed=1)
    randomize_classifier(model, rng)
    probs = T.softmax(model.predict(batch(rng, 5)))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs > 0)


def test_frame_stream_ignores_static_input(rng, prior):
    model = LipMotionNet(micro_config(channels=2), prior, seed=0)
    point = model.params["frame.point_conv.weight"]
    point.values[...] = 0.0
    point.values[0, 0, 0, 0] = point.values[1, 1, 0, 0] = 1.0
    temporal = model.params["frame.temporal_conv.weight"]
    temporal.values[...] = 0.0
    for k in range(2):
        temporal.values[k, k, :, 0] = [-1.0, 0.0, 1.0]
    still = np.repeat(np.abs(rng.normal(size=(1, 3, 1, N_LIP_POINTS))), N_FRAMES, axis=2)
    out = model.frame_stream(DiffTensor(still)).values
    # zero padding makes only the first and last frames see a difference
    np.testing.assert_array_equal(out[:, :, 1:-1], 0.0)


def test_forward_is_batch_equivariant(rng, prior):
    model = LipMotionNet(micro_config(num_speakers=3), prior, seed=2)
    randomize_classifier(model, rng)
    x = batch(rng, 3)
    together = model.predict(x)
    alone = np.concatenate([model.predict(x[i : i + 1]) for i in range(3)])
    np.testing.assert_allclose(together, alone, rtol=1e-10, atol=1e-12)


def test_predict_chunks_agree(rng, prior):
    model = LipMotionNet(micro_config(num_speakers=3), prior, seed=2)
    randomize_classifier(model, rng)
    x = batch(rng, 5)
    np.testing.assert_allclose(model.predict(x, batch_size=2), model.predict(x, batch_size=64), atol=1e-12)


def test_forward_rejects_wrong_landmark_count(rng, prior):
    model = LipMotionNet(micro_config(), prior, seed=0)
    with pytest.raises(DimensionError) as err:
        model(rng.normal(size=(1, 3, N_FRAMES, 199)))
    assert err.value.axis == "landmark"


def test_forward_rejects_unbatched_input(rng, prior):
    model = LipMotionNet(micro_config(), prior, seed=0)
    with pytest.raises(DimensionError):
        model(rng.normal(size=(3, N_FRAMES, N_LIP_POINTS)))


def test_baseline_matches_rfm_with_zero_theta(rng):
    baseline = LipMotionNet(micro_config(mode="baseline"), seed=11)
    gated = LipMotionNet(micro_config(mode="rfm_only"), seed=11)
    gated.feedback.theta.values[...] = 0.0
    weight = rng.normal(size=baseline.params["fc.1.weight"].shape)
    baseline.params["fc.1.weight"].values[...] = weight
    gated.params["fc.1.weight"].values[...] = weight
    x = batch(rng, 2)
    np.testing.assert_array_equal(baseline.predict(x), gated.predict(x))


def test_same_seed_same_weights(prior):
    a = LipMotionNet(micro_config(), prior, seed=5)
    b = LipMotionNet(micro_config(), prior, seed=5)
    c = LipMotionNet(micro_config(), prior, seed=6)
    for (name, ta), (_, tb), (_, tc) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        np.testing.assert_array_equal(ta.values, tb.values)
        if name == "frame.point_conv.weight":
            assert not np.array_equal(ta.values, tc.values)


# ─── parameters ───
def test_named_parameters_order(prior):
    model = LipMotionNet(micro_config(), prior, seed=0)
    names = [name for name, _ in model.named_parameters()]
    assert names[:2] == ["landmark.conv.weight", "landmark.conv.bias"]
    assert names[-1] == "rfm.theta"
    assert "backbone.0.0.conv1.weight" in names


def test_baseline_has_no_theta():
    model = LipMotionNet(micro_config(mode="baseline"), seed=0)
    assert model.feedback is None
    assert all(name != "rfm.theta" for name, _ in model.named_parameters())


def test_initial_biases(prior):
    model = LipMotionNet(micro_config(), prior, seed=0)
    classifier_bias = f"fc.{len(model.config.fc_dims) - 1}.bias"
    for name, tensor in model.named_parameters():
        if name == classifier_bias:
            assert not tensor.values.any()
        elif name.endswith(".bias"):
            assert (tensor.values == BIAS_INIT).all()


@pytest.mark.parametrize(
    "config",
    [
        micro_config(),
        micro_config(mode="baseline"),
        micro_config(num_speakers=7, channels=3, width=5),
        ModelConfig(num_speakers=4, backbone_stages=[(2, 8), (1, 16)], fc_dims=[12, 4], ablation_mode="rfm_only"),
    ],
)
def test_closed_form_parameter_count(config, prior):
    model = LipMotionNet(config, prior, seed=0)
    assert model.parameter_count() == count_parameters(config)


def test_default_parameter_count(prior):
    config = ModelConfig()
    assert config.fc_dims == [32, 8]
    assert count_parameters(config) == 2292
    assert LipMotionNet(config, prior, seed=0).parameter_count() == 2292


def test_full_scale_parameter_count(prior):
    config = ModelConfig(
        num_speakers=68,
        landmark_stream_channels=32,
        frame_stream_channels=32,
        backbone_stages=[(1, 64), (1, 128)],
        fc_dims=[1024, 256, 68],
    )
    assert count_parameters(config) == 721452
    assert LipMotionNet(config, prior, seed=0).parameter_count() == 721452


def test_config_rejects_mismatched_head():
    with pytest.raises(ValueError):
        ModelConfig(num_speakers=4, fc_dims=[16, 5])


# ─── gradients ───
def test_theta_receives_gradient(rng, prior):
    model = LipMotionNet(micro_config(), prior, seed=0)
    randomize_classifier(model, rng)
    loss = T.softmax_cross_entropy(model(batch(rng, 2)), [0, 1])
    T.backward(loss)
    grad = model.feedback.theta.grad
    assert grad.shape == (N_LIP_POINTS,)
    assert np.abs(grad).max() > 0


def test_zero_classifier_still_trains_the_head(rng, prior):
    model = LipMotionNet(micro_config(), prior, seed=0)
    T.backward(T.softmax_cross_entropy(model(batch(rng, 2)), [0, 1]))
    assert np.abs(model.params["fc.1.weight"].grad).max() > 0


@pytest.mark.slow
def test_full_model_gradcheck(rng, prior):
    model = LipMotionNet(micro_config(num_speakers=2), prior, seed=3)
    randomize_classifier(model, rng)
    x = batch(rng, 4, scale=10.0)

    def loss():
        return T.softmax_cross_entropy(model(x), [0, 1, 0, 1])

    assert gradcheck(loss, model.parameters(), h=1e-5, floor=1e-8, freeze_relu=True) < 1e-4


@pytest.mark.slow
def test_full_model_gradcheck_baseline(rng):
    model = LipMotionNet(micro_config(num_speakers=2, mode="baseline"), seed=5)
    randomize_classifier(model, rng)
    x = batch(rng, 4, scale=10.0)

    def loss():
        return T.softmax_cross_entropy(model(x), [1, 0, 1, 0])

    assert gradcheck(loss, model.parameters(), h=1e-5, floor=1e-8, freeze_relu=True) < 1e-4
