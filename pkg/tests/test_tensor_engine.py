import math

import numpy as np
import pytest

from app.core.exceptions import (
    DimensionError,
    StaleGraphError,
)
from app.engine import tensor as T
from app.engine.gradcheck import (
    gradcheck,
    relative_error,
)
from app.engine.tensor import DiffTensor

TOL = 1e-4


def leaf(values) -> DiffTensor:
    return DiffTensor(values, requires_grad=True)


def weighted_sum(out: DiffTensor, weights: np.ndarray) -> DiffTensor:
    """Scalar loss with a non-trivial upstream gradient."""
    return T.sum(T.mul(out, DiffTensor(weights)))


# ─── conv2d ───
def test_conv2d_degenerate_1x1():
    out = T.conv2d(DiffTensor([[[[3.0]]]]), DiffTensor([[[[2.0]]]]), DiffTensor([0.0]))
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 6.0


def test_conv2d_sums_window():
    out = T.conv2d(DiffTensor(np.ones((1, 1, 2, 2))), DiffTensor(np.ones((1, 1, 2, 2))), DiffTensor([0.0]))
    assert out.item() == 4.0


def test_conv2d_output_shape_with_padding(rng):
    x, kernel = DiffTensor(rng.normal(size=(2, 3, 5, 7))), DiffTensor(rng.normal(size=(4, 3, 3, 1)))
    assert T.conv2d(x, kernel, DiffTensor(np.zeros(4)), pad=(1, 0)).shape == (2, 4, 5, 7)


def test_conv2d_gradient(rng):
    x = leaf(rng.normal(size=(2, 3, 5, 7)))
    k = leaf(rng.normal(size=(4, 3, 3, 3)))
    b = leaf(rng.normal(size=4))
    r = rng.normal(size=(2, 4, 5, 7))
    assert gradcheck(lambda: weighted_sum(T.conv2d(x, k, b, (1, 1)), r), [x, k, b]) < TOL


def test_conv2d_channel_mismatch_names_axis():
    with pytest.raises(DimensionError) as info:
        T.conv2d(DiffTensor(np.zeros((1, 3, 4, 4))), DiffTensor(np.zeros((2, 2, 3, 3))), DiffTensor(np.zeros(2)))
    assert info.value.axis == "channels"


def test_conv2d_kernel_larger_than_padded_input():
    with pytest.raises(DimensionError) as info:
        T.conv2d(DiffTensor(np.zeros((1, 1, 2, 2))), DiffTensor(np.zeros((1, 1, 3, 1))), DiffTensor(np.zeros(1)))
    assert info.value.axis == "height"


# ─── activations ───
def test_relu_values():
    out = T.relu(DiffTensor([-1.0, 2.0]))
    assert out.values.tolist() == [0.0, 2.0]


def test_sigmoid_at_zero_and_gradient():
    x = leaf([0.0])
    out = T.sigmoid(x)
    assert out.values[0] == 0.5
    T.backward(T.sum(out))
    assert x.grad[0] == pytest.approx(0.25, abs=1e-15)


def test_sigmoid_symmetry_and_range(rng):
    v = np.concatenate([rng.normal(scale=20.0, size=500), [-1e4, 1e4]])
    s = T.sigmoid_values(v)
    assert np.all((s > 0.0) & (s < 1.0))
    np.testing.assert_allclose(s + T.sigmoid_values(-v), 1.0, atol=1e-12)


def test_activation_gradients(rng):
    x = leaf(rng.normal(size=(3, 4)))
    r = rng.normal(size=(3, 4))
    assert gradcheck(lambda: weighted_sum(T.sigmoid(x), r), [x]) < TOL
    assert gradcheck(lambda: weighted_sum(T.relu(x), r), [x]) < TOL


def test_replayed_relu_masks():
    with T.recording_relu_masks() as tape:
        T.relu(DiffTensor([1.0, -1.0]))
    assert [m.tolist() for m in tape.masks] == [[True, False]]
    with T.recording_relu_masks(tape):
        out = T.relu(DiffTensor([-3.0, 4.0]))
    assert out.values.tolist() == [-3.0, 0.0]
    assert T.relu(DiffTensor([-3.0, 4.0])).values.tolist() == [0.0, 4.0]


def test_replayed_mask_shape_must_match():
    with T.recording_relu_masks() as tape:
        T.relu(DiffTensor([1.0, -1.0]))
    with T.recording_relu_masks(tape), pytest.raises(DimensionError):
        T.relu(DiffTensor([1.0, 2.0, 3.0]))


def test_frozen_masks_at_a_kink():
    x = DiffTensor([[-1.0, 0.0, 2.0]])
    b = leaf(np.zeros((1, 3)))

    def loss():
        return T.sum(T.relu(T.add(x, b)))

    # the middle pre-activation sits exactly on the kink: one-sided slopes 0 and 1
    assert gradcheck(loss, [b]) == pytest.approx(1.0)
    assert gradcheck(loss, [b], freeze_relu=True) < 1e-9


# ─── linear ───
def test_linear_identity_and_small_case():
    x = DiffTensor([[1.0, 2.0]])
    assert T.linear(x, DiffTensor(np.eye(2)), DiffTensor(np.zeros(2))).values.tolist() == [[1.0, 2.0]]
    assert T.linear(x, DiffTensor([[1.0], [1.0]]), DiffTensor([0.0])).values.tolist() == [[3.0]]


def test_linear_gradient(rng):
    x, w, b = leaf(rng.normal(size=(4, 10))), leaf(rng.normal(size=(10, 6))), leaf(rng.normal(size=6))
    r = rng.normal(size=(4, 6))
    assert gradcheck(lambda: weighted_sum(T.linear(x, w, b), r), [x, w, b]) < TOL


def test_linear_feature_mismatch():
    with pytest.raises(DimensionError):
        T.linear(DiffTensor(np.zeros((2, 3))), DiffTensor(np.zeros((4, 5))), DiffTensor(np.zeros(5)))


# ─── concat_channels ───
def test_concat_channels_stacks():
    out = T.concat_channels(DiffTensor(np.full((1, 1, 1, 1), 5.0)), DiffTensor(np.full((1, 1, 1, 1), 7.0)))
    assert out.shape == (1, 2, 1, 1)
    assert out.values.reshape(-1).tolist() == [5.0, 7.0]


def test_concat_with_empty_is_identity(rng):
    x = DiffTensor(rng.normal(size=(2, 3, 4, 5)))
    out = T.concat_channels(x, DiffTensor(np.zeros((2, 0, 4, 5))))
    np.testing.assert_array_equal(out.values, x.values)


def test_concat_gradient_splits():
    a, b = leaf(np.zeros((1, 2, 3, 3))), leaf(np.zeros((1, 1, 3, 3)))
    T.backward(T.sum(T.concat_channels(a, b)))
    np.testing.assert_array_equal(a.grad, np.ones_like(a.values))
    np.testing.assert_array_equal(b.grad, np.ones_like(b.values))


def test_concat_height_mismatch():
    with pytest.raises(DimensionError) as info:
        T.concat_channels(DiffTensor(np.zeros((1, 1, 2, 3))), DiffTensor(np.zeros((1, 1, 4, 3))))
    assert info.value.axis == "height"


# ─── hadamard_landmark ───
def test_hadamard_identity_and_zero(rng):
    w = DiffTensor(rng.normal(size=(2, 3, 4, 5)))
    np.testing.assert_array_equal(T.hadamard_landmark(w, DiffTensor(np.ones(5))).values, w.values)
    assert not T.hadamard_landmark(w, DiffTensor(np.zeros(5))).values.any()


def test_hadamard_gradient(rng):
    w, theta = leaf(rng.normal(size=(2, 3, 4, 5))), leaf(rng.normal(size=5))
    r = rng.normal(size=(2, 3, 4, 5))
    assert gradcheck(lambda: weighted_sum(T.hadamard_landmark(w, theta), r), [w, theta]) < TOL
    theta.zero_grad()
    T.backward(weighted_sum(T.hadamard_landmark(w, theta), r))
    np.testing.assert_allclose(theta.grad, (r * w.values).sum(axis=(0, 1, 2)), rtol=1e-12)


def test_hadamard_length_mismatch():
    with pytest.raises(DimensionError):
        T.hadamard_landmark(DiffTensor(np.zeros((1, 3, 4, 5))), DiffTensor(np.zeros(4)))


def test_hadamard_commutes_with_landmark_permutation(rng):
    w, theta = rng.normal(size=(2, 3, 4, 6)), rng.normal(size=6)
    perm = rng.permutation(6)
    gated = T.hadamard_landmark(DiffTensor(w), DiffTensor(theta)).values
    permuted = T.hadamard_landmark(DiffTensor(w[..., perm]), DiffTensor(theta[perm])).values
    np.testing.assert_array_equal(permuted, gated[..., perm])


# ─── softmax cross entropy ───
def test_cross_entropy_uniform_logits():
    loss = T.softmax_cross_entropy(DiffTensor(np.zeros((4, 68))), [0, 5, 17, 67])
    assert abs(loss.item() - math.log(68)) < 1e-12


def test_cross_entropy_is_stable_for_large_logits():
    loss = T.softmax_cross_entropy(DiffTensor([[1000.0, 0.0]]), [0])
    assert np.isfinite(loss.item())
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_gradient_closed_form(rng):
    logits = leaf(rng.normal(size=(3, 68)))
    labels = np.array([0, 40, 67])
    T.backward(T.softmax_cross_entropy(logits, labels))
    expected = T.softmax(logits.values)
    expected[np.arange(3), labels] -= 1.0
    np.testing.assert_allclose(logits.grad, expected / 3, rtol=1e-10, atol=1e-15)
    assert gradcheck(lambda: T.softmax_cross_entropy(logits, labels), [logits]) < TOL


def test_cross_entropy_nonnegative(rng):
    for _ in range(5):
        assert T.softmax_cross_entropy(DiffTensor(rng.normal(scale=5, size=(6, 4))), rng.integers(0, 4, 6)).item() >= 0


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(DimensionError):
        T.softmax_cross_entropy(DiffTensor(np.zeros((2, 3))), [0, 3])


# ─── pooling and shape ops ───
def test_pooling_gradients(rng):
    x = leaf(rng.normal(size=(2, 3, 5, 7)))
    assert T.avg_pool2d(x, 2).shape == (2, 3, 2, 3)
    pooled_weights = rng.normal(size=(2, 3, 2, 3))
    assert gradcheck(lambda: weighted_sum(T.avg_pool2d(x, 2), pooled_weights), [x]) < TOL
    r = rng.normal(size=(2, 3))
    assert gradcheck(lambda: weighted_sum(T.global_avg_pool(x), r), [x]) < TOL
    assert gradcheck(lambda: T.mean(T.flatten(x)), [x]) < TOL


# ─── backward ───
def test_backward_identity():
    x = leaf(3.0)
    T.backward(x)
    assert x.grad == 1.0


def test_backward_square_sum(rng):
    x = leaf(rng.normal(size=5))
    T.backward(T.sum(T.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2.0 * x.values, rtol=1e-15)


def test_backward_accumulates_reused_tensor(rng):
    """y used twice must match the same graph built from two independent copies."""
    v = rng.normal(size=(2, 3))
    x = leaf(v)
    y = T.sigmoid(x)
    T.backward(T.sum(T.add(T.mul(y, y), y)))

    a, b = leaf(v), leaf(v)
    ya, yb = T.sigmoid(a), T.sigmoid(b)
    T.backward(T.sum(T.add(T.mul(ya, yb), T.sigmoid(leaf(v)))))
    s = T.sigmoid_values(v)
    np.testing.assert_allclose(x.grad, a.grad + b.grad + s * (1 - s), rtol=1e-12)


def test_backward_leaves_constants_without_grad(rng):
    c = DiffTensor(rng.normal(size=3))
    x = leaf(rng.normal(size=3))
    T.backward(T.sum(T.mul(x, c)))
    assert c.grad is None


def test_backward_twice_is_rejected(rng):
    x = leaf(rng.normal(size=3))
    y = T.mul(x, x)
    loss = T.sum(y)
    T.backward(loss)
    with pytest.raises(StaleGraphError):
        T.backward(loss)
    with pytest.raises(StaleGraphError):
        T.backward(T.sum(y))


def test_backward_needs_scalar(rng):
    with pytest.raises(DimensionError):
        T.backward(leaf(rng.normal(size=3)))


def test_forward_and_backward_are_deterministic(rng):
    v, k = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(2, 3, 3, 3))

    def run():
        x, kernel = leaf(v), leaf(k)
        out = T.sum(T.relu(T.conv2d(x, kernel, DiffTensor(np.zeros(2)), (1, 1))))
        T.backward(out)
        return out.values.copy(), x.grad.copy(), kernel.grad.copy()

    first, second = run(), run()
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def test_relative_error_floor():
    assert relative_error(np.array([1e-12]), np.array([0.0])) < 1e-3
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)
