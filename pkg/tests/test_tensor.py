import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import GRAD_CASES, check_gradients
from oracles import conv2d_loops, maxpool_loops
from xrcodec.tensor import (
    ConvSpec,
    GradTape,
    ShapeError,
    Tensor,
    activation,
    average,
    backward,
    conv2d,
    depth_to_space,
    elementwise_combine,
    maxpool2x2,
    mul,
    reduce_mean,
    reduce_sum,
    relu,
    sigmoid,
    space_to_depth,
    tanh,
)

rng = np.random.default_rng(1234)


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# --------------------------------------------------------------------------
# conv2d


def test_conv_ones_valid():
    out = conv2d(T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 2, 2))), None, ConvSpec.square(2, 1, "valid"))
    assert out.shape == (1, 1, 2, 2)
    assert np.all(out.data == 4.0)


def test_conv_same_stride2_shape():
    out = conv2d(T(rng.random((1, 1, 4, 4))), T(rng.random((1, 1, 3, 3))), None, ConvSpec.square(3, 2, "same"))
    assert out.shape == (1, 1, 2, 2)


@pytest.mark.parametrize(
    "k,stride,padding,size",
    [(3, 1, "valid", 5), (3, 2, "same", 5), (2, 1, "same", 5), (3, 2, "same", 6), (1, 1, "same", 4), (2, 2, "valid", 6)],
)
def test_conv_matches_loop_oracle(k, stride, padding, size):
    x = rng.standard_normal((1, 2, size, size))
    w = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(3)
    got = conv2d(T(x), T(w), T(b), ConvSpec.square(k, stride, padding)).data
    want = conv2d_loops(x, w, b, stride, stride, padding)
    assert got.shape == want.shape
    assert np.max(np.abs(got - want)) <= 1e-12


def test_conv_is_correlation_not_convolution():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 0, 0] = 1.0
    w = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
    out = conv2d(T(x), T(w), None, ConvSpec.square(3, 1, "same")).data[0, 0]
    # out[y, x] = sum_ij w[i, j] * in[y + i - 1, x + j - 1]; an impulse at (0, 0) reads tap (1 - y, 1 - x)
    assert out[0, 0] == w[0, 0, 1, 1]
    assert out[0, 1] == w[0, 0, 1, 0]
    assert out[1, 0] == w[0, 0, 0, 1]
    assert out[1, 1] == w[0, 0, 0, 0]


def test_conv_linear_in_weights():
    x = rng.standard_normal((2, 3, 6, 6))
    w1, w2 = rng.standard_normal((2, 4, 3, 3, 3))
    spec = ConvSpec.square(3, 2, "same")
    lhs = conv2d(T(x), T(w1 + w2), None, spec).data
    rhs = conv2d(T(x), T(w1), None, spec).data + conv2d(T(x), T(w2), None, spec).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(lhs))


@settings(max_examples=40, deadline=None)
@given(
    size=st.integers(1, 9),
    k=st.integers(1, 4),
    stride=st.integers(1, 3),
    padding=st.sampled_from(["same", "valid"]),
)
def test_conv_shape_formula(size, k, stride, padding):
    x = T(np.ones((1, 1, size, size + 1)))
    w = T(np.ones((1, 1, k, k)))
    spec = ConvSpec.square(k, stride, padding)
    if padding == "valid" and (size < k or size + 1 < k):
        with pytest.raises(ShapeError):
            conv2d(x, w, None, spec)
        return
    out = conv2d(x, w, None, spec)
    if padding == "same":
        assert out.shape[2:] == (-(-size // stride), -(-(size + 1) // stride))
    else:
        assert out.shape[2:] == ((size - k) // stride + 1, (size + 1 - k) // stride + 1)


def test_conv_errors_name_dimension():
    x = T(np.ones((1, 2, 4, 4)))
    with pytest.raises(ShapeError, match="in_channels"):
        conv2d(x, T(np.ones((1, 3, 3, 3))), None, ConvSpec.square(3))
    with pytest.raises(ShapeError, match="kernel size"):
        conv2d(x, T(np.ones((1, 2, 2, 2))), None, ConvSpec.square(3))
    with pytest.raises(ShapeError, match="bias"):
        conv2d(x, T(np.ones((1, 2, 3, 3))), T(np.ones(2)), ConvSpec.square(3))


def test_convspec_validation():
    with pytest.raises(ValueError):
        ConvSpec(0, 3)
    with pytest.raises(ValueError):
        ConvSpec(3, 3, 0, 1)
    with pytest.raises(ValueError):
        ConvSpec(3, 3, padding="reflect")


# --------------------------------------------------------------------------
# pooling and rearrangement


def test_maxpool_small():
    out = maxpool2x2(T([[[[1, 2], [3, 4]]]]))
    assert out.data.tolist() == [[[[4.0]]]]


def test_maxpool_constant():
    out = maxpool2x2(T(np.full((1, 2, 4, 6), 7.5)))
    assert out.shape == (1, 2, 2, 3)
    assert np.all(out.data == 7.5)


def test_maxpool_matches_loop_oracle():
    x = rng.standard_normal((1, 3, 6, 6))
    assert np.array_equal(maxpool2x2(T(x)).data, maxpool_loops(x))


def test_maxpool_odd_dims_rejected():
    with pytest.raises(ShapeError, match="height"):
        maxpool2x2(T(np.ones((1, 1, 3, 4))))
    with pytest.raises(ShapeError, match="width"):
        maxpool2x2(T(np.ones((1, 1, 4, 5))))


def test_maxpool_tie_routes_to_first():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(maxpool2x2(x))
    g = backward(tape, loss)[x]
    assert g.tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]


def test_d2s_8x8x512_shape():
    assert depth_to_space(T(np.zeros((1, 512, 8, 8)))).shape == (1, 128, 16, 16)


def test_d2s_ordering():
    out = depth_to_space(T(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)))
    assert out.data.tolist() == [[[[1.0, 2.0], [3.0, 4.0]]]]


def test_s2d_ordering_and_shape():
    out = space_to_depth(T([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert out.data.ravel().tolist() == [1.0, 2.0, 3.0, 4.0]
    assert space_to_depth(T(np.zeros((1, 128, 16, 16)))).shape == (1, 512, 8, 8)


@settings(max_examples=30, deadline=None)
@given(c=st.integers(1, 3), h=st.integers(1, 4), w=st.integers(1, 4), block=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_d2s_s2d_roundtrip(c, h, w, block, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, c * block * block, h, w))
    y = depth_to_space(T(x), block).data
    assert np.array_equal(np.sort(y.ravel()), np.sort(x.ravel()))
    assert np.array_equal(space_to_depth(T(y), block).data, x)
    z = r.standard_normal((1, c, h * block, w * block))
    assert np.array_equal(depth_to_space(T(space_to_depth(T(z), block).data), block).data, z)


def test_d2s_errors():
    with pytest.raises(ShapeError, match="channels"):
        depth_to_space(T(np.zeros((1, 6, 2, 2))))
    with pytest.raises(ShapeError, match="height"):
        space_to_depth(T(np.zeros((1, 1, 3, 2))))


# --------------------------------------------------------------------------
# elementwise


def test_activation_values():
    assert relu(T([-1.0])).data.tolist() == [0.0]
    assert relu(T([2.0])).data.tolist() == [2.0]
    assert sigmoid(T([0.0])).data.tolist() == [0.5]
    assert tanh(T([0.0])).data.tolist() == [0.0]
    assert activation(T([3.0]), "relu").data.tolist() == [3.0]
    with pytest.raises(ValueError):
        activation(T([1.0]), "gelu")


def test_sigmoid_matches_definition_and_is_stable():
    v = np.linspace(-30, 30, 61)
    assert np.allclose(sigmoid(T(v)).data, 1 / (1 + np.exp(-v)), rtol=1e-14, atol=1e-300)
    assert np.all(np.isfinite(sigmoid(T([-1000.0, 1000.0])).data))


def test_relu_idempotent():
    x = T(rng.standard_normal((2, 3, 4, 4)))
    assert np.array_equal(relu(relu(x)).data, relu(x).data)


def test_average_identities():
    x = T(rng.standard_normal((1, 2, 3, 3)))
    y = T(rng.standard_normal((1, 2, 3, 3)))
    zero = T(np.zeros((1, 2, 3, 3)))
    assert np.array_equal(average(x, x).data, x.data)
    assert np.array_equal(average(zero, y).data, y.data / 2)
    assert np.array_equal(elementwise_combine(x, y, "add").data * 0.5, elementwise_combine(x, y, "average").data)


def test_combine_shape_mismatch():
    with pytest.raises(ShapeError):
        average(T(np.zeros((1, 1, 2, 2))), T(np.zeros((1, 1, 2, 3))))
    with pytest.raises(ValueError):
        elementwise_combine(T([1.0]), T([1.0]), "max")


# --------------------------------------------------------------------------
# backward


def test_backward_sum_gives_ones():
    x = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(x)
    assert np.array_equal(backward(tape, loss)[x], np.ones((1, 2, 3, 3)))


def test_backward_relu_negative_is_zero():
    x = Tensor(-rng.random((1, 1, 4, 4)) - 0.1, requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(relu(x))
    assert np.array_equal(backward(tape, loss)[x], np.zeros((1, 1, 4, 4)))


def test_backward_rejects_nonscalar():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with GradTape() as tape:
        y = relu(x)
    with pytest.raises(ShapeError):
        backward(tape, y)


def test_backward_unused_params_are_zero():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    unused = Tensor(np.ones((3,)), requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(x)
    gx, gu = backward(tape, loss, [x, unused])
    assert np.array_equal(gx, np.ones((1, 1, 2, 2)))
    assert np.array_equal(gu, np.zeros(3))


def test_backward_visits_in_reverse_order():
    x = Tensor(rng.standard_normal((1, 1, 2, 2)), requires_grad=True)
    with GradTape() as tape:
        loss = reduce_mean(tanh(sigmoid(relu(x))))
    backward(tape, loss)
    assert tape.ops == ["relu", "sigmoid", "tanh", "reduce_mean"]
    assert tape.visited == [3, 2, 1, 0]


def test_gradient_shapes_match_primal():
    x = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((5, 3, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(5), requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(conv2d(x, w, b, ConvSpec.square(3, 2)))
    grads = backward(tape, loss)
    for t in (x, w, b):
        assert grads[t].shape == t.shape


def test_no_tape_records_nothing():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    y = relu(x)
    assert y.requires_grad
    with GradTape() as tape:
        relu(Tensor(np.ones((1, 1, 2, 2))))
    assert len(tape) == 0


def test_ops_deterministic():
    x = rng.standard_normal((2, 4, 6, 6))
    w = rng.standard_normal((8, 4, 3, 3))
    a = conv2d(T(x), T(w), None, ConvSpec.square(3, 2)).data
    b = conv2d(T(x.copy()), T(w.copy()), None, ConvSpec.square(3, 2)).data
    assert a.tobytes() == b.tobytes()




@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_primitive_gradients_finite_difference(name):
    fn, shapes = GRAD_CASES[name]
    r = np.random.default_rng(7)
    arrays = [r.standard_normal(s) for s in shapes]
    assert check_gradients(fn, arrays) <= 1e-4


def test_tensor_rejects_empty_dims():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 0, 2, 2)))


def test_gradient_check_catches_detached_input():
    # x * stop_gradient(x): the tape sees d/dx = x, the true derivative is 2x
    x = np.random.default_rng(8).standard_normal((1, 1, 3, 3))
    assert check_gradients(lambda t: mul(t, Tensor(t.data)), [x]) == pytest.approx(0.5, abs=1e-6)
