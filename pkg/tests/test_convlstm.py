import numpy as np
import pytest

from gradcheck import check_gradients
from oracles import scalar_lstm
from xrcodec import convlstm
from xrcodec.convlstm import GATES, ConvLstmParams, ConvLstmState, cell_step, init_params, layer_forward
from xrcodec.tensor import ConvSpec, ShapeError, Tensor, conv2d, sigmoid, tanh


def make_params(rng, cin, hid, k, stride=1, scale=0.5, peephole=False):
    p = ConvLstmParams(
        Tensor(rng.standard_normal((4 * hid, cin, k, k)) * scale),
        Tensor(rng.standard_normal((4 * hid, hid, k, k)) * scale),
        Tensor(rng.standard_normal(4 * hid) * scale),
        stride=stride,
        peephole=tuple(Tensor(rng.standard_normal(hid) * scale) for _ in range(3)) if peephole else None,
    )
    return p


def zero_params(cin, hid, k, stride=1):
    return ConvLstmParams(
        Tensor(np.zeros((4 * hid, cin, k, k))),
        Tensor(np.zeros((4 * hid, hid, k, k))),
        Tensor(np.zeros(4 * hid)),
        stride=stride,
    )


def test_zero_weights_zero_state_gives_zero():
    x = Tensor(np.random.default_rng(0).standard_normal((1, 3, 4, 4)))
    p = zero_params(3, 2, 3)
    s = cell_step(x, convlstm.zero_state(x, p), p)
    assert np.array_equal(s.cell.data, np.zeros((1, 2, 4, 4)))
    assert np.array_equal(s.hidden.data, np.zeros((1, 2, 4, 4)))


def test_zero_weights_halve_cell():
    rng = np.random.default_rng(1)
    c = rng.standard_normal((1, 2, 3, 3))
    p = zero_params(1, 2, 3)
    state = ConvLstmState(Tensor(rng.standard_normal((1, 2, 3, 3))), Tensor(c))
    s = cell_step(Tensor(rng.standard_normal((1, 1, 3, 3))), state, p)
    # i = f = o = 1/2 and g = 0
    for idx in np.ndindex(c.shape):
        cv = float(c[idx])
        assert s.cell.data[idx] == pytest.approx(0.5 * cv, abs=1e-15)
        assert s.hidden.data[idx] == pytest.approx(0.5 * np.tanh(0.5 * cv), abs=1e-15)


def _scalar_weights(p: ConvLstmParams):
    names = dict(zip(GATES, "ifog"))
    wx, wh, b = {}, {}, {}
    for gate, key in names.items():
        gx, gh, gb = p.gate(gate)
        wx[key] = gx[:, :, 0, 0].tolist()
        wh[key] = gh[:, :, 0, 0].tolist()
        b[key] = gb.tolist()
    return wx, wh, b


def test_1x1_matches_scalar_lstm():
    rng = np.random.default_rng(2)
    for _ in range(50):
        cin, hid = rng.integers(1, 4, size=2)
        p = make_params(rng, cin, hid, 1, scale=1.0)
        x = rng.standard_normal((1, cin, 1, 1))
        h = rng.standard_normal((1, hid, 1, 1))
        c = rng.standard_normal((1, hid, 1, 1))
        got = cell_step(Tensor(x), ConvLstmState(Tensor(h), Tensor(c)), p)
        wx, wh, b = _scalar_weights(p)
        h_ref, c_ref = scalar_lstm(x.ravel().tolist(), h.ravel().tolist(), c.ravel().tolist(), wx, wh, b)
        assert np.max(np.abs(got.hidden.data.ravel() - h_ref)) <= 1e-12
        assert np.max(np.abs(got.cell.data.ravel() - c_ref)) <= 1e-12


def test_layer_t1_is_single_step():
    rng = np.random.default_rng(3)
    p = make_params(rng, 2, 3, 3, stride=2)
    x = Tensor(rng.standard_normal((2, 2, 6, 6)))
    step = cell_step(x, convlstm.zero_state(x, p), p)
    assert np.array_equal(layer_forward(x, p, 1).data, step.hidden.data)


def test_layer_zero_params_zero_output():
    x = Tensor(np.random.default_rng(4).standard_normal((1, 2, 4, 4)))
    for t in (1, 2, 5):
        assert np.array_equal(layer_forward(x, zero_params(2, 3, 2), t).data, np.zeros((1, 3, 4, 4)))


def test_layer_t3_equals_manual_unroll():
    rng = np.random.default_rng(5)
    p = make_params(rng, 2, 3, 3, stride=2)
    x = Tensor(rng.standard_normal((1, 2, 8, 8)))
    zero = np.zeros((1, 3, 4, 4))
    s = ConvLstmState(Tensor(zero), Tensor(zero.copy()))
    for _ in range(3):
        s = cell_step(x, s, p)
    assert layer_forward(x, p, 3).data.tobytes() == s.hidden.data.tobytes()


def test_layer_rejects_zero_steps():
    p = zero_params(1, 1, 1)
    with pytest.raises(ValueError):
        layer_forward(Tensor(np.zeros((1, 1, 2, 2))), p, 0)


def test_state_shape_mismatch_rejected():
    p = zero_params(1, 2, 3, stride=2)
    x = Tensor(np.zeros((1, 1, 8, 8)))
    bad = ConvLstmState(Tensor(np.zeros((1, 2, 8, 8))), Tensor(np.zeros((1, 2, 8, 8))))
    with pytest.raises(ShapeError, match="state shape"):
        cell_step(x, bad, p)
    with pytest.raises(ShapeError):
        ConvLstmState(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 4, 3))))


@pytest.mark.parametrize("stride,size", [(1, 5), (2, 8), (2, 7)])
def test_shapes_preserved_across_steps(stride, size):
    rng = np.random.default_rng(6)
    p = make_params(rng, 2, 3, 3, stride=stride)
    x = Tensor(rng.standard_normal((1, 2, size, size)))
    s = convlstm.zero_state(x, p)
    expected = (1, 3, -(-size // stride), -(-size // stride))
    for _ in range(4):
        s = cell_step(x, s, p)
        assert s.hidden.shape == expected
        assert s.cell.shape == expected


def test_gate_ranges():
    rng = np.random.default_rng(7)
    # moderate pre-activations: beyond |z| ~ 37 float64 sigmoid rounds to exactly 0 or 1
    p = make_params(rng, 3, 4, 3, scale=1.0)
    x = Tensor(rng.standard_normal((2, 3, 5, 5)))
    z = conv2d(x, p.w_x, p.bias, ConvSpec.square(3)).data
    assert np.abs(z).max() < 30
    h = 4
    gates = [sigmoid(Tensor(z[:, k * h : (k + 1) * h])).data for k in range(3)]
    g = tanh(Tensor(z[:, 3 * h :])).data
    for a in gates:
        assert np.all((a > 0) & (a < 1))
    assert np.all((g > -1) & (g < 1))


def test_init_params():
    rng = np.random.default_rng(8)
    p = init_params(rng, 5, 3, 2)
    assert p.w_x.shape == (12, 5, 2, 2) and p.w_h.shape == (12, 3, 2, 2)
    assert np.all(np.abs(p.w_x.data) <= np.sqrt(1 / 20))
    assert np.all(np.abs(p.w_h.data) <= np.sqrt(1 / 12))
    _, _, bf = p.gate("forget")
    assert np.all(bf == 1.0)
    for gate in ("input", "output", "candidate"):
        assert np.all(p.gate(gate)[2] == 0.0)


def test_layer_t2_gradients():
    rng = np.random.default_rng(9)
    p = make_params(rng, 2, 2, 3, stride=2)
    arrays = [rng.standard_normal((1, 2, 4, 4)), p.w_x.data, p.w_h.data, p.bias.data]

    def fn(x, wx, wh, b):
        return layer_forward(x, ConvLstmParams(wx, wh, b, stride=2), 2)

    assert check_gradients(fn, arrays) <= 1e-4


def test_peephole_variant_gradients_and_step():
    rng = np.random.default_rng(10)
    p = make_params(rng, 2, 2, 2, peephole=True)
    arrays = [rng.standard_normal((1, 2, 3, 3)), p.w_x.data, p.w_h.data, p.bias.data] + [t.data for t in p.peephole]

    def fn(x, wx, wh, b, pi, pf, po):
        return layer_forward(x, ConvLstmParams(wx, wh, b, peephole=(pi, pf, po)), 2)

    assert check_gradients(fn, arrays) <= 1e-4
