"""Autodiff core: spec examples plus a finite-difference sweep over every
differentiable operation."""

import numpy as np
import pytest

from speechlab import tensor as T
from speechlab.tensor import Tensor, gradients

from util import fd_gradcheck


def test_sum_gradient_is_ones():
    p = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    grads = gradients(T.tsum(p), {"p": p})
    np.testing.assert_array_equal(grads["p"], np.ones(3))


def test_sum_of_squares_gradient():
    p = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    grads = gradients(T.tsum(T.power(p, 2)), {"p": p})
    np.testing.assert_allclose(grads["p"], [2.0, 4.0, 6.0])


def test_two_layer_network_matches_finite_differences():
    rng = np.random.default_rng(0)
    params = {
        "w1": Tensor(rng.normal(size=(5, 7)), requires_grad=True),
        "b1": Tensor(rng.normal(size=7), requires_grad=True),
        "w2": Tensor(rng.normal(size=(7, 3)), requires_grad=True),
        "b2": Tensor(rng.normal(size=3), requires_grad=True),
    }
    x = rng.normal(size=(4, 5))

    def loss():
        h = T.tanh(T.add(T.matmul(Tensor(x), params["w1"]), params["b1"]))
        out = T.add(T.matmul(h, params["w2"]), params["b2"])
        return T.tsum(T.power(out, 2))

    fd_gradcheck(loss, params, entries_per_tensor=None)


def test_non_scalar_loss_rejected():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        gradients(T.mul(p, 2.0), {"p": p})
    with pytest.raises(ValueError, match="scalar"):
        T.mul(p, 2.0).backward()


def test_unreachable_parameter_gets_zero_gradient():
    p = Tensor([1.0, 2.0], requires_grad=True)
    q = Tensor([5.0], requires_grad=True)
    grads = gradients(T.tsum(p), {"p": p, "q": q})
    np.testing.assert_array_equal(grads["q"], np.zeros(1))


def test_no_grad_builds_no_graph():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with T.no_grad():
        out = T.mul(p, 3.0)
    assert out._parents == ()


OPS_SEEDS = list(range(20))


@pytest.mark.parametrize("seed", OPS_SEEDS)
def test_every_op_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cot = Tensor(rng.normal(size=(3, 4)))

    def away(shape, lo=0.2, hi=1.5):
        sign = rng.choice([-1.0, 1.0], size=shape)
        return Tensor(rng.uniform(lo, hi, size=shape) * sign, requires_grad=True)

    def positive(shape):
        return Tensor(rng.uniform(0.5, 2.0, size=shape), requires_grad=True)

    a = away((3, 4))
    b = away((3, 4))
    row = away((4,))
    pos = positive((3, 4))
    m1 = away((3, 5))
    m2 = away((5, 4))
    bm1 = away((2, 3, 5))
    bm2 = away((2, 5, 4))
    gain = positive((4,))
    bias = away((4,))
    img = away((6, 8, 2))
    kern = away((3, 3, 2, 3))
    kbias = away((3,))
    dw_w = away((5, 4))
    dw_b = away((4,))
    idx = rng.integers(0, 3, size=(2, 2))

    def weigh(t):
        return T.tsum(T.mul(t, cot)) if t.shape == (3, 4) else T.tsum(T.mul(t, Tensor(np.ones(t.shape))))

    cases = {
        "add": ({"a": a, "row": row}, lambda: weigh(T.add(a, row))),
        "sub": ({"a": a, "b": b}, lambda: weigh(a - b)),
        "mul": ({"a": a, "row": row}, lambda: weigh(T.mul(a, row))),
        "div": ({"a": a, "pos": pos}, lambda: weigh(T.div(a, pos))),
        "power": ({"pos": pos}, lambda: weigh(T.power(pos, 3.0))),
        "sqrt": ({"pos": pos}, lambda: weigh(T.sqrt(pos))),
        "exp": ({"a": a}, lambda: weigh(T.exp(a))),
        "log": ({"pos": pos}, lambda: weigh(T.log(pos))),
        "tanh": ({"a": a}, lambda: weigh(T.tanh(a))),
        "sigmoid": ({"a": a}, lambda: weigh(T.sigmoid(a))),
        "relu": ({"a": a}, lambda: weigh(T.relu(a))),
        "swish": ({"a": a}, lambda: weigh(T.swish(a))),
        "where": ({"a": a, "b": b}, lambda: weigh(T.where(a.data > 0, a, b))),
        "sum_axis": ({"a": a}, lambda: T.tsum(T.power(T.tsum(a, axis=0), 2))),
        "mean_axis": ({"a": a}, lambda: T.tsum(T.power(T.tmean(a, axis=1), 2))),
        "mean_all": ({"a": a}, lambda: T.tmean(T.power(a, 2))),
        "reshape": ({"a": a}, lambda: T.tsum(T.power(T.reshape(a, (2, 6)), 2))),
        "swapaxes": ({"a": a}, lambda: T.tsum(T.power(T.swapaxes(a, 0, 1), 2))),
        "transpose": ({"bm1": bm1}, lambda: T.tsum(T.power(T.transpose(bm1, (2, 0, 1)), 2))),
        "take": ({"a": a}, lambda: T.tsum(T.power(a[idx], 2))),
        "take_slice": ({"a": a}, lambda: T.tsum(T.power(a[:, 1:3], 2))),
        "concat": ({"a": a, "b": b}, lambda: T.tsum(T.power(T.concat([a, b], axis=1), 2))),
        "matmul": ({"m1": m1, "m2": m2}, lambda: weigh(T.matmul(m1, m2))),
        "matmul_batched": ({"bm1": bm1, "bm2": bm2},
                           lambda: T.tsum(T.power(T.matmul(bm1, bm2), 2))),
        "softmax": ({"a": a}, lambda: weigh(T.softmax(a, axis=-1))),
        "log_softmax": ({"a": a}, lambda: weigh(T.log_softmax(a, axis=-1))),
        "layer_norm": ({"a": a, "gain": gain, "bias": bias},
                       lambda: weigh(T.layer_norm(a, gain, bias))),
        "conv2d": ({"img": img, "kern": kern, "kbias": kbias},
                   lambda: T.tsum(T.power(T.conv2d(img, kern, kbias), 2))),
        "depthwise_conv1d": ({"a": a, "dw_w": dw_w, "dw_b": dw_b},
                             lambda: T.tsum(T.power(T.depthwise_conv1d(a, dw_w, dw_b), 2))),
    }
    for name, (params, loss) in cases.items():
        worst = fd_gradcheck(loss, params, entries_per_tensor=6, seed=seed)
        assert worst <= 1e-4, name


def test_gradient_accumulates_when_tensor_reused():
    p = Tensor([2.0], requires_grad=True)
    loss = T.tsum(T.add(T.mul(p, 3.0), T.power(p, 2)))
    grads = gradients(loss, {"p": p})
    np.testing.assert_allclose(grads["p"], [3.0 + 4.0])
