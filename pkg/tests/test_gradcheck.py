"""Finite-difference verification of every analytic backward pass.

The scalar loss for each check is sum(probe * y) for a fixed random probe
tensor, so the upstream gradient is the probe itself and the full Jacobian
is exercised at O(1) scale (a plain sum-of-squares is nearly invariant
under train-mode batch norm and would only compare roundoff). All checks
run at 64-bit with step 1e-5 and pass at normalized relative error
<= 1e-4; randomized shapes stay within 1x4x6x6.
"""

import numpy as np
import pytest

from helpers import fd_grad, max_rel_err
from veinseg.layers import (
    BatchNormParams,
    Conv2dParams,
    ConvTranspose2xParams,
    batchnorm2d_backward,
    batchnorm2d_forward,
    conv2d_backward,
    conv2d_forward,
    conv_transpose2x_backward,
    conv_transpose2x_forward,
    maxpool2x_backward,
    maxpool2x_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    upsample_nearest2x_backward,
    upsample_nearest2x_forward,
)
from veinseg.tensor import Tensor4

TOL = 1e-4


def _rand_conv_case(seed):
    rng = np.random.default_rng(seed)
    c_in = int(rng.integers(1, 4))
    c_out = int(rng.integers(1, 4))
    h = int(rng.integers(4, 7))
    w = int(rng.integers(4, 7))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    dilation = int(rng.choice([1, 2])) if k > 1 else 1
    pad = dilation * (k - 1) // 2 + int(rng.integers(0, 2))
    x = rng.standard_normal((1, c_in, h, w))
    weight = rng.standard_normal((c_out, c_in, k, k))
    bias = rng.standard_normal(c_out)
    return rng, x, Conv2dParams(weight=weight, bias=bias, stride=stride, padding=pad, dilation=dilation)


@pytest.mark.parametrize("seed", range(5))
def test_conv2d_backward_matches_fd(seed):
    rng, x, p = _rand_conv_case(seed)
    y0, ctx = conv2d_forward(Tensor4(x), p)
    probe = rng.standard_normal(y0.shape)

    def loss():
        y, _ = conv2d_forward(Tensor4(x), p)
        return float((probe * y.array).sum())

    gx, gw, gb = conv2d_backward(Tensor4(probe), ctx)
    assert max_rel_err(gx.array, fd_grad(loss, x)) <= TOL
    assert max_rel_err(gw, fd_grad(loss, p.weight)) <= TOL
    assert max_rel_err(gb, fd_grad(loss, p.bias)) <= TOL


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_backward_matches_fd(seed, mode):
    rng = np.random.default_rng(200 + seed)
    c = int(rng.integers(1, 5))
    x = rng.standard_normal((2, c, 4, 5))
    gamma = rng.standard_normal(c) + 1.5
    beta = rng.standard_normal(c)
    mean = rng.standard_normal(c)
    var = rng.random(c) + 0.5
    probe = rng.standard_normal(x.shape)

    def params():
        return BatchNormParams(gamma=gamma, beta=beta, running_mean=mean.copy(),
                               running_var=var.copy(), mode=mode)

    def loss():
        y, _ = batchnorm2d_forward(Tensor4(x), params())
        return float((probe * y.array).sum())

    _, ctx = batchnorm2d_forward(Tensor4(x), params())
    gx, gg, gb = batchnorm2d_backward(Tensor4(probe), ctx)
    assert max_rel_err(gx.array, fd_grad(loss, x)) <= TOL
    assert max_rel_err(gg, fd_grad(loss, gamma)) <= TOL
    assert max_rel_err(gb, fd_grad(loss, beta)) <= TOL


@pytest.mark.parametrize("seed", range(5))
def test_relu_backward_matches_fd(seed):
    rng = np.random.default_rng(300 + seed)
    x = rng.standard_normal((1, 3, 5, 5))
    probe = rng.standard_normal(x.shape)

    def loss():
        y, _ = relu_forward(Tensor4(x))
        return float((probe * y.array).sum())

    _, ctx = relu_forward(Tensor4(x))
    gx = relu_backward(Tensor4(probe), ctx)
    assert max_rel_err(gx.array, fd_grad(loss, x)) <= TOL


@pytest.mark.parametrize("seed", range(5))
def test_sigmoid_backward_matches_fd(seed):
    rng = np.random.default_rng(400 + seed)
    x = rng.standard_normal((1, 2, 4, 6))
    probe = rng.standard_normal(x.shape)

    def loss():
        y, _ = sigmoid_forward(Tensor4(x))
        return float((probe * y.array).sum())

    _, ctx = sigmoid_forward(Tensor4(x))
    gx = sigmoid_backward(Tensor4(probe), ctx)
    assert max_rel_err(gx.array, fd_grad(loss, x)) <= TOL


@pytest.mark.parametrize("seed", range(5))
def test_maxpool_backward_matches_fd(seed):
    rng = np.random.default_rng(500 + seed)
    x = rng.standard_normal((1, 2, 6, 6))
    probe = rng.standard_normal((1, 2, 3, 3))

    def loss():
        y, _ = maxpool2x_forward(Tensor4(x))
        return float((probe * y.array).sum())

    _, ctx = maxpool2x_forward(Tensor4(x))
    gx = maxpool2x_backward(Tensor4(probe), ctx)
    assert max_rel_err(gx.array, fd_grad(loss, x)) <= TOL


@pytest.mark.parametrize("seed", range(5))
def test_upsample_backward_matches_fd(seed):
    rng = np.random.default_rng(600 + seed)
    x = rng.standard_normal((1, 3, 3, 4))
    probe = rng.standard_normal((1, 3, 6, 8))

    def loss():
        y, _ = upsample_nearest2x_forward(Tensor4(x))
        return float((probe * y.array).sum())

    _, ctx = upsample_nearest2x_forward(Tensor4(x))
    gx = upsample_nearest2x_backward(Tensor4(probe), ctx)
    assert max_rel_err(gx.array, fd_grad(loss, x)) <= TOL


@pytest.mark.parametrize("seed", range(5))
def test_conv_transpose_backward_matches_fd(seed):
    rng = np.random.default_rng(700 + seed)
    ci = int(rng.integers(1, 4))
    co = int(rng.integers(1, 4))
    x = rng.standard_normal((1, ci, 3, 4))
    p = ConvTranspose2xParams(weight=rng.standard_normal((ci, co, 2, 2)), bias=rng.standard_normal(co))
    probe = rng.standard_normal((1, co, 6, 8))

    def loss():
        y, _ = conv_transpose2x_forward(Tensor4(x), p)
        return float((probe * y.array).sum())

    _, ctx = conv_transpose2x_forward(Tensor4(x), p)
    gx, gw, gb = conv_transpose2x_backward(Tensor4(probe), ctx)
    assert max_rel_err(gx.array, fd_grad(loss, x)) <= TOL
    assert max_rel_err(gw, fd_grad(loss, p.weight)) <= TOL
    assert max_rel_err(gb, fd_grad(loss, p.bias)) <= TOL
