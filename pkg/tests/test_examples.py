"""Small worked examples for the elementary operators."""

import numpy as np
import pytest

from binep.network import binarize_init, encode_target, init_scaling_factors, kaiming_uniform
from binep.numerics import (
    conv2d,
    flatten,
    hardsigmoid,
    hardsigmoid_deriv,
    heaviside_half,
    maxpool,
    pseudo_derivative,
    transpose_conv2d,
    unpool,
)


def test_pointwise_examples():
    assert hardsigmoid(0.5) == 0.5 and hardsigmoid(-3.0) == 0.0 and hardsigmoid(7.0) == 1.0
    assert hardsigmoid_deriv(0.5) == 1.0 and hardsigmoid_deriv(1.5) == 0.0
    assert heaviside_half(0.5) == 1.0 and heaviside_half(0.49) == 0.0 and heaviside_half(0.51) == 1.0
    assert heaviside_half(-2.0) == 0.0
    assert pseudo_derivative(0.5, 0.5) == 1.0 and pseudo_derivative(1.2, 0.5) == 0.0
    assert pseudo_derivative(0.3, 0.1) == 0.0 and pseudo_derivative(0.55, 0.1) == pytest.approx(5.0)


def test_conv_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 5, 4))
    assert np.array_equal(conv2d(np.ones((1, 1, 1, 1)), x), x)
    assert np.array_equal(transpose_conv2d(np.ones((1, 1, 1, 1)), x), x)
    assert np.array_equal(conv2d(np.zeros((2, 1, 3, 3)), x, bias=np.array([1.5, -1.0]))[1], np.full((3, 2), -1.0))
    assert not transpose_conv2d(np.zeros((2, 1, 3, 3)), rng.normal(size=(2, 3, 2))).any()
    # 2x2 input, two 1x2x2 kernels: a single output cell per channel
    x = rng.normal(size=(1, 2, 2))
    w = rng.normal(size=(2, 1, 2, 2))
    y = conv2d(w, x)
    for c in range(2):
        expanded = sum(w[c, 0, j, k] * x[0, j, k] for j in range(2) for k in range(2))
        assert y[c, 0, 0] == pytest.approx(expanded)


def test_pool_examples():
    out, ind = maxpool(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 2)
    assert out[0, 0, 0] == 4.0 and (ind.i[0, 0, 0], ind.j[0, 0, 0]) == (1, 1)
    out, ind = maxpool(np.full((1, 4, 4), 2.0), 2)
    assert np.all(out == 2.0) and not ind.flat.any()
    x = np.random.default_rng(1).normal(size=(2, 6, 6))
    out, ind = maxpool(x, 3)
    for c in range(2):
        for a in range(2):
            for b in range(2):
                assert out[c, a, b] == x[c, 3 * a : 3 * a + 3, 3 * b : 3 * b + 3].max()
    back = unpool(out, ind)
    assert np.count_nonzero(back) == out.size
    assert not unpool(np.zeros_like(out), ind).any()
    assert flatten(np.zeros((2, 3, 4))).shape == (1, 24)


def test_scaling_factor_examples():
    assert float(init_scaling_factors(np.array([[0.5, -0.5], [-0.5, 0.5]]))) == 0.5
    assert float(init_scaling_factors(np.array([[1.0, -2.0, 3.0]]))) == 2.0
    w = kaiming_uniform((4096, 784), np.random.default_rng(0))
    assert float(init_scaling_factors(w)) == pytest.approx(np.sum(np.abs(w)) / w.size, rel=1e-12)
    p = binarize_init(np.array([[-0.3]]), 0.02, np.zeros(1))
    assert float(p.weight()[0, 0]) == -0.02
    # fraction of positive signs of a symmetric init within a 3-sigma binomial band
    n = w.size
    frac = float(np.mean(binarize_init(w, 1.0, np.zeros(1)).sign > 0))
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / n)


def test_target_examples():
    assert encode_target(3, 10).tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    y = encode_target(0, 10, 10)
    assert y[:10].tolist() == [1.0] * 10 and not y[10:].any() and y.sum() == 10
