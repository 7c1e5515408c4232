import math

import numpy as np
import pytest
from gradcheck import max_relative_error, random_case
from hypothesis import given, settings
from hypothesis import strategies as st

from cryolocal.exceptions import DataError
from cryolocal.mlp import (AdamState, MlpArch, MlpParams, adam_step, forward_batch, init_params,
                           mlp_backward, mlp_forward)


def test_arch_sizes_and_count():
    arch = MlpArch(10, (4, 3))
    assert arch.sizes == (10, 4, 3, 1)
    assert arch.param_count == 10 * 4 + 4 + 4 * 3 + 3 + 3 + 1
    assert init_params(arch).param_count == arch.param_count


@pytest.mark.parametrize("kw", [{"input_dim": 0}, {"input_dim": 3, "hidden": ()},
                                {"input_dim": 3, "hidden": (0,)}, {"input_dim": 3, "activation": "tanh"}])
def test_arch_validation(kw):
    with pytest.raises(ValueError):
        MlpArch(**kw)


def test_init_is_deterministic_kaiming():
    arch = MlpArch(50, (40, 30))
    a, b = init_params(arch, seed=3), init_params(arch, seed=3)
    for x, y in zip(a.arrays, b.arrays):
        assert x.tobytes() == y.tobytes()
    assert np.abs(a.weights[0]).max() <= math.sqrt(2.0) * math.sqrt(3.0 / 50)
    assert all(not np.any(bias) for bias in a.biases)
    assert init_params(arch, seed=4).weights[0].tobytes() != a.weights[0].tobytes()


def test_flat_round_trip():
    arch = MlpArch(5, (3,))
    p = init_params(arch, seed=1)
    q = MlpParams.from_flat(arch, p.flat())
    assert q.matches(arch)
    for x, y in zip(p.arrays, q.arrays):
        np.testing.assert_array_equal(x, y)


def test_zero_weights_output_zero():
    arch = MlpArch(6, (4, 4))
    p = init_params(arch).zeros_like()
    assert mlp_forward(p, np.ones(6)) == 0.0


def test_relu_gating():
    # a hidden unit with negative pre-activation contributes nothing
    arch = MlpArch(1, (2,))
    p = MlpParams([np.array([[1.0, -1.0]]), np.array([[1.0], [1.0]])], [np.zeros(2), np.zeros(1)])
    assert arch.sizes == (1, 2, 1)
    assert mlp_forward(p, np.array([3.0])) == 3.0
    assert mlp_forward(p, np.array([-2.0])) == 2.0


def test_batched_matches_per_sample(rng):
    arch = MlpArch(12, (16, 8))
    p = init_params(arch, seed=0)
    x = rng.normal(size=(33, 12)).astype(np.float32)
    batched = forward_batch(p, x)
    single = np.array([mlp_forward(p, row) for row in x])
    np.testing.assert_allclose(batched, single, rtol=1e-6, atol=1e-6)


def test_linear_regime_gradient_closed_form():
    # all positive weights, inputs and biases keep every relu active, so the net is affine
    rng = np.random.default_rng(2)
    w1, b1 = rng.uniform(0.1, 1, size=(3, 4)), rng.uniform(0.1, 1, size=4)
    w2, b2 = rng.uniform(0.1, 1, size=(4, 1)), np.array([0.2])
    p = MlpParams([w1, w2], [b1, b2])
    x, y = rng.uniform(0.1, 1, size=3), 0.3
    h = x @ w1 + b1
    f = float(h @ w2[:, 0] + b2[0])
    loss, g = mlp_backward(p, x, [y])
    e = 2.0 * (f - y)
    assert loss == pytest.approx((f - y) ** 2, rel=1e-14)
    np.testing.assert_allclose(g.biases[1], [e], rtol=1e-13)
    np.testing.assert_allclose(g.weights[1][:, 0], e * h, rtol=1e-13)
    np.testing.assert_allclose(g.biases[0], e * w2[:, 0], rtol=1e-13)
    np.testing.assert_allclose(g.weights[0], e * np.outer(x, w2[:, 0]), rtol=1e-13)


def test_zero_residual_zero_gradient(rng):
    arch = MlpArch(5, (6,))
    p = init_params(arch, seed=1, dtype=np.float64)
    x = rng.normal(size=(4, 5))
    loss, g = mlp_backward(p, x, forward_batch(p, x))
    assert loss == 0.0
    assert all(not np.any(a) for a in g.arrays)


@pytest.mark.parametrize("seed", range(12))
def test_finite_difference_gradients(seed):
    arch, params, x, y = random_case(1000 + seed)
    err, skipped = max_relative_error(params, x, y, arch.activation)
    assert err < 1e-5
    assert skipped <= params.param_count // 10


def test_backward_errors():
    p = init_params(MlpArch(3, (2,)))
    with pytest.raises(DataError):
        mlp_backward(p, np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(DataError):
        mlp_backward(p, np.zeros((2, 4)), np.zeros(2))
    with pytest.raises(DataError):
        mlp_backward(p, np.zeros((2, 3)), np.zeros(3))


def test_adam_zero_gradient_leaves_params():
    p = init_params(MlpArch(3, (2,)), seed=1)
    state = AdamState.zeros(p)
    q, s2 = adam_step(p, p.zeros_like(), state)
    for a, b in zip(p.arrays, q.arrays):
        np.testing.assert_array_equal(a, b)
    assert s2.step == 1 and state.step == 0


def test_adam_first_step_scalar():
    p = MlpParams([np.array([[0.5]])], [np.array([0.0])])
    g = MlpParams([np.array([[2.0]])], [np.array([-3.0])])
    q, s = adam_step(p, g, AdamState.zeros(p, lr=0.1))
    # bias-corrected first step moves each parameter by lr * g / (|g| + eps')
    assert q.weights[0][0, 0] == pytest.approx(0.5 - 0.1 * 2.0 / (2.0 + 1e-8), rel=1e-12)
    assert q.biases[0][0] == pytest.approx(0.1 * 3.0 / (3.0 + 1e-8), rel=1e-12)


def test_adam_two_steps_hand_computed():
    p = MlpParams([np.array([[1.0]])], [np.array([0.0])])
    st_ = AdamState.zeros(p, lr=0.01)
    g1 = MlpParams([np.array([[1.0]])], [np.array([0.0])])
    g2 = MlpParams([np.array([[-0.5]])], [np.array([0.0])])
    p, st_ = adam_step(p, g1, st_)
    p, st_ = adam_step(p, g2, st_)
    m = 0.9 * (0.1 * 1.0) + 0.1 * (-0.5)
    v = 0.999 * (0.001 * 1.0) + 0.001 * 0.25
    mh, vh = m / (1 - 0.9**2), v / (1 - 0.999**2)
    want = 1.0 - 0.01 * 1.0 / (1.0 + 1e-8) - 0.01 * mh / (math.sqrt(vh) + 1e-8)
    assert p.weights[0][0, 0] == pytest.approx(want, rel=1e-12)


def test_adam_shape_mismatch():
    p = init_params(MlpArch(3, (2,)))
    q = init_params(MlpArch(4, (2,)))
    with pytest.raises(DataError):
        adam_step(p, q, AdamState.zeros(p))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_relu_network_lipschitz(seed):
    # |f(x) - f(x')| <= prod of layer spectral norms * |x - x'|
    rng = np.random.default_rng(seed)
    arch = MlpArch(6, (5, 4))
    p = init_params(arch, seed=seed % 1000, dtype=np.float64)
    bound = np.prod([np.linalg.norm(w, 2) for w in p.weights])
    x, x2 = rng.normal(size=(2, 6))
    diff = abs(mlp_forward(p, x) - mlp_forward(p, x2))
    assert diff <= bound * np.linalg.norm(x - x2) * (1 + 1e-12) + 1e-12
