import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netcomm import neuralnet as nn
from netcomm.rng import Stream


def test_parameter_count():
    assert nn.n_params(9) == 9 * 25 + 25 + 25 * 15 + 15 + 2 * (15 * 4 + 4) == 768
    assert nn.init(9, Stream(0)).flat.size == 768


def test_init_deterministic_and_bounded():
    a, b = nn.init(9, Stream(3)), nn.init(9, Stream(3))
    assert np.array_equal(a.flat, b.flat)
    assert np.all(a.b1 == 0) and np.all(a.ba == 0)
    assert np.max(np.abs(a.w1)) <= np.sqrt(6 / 9)
    assert np.max(np.abs(a.w2)) <= np.sqrt(6 / 25)
    assert not np.array_equal(a.flat, nn.init(9, Stream(4)).flat)


def test_zero_network_outputs_zero():
    qa, qm = nn.forward(nn.zeros(9), np.arange(9.0))
    assert np.all(qa == 0) and np.all(qm == 0)


def toy_net():
    net = nn.zeros(9)
    net.w1[0, 0] = 2.0
    net.b1[0] = 0.5
    net.w2[0, 0] = 3.0
    net.wa[0, 1] = -1.0
    net.ba[1] = 0.25
    net.wm[0, 2] = 4.0
    return net


def test_toy_forward_by_hand():
    x = np.zeros(9)
    x[0] = 1.5
    qa, qm = nn.forward(toy_net(), x)
    # h1 = relu(2*1.5 + .5) = 3.5; h2 = 3*3.5 = 10.5
    assert qa.tolist() == [0.0, -10.25, 0.0, 0.0]
    assert qm.tolist() == [0.0, 0.0, 42.0, 0.0]
    x[0] = -1.0  # relu(-1.5) = 0 switches the path off
    qa, qm = nn.forward(toy_net(), x)
    assert qa.tolist() == [0.0, 0.25, 0.0, 0.0]
    assert np.all(qm == 0)


def test_positive_homogeneity_without_bias():
    net = nn.init(9, Stream(11))
    x = np.random.default_rng(0).normal(size=9)
    qa, qm = nn.forward(net, x)
    qa3, qm3 = nn.forward(net, 3.0 * x)
    np.testing.assert_allclose(qa3, 3 * qa, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(qm3, 3 * qm, rtol=1e-12, atol=1e-12)


def test_forward_is_pure():
    net = nn.init(9, Stream(2))
    x = np.linspace(-1, 1, 9)
    before = net.flat.copy()
    assert all(np.array_equal(nn.forward(net, x)[0], nn.forward(net, x)[0]) for _ in range(3))
    assert np.array_equal(before, net.flat)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        nn.forward(nn.zeros(9), np.zeros(5))


def finite_difference(net, x, head, unit, h=1e-5):
    g = np.zeros_like(net.flat)
    for i in range(net.flat.size):
        orig = net.flat[i]
        net.flat[i] = orig + h
        up = nn.forward(net, x)[head][unit]
        net.flat[i] = orig - h
        down = nn.forward(net, x)[head][unit]
        net.flat[i] = orig
        g[i] = (up - down) / (2 * h)
    return g


def min_preactivation(net, x):
    pre1 = x @ net.w1 + net.b1
    pre2 = np.maximum(pre1, 0) @ net.w2 + net.b2
    return min(np.min(np.abs(pre1)), np.min(np.abs(pre2)))


def random_configuration(rng, seed):
    """Network and input whose ReLU pre-activations stay clear of the kink."""
    while True:
        net = nn.init(9, Stream(seed))
        net.flat[...] += rng.normal(scale=0.05, size=net.flat.size)  # non-zero biases too
        x = rng.uniform(-1, 1, size=9)
        if min_preactivation(net, x) > 1e-3:
            return net, x


def max_relative_error(analytic, numeric):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


@pytest.mark.parametrize("case", range(20))
def test_gradient_matches_finite_differences(case):
    rng = np.random.default_rng(case)
    net, x = random_configuration(rng, case)
    head = nn.Head(case % 2)
    unit = int(rng.integers(4))
    loss_grad = float(rng.uniform(0.5, 2.0))
    analytic = nn.backward(net, x, head, unit, loss_grad).flat
    numeric = loss_grad * finite_difference(net, x, head, unit)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_zero_loss_grad_gives_zero_gradient():
    g = nn.backward(nn.init(9, Stream(1)), np.ones(9), nn.Head.ACTION, 2, 0.0)
    assert np.all(g.flat == 0)


def test_other_head_untouched():
    net = nn.init(9, Stream(1))
    g = nn.backward(net, np.ones(9), nn.Head.ACTION, 1, 1.0)
    assert np.all(g.wm == 0) and np.all(g.bm == 0)
    g = nn.backward(net, np.ones(9), nn.Head.MESSAGE, 3, 1.0)
    assert np.all(g.wa == 0) and np.all(g.ba == 0)


def test_sgd_step():
    net = nn.Mlp(9, np.ones(768))
    nn.step(net, nn.Optimizer("sgd", 0.1), np.ones(768))
    assert np.allclose(net.flat, 0.9, rtol=0, atol=1e-15)


@pytest.mark.parametrize("g", [1.0, -3.0, 1e-3])
def test_adam_first_step_magnitude(g):
    net = nn.zeros(9)
    opt = nn.Optimizer("adam", 1e-3)
    nn.step(net, opt, np.full(768, g))
    # closed form: lr * g / (|g| + eps)
    np.testing.assert_allclose(net.flat, -1e-3 * g / (abs(g) + 1e-8), rtol=1e-12)


@pytest.mark.parametrize("algo", ["sgd", "adam"])
def test_zero_gradient_no_change(algo):
    net = nn.init(9, Stream(0))
    before = net.flat.copy()
    nn.step(net, nn.Optimizer(algo, 1e-3), np.zeros(768))
    assert np.array_equal(before, net.flat)


def test_non_finite_gradient_fails_fast():
    g = np.zeros(768)
    g[17] = np.nan
    with pytest.raises(FloatingPointError, match="flat index 17"):
        nn.step(nn.zeros(9), nn.Optimizer(), g)


def test_optimizer_validation():
    with pytest.raises(ValueError):
        nn.Optimizer("rmsprop")
    with pytest.raises(ValueError):
        nn.Optimizer("adam", 0.0)


def test_squared_error_convergence():
    net = nn.init(9, Stream(5))
    opt = nn.Optimizer("adam", 1e-3)
    x = np.linspace(0, 1, 9)
    target = 0.7
    for it in range(5000):
        q = nn.forward(net, x)[0][2]
        if abs(q - target) < 1e-3:
            break
        nn.step(net, opt, nn.backward(net, x, nn.Head.ACTION, 2, 2 * (q - target)))
    assert abs(nn.forward(net, x)[0][2] - target) < 1e-3


def test_dump_roundtrip():
    net = nn.init(9, Stream(4))
    text = net.dump()
    assert text.startswith("layers 9 25 15 4 4\n")
    assert np.array_equal(nn.Mlp.load(text).flat, net.flat)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(list(nn.Head)), st.integers(0, 3))
def test_gradient_property(seed, head, unit):
    net, x = random_configuration(np.random.default_rng(seed), seed)
    analytic = nn.backward(net, x, head, unit, 1.0).flat
    assert max_relative_error(analytic, finite_difference(net, x, head, unit)) < 1e-4
