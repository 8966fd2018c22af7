import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relu_extract.network import (AddressError, ConfigError, DomainError, Network, NeuronId, ShapeError,
                                  activation_pattern, apply_permutation, apply_scaling, dumps, forward, init_he,
                                  load, loads, preactivation, save)
from conftest import naive_forward


def test_forward_one_neuron(one_neuron):
    assert forward(one_neuron, [-2.0]).tolist() == [0.0]
    assert forward(one_neuron, [3.0]).tolist() == [3.0]


def test_forward_matches_naive_loop():
    net = init_he([2, 5, 5, 1], 0)
    x = np.zeros(2)
    ref = naive_forward(net.widths, net.weights, net.biases, x)
    assert np.allclose(forward(net, x), ref, rtol=0, atol=1e-12)
    xs = np.random.default_rng(1).normal(size=(20, 2)) * 3
    assert np.allclose(forward(net, xs), [naive_forward(net.widths, net.weights, net.biases, v) for v in xs],
                       atol=1e-12)


def test_forward_shape_error(one_neuron):
    with pytest.raises(ShapeError):
        forward(one_neuron, [1.0, 2.0])


def test_preactivation(one_neuron):
    assert preactivation(one_neuron, NeuronId(1, 0), [3.0]) == 3.0
    assert preactivation(one_neuron, NeuronId(1, 0), [0.0]) == 0.0
    net = init_he([2, 5, 5, 1], 0)
    x = np.array([1.0, 1.0])
    h1 = [max(0.0, x @ net.weights[0][:, j] + net.biases[0][j]) for j in range(5)]
    ref = sum(h1[i] * net.weights[1][i, 0] for i in range(5)) + net.biases[1][0]
    assert abs(preactivation(net, NeuronId(2, 0), x) - ref) < 1e-12


def test_preactivation_address_error(one_neuron):
    with pytest.raises(AddressError):
        preactivation(one_neuron, NeuronId(2, 0), [1.0])
    with pytest.raises(AddressError):
        preactivation(one_neuron, NeuronId(1, 3), [1.0])


def test_activation_pattern(one_neuron):
    assert activation_pattern(one_neuron, [3.0]).bits == (True,)
    assert activation_pattern(one_neuron, [-3.0]).bits == (False,)


def test_same_region_same_pattern():
    net = init_he([2, 5, 5, 1], 0)
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 10:
        a, b = rng.normal(size=(2, 2))
        b = a + 0.05 * (b - a)
        ts = np.linspace(0, 1, 2001)
        pats = {activation_pattern(net, a + t * (b - a)).bits for t in ts}
        if len(pats) == 1:
            assert activation_pattern(net, a) == activation_pattern(net, b)
            checked += 1


def test_piecewise_linear_within_region():
    net = init_he([3, 6, 6, 2], 4)
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=3)
        b = a + 1e-3 * rng.normal(size=3)
        if activation_pattern(net, a) != activation_pattern(net, b):
            continue
        m = 0.5 * (a + b)
        second = forward(net, a) - 2 * forward(net, m) + forward(net, b)
        assert np.abs(second).max() < 1e-9


def test_init_he_deterministic_and_shapes():
    a, b = init_he([10, 10, 10, 10, 10, 2], 7), init_he([10, 10, 10, 10, 10, 2], 7)
    assert a == b
    assert a.depth == 4 and a.n_in == 10 and a.n_out == 2
    with pytest.raises(ConfigError):
        init_he([], 0)


def test_init_he_variance():
    w = np.concatenate([init_he([10, 100, 1], s).weights[0].ravel() for s in range(10)])
    assert w.size == 10_000
    assert abs(w.var() / (2 / 10) - 1) < 0.05


def test_network_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        Network([2, 3, 1], [np.zeros((2, 3)), np.zeros((2, 1))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(ConfigError):
        Network([2, 3, 1], [np.zeros((2, 3)), np.full((3, 1), np.nan)], [np.zeros(3), np.zeros(1)])


def _random_points(n_in, n=1000, seed=0):
    return np.random.default_rng(seed).normal(size=(n, n_in)) * 3


def test_apply_scaling():
    net = init_he([10, 10, 10, 2], 0)
    z = NeuronId(2, 3)
    assert apply_scaling(net, z, 1.0) == net
    x = _random_points(10)
    y = forward(net, x)
    ys = forward(apply_scaling(net, z, 3.0), x)
    assert np.abs(ys - y).max() <= 1e-9 * np.abs(y).max()
    back = apply_scaling(apply_scaling(net, z, 3.0), z, 1 / 3.0)
    assert all(np.abs(a - b).max() < 1e-12 for a, b in zip(back.weights, net.weights))
    with pytest.raises(DomainError):
        apply_scaling(net, z, -1.0)
    with pytest.raises(DomainError):
        apply_scaling(net, z, 0.0)


def test_apply_permutation():
    net = init_he([10, 10, 10, 2], 0)
    assert apply_permutation(net, 1, list(range(10))) == net
    sigma = np.random.default_rng(3).permutation(10)
    p = apply_permutation(net, 1, sigma)
    x = _random_points(10)
    assert np.abs(forward(p, x) - forward(net, x)).max() < 1e-12
    inv = np.argsort(sigma)
    assert apply_permutation(p, 1, inv) == net
    with pytest.raises(DomainError):
        apply_permutation(net, 1, [0] * 10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(0.05, 20.0), layer=st.integers(1, 2), idx=st.integers(0, 4))
def test_isomorphisms_preserve_function(seed, c, layer, idx):
    net = init_he([4, 5, 5, 2], seed)
    x = _random_points(4, 200, seed % 1000)
    y = forward(net, x)
    scaled = apply_scaling(net, NeuronId(layer, idx), c)
    perm = apply_permutation(scaled, layer, np.random.default_rng(seed).permutation(5))
    assert np.abs(forward(perm, x) - y).max() <= 1e-9 * max(1.0, np.abs(y).max())


def test_serialization_roundtrip(tmp_path):
    net = init_he([3, 4, 2], 5)
    assert loads(dumps(net)) == net
    save(net, tmp_path / "n.json")
    assert load(tmp_path / "n.json") == net
    with pytest.raises(ConfigError):
        loads('{"version": 9, "widths": [1, 1], "weights": [[[1]]], "biases": [[0]]}')


def test_preactivation_sign_flips_at_boundary_point():
    from relu_extract.oracle import Oracle
    from relu_extract.probe import Segment, points_on_line

    net = init_he([2, 5, 5, 1], 0)
    seg = Segment(np.array([-3.0, -2.5]), np.array([3.0, 2.0]))
    pts = points_on_line(Oracle.from_network(net), seg)
    assert pts
    for p in pts:
        pre = np.concatenate(net.hidden_preactivations(p.point))
        j = int(np.argmin(np.abs(pre)))
        d = 1e-5 * seg.direction
        before = np.concatenate(net.hidden_preactivations(p.point - d))[j]
        after = np.concatenate(net.hidden_preactivations(p.point + d))[j]
        assert before * after < 0
