import numpy as np
import pytest

from conftest import random_nets
from rollnet.linearization import (
    ActivationPattern, backprop_neuron_gradients, constraint_coefficients, constraint_values,
    contains, dp_gradients, extract_pattern, linearize, linearize_batch, op_count_estimate,
    perturbation_gradients,
)
from rollnet.network import Network, ShapeError, forward, random_network


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def test_pattern_net_a(net_a):
    assert extract_pattern(forward(net_a, [0.0, 0.0])).signs[0].tolist() == [-1, -1]
    assert extract_pattern(forward(net_a, [2.0, 0.0])).signs[0].tolist() == [1, -1]
    # z = 0 exactly is assigned o = +1
    assert extract_pattern(forward(net_a, [1.0, 0.0])).signs[0].tolist() == [1, -1]


def test_pattern_equality_and_key(net_a):
    p = extract_pattern(forward(net_a, [0.0, 0.0]))
    q = extract_pattern(forward(net_a, [0.5, 0.3]))
    assert p == q and hash(p) == hash(q) and p.key() == q.key()
    assert p != extract_pattern(forward(net_a, [2.0, 0.0]))


def test_net_a_gradients(net_a):
    p = extract_pattern(forward(net_a, [0.0, 0.0]))
    g = perturbation_gradients(net_a, p)
    np.testing.assert_array_equal(g, [[1.0, 0.0], [0.0, 1.0]])
    assert dp_gradients(net_a, p).tobytes() == g.tobytes()


def test_pattern_shape_mismatch(net_a):
    with pytest.raises(ShapeError):
        perturbation_gradients(net_a, ActivationPattern((np.array([1, 1, 1], dtype=np.int8),)))


def test_zero_second_layer_gives_zero_gradients(rng):
    net = random_network((4, 6, 5, 2), rng)
    ws = list(net.weights)
    ws[1] = np.zeros_like(ws[1])
    net = Network(tuple(ws), net.biases)
    lin = linearize(net, rng.standard_normal(4))
    np.testing.assert_array_equal(lin.grads[6:], 0.0)


def test_first_layer_rows_exact(rng):
    net = random_network((5, 7, 7, 2), rng, "leaky_relu", 0.1)
    for engine in ("perturbation", "dp", "backprop"):
        lin = linearize(net, rng.standard_normal(5), engine)
        np.testing.assert_array_equal(lin.grads[:7], net.weights[0])


def test_one_layer_dp_is_w1(rng):
    net = random_network((5, 7, 2), rng)
    p = extract_pattern(forward(net, rng.standard_normal(5)))
    np.testing.assert_array_equal(dp_gradients(net, p), net.weights[0])


def test_engines_agree_4x300(rng):
    net = random_network((30, 300, 300, 300, 300, 10), rng)
    x = rng.standard_normal(30)
    a = linearize(net, x, "perturbation").grads
    b = linearize(net, x, "dp").grads
    c = linearize(net, x, "backprop").grads
    assert _rel(a, c) <= 1e-10 and _rel(b, c) <= 1e-10


def test_leaky_dp_matches_backprop(rng):
    net = random_network((8, 40, 40, 40, 3), rng, "leaky_relu", 0.1)
    x = rng.standard_normal(8)
    assert _rel(linearize(net, x, "dp").grads, linearize(net, x, "backprop").grads) <= 1e-10


@pytest.mark.parametrize("net", random_nets(10, seed=7, max_width=60), ids=lambda n: str(n.hidden_sizes))
def test_engine_equivalence_random(net, rng):
    x = rng.standard_normal(net.input_dim)
    ref = backprop_neuron_gradients(net, x)[0]
    assert _rel(linearize(net, x, "perturbation").grads, ref) <= 1e-10
    assert _rel(linearize(net, x, "dp").grads, ref) <= 1e-10


def test_chunked_perturbation_matches(rng):
    net = random_network((20, 15, 15, 2), rng)
    x = rng.standard_normal(20)
    full = linearize(net, x).grads
    np.testing.assert_array_equal(linearize(net, x, max_rows=4).grads, full)


def test_linearize_batch_matches_single(rng):
    net = random_network((6, 9, 9, 2), rng)
    X = rng.standard_normal((5, 6))
    for x, lin in zip(X, linearize_batch(net, X, chunk=2)):
        ref = linearize(net, x)
        np.testing.assert_allclose(lin.grads, ref.grads, rtol=1e-14, atol=1e-15)
        assert lin.pattern == ref.pattern


def test_bookkeeping_identity(rng):
    net = random_network((4, 8, 8, 2), rng)
    lin = linearize(net, rng.standard_normal(4))
    np.testing.assert_allclose(lin.grads @ lin.x + lin.offsets(), lin.z, atol=1e-9)


def test_constraints_net_a(net_a):
    lin = linearize(net_a, np.zeros(2))
    cons = constraint_coefficients(lin)
    # -(x1 - 1) >= 0 and -(x2 - 1) >= 0, i.e. x1 <= 1, x2 <= 1
    assert [(c[0].tolist(), c[1], c[2]) for c in cons] == [([1.0, 0.0], -1.0, -1), ([0.0, 1.0], -1.0, -1)]
    assert contains(lin, np.zeros(2))[0]
    vals = constraint_values(lin, np.array([2.0, 0.0]))[0]
    assert np.sum(vals < -1e-9) == 1
    assert contains(lin, np.array([[0.9, -5.0], [1.1, 0.0]])).tolist() == [True, False]


def test_affine_map_inside_region(rng):
    net = random_network((3, 10, 10, 2), rng)
    x = rng.standard_normal(3)
    lin = linearize(net, x)
    np.testing.assert_allclose(lin.grads, backprop_neuron_gradients(net, x)[0], rtol=0, atol=1e-12)
    # output Jacobian from the last layer weights on the frozen pattern
    s = [np.where(z >= 0, 1.0, 0.0) for z in lin.values()]
    Jf = net.weights[-1] @ (s[-1][:, None] * lin.grads[-10:])
    f0 = forward(net, x).output
    for _ in range(20):
        xp = x + 1e-4 * rng.standard_normal(3)
        if contains(lin, xp)[0]:
            np.testing.assert_allclose(forward(net, xp).output, f0 + Jf @ (xp - x), atol=1e-8)


def test_op_counts():
    assert op_count_estimate((300, 300, 300, 300)) == (8, 6000)
    assert op_count_estimate((17,)) == (2, 34)
    assert op_count_estimate(()) == (0, 0)


def test_linearization_json(net_a):
    obj = linearize(net_a, np.zeros(2)).to_json()
    assert obj["signs"] == [-1, -1] and obj["layer_sizes"] == [2]
