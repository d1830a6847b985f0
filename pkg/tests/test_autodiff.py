import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from interpnet import autodiff as ad
from interpnet.autodiff import Tape
from gradcases import PRIMITIVES, primitive_gradient_error
from oracles import central_diff, rel_error


def value_of(fn, *arrays):
    tape = Tape()
    return fn(*[tape.constant(a) for a in arrays]).value


# --------------------------------------------------------------------------
# forward values
# --------------------------------------------------------------------------

def test_matmul_identity():
    out = value_of(ad.matmul, np.eye(2), np.array([[3.0], [4.0]]))
    np.testing.assert_array_equal(out, [[3.0], [4.0]])


def test_matmul_hand_product():
    out = value_of(ad.matmul, np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
    np.testing.assert_array_equal(out, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        value_of(ad.matmul, np.ones((2, 3)), np.ones((2, 3)))


def test_relu_values():
    np.testing.assert_array_equal(value_of(ad.relu, np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    x = np.array([0.5, 3.0, 7.0])
    np.testing.assert_array_equal(value_of(ad.relu, x), x)


def test_relu_gradient_uses_zero_subgradient():
    tape = Tape()
    a = tape.parameter("a", np.array([-1.0, 2.0]))
    loss = ad.sum(ad.mul(ad.relu(a), tape.constant([5.0, 7.0])))
    np.testing.assert_array_equal(ad.backward(tape, loss)["a"], [0.0, 7.0])
    tape = Tape()
    a = tape.parameter("a", np.array([0.0]))
    assert ad.backward(tape, ad.sum(ad.relu(a)))["a"][0] == 0.0


@pytest.mark.parametrize("logits, expected", [
    ([0.0, 0.0], [0.5, 0.5]),
    ([1000.0, 1000.0], [0.5, 0.5]),
    ([math.log(2), 0.0], [2 / 3, 1 / 3]),
])
def test_softmax_values(logits, expected):
    out = value_of(ad.softmax, np.array(logits))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-700, 700)),
       st.floats(-300, 300))
def test_softmax_normalized_and_shift_invariant(x, c):
    p = value_of(ad.softmax, x)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(value_of(ad.softmax, x + c), p, atol=1e-12)


def test_softmax_row_wise_on_matrices(rng):
    x = rng.normal(size=(4, 5))
    np.testing.assert_allclose(value_of(ad.softmax, x).sum(axis=1), 1.0, atol=1e-12)


def test_concat():
    np.testing.assert_array_equal(value_of(lambda a, b: ad.concat([a, b]), np.array([1.0, 2.0]),
                                           np.array([3.0])), [1, 2, 3])
    np.testing.assert_array_equal(value_of(lambda a: ad.concat([a]), np.array([4.0, 5.0])), [4, 5])
    with pytest.raises(ValueError):
        ad.concat([])


def test_concat_backward_splits_adjoint():
    tape = Tape()
    a = tape.parameter("a", np.array([1.0]))
    b = tape.parameter("b", np.array([2.0]))
    grads = ad.backward(tape, ad.sum(ad.concat([a, b])))
    assert grads["a"].tolist() == [1.0] and grads["b"].tolist() == [1.0]


def test_stop_gradient_value_and_gradients():
    tape = Tape()
    a = tape.parameter("a", np.array([1.0, 2.0]))
    w = tape.parameter("w", np.array([3.0, -4.0]))
    s = ad.stop_gradient(a)
    np.testing.assert_array_equal(s.value, [1.0, 2.0])
    grads = ad.backward(tape, ad.sum(ad.mul(s, w)))
    assert grads["a"].tobytes() == np.zeros(2).tobytes()
    np.testing.assert_array_equal(grads["w"], [1.0, 2.0])


@pytest.mark.parametrize("probs, target, expected", [
    ([1.0, 0.0, 0.0], 0, 0.0),
    ([0.5, 0.5], 1, math.log(2)),
    ([0.0, 1.0], 0, -math.log(1e-12)),
])
def test_cross_entropy_values(probs, target, expected):
    tape = Tape()
    loss = ad.cross_entropy(tape.constant(probs), target)
    assert np.isfinite(loss.value)
    assert float(loss.value) == pytest.approx(expected, abs=1e-12)


def test_cross_entropy_floor_value():
    tape = Tape()
    assert float(ad.cross_entropy(tape.constant([0.0, 1.0]), 0).value) == pytest.approx(27.631, abs=1e-3)


def test_cross_entropy_target_out_of_range():
    tape = Tape()
    with pytest.raises(ValueError):
        ad.cross_entropy(tape.constant([0.5, 0.5]), 2)


def test_backward_sum_gives_ones():
    tape = Tape()
    w = tape.parameter("w", np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(ad.backward(tape, ad.sum(w))["w"], np.ones((2, 3)))


def test_backward_rejects_non_scalar():
    tape = Tape()
    w = tape.parameter("w", np.ones(3))
    with pytest.raises(ValueError):
        ad.backward(tape, ad.relu(w))


def test_unreachable_parameters_get_zeros():
    tape = Tape()
    w = tape.parameter("w", np.ones(3))
    tape.parameter("unused", np.ones((2, 2)))
    grads = ad.backward(tape, ad.sum(w))
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))


def test_parents_precede_children(rng):
    tape = Tape()
    x = tape.parameter("x", rng.normal(size=(2, 3)))
    w = tape.parameter("w", rng.normal(size=(3, 4)))
    ad.mean(ad.tanh(ad.matmul(x, w)))
    for node in tape.nodes:
        assert all(p < node.id for p in node.parents)


def test_row_select_out_of_range():
    tape = Tape()
    with pytest.raises(ValueError):
        ad.row_select(tape.constant(np.ones((3, 2))), [3])


def test_replay_is_bitwise_deterministic(rng):
    x, w1, w2 = rng.normal(size=(4, 5)), rng.normal(size=(5, 6)), rng.normal(size=(6, 3))

    def run():
        tape = Tape()
        h = ad.relu(ad.matmul(tape.constant(x), tape.parameter("w1", w1)))
        loss = ad.cross_entropy(ad.softmax(ad.matmul(h, tape.parameter("w2", w2))), [0, 1, 2, 0])
        return [n.value.tobytes() for n in tape.nodes], ad.backward(tape, loss)

    (v1, g1), (v2, g2) = run(), run()
    assert v1 == v2
    assert all(g1[k].tobytes() == g2[k].tobytes() for k in g1)


def test_node_values_are_immutable(rng):
    tape = Tape()
    n = tape.constant(rng.normal(size=3))
    with pytest.raises(ValueError):
        n.value[0] = 1.0


# --------------------------------------------------------------------------
# gradients against central differences
# --------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradient_matches_central_differences(name, seed):
    assert primitive_gradient_error(name, seed) < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_two_layer_mlp_gradients(seed):
    rng = np.random.default_rng(seed)
    params = {"w1": rng.normal(size=(4, 5)), "b1": rng.normal(size=5),
              "w2": rng.normal(size=(5, 3)), "b2": rng.normal(size=3)}
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)

    def loss_of(p):
        tape = Tape()
        n = {k: tape.parameter(k, v) for k, v in p.items()}
        h = ad.relu(ad.add_bias(ad.matmul(tape.constant(x), n["w1"]), n["b1"]))
        return ad.cross_entropy(ad.softmax(ad.add_bias(ad.matmul(h, n["w2"]), n["b2"])), y)

    loss = loss_of(params)
    analytic = ad.backward(loss.tape, loss)
    numeric = central_diff(lambda p: float(loss_of(p).value), params)
    for k in params:
        assert rel_error(analytic[k], numeric[k]) < 1e-5, k


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_everything_upstream_of_a_stop_has_exactly_zero_adjoint(seed, depth):
    rng = np.random.default_rng(seed)
    tape = Tape()
    h = tape.parameter("x", rng.normal(size=(2, 3)))
    for i in range(depth):
        h = ad.tanh(ad.matmul(h, tape.parameter(f"w{i}", rng.normal(size=(3, 3)))))
    stopped = ad.stop_gradient(h)
    head = tape.parameter("head", rng.normal(size=(3, 2)))
    loss = ad.mean(ad.sigmoid(ad.matmul(stopped, head)))
    adj = ad.node_adjoints(tape, loss)
    for node in tape.nodes[:h.id + 1]:
        g = adj[node.id]
        assert g is None or g.tobytes() == np.zeros_like(g).tobytes()
    grads = ad.backward(tape, loss)
    for k, g in grads.items():
        if k != "head":
            assert g.tobytes() == np.zeros_like(g).tobytes()
    assert np.any(grads["head"] != 0)
