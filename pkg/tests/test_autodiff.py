"""Gradient engine tests: finite-difference oracles and detachment semantics."""

import numpy as np
import pytest

from headflow import autodiff as ad
from headflow.errors import ContractError


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def test_quadratic_gradient():
    p = ad.parameter([1.0, 2.0, 3.0])
    loss = ad.tsum(ad.mul(p, p))
    grads = ad.backward(loss, {"p": p})
    np.testing.assert_array_equal(grads["p"], [2.0, 4.0, 6.0])


def test_detached_root_gives_zero_grad():
    p = ad.parameter([1.0, -2.0, 0.5])
    loss = ad.tsum(ad.mul(ad.detach(p), ad.detach(p)))
    grads = ad.backward(loss, {"p": p})
    np.testing.assert_array_equal(grads["p"], np.zeros(3))


def test_detach_partial_path():
    a = ad.parameter([3.0])
    b = ad.parameter([4.0])
    loss = ad.tsum(ad.add(a, ad.detach(b)))
    grads = ad.backward(loss, {"a": a, "b": b})
    np.testing.assert_array_equal(grads["a"], [1.0])
    np.testing.assert_array_equal(grads["b"], [0.0])


def test_detach_preserves_value():
    rng = np.random.default_rng(0)
    x = ad.parameter(rng.normal(size=(4, 5)))
    np.testing.assert_array_equal(ad.detach(x).value, x.value)


def test_detach_idempotent():
    p = ad.parameter([2.0, 5.0])
    once = ad.detach(p)
    twice = ad.detach(ad.detach(p))
    loss1 = ad.sum_squares(once)
    loss2 = ad.sum_squares(twice)
    g1 = ad.backward(loss1, {"p": p})
    g2 = ad.backward(loss2, {"p": p})
    np.testing.assert_array_equal(g1["p"], g2["p"])
    assert np.all(g1["p"] == 0.0)


def test_backward_requires_scalar_root():
    p = ad.parameter([1.0, 2.0])
    vec = ad.mul(p, p)
    with pytest.raises(ContractError):
        ad.backward(vec, {"p": p})


def test_shape_mismatch_raises():
    a = ad.constant(np.zeros((2, 3)))
    b = ad.constant(np.zeros((3, 2)))
    with pytest.raises(ContractError):
        ad.add(a, b)
    with pytest.raises(ContractError):
        ad.matmul(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros((2, 3))))


def test_no_grad_builds_no_graph():
    p = ad.parameter(np.ones(4))
    with ad.no_grad():
        out = ad.tsum(ad.mul(p, p))
    assert out.parents == ()
    assert not out.requires_grad
    grads = ad.backward(out, {"p": p})
    np.testing.assert_array_equal(grads["p"], np.zeros(4))


def test_determinism_bit_identical():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(6, 3))
    w = rng.normal(size=(3, 4))

    def run():
        p = ad.parameter(w.copy())
        out = ad.tmean(ad.tanh(ad.matmul(ad.constant(x), p)))
        return out.value.copy(), ad.backward(out, {"w": p})["w"]

    v1, g1 = run()
    v2, g2 = run()
    assert v1.tobytes() == v2.tobytes()
    assert g1.tobytes() == g2.tobytes()


# Finite-difference agreement on every differentiable op, random shapes up to
# rank 3 (h = 1e-6, rel err < 1e-5 per the engine's contract).

SHAPES = [(3,), (2, 4), (2, 3, 2)]


def _check_fd(build, params, tol=1e-5):
    loss = build()
    g_ad = ad.backward(loss, params)
    g_fd = ad.finite_difference(build, params)
    for name in params:
        assert rel_err(g_ad[name], g_fd[name]) < tol, name


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_fd_elementwise_binary(shape, op):
    rng = np.random.default_rng(hash((shape, op)) % 2**32)
    a = ad.parameter(rng.normal(size=shape))
    b = ad.parameter(rng.normal(size=shape))
    weight = ad.constant(rng.normal(size=shape))
    fn = getattr(ad, op)
    _check_fd(lambda: ad.tsum(ad.mul(fn(a, b), weight)), {"a": a, "b": b})


@pytest.mark.parametrize("shape", SHAPES)
def test_fd_tanh_scale_mean(shape):
    rng = np.random.default_rng(17)
    a = ad.parameter(rng.normal(size=shape))
    _check_fd(lambda: ad.tmean(ad.tanh(ad.scale(a, 1.7))), {"a": a})


def test_fd_matmul_bias():
    rng = np.random.default_rng(3)
    x = ad.constant(rng.normal(size=(5, 3)))
    w = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4,)))
    _check_fd(lambda: ad.sum_squares(ad.add_bias(ad.matmul(x, w), b)), {"w": w, "b": b})


def test_fd_scalar_broadcast():
    rng = np.random.default_rng(11)
    a = ad.parameter(rng.normal(size=(3, 2)))
    s = ad.parameter(np.asarray(0.7))
    _check_fd(lambda: ad.tsum(ad.mul(a, s)), {"a": a, "s": s})


def test_fd_reshape_mse():
    rng = np.random.default_rng(5)
    a = ad.parameter(rng.normal(size=(2, 6)))
    target = ad.constant(rng.normal(size=(3, 4)))
    _check_fd(lambda: ad.mse(ad.reshape(a, (3, 4)), target), {"a": a})


def test_fd_random_composite_network():
    # mse(f(p), y) for a small random two-layer map: the spec'd FD oracle case.
    rng = np.random.default_rng(23)
    x = ad.constant(rng.normal(size=(4, 3)))
    y = ad.constant(rng.normal(size=(4, 2)))
    w1 = ad.parameter(rng.normal(size=(3, 5)) * 0.5)
    b1 = ad.parameter(rng.normal(size=(5,)) * 0.1)
    w2 = ad.parameter(rng.normal(size=(5, 2)) * 0.5)

    def build():
        h = ad.tanh(ad.add_bias(ad.matmul(x, w1), b1))
        return ad.mse(ad.matmul(h, w2), y)

    _check_fd(build, {"w1": w1, "b1": b1, "w2": w2})


def test_grad_accumulates_on_reuse():
    p = ad.parameter([2.0])
    loss = ad.tsum(ad.add(ad.mul(p, p), p))  # p^2 + p -> 2p + 1
    grads = ad.backward(loss, {"p": p})
    np.testing.assert_allclose(grads["p"], [5.0])


def test_graph_size_and_leaves():
    p = ad.parameter(np.ones(3), name="p")
    c = ad.constant(np.ones(3))
    loss = ad.tsum(ad.mul(ad.add(p, c), p))
    assert ad.graph_size(loss) >= 4
    leaves = ad.graph_leaves(loss)
    assert any(leaf is p for leaf in leaves)
    with ad.no_grad():
        loss2 = ad.tsum(ad.mul(ad.add(p, c), p))
    assert ad.graph_size(loss2) == 1
