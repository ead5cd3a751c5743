import numpy as np
import pytest

from dsbbench import autodiff as ad
from dsbbench.numerics import logsumexp

from _helpers import directional_fd

# frozen with mpmath at 50 digits: log(1 + e^-1 + e^-2)
LSE_0_M1_M2 = 0.4076059644443803


# -- logsumexp scalar helper -------------------------------------------------

def test_logsumexp_single_element_identity():
    assert logsumexp([3.7]) == 3.7


def test_logsumexp_two_equal_elements():
    x = -1.25
    assert np.isclose(logsumexp([x, x]), x + np.log(2.0), rtol=0, atol=1e-15)


def test_logsumexp_reference_value():
    assert abs(logsumexp([0.0, -1.0, -2.0]) - LSE_0_M1_M2) < 1e-14


def test_logsumexp_empty_is_error():
    with pytest.raises(ValueError):
        logsumexp([])


def test_logsumexp_all_neg_inf_returns_neg_inf():
    assert logsumexp([-np.inf, -np.inf]) == -np.inf


def test_logsumexp_shift_invariance_property():
    rng = np.random.default_rng(7)
    for _ in range(200):
        v = rng.normal(scale=rng.uniform(0.1, 50), size=rng.integers(1, 12))
        c = rng.normal(scale=100)
        assert np.isclose(logsumexp(v + c), logsumexp(v) + c,
                          rtol=1e-13, atol=1e-12)


# -- backward: spec examples ---------------------------------------------------

def test_backward_sum_gives_ones():
    leaf = ad.Var(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.backward(leaf.sum(), [leaf])
    assert np.array_equal(leaf.grad, np.ones((2, 3)))


def test_backward_logsumexp_gives_softmax():
    rng = np.random.default_rng(1)
    leaf = ad.Var(rng.normal(size=8), requires_grad=True)
    ad.backward(ad.logsumexp(leaf, axis=0), [leaf])
    v = leaf.value
    soft = np.exp(v - v.max())
    soft /= soft.sum()
    assert np.allclose(leaf.grad, soft, atol=1e-14)


def test_backward_three_layer_composition_matches_fd():
    rng = np.random.default_rng(2)
    w1 = ad.Var(rng.normal(size=(4, 5)), requires_grad=True)
    w2 = ad.Var(rng.normal(size=(5, 3)), requires_grad=True)
    b = ad.Var(rng.normal(size=3), requires_grad=True)
    x = rng.normal(size=(6, 4))

    def f():
        h = ad.relu(ad.matmul(x, w1))
        out = ad.add(ad.matmul(h, w2), b)
        return ad.logsumexp(out.reshape((18,)), axis=0)

    assert directional_fd(f, [w1, w2, b], rng=rng) <= 1e-4


def test_backward_requires_scalar_loss():
    leaf = ad.Var(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(ad.exp(leaf))


def test_backward_unreached_leaf_gets_exact_zero():
    a = ad.Var(np.ones(3), requires_grad=True)
    b = ad.Var(np.ones(2), requires_grad=True)
    ad.backward(a.sum(), [a, b])
    assert np.array_equal(b.grad, np.zeros(2))


def test_gradient_accumulates_on_diamond():
    a = ad.Var(np.array(1.5), requires_grad=True)
    out = ad.add(ad.mul(a, 2.0), ad.mul(a, 3.0))
    ad.backward(out, [a])
    assert a.grad == pytest.approx(5.0, abs=1e-15)


def test_nan_raises():
    a = ad.Var(np.array([1.0, -1.0]), requires_grad=True)
    with pytest.raises(ad.NonFiniteError):
        ad.log(a)  # log of a negative entry


def test_neg_inf_is_allowed_through_logsumexp():
    a = ad.Var(np.array([0.0, 1.0]), requires_grad=True)
    out = ad.logsumexp(ad.add(a, np.array([-np.inf, 0.0])), axis=0)
    ad.backward(out, [a])
    assert out.value == pytest.approx(1.0)
    assert np.allclose(a.grad, [0.0, 1.0])


# -- adjoint correctness of every primitive ------------------------------------

PRIMITIVES = ["add_bcast", "mul_bcast", "matmul", "exp", "log", "relu",
              "logsumexp", "log_softmax", "sum_axis", "reshape", "gather",
              "weighted", "concat", "stack"]


def _frozen_op(name, rng, shape):
    """Build an op with every random constant drawn once."""
    B, S = shape
    if name == "add_bcast":
        c = rng.normal(size=(S,))
        return lambda p: ad.add(p, c)
    if name == "mul_bcast":
        c = rng.normal(size=(B, 1))
        return lambda p: ad.mul(p, c)
    if name == "matmul":
        c = rng.normal(size=(S, 2))
        return lambda p: ad.matmul(p, c)
    if name == "exp":
        return ad.exp
    if name == "log":
        return lambda p: ad.log(ad.exp(p))
    if name == "relu":
        return ad.relu
    if name == "logsumexp":
        return lambda p: ad.logsumexp(p, axis=1)
    if name == "log_softmax":
        return lambda p: ad.log_softmax(p, axis=1)
    if name == "sum_axis":
        return lambda p: ad.vsum(p, axis=0)
    if name == "reshape":
        return lambda p: ad.reshape(p, (S, B))
    if name == "gather":
        i = rng.integers(0, B, size=(4, 1))
        j = rng.integers(0, S, size=(1, 5))
        return lambda p: ad.gather(p, (i, j))
    if name == "weighted":
        w = np.abs(rng.normal(size=(B, S))) * rng.integers(0, 2, size=(B, S))
        return lambda p: ad.weighted(p, w)
    if name == "concat":
        c = rng.normal(size=(B, S))
        return lambda p: ad.concat([p, c], axis=1)
    if name == "stack":
        return lambda p: ad.stack([p, ad.mul(p, 2.0)], axis=0)
    raise AssertionError(name)


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_adjoints_randomized(name):
    # >= 100 randomized instances per primitive, directional fd probes
    rng = np.random.default_rng(100 + PRIMITIVES.index(name))
    shape = (3, 4)
    worst = 0.0
    for _ in range(100):
        op = _frozen_op(name, rng, shape)
        p = ad.Var(rng.normal(size=shape), requires_grad=True)
        w = rng.normal(size=op(p).value.shape)

        def f():
            return ad.vsum(ad.mul(op(p), w))

        worst = max(worst, directional_fd(f, [p], rng=rng))
    assert worst <= 1e-4, f"{name}: worst relative error {worst}"
