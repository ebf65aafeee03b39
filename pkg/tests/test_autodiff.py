import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dgpi import autodiff as ad
from conftest import central_diff

floats = st.floats(-3, 3, allow_nan=False)
vecs = arrays(np.float64, 4, elements=floats)

UNARY = {
    "exp": (ad.exp, np.exp),
    "tanh": (ad.tanh, np.tanh),
    "sigmoid": (ad.sigmoid, lambda a: 1 / (1 + np.exp(-a))),
    "softplus": (ad.softplus, lambda a: np.log1p(np.exp(a))),
    "elu": (ad.elu, lambda a: np.where(a > 0, a, np.expm1(a))),
    "sin": (ad.sin, np.sin),
    "cos": (ad.cos, np.cos),
    "arctan": (ad.arctan, np.arctan),
    "square": (ad.square, np.square),
    "log1p_sq": (lambda a: ad.log1p(ad.square(a)), lambda a: np.log1p(a * a)),
}


def scalar_grad(f, x):
    tape = ad.Tape()
    v = tape.var(x)
    (g,) = ad.grad(ad.sum_(f(v)), [v])
    return g


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_forward_matches_numpy(name, rng):
    f, ref = UNARY[name]
    x = rng.normal(size=7)
    np.testing.assert_allclose(f(x), ref(x), rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradient_matches_finite_difference(name, rng):
    f, ref = UNARY[name]
    x = rng.normal(size=6) + 0.05  # keep off the ELU kink
    g = scalar_grad(f, x)
    np.testing.assert_allclose(g, central_diff(lambda w: np.sum(ref(w)), x), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_second_derivative_matches_finite_difference(name, rng):
    f, _ = UNARY[name]
    x = rng.normal(size=5) + 0.05

    def first(w):
        return scalar_grad(f, w)

    tape = ad.Tape()
    v = tape.var(x)
    (g,) = ad.grad(ad.sum_(f(v)), [v], create_graph=True)
    (hess_diag_sum,) = ad.grad(ad.sum_(g), [v])
    fd = central_diff(lambda w: np.sum(first(w)), x, h=1e-5)
    np.testing.assert_allclose(hess_diag_sum, fd, rtol=1e-5, atol=1e-6)


def test_doc_example_square():
    tape = ad.Tape()
    x = tape.var(3.0)
    (dx,) = ad.grad(ad.square(x), [x], create_graph=True)
    assert float(dx.value) == 6.0
    (ddx,) = ad.grad(dx, [x])
    assert float(ddx) == 2.0


@given(vecs, vecs)
def test_binary_ops_gradients(a, b):
    b = b + np.where(b >= 0, 0.5, -0.5)  # keep the divisor away from zero
    for f in (ad.add, ad.sub, ad.mul, ad.div):
        tape = ad.Tape()
        va, vb = tape.var(a), tape.var(b)
        ga, gb = ad.grad(ad.sum_(f(va, vb)), [va, vb])
        fd_a = central_diff(lambda w: np.sum(f(w, b)), a)
        fd_b = central_diff(lambda w: np.sum(f(a, w)), b)
        np.testing.assert_allclose(ga, fd_a, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(gb, fd_b, rtol=1e-5, atol=1e-6)


def test_broadcast_gradient_sums_back(rng):
    tape = ad.Tape()
    a = tape.var(rng.normal(size=(5, 3)))
    b = tape.var(rng.normal(size=3))
    ga, gb = ad.grad(ad.sum_(ad.mul(a, b)), [a, b])
    np.testing.assert_allclose(gb, a.value.sum(axis=0))
    np.testing.assert_allclose(ga, np.broadcast_to(b.value, (5, 3)))


def test_matvec_gradients_both_sides(rng):
    W, x = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
    tape = ad.Tape()
    vW, vx = tape.var(W), tape.var(x)
    gW, gx = ad.grad(ad.sum_(ad.square(ad.matvec(vW, vx))), [vW, vx])
    fdW = central_diff(lambda w: np.sum((x @ w.reshape(4, 3).T) ** 2), W.ravel()).reshape(4, 3)
    fdx = central_diff(lambda w: np.sum((w.reshape(6, 3) @ W.T) ** 2), x.ravel()).reshape(6, 3)
    np.testing.assert_allclose(gW, fdW, rtol=1e-6)
    np.testing.assert_allclose(gx, fdx, rtol=1e-6)


def test_mixed_second_derivative_of_network_like_map(rng):
    """d/dW of sum(dF/dx) where F = sum(tanh(x W^T)); the term the critic loss needs."""
    W, x = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))

    def dFdx_sum(w):
        tape = ad.Tape()
        vx = tape.var(x)
        (g,) = ad.grad(ad.sum_(ad.tanh(ad.matvec(w.reshape(3, 2), vx))), [vx])
        return float(np.sum(g ** 2))

    tape = ad.Tape()
    vW, vx = tape.var(W), tape.var(x)
    (gx,) = ad.grad(ad.sum_(ad.tanh(ad.matvec(vW, vx))), [vx], create_graph=True)
    (gW,) = ad.grad(ad.sum_(ad.square(gx)), [vW])
    np.testing.assert_allclose(gW.ravel(), central_diff(dFdx_sum, W.ravel()), rtol=1e-6)


def test_index_stack_reshape_roundtrip(rng):
    x = rng.normal(size=(3, 4))
    tape = ad.Tape()
    v = tape.var(x)
    out = ad.stack([v[:, 0], ad.scale(v[:, 2], 2.0)], axis=-1)
    (g,) = ad.grad(ad.sum_(ad.reshape(out, (6,))), [v])
    expect = np.zeros_like(x)
    expect[:, 0] = 1.0
    expect[:, 2] = 2.0
    np.testing.assert_array_equal(g, expect)


def test_min_max_abs_subgradient_at_kink():
    tape = ad.Tape()
    x = tape.var(np.array([0.0, 1.0, -1.0]))
    (g,) = ad.grad(ad.sum_(ad.abs_(x)), [x])
    np.testing.assert_array_equal(g, [0.0, 1.0, -1.0])
    assert ad.min2(np.array([1.0, 3.0]), 2.0).tolist() == [1.0, 2.0]
    assert ad.max2(np.array([1.0, 3.0]), 2.0).tolist() == [2.0, 3.0]


def test_untraced_calls_return_plain_arrays():
    out = ad.add(np.ones(2), 1.0)
    assert isinstance(out, np.ndarray) and not isinstance(out, ad.Var)


def test_unreached_variable_gets_zero_gradient():
    tape = ad.Tape()
    a, b = tape.var(np.ones(3)), tape.var(np.ones(2))
    ga, gb = ad.grad(ad.sum_(ad.square(a)), [a, b])
    np.testing.assert_array_equal(gb, np.zeros(2))
    np.testing.assert_array_equal(ga, 2 * np.ones(3))


def test_grad_requires_scalar_output():
    tape = ad.Tape()
    x = tape.var(np.ones(3))
    with pytest.raises(ad.ShapeError):
        ad.grad(ad.square(x), [x])


def test_shape_mismatch_raises():
    with pytest.raises(ad.ShapeError):
        ad.add(np.ones(3), np.ones(4))


def test_division_by_zero_raises():
    with pytest.raises(ad.NumericError):
        ad.div(np.ones(2), np.array([1.0, 0.0]))


def test_operator_overloads(rng):
    x = rng.normal(size=3)
    tape = ad.Tape()
    v = tape.var(x)
    y = (2.0 * v - 1.0) * v / 3.0 + (-v)
    np.testing.assert_allclose(y.value, (2 * x - 1) * x / 3 - x)
    (g,) = ad.grad(ad.sum_(y), [v])
    np.testing.assert_allclose(g, (4 * x - 1) / 3 - 1)
