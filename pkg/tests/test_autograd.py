import numpy as np
import pytest

from wtdebias import autograd as ag
from wtdebias.autograd import Parameter, ShapeError, Tensor, no_grad
from wtdebias.optim import finite_diff_check
from wtdebias.transform import boxcox_t

UNARY = {
    "exp": ag.exp,
    "log": lambda t: ag.log(ag.exp(t) + 1.0),
    "tanh": ag.tanh,
    "sigmoid": ag.sigmoid,
    "softplus": ag.softplus,
    "relu": ag.relu,
    "abs": ag.abs_,
    "pow3": lambda t: ag.pow(t, 3),
    "softmax": lambda t: ag.softmax(t, axis=-1) * np.arange(1.0, 5.0),
    "huber": lambda t: ag.huber(t * 2.0, 1.0),
    "variance": lambda t: ag.variance(t, axis=0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(1)
    x = Parameter(rng.normal(size=(3, 4)), name="x")
    rep = finite_diff_check(lambda: ag.sum_(UNARY[name](x) * np.linspace(0.5, 1.5, 4)), [x],
                            floor=1e-6, refine_tol=1e-6)
    assert rep.max_rel_error < 1e-6


def test_binary_and_broadcast_gradients():
    rng = np.random.default_rng(2)
    a = Parameter(rng.normal(size=(5, 3)), name="a")
    b = Parameter(rng.normal(size=(3,)), name="b")
    c = Parameter(rng.uniform(1.0, 2.0, size=(5, 1)), name="c")

    def f():
        return ag.sum_((a * b + a / c - b) ** 2) + ag.mean(ag.maximum(a, b)) + ag.sum_(ag.where(a.data > 0, a, c))

    assert finite_diff_check(f, [a, b, c], floor=1e-6, refine_tol=1e-6).max_rel_error < 1e-6


def test_matmul_concat_take_rows_gradients():
    rng = np.random.default_rng(3)
    w = Parameter(rng.normal(size=(4, 2)), name="w")
    x = Parameter(rng.normal(size=(6, 4)), name="x")
    idx = np.array([0, 2, 2, 5])

    def f():
        h = ag.concat([ag.matmul(x, w), ag.take_rows(x, np.arange(6))[:, :1]], axis=-1)
        return ag.sum_(ag.tanh(ag.take_rows(h, idx)))

    assert finite_diff_check(f, [w, x], floor=1e-6).max_rel_error < 1e-6


def test_scatter_rows_restores_order():
    a = Parameter(np.array([[1.0], [2.0]]))
    b = Parameter(np.array([[3.0]]))
    out = ag.scatter_rows([a, b], [np.array([2, 0]), np.array([1])], 3)
    np.testing.assert_array_equal(out.data.ravel(), [2.0, 3.0, 1.0])
    ag.sum_(out * np.array([[1.0], [10.0], [100.0]])).backward()
    np.testing.assert_array_equal(a.grad.ravel(), [100.0, 1.0])
    np.testing.assert_array_equal(b.grad.ravel(), [10.0])


def test_softmax_uniform():
    np.testing.assert_allclose(ag.softmax(Tensor(np.zeros(3))).data, np.full(3, 1 / 3))


def test_softmax_large_inputs_stay_finite():
    out = ag.softmax(Tensor(np.array([1000.0, 0.0, -1000.0]))).data
    assert np.all(np.isfinite(out)) and out[0] == pytest.approx(1.0)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_backward_requires_scalar():
    x = Parameter(np.ones(3))
    with pytest.raises((ValueError, RuntimeError)):
        (x * 2.0).backward()


def test_no_grad_builds_no_graph():
    x = Parameter(np.ones(2))
    with no_grad():
        y = ag.sum_(x * 3.0)
    assert not y.requires_grad


def test_quadratic_gradient():
    x = Parameter(np.array([0.3, -1.2, 2.5]), name="x")
    A = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 3.0]])
    f = lambda: ag.sum_(x * ag.matmul(Tensor(A), x.reshape(3, 1)).reshape(3))
    f().backward()
    np.testing.assert_allclose(x.grad, 2 * A @ x.data, rtol=1e-12)
    x.grad = None
    assert finite_diff_check(f, [x]).max_rel_error < 1e-6


def test_boxcox_lambda_gradient():
    lam = Parameter(np.array([0.5]), name="lam")
    b = np.array([0.3, 1.0, 4.0, 9.0])
    rep = finite_diff_check(lambda: ag.sum_(boxcox_t(b, ag.take_rows(lam, np.zeros(4, dtype=int)))), [lam])
    assert rep.max_rel_error < 1e-6


def test_huber_values():
    r = Tensor(np.array([-3.0, -0.5, 0.0, 0.5, 2.0]))
    np.testing.assert_allclose(ag.huber(r, 1.0).data, [2.5, 0.125, 0.0, 0.125, 1.5])


def test_bce_matches_closed_form():
    logits = np.array([-2.0, 0.0, 3.0])
    t = np.array([0.0, 1.0, 1.0])
    p = 1 / (1 + np.exp(-logits))
    expected = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
    assert ag.binary_cross_entropy_with_logits(Tensor(logits), t).item() == pytest.approx(expected, rel=1e-12)
