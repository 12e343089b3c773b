import numpy as np
import pytest

from wtdebias import autograd as ag
from wtdebias.autograd import Parameter
from wtdebias.optim import SGD, Adam, NonFiniteGradientError, finite_diff_check


def test_adam_minimises_quadratic():
    x = Parameter(np.array([3.0, -2.0]), name="x")
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        ag.sum_((x - 1.0) ** 2).backward()
        opt.step()
    np.testing.assert_allclose(x.data, [1.0, 1.0], atol=1e-3)


def test_sgd_step():
    x = Parameter(np.array([1.0]))
    opt = SGD([x], lr=0.5)
    ag.sum_(x * x).backward()
    opt.step()
    assert x.data[0] == pytest.approx(0.0)


def test_non_finite_gradient_raises():
    x = Parameter(np.array([1.0]), name="x")
    opt = Adam([x])
    x.grad = np.array([np.nan])
    with pytest.raises(NonFiniteGradientError):
        opt.step()


def test_frozen_parameter_untouched():
    x = Parameter(np.array([1.0]), name="x")
    y = Parameter(np.array([1.0]), name="y").freeze()
    opt = Adam([x, y], lr=0.1)
    ag.sum_(x * y).backward()
    opt.step()
    assert y.data[0] == 1.0 and x.data[0] != 1.0


def test_gradcheck_detects_wrong_gradient():
    x = Parameter(np.array([0.7, 1.3]), name="x")
    wrong = lambda: ag.Tensor.from_op(np.sum(x.data**2), (x,), lambda g: (g * 3.0 * x.data,))
    assert finite_diff_check(wrong, [x], refine_tol=1e-4).max_rel_error > 0.1


def test_gradcheck_refinement_handles_kink():
    # |x| has a kink at 0; x sits 1e-6 from it, inside the default step
    x = Parameter(np.array([1e-6 / 2]), name="x")
    f = lambda: ag.sum_(ag.abs_(x))
    assert finite_diff_check(f, [x]).max_rel_error > 0.1
    rep = finite_diff_check(f, [x], refine_tol=1e-4)
    assert rep.refined == 1 and rep.max_rel_error < 1e-6
