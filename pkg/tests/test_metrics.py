import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wtdebias.metrics import comparable_pairs, mae, per_user_xauc, xauc, xauc_bruteforce, xauc_counts


def test_mae_examples():
    assert mae([1.0, 3.0], [1.0, 3.0]) == 0.0
    assert mae([1.0, 3.0], [2.0, 1.0]) == 1.5
    with pytest.raises(ValueError):
        mae([1.0], [1.0, 2.0])


def test_xauc_examples():
    assert xauc([1, 2, 3], [1, 2, 3]) == 1.0
    assert xauc([1, 2, 3], [3, 2, 1]) == 0.0
    assert xauc([1, 2, 3], [1, 3, 2]) == pytest.approx(2 / 3)
    assert xauc([1, 2], [5, 5]) == 0.5
    with pytest.raises(ValueError):
        xauc([2, 2, 2], [1, 2, 3])


small_ints = st.lists(st.integers(0, 6), min_size=2, max_size=60)


@given(small_ints, st.data())
def test_exhaustive_matches_bruteforce(y, data):
    y = np.array(y, dtype=float)
    y_hat = np.array(data.draw(st.lists(st.integers(0, 4), min_size=len(y), max_size=len(y))), dtype=float)
    if comparable_pairs(y) == 0:
        return
    assert xauc(y, y_hat, max_pairs=None) == xauc_bruteforce(y, y_hat)


def test_exhaustive_matches_bruteforce_n200():
    rng = np.random.default_rng(0)
    y = np.round(rng.lognormal(2, 1, 200), 1)
    y_hat = np.round(y * rng.lognormal(0, 0.5, 200), 1)
    score, omega = xauc_counts(y, y_hat)
    assert score / omega == xauc_bruteforce(y, y_hat)


def test_sampled_close_to_exhaustive():
    rng = np.random.default_rng(1)
    y = rng.lognormal(2, 1, 2000)
    y_hat = y * rng.lognormal(0, 1, 2000)
    exact = xauc(y, y_hat, max_pairs=None)
    assert abs(xauc(y, y_hat, max_pairs=200_000, seed=3) - exact) < 0.01


@given(small_ints, st.data())
def test_invariant_to_monotone_transform(y, data):
    # integer predictions keep exp() strictly monotone in floating point
    y = np.array(y, dtype=float)
    y_hat = np.array(data.draw(st.lists(st.integers(-50, 50), min_size=len(y), max_size=len(y))), dtype=float)
    if comparable_pairs(y) == 0:
        return
    assert xauc(y, y_hat) == xauc(y, np.exp(y_hat / 10.0)) == xauc(y, 3.0 * y_hat + 1.0)


def test_per_user():
    y = np.array([1.0, 2.0, 3.0, 1.0, 5.0])
    pred = np.array([1.0, 3.0, 2.0, 0.0, 9.0])
    assert per_user_xauc(np.zeros(5), y, pred) == pytest.approx(xauc(y, pred))
    assert per_user_xauc([0, 0, 0, 1, 1], y, np.array([1.0, 2.0, 3.0, 0.0, 1.0])) == 1.0
    with pytest.raises(ValueError):
        per_user_xauc([0, 1, 2], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
