"""Pointwise and pairwise watch-time metrics."""
from __future__ import annotations

import numpy as np
from scipy import stats

DEFAULT_MAX_PAIRS = 5_000_000


def mae(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"mae: length mismatch {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("mae: empty input")
    return float(np.mean(np.abs(y_hat - y)))


def _tie_pairs(values: np.ndarray) -> int:
    _, counts = np.unique(values, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def comparable_pairs(y) -> int:
    y = np.asarray(y)
    n = len(y)
    return n * (n - 1) // 2 - _tie_pairs(y)


def xauc_counts(y, y_hat) -> tuple[float, int]:
    """Exact (concordance score, |Omega|) in O(n log n).

    Concordant pairs count 1, pairs tied in ``y_hat`` count 0.5.  The
    concordant-minus-discordant statistic comes from Kendall's tau-b.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    n = len(y)
    n0 = n * (n - 1) // 2
    t_y = _tie_pairs(y)
    t_p = _tie_pairs(y_hat)
    t_both = _tie_pairs(np.rec.fromarrays([y, y_hat])) if n else 0
    omega = n0 - t_y
    both_distinct = n0 - t_y - t_p + t_both
    if both_distinct > 0:
        tau = stats.kendalltau(y, y_hat, variant="b").statistic
        s = int(round(tau * np.sqrt(float(n0 - t_y) * float(n0 - t_p))))
    else:
        s = 0
    concordant = (both_distinct + s) // 2
    return concordant + 0.5 * (t_p - t_both), omega


def xauc_bruteforce(y, y_hat) -> float:
    """O(n^2) enumeration of all comparable pairs (test oracle)."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    score, count = 0.0, 0
    for i in range(len(y)):
        for j in range(i + 1, len(y)):
            if y[i] == y[j]:
                continue
            count += 1
            prod = (y_hat[i] - y_hat[j]) * (y[i] - y[j])
            score += 1.0 if prod > 0 else (0.5 if y_hat[i] == y_hat[j] else 0.0)
    if count == 0:
        raise ValueError("xauc: no comparable pairs")
    return score / count


def xauc(y, y_hat, max_pairs: int | None = DEFAULT_MAX_PAIRS, seed: int = 0) -> float:
    """Fraction of comparable pairs ordered the same way by ``y_hat`` as by ``y``.

    Exhaustive when the number of comparable pairs is at most ``max_pairs``;
    otherwise ``max_pairs`` uniformly drawn index pairs (pairs with equal ``y``
    are discarded) estimate it.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"xauc: length mismatch {y.shape} vs {y_hat.shape}")
    omega = comparable_pairs(y)
    if omega == 0:
        raise ValueError("xauc: no comparable pairs")
    if max_pairs is None or omega <= max_pairs:
        score, omega = xauc_counts(y, y_hat)
        return float(score / omega)
    rng = np.random.default_rng(seed)
    n = len(y)
    i = rng.integers(0, n, max_pairs)
    j = rng.integers(0, n, max_pairs)
    keep = y[i] != y[j]
    i, j = i[keep], j[keep]
    prod = (y_hat[i] - y_hat[j]) * (y[i] - y[j])
    score = (prod > 0).sum() + 0.5 * (y_hat[i] == y_hat[j]).sum()
    return float(score / len(i))


def per_user_xauc(user_id, y, y_hat) -> float:
    """Within-user XAUC averaged with weights equal to each user's comparable-pair count.

    This is an interpretation of the production user-grouped metric, whose
    exact definition is not public.
    """
    user_id = np.asarray(user_id)
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    order = np.argsort(user_id, kind="stable")
    bounds = np.flatnonzero(np.diff(user_id[order])) + 1
    score, pairs = 0.0, 0
    for idx in np.split(order, bounds):
        if len(idx) < 2:
            continue
        s, o = xauc_counts(y[idx], y_hat[idx])
        score += s
        pairs += o
    if pairs == 0:
        raise ValueError("per_user_xauc: no user has a comparable pair")
    return float(score / pairs)
