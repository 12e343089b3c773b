"""Group-specific Box-Cox transform of correction factors, its inverse, and batch moments.

``T(b) = ((b + eps)**lam - 1) / lam`` with the log branch ``log(b + eps)`` used
whenever ``|lam| <= zero_branch_tol``; the log branch supplies both the value
and the lambda-derivative (its analytic limit ``log(b + eps)**2 / 2``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor

LAMBDA_BOUNDS = (-2.0, 3.0)
EXP_CAP = 700.0


class DomainError(ValueError):
    def __init__(self, z, lam):
        self.z = z
        self.lam = lam
        super().__init__(f"inverse Box-Cox outside its domain: lam*z + 1 <= 0 (z={z}, lam={lam})")


def _as_arrays(b, lam):
    b = np.asarray(b, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), b.shape)
    return b, lam


def _forward_parts(b: np.ndarray, lam: np.ndarray, eps: float, tol: float):
    x = b + eps
    logx = np.log(x)
    log_branch = np.abs(lam) <= tol
    safe = np.where(log_branch, 1.0, lam)
    xl = np.exp(np.minimum(safe * logx, EXP_CAP))
    z = np.where(log_branch, logx, (xl - 1.0) / safe)
    dz_db = np.where(log_branch, 1.0 / x, xl / x)
    dz_dlam = np.where(log_branch, 0.5 * logx * logx, (safe * xl * logx - (xl - 1.0)) / (safe * safe))
    return z, dz_db, dz_dlam


def boxcox(b, lam, eps: float = 1e-6, tol: float = 1e-4) -> np.ndarray:
    """Forward transform on arrays (no graph)."""
    b, lam = _as_arrays(b, lam)
    if np.any(b < 0):
        raise ValueError("Box-Cox input must be non-negative")
    return _forward_parts(b, lam, eps, tol)[0]


def _inverse_parts(z: np.ndarray, lam: np.ndarray, eps: float, tol: float, strict: bool):
    log_branch = np.abs(lam) <= tol
    safe = np.where(log_branch, 1.0, lam)
    u = safe * z + 1.0
    bad = ~log_branch & (u <= 0)
    if strict and np.any(bad):
        i = np.flatnonzero(bad.reshape(-1))[0]
        raise DomainError(float(z.reshape(-1)[i]), float(lam.reshape(-1)[i]))
    # out-of-domain entries are pinned to the boundary and get no gradient
    u = np.where(bad, 1e-9, u)
    logu = np.log(np.where(log_branch, 1.0, u))  # the log branch never uses u
    expo = np.where(log_branch, z, logu / safe)
    capped = expo > EXP_CAP
    p = np.exp(np.minimum(expo, EXP_CAP))
    b = p - eps
    db_dz = np.where(log_branch, p, p / u)
    db_dlam = np.where(log_branch, -0.5 * z * z * p, p * (z / (safe * u) - logu / (safe * safe)))
    dead = bad | capped
    return b, np.where(dead, 0.0, db_dz), np.where(dead, 0.0, db_dlam), bad


def boxcox_inverse(z, lam, eps: float = 1e-6, tol: float = 1e-4, strict: bool = True) -> np.ndarray:
    """Inverse transform on arrays, clamped to >= 0.

    ``strict=True`` raises :class:`DomainError` when ``lam*z + 1 <= 0``;
    otherwise such entries are evaluated at the domain boundary.
    """
    z, lam = _as_arrays(z, lam)
    return np.maximum(_inverse_parts(z, lam, eps, tol, strict)[0], 0.0)


def boxcox_t(b, lam: Tensor, eps: float = 1e-6, tol: float = 1e-4) -> Tensor:
    """Differentiable forward transform; ``lam`` holds one lambda per element of ``b``."""
    b = ag.as_tensor(b)
    lam = ag.as_tensor(lam)
    if np.any(b.data < 0):
        raise ValueError("Box-Cox input must be non-negative")
    z, dz_db, dz_dlam = _forward_parts(b.data, np.broadcast_to(lam.data, b.shape), eps, tol)
    return Tensor.from_op(z, (b, lam), lambda g: (g * dz_db, g * dz_dlam))


def boxcox_inverse_t(z: Tensor, lam: Tensor, eps: float = 1e-6, tol: float = 1e-4,
                     strict: bool = False) -> tuple[Tensor, np.ndarray]:
    """Differentiable inverse (not clamped at 0); also returns the domain-violation mask."""
    z = ag.as_tensor(z)
    lam = ag.as_tensor(lam)
    b, db_dz, db_dlam, bad = _inverse_parts(z.data, np.broadcast_to(lam.data, z.shape), eps, tol, strict)
    return Tensor.from_op(b, (z, lam), lambda g: (g * db_dz, g * db_dlam)), bad


@dataclass
class TransformParams:
    """Learnable per-group lambdas plus the fixed stabilising constants."""

    lambdas: Tensor
    eps: float = 1e-6
    zero_branch_tol: float = 1e-4

    @classmethod
    def create(cls, K: int, init: float = 1.0, eps: float = 1e-6, zero_branch_tol: float = 1e-4):
        if eps <= 0:
            raise ValueError("eps must be positive")
        return cls(Parameter(np.full(K, float(init)), name="transform.lambdas"), eps, zero_branch_tol)

    @property
    def K(self) -> int:
        return self.lambdas.shape[0]

    def group_lambdas(self, groups) -> Tensor:
        return ag.take_rows(self.lambdas, np.asarray(groups, dtype=np.int64))

    def forward(self, b, groups) -> np.ndarray:
        return boxcox(b, self.lambdas.data[np.asarray(groups)], self.eps, self.zero_branch_tol)

    def inverse(self, z, groups, strict: bool = True) -> np.ndarray:
        return boxcox_inverse(z, self.lambdas.data[np.asarray(groups)], self.eps, self.zero_branch_tol, strict)

    def clamp_(self, lo: float = LAMBDA_BOUNDS[0], hi: float = LAMBDA_BOUNDS[1]) -> None:
        np.clip(self.lambdas.data, lo, hi, out=self.lambdas.data)


def domain_safe_z(z, lam, margin: float = 1e-9) -> np.ndarray:
    """Clamp ``z`` so that ``lam*z + 1 >= margin`` (serving-side policy)."""
    z, lam = _as_arrays(z, lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = (margin - 1.0) / lam
    out = np.where(lam > 0, np.maximum(z, bound), z)
    return np.where(lam < 0, np.minimum(out, bound), out)


@dataclass
class GroupMoments:
    group: int
    count: int
    mean: Tensor | None
    var: Tensor | None
    skew: Tensor | None
    mask: bool  # True when the group has enough samples to be used


SKEW_GUARD = 1e-8


def batch_moments(z: Tensor, groups, K: int, min_group: int = 8) -> list[GroupMoments]:
    """Per-group mini-batch mean, biased variance and skewness ``m3 / (sigma^3 + 1e-8)``."""
    z = ag.as_tensor(z)
    groups = np.asarray(groups, dtype=np.int64)
    result = []
    for g in range(K):
        idx = np.flatnonzero(groups == g)
        if len(idx) < min_group or len(idx) == 0:
            result.append(GroupMoments(g, len(idx), None, None, None, False))
            continue
        zg = ag.take_rows(z, idx)
        mu = ag.mean(zg)
        c = zg - mu
        var = ag.mean(c * c)
        m3 = ag.mean(c * c * c)
        skew = m3 / (ag.pow(var, 1.5) + SKEW_GUARD)
        result.append(GroupMoments(g, len(idx), mu, var, skew, True))
    return result


def skewness(x) -> float:
    """Biased sample skewness with the same guard as :func:`batch_moments`."""
    x = np.asarray(x, dtype=np.float64)
    c = x - x.mean()
    var = np.mean(c * c)
    return float(np.mean(c**3) / (var**1.5 + SKEW_GUARD))
