"""First-order optimizers and the finite-difference gradient oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


def _checked_grad(p: Tensor, idx: int) -> np.ndarray:
    g = p.grad if p.grad is not None else np.zeros_like(p.data)
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name or idx}")
    return g


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.01):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [_checked_grad(p, i) for i, p in enumerate(self.params)]
        for p, g in zip(self.params, grads):
            if not p.frozen:
                p.data -= self.lr * g


class Adam:
    """Adam with bias correction.  ``lr_overrides`` maps parameter names to their own rate."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        lr_overrides: dict[str, float] | None = None,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.lr_overrides = dict(lr_overrides or {})
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        # validate everything first so a bad gradient leaves all parameters untouched
        grads = [_checked_grad(p, i) for i, p in enumerate(self.params)]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if p.frozen:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            lr = self.lr_overrides.get(p.name, self.lr)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}


@dataclass
class GradCheckReport:
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    refined: int = 0  # coordinates re-measured with the smaller step

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def _coord_error(f, flat: np.ndarray, c: int, h: float, ana: float, floor: float) -> float:
    orig = flat[c]
    flat[c] = orig + h
    fp = f().item()
    flat[c] = orig - h
    fm = f().item()
    flat[c] = orig
    num = (fp - fm) / (2.0 * h)
    return abs(ana - num) / max(abs(ana), abs(num), floor)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
    refine_tol: float | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar ``f()`` against central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.  With
    ``max_coords`` set, at most that many randomly chosen coordinates of each
    parameter are perturbed (all of them otherwise).

    With ``refine_tol`` set, a coordinate whose error exceeds it is measured
    again with step ``h / 100`` and keeps the smaller error.  A ReLU, Huber or
    ``|.|`` switch lying within ``h`` of the current point spoils the central
    difference at that scale only; a genuinely wrong gradient fails at both.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        p.grad = None
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    report = GradCheckReport()
    for i, (p, a) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for c in coords:
            ana = a.reshape(-1)[c]
            err = _coord_error(f, flat, c, h, ana, floor)
            if refine_tol is not None and err > refine_tol:
                err = min(err, _coord_error(f, flat, c, h / 100.0, ana, floor))
                report.refined += 1
            worst = max(worst, err)
            report.checked += 1
        report.per_param[p.name or f"param{i}"] = worst
    for p in params:
        p.grad = None
    return report
