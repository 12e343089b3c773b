"""Layer building blocks on top of :mod:`wtdebias.autograd`."""
from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": ag.relu,
    "tanh": ag.tanh,
    "identity": lambda t: t,
}


class Module:
    """Minimal parameter container: attributes that are Tensors or Modules are collected."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def name_parameters(self, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data[...] = arr


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias_init: float = 0.0):
        scale = np.sqrt(2.0 / (n_in + n_out))
        self.weight = Parameter(rng.normal(0.0, scale, size=(n_in, n_out)))
        self.bias = Parameter(np.full(n_out, bias_init))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class MLP(Module):
    """Dense stack; ``activation`` after every hidden layer, none after the last."""

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator,
        activation: str = "relu",
        final_activation: str = "identity",
    ):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.activation = activation
        self.final_activation = final_activation
        self.sizes = tuple(sizes)

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return ACTIVATIONS[self.final_activation](self.layers[-1](x))


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator):
        self.table = Parameter(rng.normal(0.0, 0.1, size=(n, dim)))
        self.n = n

    def __call__(self, index) -> Tensor:
        return ag.take_rows(self.table, index)


class SelfAttention(Module):
    """Single-head scaled dot-product self-attention over a token axis.

    Input ``(batch, tokens, d_in)``; returns ``(batch, tokens, d_model)``.  The
    most recent attention weights are kept in ``last_weights`` for inspection.
    """

    def __init__(self, d_in: int, d_model: int, rng: np.random.Generator):
        self.query = Linear(d_in, d_model, rng)
        self.key = Linear(d_in, d_model, rng)
        self.value = Linear(d_in, d_model, rng)
        self.d_model = d_model
        self.last_weights: np.ndarray | None = None

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.data.ndim != 3:
            raise ag.ShapeError(f"SelfAttention: expected (batch, tokens, dim), got {tokens.shape}")
        q, k, v = self.query(tokens), self.key(tokens), self.value(tokens)
        scores = (q @ k.T) * (1.0 / np.sqrt(self.d_model))
        weights = ag.softmax(scores, axis=-1)
        self.last_weights = weights.data
        return weights @ v
