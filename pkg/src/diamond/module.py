"""Parameter containers: a minimal module tree plus linear and layer-norm layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Parameter, Tensor, layer_norm, matmul


class Module:
    """Base class; parameters are discovered by walking instance attributes.

    Attribute insertion order defines the (stable) parameter order, and the
    attribute path defines each parameter's name.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            if isinstance(value, Parameter):
                yield prefix + attr, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{prefix}{attr}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float64, bound: float | None = None):
        bound = 1.0 / np.sqrt(fan_in) if bound is None else bound
        self.weight = Parameter(rng.uniform(-bound, bound, (fan_in, fan_out)), dtype=dtype)
        self.bias = Parameter(rng.uniform(-bound, bound, (fan_out,)), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, features: int, dtype=np.float64, eps: float = 1e-5):
        self.gain = Parameter(np.ones(features), dtype=dtype)
        self.bias = Parameter(np.zeros(features), dtype=dtype)
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self._eps)

    @property
    def eps(self) -> float:
        return self._eps
