"""Parameterised layers built on :mod:`abmgdn.nn.tensor`."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .tensor import DimensionError, Tensor, layer_norm, leaky_relu, matmul

SCHEMES = ("xavier-uniform", "kaiming-uniform", "zeros")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    slope: float = 0.1

    def __post_init__(self):
        if self.kind not in ("linear", "leaky-relu", "layer-norm", "add", "concat"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if not 0.0 < self.slope < 1.0:
            raise ValueError("activation slope must lie in (0, 1)")
        if self.in_dim < 1 or self.out_dim < 1:
            raise DimensionError("layer dimensions must be positive")


def init_bound(spec: LayerSpec, scheme: str) -> float:
    if scheme == "xavier-uniform":
        return math.sqrt(6.0 / (spec.in_dim + spec.out_dim))
    if scheme == "kaiming-uniform":
        # He uniform, ReLU gain: depends on fan-in only
        return math.sqrt(6.0 / spec.in_dim)
    if scheme == "zeros":
        return 0.0
    raise ValueError(f"unknown init scheme {scheme!r}")


def init_weights(spec: LayerSpec, scheme: str, seed) -> tuple[np.ndarray, np.ndarray]:
    """Weight matrix ``[in x out]`` drawn U(-b, b) and a zero bias.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = init_bound(spec, scheme)
    w = rng.uniform(-bound, bound, size=(spec.in_dim, spec.out_dim)) if bound else np.zeros(
        (spec.in_dim, spec.out_dim))
    return w, np.zeros(spec.out_dim)


class Module:
    """Tiny container: parameters are Tensors, children are Modules."""

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

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != p.shape:
                raise DimensionError(f"{k}: expected {p.shape}, got {a.shape}")
            p.data = a.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 scheme: str = "xavier-uniform"):
        w, b = init_weights(LayerSpec("linear", in_dim, out_dim), scheme, rng)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(b, requires_grad=True)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def forward(self, x) -> Tensor:
        return matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        if dim < 1:
            raise DimensionError("layer_norm needs d >= 1")
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def forward(self, x) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class MLP(Module):
    """Linear layers with LeakyReLU between them (none after the last)."""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator,
                 scheme: str = "xavier-uniform", slope: float = 0.1):
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output dims")
        self.layers = [Linear(a, b, rng, scheme) for a, b in zip(dims[:-1], dims[1:])]
        self.slope = slope

    def forward(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            if i:
                x = leaky_relu(x, self.slope)
            x = layer(x)
        return x
