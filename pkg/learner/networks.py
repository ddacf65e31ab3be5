"""
Dense networks built on the autograd core.

A network is described by a ``NetSpec`` and its parameters live in a
``ParamStore`` under ``<prefix><layer>.weight`` / ``<prefix><layer>.bias``.
Layer names are ``dense<i>`` for hidden layers, ``res<b>.inner`` and
``res<b>.outer`` for residual blocks and ``out`` for the linear head.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .autograd import GradientTape, ParamStore, Variable, VariableLike, as_variable, matmul, param, relu
from .exceptions import ShapeMismatchError


DEFAULT_HIDDEN = 64


@dataclass(frozen=True)
class NetSpec:
    """
    Layer sizes of a ReLU MLP with an optional stack of residual blocks
    (linear, ReLU, linear, identity shortcut, ReLU) before the linear head.
    """

    input_dim: int
    hidden_sizes: Tuple[int, ...] = (DEFAULT_HIDDEN,)
    output_dim: int = 1
    residual_blocks: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ShapeMismatchError(
                "Network dimensions must be positive",
                details={"input": self.input_dim, "hidden": list(self.hidden_sizes), "output": self.output_dim},
            )
        if self.residual_blocks < 0:
            raise ShapeMismatchError(f"Residual block count must be >= 0, got {self.residual_blocks}")

    @property
    def feature_dim(self) -> int:
        return self.hidden_sizes[-1] if self.hidden_sizes else self.input_dim

    def layer_shapes(self) -> List[Tuple[str, int, int]]:
        """``(name, fan_in, fan_out)`` of every linear layer in forward order."""
        dims = [self.input_dim, *self.hidden_sizes]
        layers = [(f"dense{i}", dims[i], dims[i + 1]) for i in range(len(self.hidden_sizes))]
        width = self.feature_dim
        for b in range(self.residual_blocks):
            layers.append((f"res{b}.inner", width, width))
            layers.append((f"res{b}.outer", width, width))
        layers.append(("out", width, self.output_dim))
        return layers

    @property
    def num_parameters(self) -> int:
        return sum(fan_in * fan_out + fan_out for _, fan_in, fan_out in self.layer_shapes())


def child_seeds(seed: int, count: int) -> List[int]:
    """Independent integer seeds for the sub-networks of one model."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def init_params(
    spec: NetSpec,
    seed: int,
    prefix: str = "",
    store: Optional[ParamStore] = None,
) -> ParamStore:
    """Uniform fan-in initialisation, one random stream per layer."""
    store = store if store is not None else ParamStore()
    for index, (name, fan_in, fan_out) in enumerate(spec.layer_shapes()):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
        bound = 1.0 / np.sqrt(fan_in)
        store.add(f"{prefix}{name}.weight", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        store.add(f"{prefix}{name}.bias", rng.uniform(-bound, bound, size=fan_out))
    return store


def linear(x: VariableLike, store: ParamStore, name: str, tape: Optional[GradientTape] = None) -> Variable:
    return matmul(x, param(store, f"{name}.weight", tape)) + param(store, f"{name}.bias", tape)


def residual_block(x: VariableLike, store: ParamStore, name: str, tape: Optional[GradientTape] = None) -> Variable:
    inner = relu(linear(x, store, f"{name}.inner", tape))
    return relu(as_variable(x) + linear(inner, store, f"{name}.outer", tape))


def forward(
    spec: NetSpec,
    store: ParamStore,
    x: VariableLike,
    tape: Optional[GradientTape] = None,
    prefix: str = "",
) -> Variable:
    """Batch forward pass; ``x`` has shape ``(batch, input_dim)``."""
    h = as_variable(x)
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ShapeMismatchError(
            f"Network expects input of width {spec.input_dim}, got shape {h.shape}",
            details={"expected": spec.input_dim, "got": list(h.shape)},
        )
    for i in range(len(spec.hidden_sizes)):
        h = relu(linear(h, store, f"{prefix}dense{i}", tape))
    for b in range(spec.residual_blocks):
        h = residual_block(h, store, f"{prefix}res{b}", tape)
    return linear(h, store, f"{prefix}out", tape)
