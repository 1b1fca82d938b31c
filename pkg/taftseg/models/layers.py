"""
Parameter containers and the convolution layer used by the networks.
"""

import math
from typing import Dict, Iterator, List, Tuple

import numpy as np

from taftseg.tensor import Tensor, parameter
from taftseg.tensor import functional as F


class Module:
    """
    Minimal parameter container.

    Trainable tensors and sub-modules assigned as attributes are discovered in
    assignment order and named with dotted paths (``block1.weight``).
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """He/Kaiming uniform for ReLU: U(−√(6/fan_in), √(6/fan_in))."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    """Convolution with a Kaiming-uniform kernel and zero bias."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        dilation: int = 1,
        padding: int = 0,
    ):
        fan_in = in_channels * kernel * kernel
        self.weight = parameter(kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = parameter(np.zeros(out_channels))
        self.stride = stride
        self.dilation = dilation
        self.padding = padding

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, dilation=self.dilation, padding=self.padding)
