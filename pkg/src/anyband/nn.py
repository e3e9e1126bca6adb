"""Dense layers, group normalization, and pooling built on the autodiff core."""

from __future__ import annotations

import numpy as np

from .autodiff import ContractError, DimensionError, Tensor, group_norm_op, linear


class ConfigurationError(ValueError):
    pass


class DenseLayer:
    """Affine map along the trailing axis: y = x W^T + b."""

    def __init__(self, weight: Tensor, bias: Tensor):
        if bias.shape != (weight.shape[0],):
            raise DimensionError(
                f"bias {bias.shape} does not match weight rows {weight.shape}"
            )
        self.weight = weight  # [out, in]
        self.bias = bias  # [out]

    @classmethod
    def create(cls, in_width, out_width, rng, dtype=np.float32):
        scale = np.sqrt(2.0 / in_width)
        w = rng.normal(0.0, scale, size=(out_width, in_width)).astype(dtype)
        b = np.zeros(out_width, dtype=dtype)
        return cls(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))

    @property
    def in_width(self):
        return self.weight.shape[1]

    @property
    def out_width(self):
        return self.weight.shape[0]

    def parameters(self):
        return [self.weight, self.bias]


def dense_apply(layer: DenseLayer, x: Tensor, relu: bool = False) -> Tensor:
    if x.shape[-1] != layer.in_width:
        raise DimensionError(
            f"dense_apply: input trailing extent {x.shape} does not match "
            f"layer input width {layer.weight.shape}"
        )
    return linear(x, layer.weight, layer.bias, relu=relu)


class GroupNormParams:
    def __init__(self, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5):
        channels = gamma.shape[0]
        if channels % groups != 0:
            raise ConfigurationError(
                f"{channels} channels not divisible by {groups} groups"
            )
        if eps <= 0:
            raise ConfigurationError("eps must be positive")
        self.gamma = gamma
        self.beta = beta
        self.groups = groups
        self.eps = eps

    @classmethod
    def create(cls, channels, groups, eps=1e-5, dtype=np.float32):
        gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        return cls(gamma, beta, groups, eps)

    def parameters(self):
        return [self.gamma, self.beta]


def group_normalize(x: Tensor, p: GroupNormParams) -> Tensor:
    """Normalize each sample's channels within groups, then apply gamma/beta.

    Statistics use only the sample's own channels (trailing axis), never
    the batch, so each row is normalized independently.
    """
    c = x.shape[-1]
    if c != p.gamma.shape[0]:
        raise DimensionError(
            f"group_normalize: {c} channels vs {p.gamma.shape[0]} gamma entries"
        )
    return group_norm_op(x, p.gamma, p.beta, p.groups, p.eps)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def mean_pool_axis(x: Tensor, axis: int) -> Tensor:
    """Arithmetic mean along `axis`, axis removed; fixed ascending order."""
    if x.shape[axis] == 0:
        raise ContractError("mean_pool_axis: empty axis")
    return x.mean(axis=axis)
