"""Permutation-invariant spectral encoder.

Four stages map N (descriptor, raster) pairs to a fixed 64-channel field:

 1. descriptor block: each normalized descriptor triplet through 9 dense
    layers (ReLU + GroupNorm after layers 1..8), independently per band;
 2. permutation block: all N^2 ordered pairs of band features concatenated
    to width 128, through 5 dense layers (ReLU between), then mean over
    the partner axis back down to N rows;
 3. combined block: per-row dense stack down to 64 features per band;
 4. band multiplication: each band's 64-vector scaled by (reflectance +
    0.5) at every pixel, then mean over bands. No trainable parameters.

Reordering the input bands reorders every per-band intermediate the same
way and leaves the pooled output unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ContractError,
    DimensionError,
    Tensor,
    band_multiply_pool,
    pairwise_linear,
)
from .descriptors import BandDescriptor, normalize_descriptors
from .nn import DenseLayer, GroupNormParams, dense_apply, group_normalize

FEATURE_WIDTH = 64
PAIR_WIDTH = 128
MIN_BANDS = 3
BAND_OFFSET = 0.5

DESCRIPTOR_BLOCK_WIDTHS = (3, 52, 52, 52, 52, 52, 52, 52, 52, 64)
PERMUTATION_BLOCK_WIDTHS = (128, 108, 108, 108, 108, 128)
COMBINED_BLOCK_WIDTHS = (128, 128, 128, 128, 128, 128, 128, 128, 64)
GROUPNORM_GROUPS = 4


class InputError(ValueError):
    pass


@dataclass
class SpectralStack:
    """N band descriptors with N aligned reflectance planes and optional mask."""

    descriptors: list[BandDescriptor]
    planes: np.ndarray  # [N, H, W] float
    mask: np.ndarray | None = None  # [H, W] uint8, {0 clear, 1 cloud, 255 nodata}

    def __post_init__(self):
        self.planes = np.asarray(self.planes)
        if self.planes.ndim != 3:
            raise DimensionError(f"planes must be [N, H, W], got {self.planes.shape}")
        if len(self.descriptors) != self.planes.shape[0]:
            raise DimensionError(
                f"{len(self.descriptors)} descriptors but {self.planes.shape[0]} planes"
            )
        if self.mask is not None:
            self.mask = np.asarray(self.mask)
            if self.mask.shape != self.planes.shape[1:]:
                raise DimensionError(
                    f"mask {self.mask.shape} does not match planes "
                    f"{self.planes.shape[1:]}"
                )

    @property
    def n_bands(self):
        return self.planes.shape[0]

    @property
    def extent(self):
        return self.planes.shape[1:]

    def subset(self, indices) -> "SpectralStack":
        indices = list(indices)
        return SpectralStack(
            [self.descriptors[i] for i in indices],
            self.planes[indices],
            self.mask,
        )


class DenseStack:
    """A chain of dense layers with configurable ReLU/GroupNorm placement."""

    def __init__(self, layers, norms=None):
        self.layers = layers
        self.norms = norms  # parallel to hidden layers, or None

    @classmethod
    def create(cls, widths, rng, with_groupnorm, groups=GROUPNORM_GROUPS,
               dtype=np.float32):
        layers = [
            DenseLayer.create(widths[i], widths[i + 1], rng, dtype=dtype)
            for i in range(len(widths) - 1)
        ]
        norms = None
        if with_groupnorm:
            norms = [
                GroupNormParams.create(widths[i + 1], groups, dtype=dtype)
                for i in range(len(widths) - 2)
            ]
        return cls(layers, norms)

    def forward(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            hidden = i < last
            x = dense_apply(layer, x, relu=hidden)
            if hidden and self.norms is not None:
                x = group_normalize(x, self.norms[i])
        return x

    def parameters(self):
        params = []
        for layer in self.layers:
            params.extend(layer.parameters())
        if self.norms is not None:
            for norm in self.norms:
                params.extend(norm.parameters())
        return params

    def named_tensors(self, prefix):
        named = {}
        for k, layer in enumerate(self.layers):
            named[f"{prefix}.layer{k}.weight"] = layer.weight
            named[f"{prefix}.layer{k}.bias"] = layer.bias
        if self.norms is not None:
            for k, norm in enumerate(self.norms):
                named[f"{prefix}.norm{k}.gamma"] = norm.gamma
                named[f"{prefix}.norm{k}.beta"] = norm.beta
        return named


class EncoderWeights:
    def __init__(self, descriptor_block, permutation_block, combined_block):
        self.descriptor_block = descriptor_block
        self.permutation_block = permutation_block
        self.combined_block = combined_block

    @classmethod
    def create(cls, rng, dtype=np.float32):
        return cls(
            DenseStack.create(DESCRIPTOR_BLOCK_WIDTHS, rng, with_groupnorm=True,
                              dtype=dtype),
            DenseStack.create(PERMUTATION_BLOCK_WIDTHS, rng, with_groupnorm=False,
                              dtype=dtype),
            DenseStack.create(COMBINED_BLOCK_WIDTHS, rng, with_groupnorm=True,
                              dtype=dtype),
        )

    def parameters(self):
        return (
            self.descriptor_block.parameters()
            + self.permutation_block.parameters()
            + self.combined_block.parameters()
        )

    def named_tensors(self):
        named = {}
        named.update(self.descriptor_block.named_tensors("descriptor_block"))
        named.update(self.permutation_block.named_tensors("permutation_block"))
        named.update(self.combined_block.named_tensors("combined_block"))
        return named


def descriptor_block_forward(w: EncoderWeights, normalized: Tensor) -> Tensor:
    """[..., N, 3] normalized descriptors -> [..., N, 64], per row."""
    if normalized.shape[-1] != 3:
        raise DimensionError(
            f"descriptor block expects trailing width 3, got {normalized.shape}"
        )
    return w.descriptor_block.forward(normalized)


def permutation_block_pairs(w: EncoderWeights, band_feats: Tensor) -> Tensor:
    """Pre-pooling pair features: [..., N, 64] -> [..., N, N, 128]."""
    if band_feats.shape[-1] != FEATURE_WIDTH:
        raise DimensionError(
            f"permutation block expects width {FEATURE_WIDTH}, "
            f"got {band_feats.shape}"
        )
    stack = w.permutation_block
    last = len(stack.layers) - 1
    first = stack.layers[0]
    x = pairwise_linear(band_feats, first.weight, first.bias, relu=last > 0)
    for i, layer in enumerate(stack.layers[1:], start=1):
        x = dense_apply(layer, x, relu=i < last)
    return x


def permutation_block_forward(w: EncoderWeights, band_feats: Tensor) -> Tensor:
    """[..., N, 64] -> [..., N, 128]: pair features averaged over partners."""
    return permutation_block_pairs(w, band_feats).mean(axis=-2)


def combined_block_forward(w: EncoderWeights, x: Tensor) -> Tensor:
    """[..., N, 128] -> [..., N, 64], per row."""
    if x.shape[-1] != PAIR_WIDTH:
        raise DimensionError(
            f"combined block expects width {PAIR_WIDTH}, got {x.shape}"
        )
    return w.combined_block.forward(x)


def band_features(w: EncoderWeights, normalized: Tensor) -> Tensor:
    """Descriptor -> permutation -> combined blocks: [..., N, 3] -> [..., N, 64]."""
    f = descriptor_block_forward(w, normalized)
    f = permutation_block_forward(w, f)
    return combined_block_forward(w, f)


def band_multiply_and_pool(band_feats: Tensor, planes: Tensor) -> Tensor:
    """(reflectance + 0.5)-scaled band features, mean-pooled over bands."""
    return band_multiply_pool(band_feats, planes, offset=BAND_OFFSET)


def encode(w: EncoderWeights, stack: SpectralStack, dtype=np.float32) -> Tensor:
    """Full pipeline: SpectralStack -> [H, W, 64] feature field."""
    if stack.n_bands < MIN_BANDS:
        raise ContractError(
            f"encoder requires at least {MIN_BANDS} bands, got {stack.n_bands}"
        )
    if not np.all(np.isfinite(stack.planes)):
        raise InputError("reflectance planes contain NaN or Inf")
    normalized = Tensor(normalize_descriptors(stack.descriptors, dtype=dtype))
    feats = band_features(w, normalized)
    planes = Tensor(stack.planes.astype(dtype, copy=False))
    return band_multiply_and_pool(feats, planes)


def parameter_count(w) -> dict[str, int]:
    """Per-block and total trainable-value counts."""
    blocks = {
        "descriptor_block": w.descriptor_block,
        "permutation_block": w.permutation_block,
        "combined_block": w.combined_block,
    }
    counts = {
        name: sum(int(p.size) for p in blk.parameters())
        for name, blk in blocks.items()
    }
    counts["band_multiplication"] = 0
    counts["total"] = sum(counts.values())
    return counts
