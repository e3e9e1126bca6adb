"""Minimal reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ndarray and records the ops applied to it. Calling
`backward()` on a scalar result walks the graph in reverse topological
order and accumulates gradients into every tensor created with
`requires_grad=True`. Only the ops needed by the encoder and its training
losses are provided; all of them support arbitrary leading batch axes.
"""

from __future__ import annotations

import numpy as np


class ContractError(ValueError):
    """Raised when an op is called outside its contract."""


class DimensionError(ContractError):
    """Shape mismatch between operands."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # sum away prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were broadcast from extent 1
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self._parents = _parents
        self._backward = _backward

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def _accum(self, g: np.ndarray):
        # stored grads are never mutated in place, so aliasing g is safe
        if self.grad is None:
            self.grad = g if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ----------------------------------------------------
    @staticmethod
    def _lift(x, dtype):
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=dtype))

    def __add__(self, other):
        other = Tensor._lift(other, self.dtype)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        return Tensor(out_data, _parents=(self, other), _backward=bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accum(-g)

        return Tensor(-self.data, _parents=(self,), _backward=bwd)

    def __sub__(self, other):
        other = Tensor._lift(other, self.dtype)
        out_data = self.data - other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g, other.data.shape))

        return Tensor(out_data, _parents=(self, other), _backward=bwd)

    def __rsub__(self, other):
        return Tensor._lift(other, self.dtype) - self

    def __mul__(self, other):
        other = Tensor._lift(other, self.dtype)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        return Tensor(out_data, _parents=(self, other), _backward=bwd)

    __rmul__ = __mul__

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ContractError("only constant exponents are supported")
        out_data = self.data**p

        def bwd(g):
            self._accum(g * p * self.data ** (p - 1))

        return Tensor(out_data, _parents=(self,), _backward=bwd)

    def square(self):
        def bwd(g):
            self._accum(g * 2.0 * self.data)

        return Tensor(self.data * self.data, _parents=(self,), _backward=bwd)

    def matmul(self, other):
        other = Tensor._lift(other, self.dtype)
        if self.data.shape[-1] != other.data.shape[-2 if other.ndim > 1 else 0]:
            raise DimensionError(
                f"matmul: {self.data.shape} @ {other.data.shape}"
            )
        out_data = self.data @ other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g @ np.swapaxes(other.data, -1, -2),
                                         self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g,
                                          other.data.shape))

        return Tensor(out_data, _parents=(self, other), _backward=bwd)

    __matmul__ = matmul

    # -- nonlinearities ------------------------------------------------
    def relu(self):
        mask = self.data > 0
        out_data = np.where(mask, self.data, np.zeros((), dtype=self.dtype))

        def bwd(g):
            self._accum(g * mask)

        return Tensor(out_data, _parents=(self,), _backward=bwd)

    def sigmoid(self):
        x = self.data
        out_data = np.empty_like(x)
        pos = x >= 0
        out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out_data[~pos] = ex / (1.0 + ex)

        def bwd(g):
            self._accum(g * out_data * (1.0 - out_data))

        return Tensor(out_data, _parents=(self,), _backward=bwd)

    def log(self):
        def bwd(g):
            self._accum(g / self.data)

        return Tensor(np.log(self.data), _parents=(self,), _backward=bwd)

    # -- shape ops -----------------------------------------------------
    def __getitem__(self, idx):
        out_data = self.data[idx]

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)

        return Tensor(out_data, _parents=(self,), _backward=bwd)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out_data = self.data.reshape(shape)

        def bwd(g):
            self._accum(g.reshape(old))

        return Tensor(out_data, _parents=(self,), _backward=bwd)

    def expand_dims(self, axis):
        out_data = np.expand_dims(self.data, axis)

        def bwd(g):
            self._accum(np.squeeze(g, axis=axis))

        return Tensor(out_data, _parents=(self,), _backward=bwd)

    def broadcast_to(self, shape):
        shape = tuple(shape)
        old = self.data.shape
        out_data = np.broadcast_to(self.data, shape)

        def bwd(g):
            self._accum(_unbroadcast(g, old))

        return Tensor(out_data, _parents=(self,), _backward=bwd)

    # -- reductions ----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor(out_data, _parents=(self,), _backward=bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is not None and self.data.shape[axis] == 0:
            raise ContractError("mean over an empty axis")
        n = self.data.size if axis is None else self.data.shape[axis]
        out_data = self.data.mean(axis=axis, keepdims=keepdims)

        def bwd(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, self.data.shape) / n)

        return Tensor(out_data, _parents=(self,), _backward=bwd)


def concatenate(tensors, axis=-1):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return Tensor(out_data, _parents=tuple(tensors), _backward=bwd)


def pairwise_concat(f: Tensor) -> Tensor:
    """All ordered pairs of rows, concatenated featurewise.

    f has shape [..., N, D]; the result has shape [..., N, N, 2D] with
    out[..., i, j, :] = [f_i ; f_j]. Self-pairs (i, i) are included.
    """
    n, d = f.shape[-2:]
    out_data = np.empty(f.shape[:-2] + (n, n, 2 * d), dtype=f.dtype)
    out_data[..., :, :, :d] = np.expand_dims(f.data, -2)
    out_data[..., :, :, d:] = np.expand_dims(f.data, -3)

    def bwd(g):
        f._accum(g[..., :, :, :d].sum(axis=-2) + g[..., :, :, d:].sum(axis=-3))

    return Tensor(out_data, _parents=(f,), _backward=bwd)


def pairwise_linear(f: Tensor, weight: Tensor, bias: Tensor,
                    relu: bool = False) -> Tensor:
    """Dense layer applied to every ordered pair [f_i ; f_j] of rows.

    f has shape [..., N, D] and weight [out, 2D]; the result has shape
    [..., N, N, out] with out[..., i, j, :] = act(W [f_i ; f_j] + b).
    Equivalent to pairwise concatenation followed by `linear`, but the
    GEMMs run over N rows instead of N^2: W splits as [W1 | W2] and
    W [f_i ; f_j] = W1 f_i + W2 f_j, so only the broadcast add touches
    the pair grid.
    """
    d = f.shape[-1]
    if weight.data.shape[1] != 2 * d:
        raise DimensionError(
            f"pairwise_linear: rows {f.shape} do not match weight "
            f"{weight.data.shape}"
        )
    f2 = f.data.reshape(-1, d)
    left = (f2 @ weight.data[:, :d].T).reshape(f.shape[:-1] + (-1,))
    right = (f2 @ weight.data[:, d:].T).reshape(f.shape[:-1] + (-1,))
    out_data = np.expand_dims(left, -2) + np.expand_dims(right, -3)
    np.add(out_data, bias.data, out=out_data)
    if relu:
        np.maximum(out_data, 0, out=out_data)

    def bwd(g):
        if relu:
            g = g * (out_data > 0)
        gi = g.sum(axis=-2)  # grad through the left (i) half
        gj = g.sum(axis=-3)  # grad through the right (j) half
        out_w = weight.data.shape[0]
        gi2 = gi.reshape(-1, out_w)
        gj2 = gj.reshape(-1, out_w)
        if f.requires_grad:
            f._accum(
                (gi2 @ weight.data[:, :d] + gj2 @ weight.data[:, d:])
                .reshape(f.data.shape)
            )
        if weight.requires_grad:
            weight._accum(np.concatenate([gi2.T @ f2, gj2.T @ f2], axis=1))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, out_w).sum(axis=0))

    return Tensor(out_data, _parents=(f, weight, bias), _backward=bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor, relu: bool = False) -> Tensor:
    """y = x W^T + b along the trailing axis, leading axes preserved.

    Fused into one op (single GEMM each way, bias added in place) because
    dense layers dominate the training workload; `relu=True` folds the
    activation in as well.
    """
    in_w = weight.data.shape[1]
    if x.data.shape[-1] != in_w:
        raise DimensionError(
            f"linear: input {x.data.shape} does not match weight {weight.data.shape}"
        )
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, in_w)
    out2 = x2 @ weight.data.T
    np.add(out2, bias.data, out=out2)
    if relu:
        np.maximum(out2, 0, out=out2)
    out_data = out2.reshape(lead + (weight.data.shape[0],))

    def bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        if relu:
            g2 = g2 * (out2 > 0)
        if x.requires_grad:
            x._accum((g2 @ weight.data).reshape(x.data.shape))
        if weight.requires_grad:
            weight._accum(g2.T @ x2)
        if bias.requires_grad:
            bias._accum(g2.sum(axis=0))

    return Tensor(out_data, _parents=(x, weight, bias), _backward=bwd)


def group_norm_op(x: Tensor, gamma: Tensor, beta: Tensor, groups: int,
                  eps: float) -> Tensor:
    """Per-sample group normalization over the trailing channel axis.

    Each leading index is one sample; its channels are split into `groups`
    contiguous groups, normalized to zero mean / unit variance with that
    sample's own statistics, then scaled by gamma and shifted by beta.
    Fused forward/backward for speed; verified against finite differences.
    """
    c = x.data.shape[-1]
    if c % groups != 0:
        raise DimensionError(f"{c} channels not divisible by {groups} groups")
    m = c // groups
    lead = x.data.shape[:-1]
    xg = x.data.reshape(lead + (groups, m))
    mu = xg.mean(axis=-1, keepdims=True)
    centered = xg - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = (var + np.asarray(eps, dtype=x.dtype)) ** -0.5
    xhat = centered * inv_std
    out_data = xhat.reshape(x.data.shape) * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma._accum(
                (g * xhat.reshape(x.data.shape)).reshape(-1, c).sum(axis=0)
            )
        if beta.requires_grad:
            beta._accum(g.reshape(-1, c).sum(axis=0))
        if x.requires_grad:
            dxhat = (g * gamma.data).reshape(lead + (groups, m))
            term = (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
            )
            x._accum((term * inv_std).reshape(x.data.shape))

    return Tensor(out_data, _parents=(x, gamma, beta), _backward=bwd)


def band_multiply_pool(feats: Tensor, planes: Tensor, offset: float = 0.5) -> Tensor:
    """Mix per-band feature vectors into a per-pixel field and mean-pool.

    feats: [N, C] band feature vectors.
    planes: [N, H, W] or [B, N, H, W] reflectance rasters.
    Returns [H, W, C] (or [B, H, W, C]): at each pixel the mean over bands
    of (reflectance + offset) * feature_vector. No trainable parameters.
    """
    if planes.ndim not in (3, 4):
        raise DimensionError(f"planes must be [..., N, H, W], got {planes.shape}")
    n_axis = planes.ndim - 3
    if feats.ndim != 2 or feats.shape[0] != planes.shape[n_axis]:
        raise DimensionError(
            f"feats {feats.shape} incompatible with planes {planes.shape}"
        )
    n = feats.shape[0]
    c = feats.shape[1]
    batched = planes.ndim == 4
    h, w = planes.shape[-2:]
    shape2 = (planes.shape[0], n, h * w) if batched else (n, h * w)
    shifted = (planes.data + np.asarray(offset, dtype=planes.dtype)).reshape(shape2)
    # out[..., p, c] = mean_i shifted[..., i, p] * feats[i, c]: one GEMM
    out2 = np.swapaxes(shifted, -1, -2) @ feats.data / np.asarray(n, feats.dtype)
    out_shape = (planes.shape[0], h, w, c) if batched else (h, w, c)
    out_data = np.ascontiguousarray(out2).reshape(out_shape)

    def bwd(g):
        g2 = g.reshape(shape2[:-1][:-1] + (h * w, c)) if batched \
            else g.reshape(h * w, c)
        if feats.requires_grad:
            gf = shifted @ g2 / n
            feats._accum(gf.sum(axis=0) if batched else gf)
        if planes.requires_grad:
            gp = np.swapaxes(g2 @ feats.data.T, -1, -2) / n
            planes._accum(np.ascontiguousarray(gp).reshape(planes.data.shape))

    return Tensor(out_data, _parents=(feats, planes), _backward=bwd)


def bce_with_logits(logits: Tensor, targets: np.ndarray,
                    valid: np.ndarray | None = None) -> Tensor:
    """Mean binary cross-entropy from logits, restricted to `valid` elements.

    Numerically stable form; `targets` and `valid` are plain arrays (no
    gradient flows into them).
    """
    z = logits.data
    t = np.asarray(targets, dtype=z.dtype)
    if valid is None:
        valid = np.ones(z.shape, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise ContractError("bce_with_logits: no valid elements")
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out_data = np.asarray((per * valid).sum() / count, dtype=z.dtype)

    def bwd(g):
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        p[~pos] = ez / (1.0 + ez)
        logits._accum(g * (p - t) * valid / count)

    return Tensor(out_data, _parents=(logits,), _backward=bwd)
