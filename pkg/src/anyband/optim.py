"""SGD with classical momentum and a reduce-on-plateau schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


class OptimizerState:
    """Per-parameter velocity plus the shared learning rate and momentum."""

    def __init__(self, params: list[Tensor], learning_rate: float,
                 momentum: float = 0.0):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = params
        self.velocity = [np.zeros_like(p.data) for p in params]
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)


def sgd_momentum_step(state: OptimizerState, grads=None):
    """v <- momentum * v - lr * g;  p <- p + v (classical momentum).

    With grads omitted, each parameter's accumulated `.grad` is used and
    then cleared.
    """
    for i, p in enumerate(state.params):
        g = grads[i] if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape}")
        v = state.velocity[i]
        v *= state.momentum
        v -= state.learning_rate * g.astype(p.data.dtype, copy=False)
        p.data = p.data + v
        if grads is None:
            p.grad = None


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale accumulated gradients in place so their global L2 norm is at
    most max_norm. Returns the pre-clip norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            g = p.grad.ravel()
            total += float(np.dot(g, g))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class PlateauSchedule:
    """Divide the learning rate when the epoch loss stops improving."""

    reduction_factor: float = 4.0
    min_lr: float = 2e-5
    patience_steps: int = 5
    rel_tol: float = 1e-3
    best_loss: float = field(default=float("inf"))
    bad_epochs: int = 0

    def update(self, learning_rate: float, epoch_loss: float) -> float:
        if not np.isfinite(epoch_loss):
            raise ValueError(f"epoch loss must be finite, got {epoch_loss}")
        if epoch_loss < self.best_loss * (1.0 - self.rel_tol):
            self.best_loss = epoch_loss
            self.bad_epochs = 0
            return learning_rate
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience_steps:
            self.bad_epochs = 0
            return max(learning_rate / self.reduction_factor, self.min_lr)
        return learning_rate


def plateau_update(sched: PlateauSchedule, learning_rate: float,
                   epoch_loss: float) -> float:
    return sched.update(learning_rate, epoch_loss)
