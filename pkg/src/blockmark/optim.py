"""The two optimizers: momentum SGD for decoder parameters, signed-gradient
projected descent for the watermark patches."""

import numpy as np

from .autodiff import ShapeError, Var


class NonFiniteGradient(RuntimeError):
    """A gradient contained NaN/Inf; the optimizer step was rejected."""


class MomentumSGD:
    """v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v.

    Weight decay enters as an additive gradient term (classic L2 coupling),
    not in decoupled form.
    """

    def __init__(self, params, lr=0.01, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocities = [np.zeros_like(p.value) for p in self.params]

    def step(self, batch_index=None):
        for p, v in zip(self.params, self.velocities):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.value.shape:
                raise ShapeError(
                    f"sgd_step: gradient shape {g.shape} vs parameter shape {p.value.shape}"
                )
            if not np.all(np.isfinite(g)):
                where = "" if batch_index is None else f" at batch {batch_index}"
                raise NonFiniteGradient(f"non-finite gradient{where}; step rejected")
            v *= self.momentum
            v += g
            if self.weight_decay:
                v += self.weight_decay * p.value
            p.value -= self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def sgd_step(param, grad, velocity, lr, momentum, weight_decay=0.0):
    """Single-array momentum-SGD update; returns (new_param, new_velocity)."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or param.shape != np.shape(velocity):
        raise ShapeError(
            f"sgd_step: shapes param {param.shape}, grad {grad.shape}, "
            f"velocity {np.shape(velocity)} must match"
        )
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("non-finite gradient; step rejected")
    v = momentum * np.asarray(velocity, dtype=np.float64) + grad + weight_decay * param
    return param - lr * v, v


def pgd_step(patch, grad, step, epsilon):
    """One signed-gradient descent step projected onto the l-inf ball.

    sign(0) is taken as 0, so zero-gradient coordinates do not drift.
    """
    patch = np.asarray(patch, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if isinstance(grad, Var):  # pragma: no cover - guarded by asarray above
        grad = grad.value
    if patch.shape != grad.shape:
        raise ShapeError(f"pgd_step: patch shape {patch.shape} vs grad shape {grad.shape}")
    if epsilon <= 0:
        raise ValueError("pgd_step: epsilon must be positive")
    return np.clip(patch - step * np.sign(grad), -epsilon, epsilon)
