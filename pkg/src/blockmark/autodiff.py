"""Reverse-mode differentiation for the fixed operator set the decoder needs.

A Var wraps a float64 numpy array and remembers how it was produced; calling
backward() on a scalar loss walks the recorded graph once and accumulates
gradients into .grad.  This is deliberately not a general autodiff system:
only the operators below exist, and every one of them is checked against
central finite differences in the test suite.
"""

import numpy as np

from . import backend


class ShapeError(ValueError):
    """Operand shapes incompatible for an operator."""


class GraphError(RuntimeError):
    """Gradient requested for a tensor that is not in the recorded graph."""


class Var:
    __slots__ = ("value", "grad", "_parents", "_bwd", "frozen")

    def __init__(self, value, parents=(), bwd=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._bwd = bwd
        # frozen leaves skip gradient accumulation (cheap way to avoid
        # computing decoder weight grads during the patch-only PGD passes)
        self.frozen = False

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if self.frozen:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g


def _shape_check(op, cond, detail):
    if not cond:
        raise ShapeError(f"{op}: {detail}")


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def backward(loss: Var):
    """Backpropagate from a scalar loss through the recorded graph."""
    if loss.value.ndim != 0:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.array(1.0)
    for node in reversed(order):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)


def grad_of(var: Var):
    """Gradient from the last backward pass; raise if var was not in the graph."""
    if var.grad is None:
        raise GraphError("gradient requested for a tensor not in the recorded graph")
    return var.grad


def zero_grads(variables):
    for v in variables:
        v.grad = None


# ---------------------------------------------------------------- operators

def conv3x3(x, w, b):
    """3x3 convolution, stride 1, zero padding, NHWC."""
    x, w, b = as_var(x), as_var(w), as_var(b)
    _shape_check("conv3x3", x.value.ndim == 4,
                 f"input must be NHWC, got shape {x.shape}")
    _shape_check("conv3x3", w.value.ndim == 4 and w.shape[:2] == (3, 3),
                 f"kernel must be (3,3,Cin,Cout), got shape {w.shape}")
    _shape_check("conv3x3", x.shape[3] == w.shape[2],
                 f"input channels {x.shape} vs kernel channels {w.shape}")
    _shape_check("conv3x3", b.shape == (w.shape[3],),
                 f"bias shape {b.shape} vs kernel out-channels {w.shape}")
    out = Var(backend.conv3x3_forward(x.value, w.value, b.value), (x, w, b))

    def bwd(g):
        x._accumulate(backend.conv3x3_input_grad(g, w.value))
        if not w.frozen:
            w._accumulate(backend.conv3x3_weight_grad(x.value, g))
        if not b.frozen:
            b._accumulate(g.sum(axis=(0, 1, 2)))

    out._bwd = bwd
    return out


def relu(x):
    x = as_var(x)
    out = Var(np.maximum(x.value, 0.0), (x,))
    mask = x.value > 0

    def bwd(g):
        x._accumulate(g * mask)

    out._bwd = bwd
    return out


def add(a, b):
    a, b = as_var(a), as_var(b)
    _shape_check("add", a.shape == b.shape,
                 f"operand shapes {a.shape} vs {b.shape}")
    out = Var(a.value + b.value, (a, b))

    def bwd(g):
        a._accumulate(g)
        b._accumulate(g)

    out._bwd = bwd
    return out


def add_const(x, c):
    """Add a fixed array (no gradient for c); used for additive noise."""
    x = as_var(x)
    c = np.asarray(c, dtype=np.float64)
    _shape_check("add_const", x.shape == c.shape,
                 f"operand shapes {x.shape} vs {c.shape}")
    out = Var(x.value + c, (x,))

    def bwd(g):
        x._accumulate(g)

    out._bwd = bwd
    return out


def channel_bias(x, c):
    """(N,H,W,C) + per-sample per-channel bias (N,C)."""
    x, c = as_var(x), as_var(c)
    _shape_check("channel_bias", x.value.ndim == 4 and c.value.ndim == 2,
                 f"operand shapes {x.shape} vs {c.shape}")
    _shape_check("channel_bias", x.shape[0] == c.shape[0] and x.shape[3] == c.shape[1],
                 f"operand shapes {x.shape} vs {c.shape}")
    out = Var(x.value + c.value[:, None, None, :], (x, c))

    def bwd(g):
        x._accumulate(g)
        c._accumulate(g.sum(axis=(1, 2)))

    out._bwd = bwd
    return out


def global_avg_pool(x):
    x = as_var(x)
    _shape_check("global_avg_pool", x.value.ndim == 4,
                 f"input must be NHWC, got shape {x.shape}")
    n, h, w, c = x.shape
    out = Var(x.value.mean(axis=(1, 2)), (x,))

    def bwd(g):
        x._accumulate(np.broadcast_to(g[:, None, None, :] / (h * w), (n, h, w, c)))

    out._bwd = bwd
    return out


def linear(x, w, b):
    x, w, b = as_var(x), as_var(w), as_var(b)
    _shape_check("linear", x.value.ndim == 2 and w.value.ndim == 2,
                 f"operand shapes {x.shape} vs {w.shape}")
    _shape_check("linear", x.shape[1] == w.shape[0],
                 f"input features {x.shape} vs weight shape {w.shape}")
    _shape_check("linear", b.shape == (w.shape[1],),
                 f"bias shape {b.shape} vs weight shape {w.shape}")
    out = Var(x.value @ w.value + b.value, (x, w, b))

    def bwd(g):
        x._accumulate(g @ w.value.T)
        if not w.frozen:
            w._accumulate(x.value.T @ g)
        if not b.frozen:
            b._accumulate(g.sum(axis=0))

    out._bwd = bwd
    return out


def softmax(x):
    """Row-wise softmax over the last axis."""
    x = as_var(x)
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Var(y, (x,))

    def bwd(g):
        x._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    out._bwd = bwd
    return out


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of integer labels under given probabilities."""
    probs = as_var(probs)
    labels = np.asarray(labels)
    _shape_check("cross_entropy", probs.value.ndim == 2,
                 f"probabilities must be (N,B), got shape {probs.shape}")
    _shape_check("cross_entropy", labels.shape == (probs.shape[0],),
                 f"labels shape {labels.shape} vs probabilities {probs.shape}")
    n = probs.shape[0]
    picked = probs.value[np.arange(n), labels]
    out = Var(-np.log(picked).mean(), (probs,))

    def bwd(g):
        d = np.zeros_like(probs.value)
        d[np.arange(n), labels] = -g / (picked * n)
        probs._accumulate(d)

    out._bwd = bwd
    return out


def softmax_cross_entropy(logits, labels):
    """Numerically stable fused softmax + mean cross-entropy."""
    logits = as_var(logits)
    labels = np.asarray(labels)
    _shape_check("softmax_cross_entropy", logits.value.ndim == 2,
                 f"logits must be (N,B), got shape {logits.shape}")
    _shape_check("softmax_cross_entropy", labels.shape == (logits.shape[0],),
                 f"labels shape {labels.shape} vs logits {logits.shape}")
    n = logits.shape[0]
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    out = Var((lse - z[np.arange(n), labels]).mean(), (logits,))
    probs = np.exp(z - lse[:, None])

    def bwd(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        logits._accumulate(g * d / n)

    out._bwd = bwd
    return out


def squared_error(pred, target):
    """Mean over the batch of the per-sample sum of squared differences."""
    pred = as_var(pred)
    target = np.asarray(target, dtype=np.float64)
    _shape_check("squared_error", pred.shape == target.shape,
                 f"operand shapes {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    diff = pred.value - target
    out = Var((diff * diff).sum() / n, (pred,))

    def bwd(g):
        pred._accumulate(g * 2.0 * diff / n)

    out._bwd = bwd
    return out


def spatial_linear(x, a, out_hw):
    """Apply a (Q,P) matrix to the flattened spatial axes of (N,H,W,C)."""
    x = as_var(x)
    a = np.asarray(a, dtype=np.float64)
    _shape_check("spatial_linear", x.value.ndim == 4,
                 f"input must be NHWC, got shape {x.shape}")
    n, h, w, c = x.shape
    _shape_check("spatial_linear", a.shape[1] == h * w,
                 f"matrix shape {a.shape} vs spatial size {(h, w)}")
    _shape_check("spatial_linear", a.shape[0] == out_hw[0] * out_hw[1],
                 f"matrix shape {a.shape} vs target spatial size {out_hw}")
    flat = x.value.reshape(n, h * w, c)
    y = np.einsum("qp,npc->nqc", a, flat)
    out = Var(y.reshape(n, out_hw[0], out_hw[1], c), (x,))

    def bwd(g):
        gf = g.reshape(n, -1, c)
        x._accumulate(np.einsum("qp,nqc->npc", a, gf).reshape(n, h, w, c))

    out._bwd = bwd
    return out


def channel_linear(x, m):
    """Apply a (C',C) matrix along the channel axis of (N,H,W,C)."""
    x = as_var(x)
    m = np.asarray(m, dtype=np.float64)
    _shape_check("channel_linear", x.value.ndim == 4,
                 f"input must be NHWC, got shape {x.shape}")
    _shape_check("channel_linear", m.shape[1] == x.shape[3],
                 f"matrix shape {m.shape} vs channels {x.shape}")
    out = Var(x.value @ m.T, (x,))

    def bwd(g):
        x._accumulate(g @ m)

    out._bwd = bwd
    return out


def clip01(x):
    """Clip to [0,1]; gradient is the exact a.e. derivative (mask)."""
    x = as_var(x)
    out = Var(np.clip(x.value, 0.0, 1.0), (x,))
    mask = (x.value > 0.0) & (x.value < 1.0)

    def bwd(g):
        x._accumulate(g * mask)

    out._bwd = bwd
    return out


def straight_through(x, fn):
    """Apply a non-differentiable array function with an identity gradient."""
    x = as_var(x)
    out = Var(fn(x.value), (x,))
    _shape_check("straight_through", out.shape == x.shape,
                 f"transform changed shape {x.shape} -> {out.shape}")

    def bwd(g):
        x._accumulate(g)

    out._bwd = bwd
    return out
