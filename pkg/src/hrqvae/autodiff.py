"""Small reverse-mode autodiff over numpy arrays.

Every op returns a new :class:`Tensor` holding its parents and a closure that
pushes the output gradient back to them. ``backward`` walks the tape in
reverse topological order. All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError, UsageError

__all__ = [
    "Tensor",
    "AdamState",
    "tensor",
    "linear_forward",
    "tanh",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "concat",
    "layer_norm",
    "gaussian_sample",
    "kl_to_standard_normal",
    "cross_entropy",
    "mse_sum",
    "adam_step",
]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)

        def back(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return Tensor(self.data + other.data, _parents=(self, other), _backward=back)

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: self._accumulate(-g))

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        other = _lift(other)

        def back(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor(self.data * other.data, _parents=(self, other), _backward=back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)

        def back(g):
            self._accumulate(_unbroadcast(g / other.data, self.shape))
            other._accumulate(_unbroadcast(-g * self.data / other.data**2, other.shape))

        return Tensor(self.data / other.data, _parents=(self, other), _backward=back)

    def __matmul__(self, other):
        other = _lift(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul shapes {self.shape} and {other.shape} do not agree")

        def back(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)

        return Tensor(self.data @ other.data, _parents=(self, other), _backward=back)

    @property
    def T(self):
        return Tensor(self.data.T, _parents=(self,), _backward=lambda g: self._accumulate(g.T))

    def square(self):
        return Tensor(
            self.data**2, _parents=(self,), _backward=lambda g: self._accumulate(2.0 * g * self.data)
        )

    def sum(self, axis=None, keepdims=False):
        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _backward=back)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))

    def __getitem__(self, index):
        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            self._accumulate(full)

        return Tensor(self.data[index], _parents=(self,), _backward=back)

    # graph ----------------------------------------------------------------

    def backward(self):
        """Populate ``.grad`` of every tensor this scalar depends on."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar root, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # free the tape; leaves keep their grads
        for node in order:
            if node._parents:
                node._parents = ()
                node._backward = None


def _lift(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def linear_forward(x, W, b):
    """``x @ W + b`` for a batch of rows."""
    x, W, b = _lift(x), _lift(W), _lift(b)
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1:
        raise ShapeError("linear_forward expects x[n,in], W[in,out], b[out]")
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"linear_forward shapes x{x.shape} W{W.shape} b{b.shape} disagree")
    return x @ W + b


def tanh(x):
    out = np.tanh(x.data)
    return Tensor(out, _parents=(x,), _backward=lambda g: x._accumulate(g * (1.0 - out**2)))


def exp(x):
    out = np.exp(x.data)
    return Tensor(out, _parents=(x,), _backward=lambda g: x._accumulate(g * out))


def log(x):
    return Tensor(np.log(x.data), _parents=(x,), _backward=lambda g: x._accumulate(g / x.data))


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor(out, _parents=(x,), _backward=back)


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def back(g):
        x._accumulate(g - probs * g.sum(axis=axis, keepdims=True))

    return Tensor(out, _parents=(x,), _backward=back)


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors), _backward=back
    )


LAYER_NORM_EPS = 1e-6


def layer_norm(x):
    """Normalise each row to zero mean and unit mean-square (no affine part)."""
    centred = x.data - x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + LAYER_NORM_EPS)
    out = centred * inv

    def back(g):
        n = x.shape[-1]
        gm = g - g.mean(axis=-1, keepdims=True)
        x._accumulate(inv * (gm - out * (g * out).sum(axis=-1, keepdims=True) / n))

    return Tensor(out, _parents=(x,), _backward=back)


def gaussian_sample(mu, log_sigma, rng):
    """Reparameterised draw ``mu + exp(log_sigma) * eps`` with ``eps ~ N(0, I)``."""
    mu, log_sigma = _lift(mu), _lift(log_sigma)
    if mu.shape != log_sigma.shape:
        raise ShapeError(f"mu{mu.shape} and log_sigma{log_sigma.shape} differ")
    eps = rng.standard_normal(mu.shape)
    return mu + exp(log_sigma) * eps


def kl_to_standard_normal(mu, log_sigma):
    """KL(N(mu, sigma^2) || N(0, I)) summed over components.

    A 2-d input is treated as a batch of rows and the per-row KL is averaged.
    """
    mu, log_sigma = _lift(mu), _lift(log_sigma)
    if mu.shape != log_sigma.shape:
        raise ShapeError(f"mu{mu.shape} and log_sigma{log_sigma.shape} differ")
    terms = (mu.square() + exp(2.0 * log_sigma) - 1.0 - 2.0 * log_sigma) * 0.5
    total = terms.sum()
    if mu.ndim == 2:
        total = total * (1.0 / max(mu.shape[0], 1))
    return total


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    logits = _lift(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy needs logits[n,K] and n targets, got {logits.shape}")
    K = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= K):
        raise IndexError(f"targets must lie in [0, {K})")
    logp = log_softmax(logits, axis=1)
    picked = logp[np.arange(len(targets)), targets]
    return -picked.mean()


def mse_sum(pred, target):
    """Squared error summed over features, averaged over rows."""
    pred, target = _lift(pred), _lift(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    err = (pred - target).square().sum()
    return err * (1.0 / max(pred.shape[0], 1)) if pred.ndim == 2 else err


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update in place.

    ``params`` and ``grads`` are dicts of arrays keyed by parameter name. A
    missing gradient counts as zero.
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        if g.shape != value.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, expected {value.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
