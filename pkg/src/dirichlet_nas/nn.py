"""Dense network primitives with hand-written backward passes.

Tensors are 2-D float64 numpy arrays (batch x features).  Each ``*_forward``
returns ``(out, cache)`` and the matching ``*_backward`` consumes the cache.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ContractError


def affine_forward(x, W, b):
    """y = x W^T + b with W of shape (out, in)."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ContractError(f"affine shapes x{x.shape} W{W.shape} b{b.shape}")
    return x @ W.T + b, (x, W)


def affine_backward(grad_out, cache):
    x, W = cache
    return grad_out @ W, grad_out.T @ x, grad_out.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, cache):
    return grad_out * cache


def scale_forward(x, c):
    return c * x, c


def scale_backward(grad_out, cache):
    return cache * grad_out


def zero_op(x):
    return np.zeros_like(x)


def identity_op(x):
    return x


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ContractError("labels out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


class ParamStore:
    """Named parameters with gradient buffers and optimizer state."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, dict[str, np.ndarray]] = {}
        self.steps: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray):
        value = np.asarray(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.reset_state(name)

    def reset_state(self, name: str):
        v = self.params[name]
        self.state[name] = {"mom": np.zeros_like(v), "m": np.zeros_like(v), "v": np.zeros_like(v)}
        self.steps[name] = 0

    def remove(self, name: str):
        for d in (self.params, self.grads, self.state, self.steps):
            d.pop(name, None)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def names(self, prefix: str = ""):
        return [k for k in self.params if k.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        return sum(self.params[k].size for k in self.names(prefix))

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params


def clip_grad_norm(store: ParamStore, max_norm: float, names=None) -> float:
    """Rescale gradients in place so their global L2 norm is at most max_norm."""
    names = names if names is not None else list(store.grads)
    total = float(np.sqrt(sum(np.sum(store.grads[k] ** 2) for k in names)))
    if max_norm and total > max_norm:
        for k in names:
            store.grads[k] *= max_norm / total
    return total


def sgd_momentum_step(store: ParamStore, lr: float, momentum: float = 0.9,
                      weight_decay: float = 0.0, names=None):
    for k in names if names is not None else list(store.params):
        g = store.grads[k]
        if weight_decay:
            g = g + weight_decay * store.params[k]
        buf = store.state[k]["mom"]
        buf *= momentum
        buf += g
        store.params[k] -= lr * buf


def adam_step(store: ParamStore, lr: float, b1: float = 0.9, b2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0, names=None):
    for k in names if names is not None else list(store.params):
        g = store.grads[k]
        if weight_decay:
            g = g + weight_decay * store.params[k]
        st = store.state[k]
        store.steps[k] += 1
        t = store.steps[k]
        st["m"] = b1 * st["m"] + (1 - b1) * g
        st["v"] = b2 * st["v"] + (1 - b2) * g * g
        m_hat = st["m"] / (1 - b1**t)
        v_hat = st["v"] / (1 - b2**t)
        store.params[k] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def cosine_lr(t: int, T: int, lr_max: float) -> float:
    if T <= 0:
        return lr_max
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * t / T))
