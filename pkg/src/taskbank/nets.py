"""Tiny MLP toolkit: explicit forward/backward passes and Adam.

Parameters are plain lists of numpy arrays [W1, b1, W2, b2, ...]; tanh on
every layer but the last. Written by hand so gradients can be checked
against finite differences and no DL framework is needed.
"""

from __future__ import annotations

import numpy as np


def orthogonal(rng: np.random.Generator, shape, gain: float = 1.0) -> np.ndarray:
    a = rng.normal(0.0, 1.0, shape)
    if a.ndim != 2:
        raise ValueError("orthogonal init expects a 2-D shape")
    rows, cols = shape
    flat = a if rows >= cols else a.T
    q, r = np.linalg.qr(flat)
    # sign-correct so the decomposition is unique
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(rng: np.random.Generator, sizes, out_gain: float = 1.0) -> list:
    """sizes = (d_in, h1, ..., d_out); hidden layers get gain sqrt(2)."""
    params = []
    for k in range(len(sizes) - 1):
        last = k == len(sizes) - 2
        gain = out_gain if last else np.sqrt(2.0)
        params.append(orthogonal(rng, (sizes[k], sizes[k + 1]), gain))
        params.append(np.zeros(sizes[k + 1]))
    return params


def mlp_forward(params: list, x: np.ndarray):
    """Returns (output (B, d_out), cache for mlp_backward)."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    hs = [h]
    n_layers = len(params) // 2
    for k in range(n_layers):
        w, b = params[2 * k], params[2 * k + 1]
        z = h @ w + b
        h = z if k == n_layers - 1 else np.tanh(z)
        hs.append(h)
    return h, hs


def mlp_backward(params: list, cache: list, dy: np.ndarray):
    """Gradients of sum(dy * output) w.r.t. params and input.

    cache is the `hs` list from mlp_forward. Returns (grads, dx) with grads
    shaped like params.
    """
    n_layers = len(params) // 2
    grads = [None] * len(params)
    g = np.asarray(dy, dtype=np.float64)
    for k in range(n_layers - 1, -1, -1):
        h_in, h_out = cache[k], cache[k + 1]
        if k != n_layers - 1:
            g = g * (1.0 - h_out * h_out)  # through tanh
        grads[2 * k] = h_in.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ params[2 * k].T
    return grads, g


def flatten(arrays) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


def unflatten_like(vec: np.ndarray, like) -> list:
    out = []
    k = 0
    for a in like:
        n = a.size
        out.append(np.asarray(vec[k:k + n], dtype=np.float64).reshape(a.shape).copy())
        k += n
    if k != vec.size:
        raise ValueError("flat vector length does not match the template")
    return out


class Adam:
    """Adam on a flat parameter vector; state is part of the object."""

    def __init__(self, dim: int, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def finite_difference_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function; the gradcheck oracle."""
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2.0 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(num / den)
