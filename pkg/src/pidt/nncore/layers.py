"""Network building blocks over :mod:`pidt.nncore.tensor`."""

import math

import numpy as np

from ..errors import ConfigurationError, ShapeError
from . import tensor as T
from .tensor import Tensor

LN_EPS = 1e-9


def glorot_uniform(rng, fan_in, fan_out) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def forward_dense(x, weights, bias=None) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``."""
    x = T.as_tensor(x)
    w = T.as_tensor(weights)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense input {x.shape} does not match weights {w.shape}")
    lead = x.shape[:-1]
    y = T.reshape(x, (-1, x.shape[-1])) @ w
    if bias is not None:
        y = y + bias
    return T.reshape(y, lead + (w.shape[1],))


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = T.as_tensor(x)
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + T.tanh(c * (x + 0.044715 * x * x * x)))


def softmax(x, axis=-1) -> Tensor:
    x = T.as_tensor(x)
    shift = x.data.max(axis=axis, keepdims=True)
    e = T.exp(x - shift)
    return e / T.tsum(e, axis, keepdims=True)


def layer_norm(x, gamma=None, beta=None, eps=LN_EPS) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    x = T.as_tensor(x)
    mu = T.mean(x, -1, keepdims=True)
    xc = x - mu
    var = T.mean(xc * xc, -1, keepdims=True)
    y = xc / T.sqrt(var + eps)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


def mse(pred, target) -> Tensor:
    d = T.as_tensor(pred) - target
    return T.mean(d * d)


def masked_max(x, valid, axis) -> Tensor:
    """Max over ``axis`` restricted to ``valid`` entries; zero where none are valid.

    ``valid`` has the shape of ``x`` without its trailing feature axis, and
    ``axis`` is a negative axis of ``x`` other than the feature axis.
    """
    if axis >= -1:
        raise ShapeError("masked_max pools over a negative axis before the feature axis")
    valid = np.asarray(valid, bool)
    filled = T.where(valid[..., None], x, -1e9)
    m = T.amax(filled, axis=axis)
    any_valid = np.any(valid, axis=axis + 1)[..., None]
    return T.where(any_valid, m, 0.0)


class Module:
    """Base for layers whose parameters live in a shared :class:`ParamStore`."""

    def __init__(self, store, name):
        self.store = store
        self.name = name

    def param(self, suffix, init):
        return self.store.add(f"{self.name}.{suffix}", init)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    def __init__(self, store, name, fan_in, fan_out, rng, zero_init=False):
        super().__init__(store, name)
        w = np.zeros((fan_in, fan_out)) if zero_init else glorot_uniform(rng, fan_in, fan_out)
        self.w = self.param("w", w)
        self.b = self.param("b", np.zeros(fan_out))

    def forward(self, x):
        return forward_dense(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, store, name, dim):
        super().__init__(store, name)
        self.gamma = self.param("gamma", np.ones(dim))
        self.beta = self.param("beta", np.zeros(dim))

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta)


class Mlp(Module):
    """Dense layers with GELU between them (none after the last)."""

    def __init__(self, store, name, sizes, rng, activation=gelu):
        super().__init__(store, name)
        self.layers = [Dense(store, f"{name}.{i}", a, b, rng) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.activation = activation

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return x


def causal_attention(x, wq, wk, wv, wo, heads, bq=None, bk=None, bv=None, bo=None) -> Tensor:
    """Multi-head scaled dot-product self-attention; token i sees tokens 0..i.

    Args:
        x: ``(batch, tokens, dim)``.
        wq, wk, wv, wo: ``(dim, dim)`` projections.
        heads: number of heads; must divide ``dim``.

    Returns:
        Tensor of the same shape as ``x``.
    """
    x = T.as_tensor(x)
    b, n, d = x.shape
    if d % heads:
        raise ConfigurationError(f"dim {d} is not divisible by {heads} heads")
    hd = d // heads

    def split(t):
        return T.reshape(t, (b, n, heads, hd)).transpose(0, 2, 1, 3)

    q = split(forward_dense(x, wq, bq))
    k = split(forward_dense(x, wk, bk))
    v = split(forward_dense(x, wv, bv))
    scores = (q @ k.T) * (1.0 / math.sqrt(hd))
    mask = np.triu(np.full((n, n), -1e9), k=1)
    att = softmax(scores + mask, axis=-1)
    y = (att @ v).transpose(0, 2, 1, 3)
    return forward_dense(T.reshape(y, (b, n, d)), wo, bo)


class CausalSelfAttention(Module):
    def __init__(self, store, name, dim, heads, rng):
        super().__init__(store, name)
        if dim % heads:
            raise ConfigurationError(f"dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Dense(store, f"{name}.q", dim, dim, rng)
        self.k = Dense(store, f"{name}.k", dim, dim, rng)
        self.v = Dense(store, f"{name}.v", dim, dim, rng)
        self.o = Dense(store, f"{name}.o", dim, dim, rng)

    def forward(self, x):
        return causal_attention(
            x, self.q.w, self.k.w, self.v.w, self.o.w, self.heads, self.q.b, self.k.b, self.v.b, self.o.b
        )


class TransformerBlock(Module):
    """Pre-norm block: attention and a 4x GELU MLP, each with a residual."""

    def __init__(self, store, name, dim, heads, rng):
        super().__init__(store, name)
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.att = CausalSelfAttention(store, f"{name}.att", dim, heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.mlp = Mlp(store, f"{name}.mlp", [dim, 4 * dim, dim], rng)

    def forward(self, x):
        x = x + self.att(self.ln1(x))
        return x + self.mlp(self.ln2(x))
