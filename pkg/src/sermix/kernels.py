"""Dense numerical kernels with explicit forward and analytic backward passes.

Everything here is plain float64 numpy: linear maps, row softmax,
multi-head self-attention with a residual connection, learned
frame-attention pooling, and the max/mean pooling baselines. Each backward
pass is hand-derived and checked against central finite differences by
:func:`grad_check`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ShapeMismatch


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# --- linear layer ---

def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w + b, with b broadcast over rows."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"linear: x has {x.shape[-1]} columns, w expects {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeMismatch(f"linear: bias shape {b.shape} does not match {w.shape[1]} outputs")
    return x @ w + b


def linear_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of a linear layer given upstream dy."""
    if dy.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"linear backward: dy has {dy.shape[-1]} columns, expected {w.shape[1]}")
    dx = dy @ w.T
    if x.ndim == 1:
        dw = np.outer(x, dy)
        db = dy.copy()
    else:
        dw = x.T @ dy
        db = dy.sum(axis=0)
    return dx, dw, db


# --- softmax ---

def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_vjp(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward of softmax_rows: y is the forward output."""
    inner = (dy * y).sum(axis=-1, keepdims=True)
    return y * (dy - inner)


# --- multi-head self-attention with residual ---

@dataclass
class MsaParams:
    """Per-head q/k/v projections (H, D, D//H) and output projection (D, D)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    @property
    def n_heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def dim(self) -> int:
        return self.w_q.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, n_heads: int) -> "MsaParams":
        if dim % n_heads != 0:
            raise ShapeMismatch(f"dim {dim} not divisible by {n_heads} heads")
        head_dim = dim // n_heads
        def proj():
            return glorot_uniform(rng, (n_heads, dim, head_dim), dim, head_dim)
        return cls(
            w_q=proj(),
            w_k=proj(),
            w_v=proj(),
            w_o=glorot_uniform(rng, (dim, dim), dim, dim),
        )

    @classmethod
    def zeros(cls, dim: int, n_heads: int) -> "MsaParams":
        head_dim = dim // n_heads
        return cls(
            w_q=np.zeros((n_heads, dim, head_dim)),
            w_k=np.zeros((n_heads, dim, head_dim)),
            w_v=np.zeros((n_heads, dim, head_dim)),
            w_o=np.zeros((dim, dim)),
        )


@dataclass
class MsaCache:
    x: np.ndarray
    q: np.ndarray        # (H, T, head_dim)
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray     # (H, T, T), rows sum to 1
    concat: np.ndarray   # (T, D)


def msa_forward(x: np.ndarray, p: MsaParams) -> tuple[np.ndarray, MsaCache]:
    """x + MultiHead(x): scaled dot-product attention per head, concatenated
    through the output projection, added back onto the input."""
    t, dim = x.shape
    if dim != p.dim:
        raise ShapeMismatch(f"input dim {dim} does not match parameters ({p.dim})")
    head_dim = dim // p.n_heads
    q = np.einsum("td,hde->hte", x, p.w_q)
    k = np.einsum("td,hde->hte", x, p.w_k)
    v = np.einsum("td,hde->hte", x, p.w_v)
    scores = np.einsum("hte,hse->hts", q, k) / math.sqrt(head_dim)
    attn = softmax_rows(scores)
    heads = np.einsum("hts,hse->hte", attn, v)          # (H, T, head_dim)
    concat = heads.transpose(1, 0, 2).reshape(t, dim)
    out = x + concat @ p.w_o
    return out, MsaCache(x=x, q=q, k=k, v=v, attn=attn, concat=concat)


def msa_backward(
    p: MsaParams, cache: MsaCache, dout: np.ndarray
) -> tuple[np.ndarray, MsaParams]:
    """Gradients of msa_forward w.r.t. the input and all four projections."""
    t, dim = cache.x.shape
    n_heads = p.n_heads
    head_dim = dim // n_heads
    scale = 1.0 / math.sqrt(head_dim)

    dx = dout.copy()                                    # residual branch
    dconcat = dout @ p.w_o.T
    dw_o = cache.concat.T @ dout

    dheads = dconcat.reshape(t, n_heads, head_dim).transpose(1, 0, 2)
    dattn = np.einsum("hte,hse->hts", dheads, cache.v)
    dv = np.einsum("hts,hte->hse", cache.attn, dheads)
    dscores = softmax_rows_vjp(cache.attn, dattn) * scale
    dq = np.einsum("hts,hse->hte", dscores, cache.k)
    dk = np.einsum("hts,hte->hse", dscores, cache.q)

    dx += np.einsum("hte,hde->td", dq, p.w_q)
    dx += np.einsum("hte,hde->td", dk, p.w_k)
    dx += np.einsum("hte,hde->td", dv, p.w_v)
    grads = MsaParams(
        w_q=np.einsum("td,hte->hde", cache.x, dq),
        w_k=np.einsum("td,hte->hde", cache.x, dk),
        w_v=np.einsum("td,hte->hde", cache.x, dv),
        w_o=dw_o,
    )
    return dx, grads


# --- pooling ---

@dataclass
class PoolParams:
    """FC layer producing one attention weight per frame."""

    weight: np.ndarray   # (D,)
    bias: np.ndarray     # (1,)

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int) -> "PoolParams":
        return cls(weight=glorot_uniform(rng, (dim,), dim, 1), bias=np.zeros(1))


@dataclass
class PoolCache:
    x: np.ndarray
    logits: np.ndarray   # raw per-frame scores
    weights: np.ndarray  # scores actually applied (softmaxed when enabled)
    use_softmax: bool


def attention_pool_forward(
    x: np.ndarray, p: PoolParams, use_softmax: bool = False
) -> tuple[np.ndarray, PoolCache]:
    """Aggregate frames as f = x^T a with a = x @ weight + bias.

    By default the per-frame scores are applied as-is; with
    ``use_softmax`` they are normalized over frames first.
    """
    if x.shape[1] != p.weight.shape[0]:
        raise ShapeMismatch(f"pool: {x.shape[1]} columns vs weight of {p.weight.shape[0]}")
    logits = x @ p.weight + p.bias[0]
    weights = softmax_rows(logits) if use_softmax else logits
    return x.T @ weights, PoolCache(x=x, logits=logits, weights=weights, use_softmax=use_softmax)


def attention_pool_backward(
    p: PoolParams, cache: PoolCache, df: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dweight, dbias) of attention_pool_forward."""
    dweights = cache.x @ df
    dx = np.outer(cache.weights, df)
    if cache.use_softmax:
        dlogits = softmax_rows_vjp(cache.weights, dweights)
    else:
        dlogits = dweights
    dx += np.outer(dlogits, p.weight)
    dweight = cache.x.T @ dlogits
    dbias = np.array([dlogits.sum()])
    return dx, dweight, dbias


def max_pool(x: np.ndarray) -> np.ndarray:
    """Columnwise max over frames."""
    return x.max(axis=0)


def max_pool_backward(x: np.ndarray, df: np.ndarray) -> np.ndarray:
    """Route each column's gradient to its (first) maximal frame."""
    dx = np.zeros_like(x)
    idx = x.argmax(axis=0)
    dx[idx, np.arange(x.shape[1])] = df
    return dx


def mean_pool(x: np.ndarray) -> np.ndarray:
    """Columnwise mean over frames."""
    return x.mean(axis=0)


def mean_pool_backward(x: np.ndarray, df: np.ndarray) -> np.ndarray:
    return np.broadcast_to(df / x.shape[0], x.shape).copy()


# --- finite-difference gradient checking ---

@dataclass
class GradCheckReport:
    """Worst-case relative disagreement between analytic and numeric grads."""

    max_rel_error: float
    tol: float
    worst_param: str = ""
    worst_index: tuple = ()
    per_param: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(
    fn: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare fn's analytic gradients against central differences.

    ``fn`` maps a dict of parameter arrays to (scalar value, gradient dict
    of matching shapes). Every coordinate of every array is perturbed by
    +-h; disagreement is reported as |a - n| / max(|a|, |n|, 1e-8).
    """
    params = {name: np.array(v, dtype=np.float64) for name, v in params.items()}
    _, analytic = fn(params)
    report = GradCheckReport(max_rel_error=0.0, tol=tol)
    for name, value in params.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != value.shape:
            raise ShapeMismatch(f"gradient for {name!r} has shape {grad.shape}, expected {value.shape}")
        worst = 0.0
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus, _ = fn(params)
            flat[i] = orig - h
            minus, _ = fn(params)
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * h)
            a = grad.reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_param = name
                report.worst_index = np.unravel_index(i, value.shape) if value.shape else ()
        report.per_param[name] = worst
    return report
