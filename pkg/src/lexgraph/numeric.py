"""Dense float64 kernels with hand-derived gradients and an Adam optimizer.

Everything here is single-threaded numpy with a fixed accumulation order,
so repeated calls on identical inputs are bitwise identical. `matmul`
deliberately avoids BLAS: it accumulates over the inner dimension in
sequence, which reproduces a scalar triple loop exactly (BLAS kernels use
FMA contraction and do not).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Parameter sets and their gradients are plain dicts keyed by tensor name.
ParamDict = dict[str, np.ndarray]
GradBuffer = dict[str, np.ndarray]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def tensor2d(data, checked: bool = True) -> np.ndarray:
    """Coerce `data` to a contiguous float64 matrix.

    In checked mode non-finite entries are rejected outright; unchecked
    skips the scan for hot paths that already guarantee finiteness.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d tensor, got shape {arr.shape}")
    if checked and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf entries")
    return arr


def zeros_like_params(params: ParamDict) -> GradBuffer:
    """Fresh zeroed gradient buffer shape-matched to `params`."""
    return {k: np.zeros_like(v) for k, v in params.items()}


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with sequential accumulation over the inner axis.

    Equivalent, bit for bit, to `out[i,j] = sum_k a[i,k]*b[k,j]` evaluated
    left to right with separately rounded multiply and add.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    m, inner = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    tmp = np.empty((m, n), dtype=np.float64)
    for k in range(inner):
        np.multiply(a[:, k, None], b[k], out=tmp)
        np.add(out, tmp, out=out)
    return out


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pass upstream where x > 0; subgradient at exactly 0 is 0."""
    return np.where(x > 0.0, upstream, 0.0)


@dataclass
class LayerNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray  # (rows, 1)
    gamma: np.ndarray


def layer_norm_forward(x, gamma, beta, eps: float = 1e-5):
    """Per-row standardization (population variance) then affine scale/shift."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if gamma.shape[-1] != x.shape[1] or beta.shape[-1] != x.shape[1]:
        raise ShapeError(
            f"gamma/beta width {gamma.shape[-1]}/{beta.shape[-1]} != cols {x.shape[1]}"
        )
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = gamma * x_hat + beta
    return out, LayerNormCache(x_hat=x_hat, inv_std=inv_std, gamma=gamma)


def layer_norm_backward(cache: LayerNormCache, upstream):
    """Gradients of the row-wise layer norm for x, gamma and beta.

    Uses the usual closed form: with d = cols and g = upstream * gamma,
    dx = inv_std/d * (d*g - sum(g) - x_hat * sum(g*x_hat)).
    """
    x_hat, inv_std, gamma = cache.x_hat, cache.inv_std, cache.gamma
    d = x_hat.shape[1]
    dbeta = upstream.sum(axis=0)
    dgamma = (upstream * x_hat).sum(axis=0)
    g = upstream * gamma
    dx = (inv_std / d) * (
        d * g
        - g.sum(axis=1, keepdims=True)
        - x_hat * (g * x_hat).sum(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None):
    """Mean negative log-likelihood over masked rows.

    Returns (loss, grad) where grad is (softmax - onehot) / masked_count on
    masked rows and zero elsewhere. `targets` are class indices.
    """
    n, k = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} != ({n},)")
    if mask is None:
        mask = np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"mask shape {mask.shape} != ({n},)")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("no training rows: mask selects nothing")
    t = targets[rows]
    if t.min() < 0 or t.max() >= k:
        raise ValueError(f"target index out of range [0, {k})")

    sel = logits[rows]
    shifted = sel - sel.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    nll = logsumexp - shifted[np.arange(rows.size), t]
    loss = float(nll.mean())

    probs = softmax_rows(sel)
    probs[np.arange(rows.size), t] -= 1.0
    grad = np.zeros_like(logits)
    grad[rows] = probs / rows.size
    return loss, grad


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: GradBuffer = field(default_factory=dict)
    v: GradBuffer = field(default_factory=dict)


def adam_init(params: ParamDict, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    if lr <= 0:
        raise ValueError("lr must be positive")
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
        m=zeros_like_params(params), v=zeros_like_params(params),
    )


def adam_step(params: ParamDict, grads: GradBuffer, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on `params`."""
    if set(grads) != set(params):
        raise ShapeError("gradient keys do not match parameter keys")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for key in sorted(params):
        p, g = params[key], grads[key]
        if p.shape != g.shape:
            raise ShapeError(f"{key}: param shape {p.shape} != grad shape {g.shape}")
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
