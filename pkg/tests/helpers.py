"""Shared test oracles, independent of the library's own compute paths."""

from __future__ import annotations

import numpy as np


def triple_loop_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Scalar triple loop, accumulating over k left to right."""
    m, inner = a.shape
    n = b.shape[1]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(inner):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def central_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Elementwise central finite differences of scalar f at x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Element-wise |a - n| / max(|a|, |n|, 1); unit floor keeps tiny
    gradients from inflating the ratio."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))


def direct_qwk(gold, pred, k: int) -> float:
    """Independent QWK: explicit histogram loops, no shared code."""
    gold = list(gold)
    pred = list(pred)
    n = len(gold)
    hist_g = [0] * k
    hist_p = [0] * k
    for g in gold:
        hist_g[g - 1] += 1
    for p in pred:
        hist_p[p - 1] += 1
    num = 0.0
    for g, p in zip(gold, pred):
        num += ((g - p) ** 2) / (k - 1) ** 2
    den = 0.0
    for i in range(k):
        for j in range(k):
            den += ((i - j) ** 2) / (k - 1) ** 2 * hist_g[i] * hist_p[j] / n
    if den == 0.0:
        return 1.0 if all(g == p for g, p in zip(gold, pred)) else 0.0
    return 1.0 - num / den
