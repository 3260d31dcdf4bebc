"""Attention kernels: full softmax, low-rank projected and ReLU-kernel linear.

Every kernel takes ``q, k, v`` arrays of shape ``(..., N, d)``; leading axes
(heads, batch) broadcast. Softmax paths scale scores by ``1/sqrt(d)``. The
efficient paths (:func:`linformer_attention`, :func:`cosformer_attention`)
never build an ``N x N`` array; each intermediate goes through the allocation
probe so the benchmark can check that.

Backward passes recompute the forward from the same inputs and return
gradients of ``L = <grad_out, out>``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .bias import FeatureExpansion
from .probe import release, track

logger = logging.getLogger(__name__)

DEGENERATE_EPS = 1e-12

VARIANTS = ("full", "biased", "linformer", "cosformer")


@dataclass(frozen=True)
class AttentionOutput:
    out: np.ndarray
    attn: np.ndarray | None = None
    degenerate_rows: int = 0


@dataclass(frozen=True)
class ProjectionPair:
    """Sequence-axis projections ``pk, pv`` of shape ``(k, N)``."""

    pk: np.ndarray
    pv: np.ndarray

    def __post_init__(self):
        pk = np.asarray(self.pk)
        pv = np.asarray(self.pv)
        if pk.ndim != 2 or pk.shape != pv.shape:
            raise ValueError(f"projection shapes differ or are not 2-D: {pk.shape} vs {pv.shape}")
        k, n = pk.shape
        if not 1 <= k <= n:
            raise ValueError(f"projected length k={k} must satisfy 1 <= k <= N={n}")
        _require_finite("pk", pk)
        _require_finite("pv", pv)
        object.__setattr__(self, "pk", pk)
        object.__setattr__(self, "pv", pv)

    @property
    def k(self) -> int:
        return self.pk.shape[0]

    @classmethod
    def identity(cls, n: int) -> "ProjectionPair":
        eye = np.eye(n)
        return cls(eye, eye.copy())


def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


def _check_inputs(q, k, v):
    arrays = []
    for name, arr in (("Q", q), ("K", k), ("V", v)):
        arr = np.asarray(arr)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.ndim < 2:
            raise ValueError(f"{name} must have shape (..., N, d), got {arr.shape}")
        _require_finite(name, arr)
        arrays.append(arr)
    q, k, v = arrays
    if q.shape[-2:] != k.shape[-2:] or q.shape[-2] != v.shape[-2]:
        raise ValueError(f"Q, K, V disagree on (N, d): {q.shape}, {k.shape}, {v.shape}")
    return q, k, v


def _softmax_inplace(scores: np.ndarray) -> np.ndarray:
    row_max = track(scores.max(axis=-1, keepdims=True))
    scores -= row_max
    np.exp(scores, out=scores)
    row_sum = scores.sum(axis=-1, keepdims=True)
    scores /= row_sum
    release(row_max)
    return scores


def _softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def _scores(q, k):
    scale = 1.0 / math.sqrt(q.shape[-1])
    s = track(np.matmul(q, np.swapaxes(k, -1, -2)))
    s *= scale
    return s


def full_attention(q, k, v) -> AttentionOutput:
    q, k, v = _check_inputs(q, k, v)
    attn = _softmax_inplace(_scores(q, k))
    out = track(attn @ v)
    return AttentionOutput(out, attn)


def _check_bias(bias, n: int) -> np.ndarray:
    bias = np.asarray(bias)
    if not np.issubdtype(bias.dtype, np.floating):
        bias = bias.astype(np.float64)
    if bias.shape[-2:] != (n, n):
        raise ValueError(f"bias must be {n}x{n}, got {bias.shape}")
    _require_finite("bias", bias)
    if bias.min() < 0.0 or bias.max() > 1.0:
        raise ValueError("bias entries must lie in [0, 1]")
    return bias


def biased_full_attention(q, k, v, bias, renormalize: bool = True) -> AttentionOutput:
    """``(softmax(QK^T) * B) V``; with ``renormalize`` the biased rows re-sum to 1."""
    q, k, v = _check_inputs(q, k, v)
    bias = _check_bias(bias, q.shape[-2])
    attn = _softmax_inplace(_scores(q, k))
    attn *= bias
    if renormalize:
        row_sum = attn.sum(axis=-1, keepdims=True)
        attn /= np.where(row_sum > 0, row_sum, 1.0)
    out = track(attn @ v)
    return AttentionOutput(out, attn)


def _check_projection(proj: ProjectionPair, n: int) -> None:
    if not isinstance(proj, ProjectionPair):
        raise TypeError("proj must be a ProjectionPair")
    if proj.pk.shape[1] != n:
        raise ValueError(f"projection expects N={proj.pk.shape[1]}, input has N={n}")


def linformer_attention(q, k, v, proj: ProjectionPair, return_attn: bool = False) -> AttentionOutput:
    q, k, v = _check_inputs(q, k, v)
    _check_projection(proj, q.shape[-2])
    k_proj = track(proj.pk @ k)
    v_proj = track(proj.pv @ v)
    attn = _softmax_inplace(_scores(q, k_proj))
    out = track(attn @ v_proj)
    release(k_proj, v_proj)
    if not return_attn:
        release(attn)
        attn = None
    return AttentionOutput(out, attn)


def _expansion_arrays(expansion: FeatureExpansion | None, n: int):
    if expansion is None:
        return None, None
    g = np.asarray(expansion.g)
    h = np.asarray(expansion.h)
    if g.shape != h.shape or g.ndim != 2 or g.shape[1] != n:
        raise ValueError(f"expansion multipliers must have shape (terms, {n}), got {g.shape} / {h.shape}")
    return g, h


def _cosformer_parts(q, k, v, g, h):
    a = track(np.maximum(q, 0.0))
    b = track(np.maximum(k, 0.0))
    if g is None:
        kv = track(np.swapaxes(b, -1, -2) @ v)
        z = track(b.sum(axis=-2))
        num = track(a @ kv)
        den = track(a @ z[..., None])[..., 0]
    else:
        hb = track(h[:, :, None] * b[..., None, :, :])
        kv = track(np.swapaxes(hb, -1, -2) @ v[..., None, :, :])
        z = track(hb.sum(axis=-2))
        release(hb)
        ga = track(g[:, :, None] * a[..., None, :, :])
        num = track((ga @ kv).sum(axis=-3))
        den = track((ga @ z[..., :, None])[..., 0].sum(axis=-2))
        release(ga)
    return a, b, kv, z, num, den


def cosformer_attention(q, k, v, expansion: FeatureExpansion | None = None, eps: float = DEGENERATE_EPS) -> AttentionOutput:
    """Linear attention with similarity ``relu(q_i) . relu(k_j)`` (times ``B_ij``).

    ``B`` enters only through the separable ``expansion``, so cost is
    ``O(N d^2 terms)``. Rows whose normaliser falls below ``eps`` are zero.
    """
    q, k, v = _check_inputs(q, k, v)
    g, h = _expansion_arrays(expansion, q.shape[-2])
    _, _, _, _, num, den = _cosformer_parts(q, k, v, g, h)
    degenerate = den < eps
    out = track(num / np.where(degenerate, 1.0, den)[..., None])
    out[degenerate] = 0.0
    count = int(degenerate.sum())
    if count:
        logger.debug("cosformer: %d degenerate row(s) set to zero", count)
    return AttentionOutput(out, None, count)


def cosformer_attention_explicit(q, k, v, bias=None, eps: float = DEGENERATE_EPS) -> AttentionOutput:
    """Quadratic reference for :func:`cosformer_attention` using a dense bias."""
    q, k, v = _check_inputs(q, k, v)
    w = np.maximum(q, 0.0) @ np.swapaxes(np.maximum(k, 0.0), -1, -2)
    if bias is not None:
        w = w * _check_bias(bias, q.shape[-2])
    den = w.sum(axis=-1, keepdims=True)
    degenerate = den[..., 0] < eps
    w = w / np.where(den < eps, 1.0, den)
    w[degenerate] = 0.0
    return AttentionOutput(w @ v, w, int(degenerate.sum()))


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


def _full_backward(q, k, v, dout, bias=None, renormalize=True):
    scale = 1.0 / math.sqrt(q.shape[-1])
    p = _softmax_inplace(_scores(q, k))
    if bias is None:
        w = p
    else:
        a = p * bias
        if renormalize:
            r = a.sum(axis=-1, keepdims=True)
            r = np.where(r > 0, r, 1.0)
            w = a / r
        else:
            w = a
    dv = np.swapaxes(w, -1, -2) @ dout
    dw = dout @ np.swapaxes(v, -1, -2)
    if bias is not None:
        if renormalize:
            dw = (dw - np.sum(dw * w, axis=-1, keepdims=True)) / r
        dw = dw * bias
    ds = _softmax_backward(p, dw) * scale
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    return {"q": dq, "k": dk, "v": dv}


def _linformer_backward(q, k, v, dout, proj: ProjectionPair):
    scale = 1.0 / math.sqrt(q.shape[-1])
    k_proj = proj.pk @ k
    v_proj = proj.pv @ v
    p = _softmax_inplace(_scores(q, k_proj))
    dv_proj = np.swapaxes(p, -1, -2) @ dout
    dp = dout @ np.swapaxes(v_proj, -1, -2)
    ds = _softmax_backward(p, dp) * scale
    dq = ds @ k_proj
    dk_proj = np.swapaxes(ds, -1, -2) @ q
    return {
        "q": dq,
        "k": proj.pk.T @ dk_proj,
        "v": proj.pv.T @ dv_proj,
        "pk": _reduce_to(dk_proj @ np.swapaxes(k, -1, -2), proj.pk.shape),
        "pv": _reduce_to(dv_proj @ np.swapaxes(v, -1, -2), proj.pv.shape),
    }


def _cosformer_backward(q, k, v, dout, expansion, eps):
    n = q.shape[-2]
    g, h = _expansion_arrays(expansion, n)
    if g is None:
        g = np.ones((1, n), dtype=q.dtype)
        h = g
    a, b, kv, z, num, den = _cosformer_parts(q, k, v, g, h)
    live = den >= eps
    safe = np.where(live, den, 1.0)
    out = num / safe[..., None]
    dnum = np.where(live[..., None], dout / safe[..., None], 0.0)
    dden = np.where(live, -np.sum(dout * out, axis=-1) / safe, 0.0)

    ga = g[:, :, None] * a[..., None, :, :]
    hb = h[:, :, None] * b[..., None, :, :]
    # per-term gradients of the aggregated key/value state
    dkv = np.swapaxes(ga, -1, -2) @ dnum[..., None, :, :]
    dz = (np.swapaxes(ga, -1, -2) @ dden[..., None, :, None])[..., 0]

    da = (dnum[..., None, :, :] @ np.swapaxes(kv, -1, -2)) + dden[..., None, :, None] * z[..., :, None, :]
    da = (g[:, :, None] * da).sum(axis=-3)
    db = (v[..., None, :, :] @ np.swapaxes(dkv, -1, -2)) + dz[..., :, None, :]
    db = (h[:, :, None] * db).sum(axis=-3)
    dv = (hb @ dkv).sum(axis=-3)
    return {"q": da * (q > 0), "k": db * (k > 0), "v": dv}


def attention_backward(
    variant: str,
    q,
    k,
    v,
    grad_out,
    *,
    proj: ProjectionPair | None = None,
    bias=None,
    expansion: FeatureExpansion | None = None,
    renormalize: bool = True,
    eps: float = DEGENERATE_EPS,
) -> dict[str, np.ndarray]:
    """Gradients of ``sum(grad_out * out)`` for one of :data:`VARIANTS`.

    Returns a dict with keys ``q, k, v`` and, for ``linformer``, ``pk, pv``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown attention variant {variant!r}")
    q, k, v = _check_inputs(q, k, v)
    dout = np.asarray(grad_out, dtype=np.result_type(q, v))
    if dout.shape != q.shape[:-1] + (v.shape[-1],):
        raise ValueError(f"grad_out shape {dout.shape} does not match output shape")
    if variant != "linformer" and proj is not None:
        raise ValueError(f"variant {variant!r} takes no projection")
    if variant != "biased" and bias is not None:
        raise ValueError(f"variant {variant!r} takes no dense bias")
    if variant != "cosformer" and expansion is not None:
        raise ValueError(f"variant {variant!r} takes no feature expansion")

    if variant == "full":
        return _full_backward(q, k, v, dout)
    if variant == "biased":
        if bias is None:
            raise ValueError("biased variant requires a bias matrix")
        return _full_backward(q, k, v, dout, _check_bias(bias, q.shape[-2]), renormalize)
    if variant == "linformer":
        if proj is None:
            raise ValueError("linformer variant requires a ProjectionPair")
        _check_projection(proj, q.shape[-2])
        return _linformer_backward(q, k, v, dout, proj)
    return _cosformer_backward(q, k, v, dout, expansion, eps)
