"""Localized attention: Localize, L-softmax, the LAL, and standard MHA.

L-softmax thresholds softmax weights at m and renormalizes. Rows whose
weights all fall below m pass through as the plain softmax row (the layer
stays total). Backward treats clipped entries as fully disconnected: their
relu subgradient is zero, and the residual coupling that softmax's shared
normalizer would feed them is masked to an exact 0 so that keys/values with
zero attention weight receive exactly zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .tensor import Tensor, ShapeError, _accum, _as_tensor, _joint_tape, matmul, transpose


@dataclass
class LalParams:
    m: float = 0.0015
    d_k: int = 1

    def __post_init__(self):
        if not (0.0 <= self.m < 1.0):
            raise ValueError(f"threshold m must be in [0, 1), got {self.m}")
        if self.d_k < 1:
            raise ValueError(f"d_k must be >= 1, got {self.d_k}")


@dataclass
class CostCounter:
    """Tallies attention score-matrix elements, one q_len*k_len per call."""

    score_elements: int = 0

    def add(self, q_len: int, k_len: int):
        self.score_elements += q_len * k_len


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _localize_rows(s: np.ndarray, m: float):
    """Localize on row-stochastic rows; returns (rows, support, fallback)."""
    r = np.maximum(s - m, 0.0)
    total = r.sum(axis=-1, keepdims=True)
    fallback = total[..., 0] == 0.0
    support = s > m
    safe = np.where(total == 0.0, 1.0, total)
    y = r / safe
    if fallback.any():
        y[fallback] = s[fallback]
    return y, support, fallback


def localize(rows: np.ndarray, m: float) -> np.ndarray:
    """relu(x - m) per row, renormalized to sum 1; all-clipped rows pass through."""
    rows = np.asarray(rows, dtype=np.float64)
    if (rows < 0).any():
        raise ValueError("localize: negative input entry")
    if m == 0.0:
        return rows
    y, _, _ = _localize_rows(rows, m)
    return y


def l_softmax(x: Tensor, m: float) -> Tensor:
    """Localize(softmax(x), m) as one tape op.

    m == 0 delegates to plain softmax via the identical code path, so the
    two are bit-equal in forward and backward.
    """
    if m == 0.0:
        return nn.softmax(x, axis=-1)
    x = _as_tensor(x)
    if np.isnan(x.data).any():
        raise ValueError("l_softmax: NaN in logits")
    s = _softmax_rows(x.data)
    y, support, fallback = _localize_rows(s, m)
    out = Tensor(y)
    tape = _joint_tape(x)
    if tape is not None:
        r_total = np.maximum(s - m, 0.0).sum(axis=-1, keepdims=True)
        safe_total = np.where(r_total == 0.0, 1.0, r_total)

        def backward(g, x=x, s=s, y=y, support=support, fallback=fallback, total=safe_total):
            # localize backward on surviving entries, zero on clipped ones
            u = np.where(support, (g - (g * y).sum(axis=-1, keepdims=True)) / total, 0.0)
            inner = (u * s).sum(axis=-1, keepdims=True)
            dx = np.where(support, s * (u - inner), 0.0)
            if fallback.any():  # all-clipped rows pass softmax through untouched
                gf = g[fallback]
                sf = s[fallback]
                dx[fallback] = sf * (gf - (gf * sf).sum(axis=-1, keepdims=True))
            _accum(x, dx)

        tape.record(out, (x,), backward)
    return out


def lal_forward(q: Tensor, k: Tensor, v: Tensor, m: float, counter: CostCounter | None = None) -> Tensor:
    """L-softmax_m(Q K^T / sqrt(d_k)) V."""
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("lal_forward expects matrices")
    if q.data.shape[1] != k.data.shape[1] or k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(
            f"lal_forward: Q {q.data.shape}, K {k.data.shape}, V {v.data.shape}"
        )
    d_k = k.data.shape[1]
    scores = matmul(q, transpose(k)) * (1.0 / math.sqrt(d_k))
    if counter is not None:
        counter.add(q.data.shape[0], k.data.shape[0])
    weights = l_softmax(scores, m)
    return matmul(weights, v)


def attention_reference(q: Tensor, k: Tensor, v: Tensor, counter: CostCounter | None = None) -> Tensor:
    """Plain softmax(Q K^T / sqrt(d_k)) V, composed from the generic ops."""
    d_k = k.data.shape[1]
    scores = matmul(q, transpose(k)) * (1.0 / math.sqrt(d_k))
    if counter is not None:
        counter.add(q.data.shape[0], k.data.shape[0])
    return matmul(nn.softmax(scores, axis=-1), v)


# ---------------------------------------------------------------------------
# multi-head attention (standard softmax alignment; used by the hypernetwork)


@dataclass
class AttentionHeads:
    heads: int
    head_dim: int
    w_q: nn.LinearLayer
    w_k: nn.LinearLayer
    w_v: nn.LinearLayer
    w_o: nn.LinearLayer

    @property
    def width(self) -> int:
        return self.heads * self.head_dim

    def named_parameters(self, prefix: str):
        out = []
        for tag, layer in (("q", self.w_q), ("k", self.w_k), ("v", self.w_v), ("o", self.w_o)):
            out.extend(nn.named_linear(f"{prefix}.{tag}", layer))
        return out


def make_attention_heads(width: int, heads: int, prng) -> AttentionHeads:
    if width % heads != 0:
        raise ShapeError(f"width {width} not divisible by {heads} heads")
    return AttentionHeads(
        heads=heads,
        head_dim=width // heads,
        w_q=nn.make_linear(width, width, prng),
        w_k=nn.make_linear(width, width, prng),
        w_v=nn.make_linear(width, width, prng),
        w_o=nn.make_linear(width, width, prng),
    )


def mha_forward(
    p: AttentionHeads,
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    counter: CostCounter | None = None,
) -> Tensor:
    """Per-head scaled dot-product attention, concatenation, output projection.

    The cost counter advances by q_len*k_len once per call: the attention
    map's size is head-agnostic in the accounting this mirrors.
    """
    from .tensor import col_slice, concat_cols

    for t, name in ((q_in, "Q"), (k_in, "K"), (v_in, "V")):
        if t.data.ndim != 2 or t.data.shape[1] != p.width:
            raise ShapeError(f"mha {name}: shape {t.data.shape} vs width {p.width}")
    q = nn.linear_forward(p.w_q, q_in)
    k = nn.linear_forward(p.w_k, k_in)
    v = nn.linear_forward(p.w_v, v_in)
    if counter is not None:
        counter.add(q_in.data.shape[0], k_in.data.shape[0])
    scale = 1.0 / math.sqrt(p.head_dim)
    outs = []
    for h in range(p.heads):
        lo, hi = h * p.head_dim, (h + 1) * p.head_dim
        qh, kh, vh = col_slice(q, lo, hi), col_slice(k, lo, hi), col_slice(v, lo, hi)
        weights = nn.softmax(matmul(qh, transpose(kh)) * scale, axis=-1)
        outs.append(matmul(weights, vh))
    return nn.linear_forward(p.w_o, concat_cols(outs))


def attention_map_cost(arch: str, depth_e: int, depth_d: int, l_d: int, l_r: int) -> int:
    """Score-matrix element count per forward pass for either architecture."""
    if min(depth_e, l_d, l_r) < 0 or depth_d < 0:
        raise ValueError("sizes must be nonnegative")
    if arch == "encoder_decoder":
        return depth_e * l_d * l_d + depth_d * (l_r * l_r + l_d * l_r)
    if arch == "encoder_only":
        return depth_e * (l_d + l_r) * (l_d + l_r)
    raise ValueError(f"unknown architecture {arch!r}")
