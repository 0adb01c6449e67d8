"""Layers built on the tensor tape: linear, MLP, softmax, layernorm, inits.

Checkpoints are a single file: magic, a little-endian uint64 JSON-index
length, the UTF-8 JSON index, then the raw float64 payloads back to back.
Reload is bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    GradTape,
    ShapeError,
    Tensor,
    _accum,
    _as_tensor,
    _joint_tape,
    add_row,
    matmul,
    mul,
    sin,
    transpose,
)

CHECKPOINT_MAGIC = b"ANRCKPT1"
CHECKPOINT_FORMAT_VERSION = "1"


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along an axis; rows sum to 1."""
    x = _as_tensor(x)
    if np.isnan(x.data).any():
        raise ValueError("softmax: NaN in input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)
    tape = _joint_tape(x)
    if tape is not None:

        def backward(g, x=x, s=s, axis=axis):
            inner = (g * s).sum(axis=axis, keepdims=True)
            _accum(x, s * (g - inner))

        tape.record(out, (x,), backward)
    return out


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row zero-mean unit-variance normalization, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if eps <= 0:
        raise ValueError("layernorm: eps must be positive")
    if x.data.ndim != 2 or gain.data.shape != (x.data.shape[1],) or bias.data.shape != (x.data.shape[1],):
        raise ShapeError(
            f"layernorm: x {x.data.shape}, gain {gain.data.shape}, bias {bias.data.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data[None, :] + bias.data[None, :])
    tape = _joint_tape(x, gain, bias)
    if tape is not None:
        w = x.data.shape[1]

        def backward(g, x=x, gain=gain, bias=bias, xhat=xhat, inv=inv, w=w, tape=tape):
            if gain.tape is tape:
                _accum(gain, (g * xhat).sum(axis=0))
            if bias.tape is tape:
                _accum(bias, g.sum(axis=0))
            if x.tape is tape:
                dxhat = g * gain.data[None, :]
                # standard layernorm backward, variance with 1/w normalization
                t1 = dxhat.sum(axis=1, keepdims=True)
                t2 = (dxhat * xhat).sum(axis=1, keepdims=True)
                _accum(x, inv * (dxhat - t1 / w - xhat * t2 / w))

        tape.record(out, (x, gain, bias), backward)
    return out


@dataclass
class LinearLayer:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)

    def __post_init__(self):
        if self.weight.data.ndim != 2 or self.bias.data.shape != (self.weight.data.shape[0],):
            raise ShapeError(
                f"linear: weight {self.weight.data.shape} vs bias {self.bias.data.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.data.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.data.shape[0]


def make_linear(in_dim: int, out_dim: int, prng, bound: float | None = None) -> LinearLayer:
    """Uniform +-sqrt(1/fan_in) weights (unless bound given), zero bias."""
    if bound is None:
        bound = math.sqrt(1.0 / in_dim)
    w = (2.0 * prng.uniform(out_dim * in_dim) - 1.0) * bound
    return LinearLayer(
        weight=Tensor(w.reshape(out_dim, in_dim)),
        bias=Tensor(np.zeros(out_dim)),
    )


def sine_init(layer: LinearLayer, fan_in: int, prng, bound: float | None = None):
    """Re-draw weights uniform on +-sqrt(6/fan_in) for sine activations."""
    if bound is None:
        bound = math.sqrt(6.0 / fan_in)
    w = (2.0 * prng.uniform(layer.out_dim * layer.in_dim) - 1.0) * bound
    layer.weight.data[...] = w.reshape(layer.out_dim, layer.in_dim)
    layer.bias.data[...] = 0.0


def linear_forward(layer: LinearLayer, x: Tensor) -> Tensor:
    return add_row(matmul(x, transpose(layer.weight)), layer.bias)


@dataclass
class MlpConfig:
    """Hidden-layer count/width plus activation; depth 0 is a bare head."""

    depth: int
    width: int
    output_dim: int
    activation: str = "relu"  # relu | sine | polynomial
    poly_coeffs: tuple = ()
    sine_init_bound: float | None = None

    def __post_init__(self):
        if self.depth < 0 or (self.depth > 0 and self.width < 1):
            raise ValueError(f"bad MLP config: depth={self.depth} width={self.width}")
        if self.activation == "polynomial" and len(self.poly_coeffs) < 2:
            raise ValueError("polynomial activation needs coefficients up to order K >= 1")
        if self.activation not in ("relu", "sine", "polynomial"):
            raise ValueError(f"unknown activation {self.activation!r}")


def polynomial_activation(x: Tensor, coeffs) -> Tensor:
    """rho(x) = sum_k coeffs[k] * x^k via Horner (coeffs are a_0..a_K)."""
    from .tensor import add

    acc = add(mul(x, float(coeffs[-1])), float(coeffs[-2]))
    for c in coeffs[-3::-1]:
        acc = add(mul(acc, x), float(c))
    return acc


def init_mlp(cfg: MlpConfig, in_dim: int, prng) -> list[LinearLayer]:
    dims = [in_dim] + [cfg.width] * cfg.depth + [cfg.output_dim]
    layers = []
    for i in range(len(dims) - 1):
        layer = make_linear(dims[i], dims[i + 1], prng)
        hidden = i < len(dims) - 2
        if hidden and cfg.activation == "sine":
            sine_init(layer, dims[i], prng, bound=cfg.sine_init_bound)
        layers.append(layer)
    return layers


def _activate(cfg: MlpConfig, h: Tensor) -> Tensor:
    from .tensor import relu as _relu

    if cfg.activation == "relu":
        return _relu(h)
    if cfg.activation == "sine":
        return sin(h)
    return polynomial_activation(h, cfg.poly_coeffs)


def mlp_forward(cfg: MlpConfig, layers: list[LinearLayer], x: Tensor) -> Tensor:
    expected = cfg.depth + 1
    if len(layers) != expected:
        raise ShapeError(f"MLP expects {expected} layers for depth {cfg.depth}, got {len(layers)}")
    h = x
    for layer in layers[:-1]:
        h = _activate(cfg, linear_forward(layer, h))
    return linear_forward(layers[-1], h)


def mlp_param_count(layers: list[LinearLayer], weights_only: bool = False) -> int:
    n = 0
    for layer in layers:
        n += layer.weight.data.size
        if not weights_only:
            n += layer.bias.data.size
    return n


def named_linear(prefix: str, layer: LinearLayer):
    return [(f"{prefix}.weight", layer.weight), (f"{prefix}.bias", layer.bias)]


def named_mlp(prefix: str, layers: list[LinearLayer]):
    out = []
    for i, layer in enumerate(layers):
        out.extend(named_linear(f"{prefix}.{i}", layer))
    return out


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(path, named_params):
    """Write (name, shape, float64 payload) entries with a JSON index."""
    entries = []
    offset = 0
    blobs = []
    for name, t in named_params:
        arr = np.ascontiguousarray(t.data, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        blobs.append(arr.astype("<f8").tobytes())
        offset += arr.size
    index = json.dumps({"format_version": CHECKPOINT_FORMAT_VERSION, "entries": entries}).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(index).to_bytes(8, "little"))
        f.write(index)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (index_len,) = (int.from_bytes(f.read(8), "little"),)
        index = json.loads(f.read(index_len).decode())
        payload = f.read()
    out = {}
    for e in index["entries"]:
        start = e["offset"] * 8
        arr = np.frombuffer(payload[start : start + e["count"] * 8], dtype="<f8")
        out[e["name"]] = arr.reshape(e["shape"]).copy()
    return out


def load_state(named_params, path):
    """Restore parameters in place; every entry must match bit-exactly in shape."""
    state = load_checkpoint(path)
    for name, t in named_params:
        if name not in state:
            raise KeyError(f"checkpoint missing parameter {name!r}")
        if tuple(state[name].shape) != t.data.shape:
            raise ShapeError(f"{name}: checkpoint shape {state[name].shape} vs {t.data.shape}")
        t.data[...] = state[name]
