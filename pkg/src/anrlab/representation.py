"""INR function zoo: Fourier embedding, R-Tokens, the ANR model, MLP-INR.

The positional spectrum is frozen random Fourier features: rows drawn from a
zero-mean Gaussian with std sigma_pe * 2*pi, duplicated into (phase 0,
phase pi/2) pairs so each base frequency contributes a sin and a cos feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .attention import CostCounter, LalParams, attention_reference, lal_forward
from .sampling import Prng
from .tensor import ShapeError, Tensor, matmul, transpose


@dataclass
class PositionalEncoder:
    omega: np.ndarray  # (p, C), frozen
    phi: np.ndarray  # (p,)
    sigma_pe: float

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    @property
    def coord_dim(self) -> int:
        return self.omega.shape[1]


def make_encoder(coord_dim: int, p: int, sigma_pe: float, prng: Prng) -> PositionalEncoder:
    """p Fourier features (p even) as sin/cos pairs over a Gaussian spectrum."""
    if p % 2 != 0:
        raise ValueError(f"embedding dim must be even for sin/cos pairing, got {p}")
    base = prng.normal((p // 2) * coord_dim).reshape(p // 2, coord_dim) * (sigma_pe * 2.0 * math.pi)
    omega = np.repeat(base, 2, axis=0)
    phi = np.tile([0.0, math.pi / 2.0], p // 2)
    return PositionalEncoder(omega=omega, phi=phi, sigma_pe=sigma_pe)


def fourier_embed(enc: PositionalEncoder, coords: np.ndarray) -> np.ndarray:
    """sin(Omega c + phi) per coordinate row; (q, C) -> (q, p)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != enc.coord_dim:
        raise ShapeError(f"coords {coords.shape} vs encoder coord dim {enc.coord_dim}")
    return np.sin(coords @ enc.omega.T + enc.phi[None, :])


@dataclass
class RTokens:
    tokens: Tensor  # (N, d)

    @property
    def count(self) -> int:
        return self.tokens.data.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.data.shape[1]

    def named_parameters(self, prefix: str = "rtokens"):
        return [(f"{prefix}.tokens", self.tokens)]


def make_rtokens(n: int, d: int, prng: Prng) -> RTokens:
    if n < 1 or d < 1:
        raise ValueError(f"need n, d >= 1, got {n}, {d}")
    return RTokens(tokens=Tensor(prng.normal(n * d).reshape(n, d)))


@dataclass
class AnrModel:
    """Instance-agnostic ANR function: projections + threshold + converter MLP.

    Only R-Tokens vary per data instance; everything here is shared.
    """

    encoder: PositionalEncoder
    w_q: Tensor  # (d, p)
    w_k: Tensor  # (d, d)
    w_v: Tensor  # (d, d)
    lal: LalParams
    converter_cfg: nn.MlpConfig
    converter: list[nn.LinearLayer]

    @property
    def token_dim(self) -> int:
        return self.w_k.data.shape[0]

    @property
    def output_dim(self) -> int:
        return self.converter_cfg.output_dim

    def named_parameters(self, prefix: str = "anr"):
        out = [
            (f"{prefix}.w_q", self.w_q),
            (f"{prefix}.w_k", self.w_k),
            (f"{prefix}.w_v", self.w_v),
        ]
        out.extend(nn.named_mlp(f"{prefix}.converter", self.converter))
        return out


def make_anr_model(
    coord_dim: int,
    embed_dim: int,
    token_dim: int,
    output_dim: int,
    prng: Prng,
    m: float = 0.0015,
    converter_depth: int = 5,
    converter_width: int | None = None,
    sigma_pe: float = 2.0,
    activation: str = "relu",
) -> AnrModel:
    enc = make_encoder(coord_dim, embed_dim, sigma_pe, prng)
    if converter_width is None:
        converter_width = token_dim
    bound_q = math.sqrt(1.0 / embed_dim)
    bound_kv = math.sqrt(1.0 / token_dim)
    cfg = nn.MlpConfig(depth=converter_depth, width=converter_width, output_dim=output_dim, activation=activation)
    return AnrModel(
        encoder=enc,
        w_q=Tensor((2.0 * prng.uniform(token_dim * embed_dim) - 1.0).reshape(token_dim, embed_dim) * bound_q),
        w_k=Tensor((2.0 * prng.uniform(token_dim * token_dim) - 1.0).reshape(token_dim, token_dim) * bound_kv),
        w_v=Tensor((2.0 * prng.uniform(token_dim * token_dim) - 1.0).reshape(token_dim, token_dim) * bound_kv),
        lal=LalParams(m=m, d_k=token_dim),
        converter_cfg=cfg,
        converter=nn.init_mlp(cfg, token_dim, prng),
    )


def anr_forward(
    model: AnrModel,
    rtokens: RTokens,
    coords: np.ndarray,
    counter: CostCounter | None = None,
    attention: str = "lal",
) -> Tensor:
    """MLP(LAL(W_q gamma(c), W_k D, W_v D)); (q, C) coords -> (q, S)."""
    if rtokens.dim != model.token_dim:
        raise ShapeError(f"rtokens dim {rtokens.dim} vs model token dim {model.token_dim}")
    embed = Tensor(fourier_embed(model.encoder, coords))
    q = matmul(embed, transpose(model.w_q))
    k = matmul(rtokens.tokens, transpose(model.w_k))
    v = matmul(rtokens.tokens, transpose(model.w_v))
    if attention == "lal":
        fused = lal_forward(q, k, v, model.lal.m, counter=counter)
    elif attention == "reference":
        fused = attention_reference(q, k, v, counter=counter)
    else:
        raise ValueError(f"unknown attention route {attention!r}")
    return nn.mlp_forward(model.converter_cfg, model.converter, fused)


@dataclass
class MlpInrModel:
    """Fourier features into an MLP; the conventional INR baseline."""

    encoder: PositionalEncoder
    cfg: nn.MlpConfig
    layers: list[nn.LinearLayer]
    modulation: int | None = None  # predicted columns per matrix, None = whole MLP

    def named_parameters(self, prefix: str = "inr"):
        return nn.named_mlp(f"{prefix}.mlp", self.layers)

    def forward(self, coords: np.ndarray) -> Tensor:
        return mlp_inr_forward(self, coords)


def make_mlp_inr(
    coord_dim: int,
    embed_dim: int,
    output_dim: int,
    prng: Prng,
    depth: int = 5,
    width: int = 256,
    sigma_pe: float = 2.0,
    activation: str = "relu",
    modulation: int | None = None,
    sine_init_bound: float | None = None,
) -> MlpInrModel:
    enc = make_encoder(coord_dim, embed_dim, sigma_pe, prng)
    cfg = nn.MlpConfig(
        depth=depth,
        width=width,
        output_dim=output_dim,
        activation=activation,
        sine_init_bound=sine_init_bound,
    )
    return MlpInrModel(encoder=enc, cfg=cfg, layers=nn.init_mlp(cfg, embed_dim, prng), modulation=modulation)


def mlp_inr_forward(model: MlpInrModel, coords: np.ndarray) -> Tensor:
    embed = Tensor(fourier_embed(model.encoder, coords))
    return nn.mlp_forward(model.cfg, model.layers, embed)


def repr_param_count(obj) -> int:
    """Per-instance representation size.

    R-Tokens count N*d. A modulated MLP-INR counts the predicted columns
    (rows * columns per modulated matrix); an unmodulated one counts every
    weight-matrix entry (the whole MLP is the representation; biases are
    instance-agnostic).
    """
    if isinstance(obj, RTokens):
        return obj.tokens.data.size
    if isinstance(obj, MlpInrModel):
        if obj.modulation is None:
            return sum(l.weight.data.size for l in obj.layers)
        total = 0
        for l in obj.layers:
            cols = min(obj.modulation, l.weight.data.shape[1])
            total += l.weight.data.shape[0] * cols
        return total
    raise TypeError(f"no representation-parameter rule for {type(obj).__name__}")
