"""Deterministic PRNG, coordinate grids, and the variational-coordinate sampler.

The generator is xoshiro256++ seeded through splitmix64; Gaussians come from
polar Box-Muller on top of the uint64 stream. Everything downstream of a seed
is a pure function of it, so runs reproduce bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int):
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Prng:
    """xoshiro256++ stream with splitmix64 seeding."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        s = self.seed
        state = []
        for _ in range(4):
            s, z = _splitmix64(s)
            state.append(z)
        if not any(state):  # xoshiro must not start all-zero
            state[0] = _GOLDEN
        self._s = state

    def spawn(self, tag: int) -> "Prng":
        """Independent child stream; derived from (seed, tag), parent untouched."""
        _, a = _splitmix64(self.seed)
        _, b = _splitmix64(tag & _MASK)
        _, child = _splitmix64(a ^ _rotl(b, 32))
        return Prng(child)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s0 + s3) & _MASK, 23) + s0) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self, n: int | None = None):
        """Uniform in [0, 1) with 53-bit resolution."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0**-53
        nxt = self.next_u64
        return np.array([(nxt() >> 11) for _ in range(n)], dtype=np.float64) * 2.0**-53

    def normal(self, n: int | None = None):
        """Standard normals via polar Box-Muller (rejection on the unit disk).

        Batches are self-contained: a call draws exactly the pairs it needs
        and discards any surplus, so results depend only on the stream
        position and the call's size.
        """
        scalar = n is None
        count = 1 if scalar else int(n)
        out = np.empty(count, dtype=np.float64)
        filled = 0
        while filled < count:
            pairs = (count - filled + 1) // 2
            m = int(pairs / 0.78) + 4  # polar acceptance rate is pi/4
            u = 2.0 * self.uniform(m) - 1.0
            v = 2.0 * self.uniform(m) - 1.0
            ssq = u * u + v * v
            ok = (ssq > 0.0) & (ssq < 1.0)
            f = np.sqrt(-2.0 * np.log(ssq[ok]) / ssq[ok])
            z = np.empty(2 * int(ok.sum()))
            z[0::2] = u[ok] * f
            z[1::2] = v[ok] * f
            take = min(len(z), count - filled)
            out[filled : filled + take] = z[:take]
            filled += take
        return float(out[0]) if scalar else out

    def integers(self, low: int, high: int, n: int | None = None):
        """Uniform integers in [low, high)."""
        span = high - low
        if n is None:
            return low + int(self.uniform() * span)
        return low + np.floor(self.uniform(n) * span).astype(np.int64)

    def choice_distinct(self, low: int, high: int, k: int) -> np.ndarray:
        """k distinct integers from [low, high), in draw order."""
        if k > high - low:
            raise ValueError(f"cannot draw {k} distinct values from [{low}, {high})")
        seen = set()
        out = []
        while len(out) < k:
            x = self.integers(low, high)
            if x not in seen:
                seen.add(x)
                out.append(x)
        return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    """Uniform lattice: per-axis extents and domain bounds.

    align='center' places samples at cell centers (images); align='left'
    starts at the lower bound with spacing length/extent (the 1D convention).
    """

    extents: tuple
    bounds: tuple
    align: str = "center"

    def __post_init__(self):
        if any(e < 1 for e in self.extents):
            raise ValueError(f"grid extents must be >= 1, got {self.extents}")
        if len(self.bounds) != len(self.extents):
            raise ValueError("one (lo, hi) bound pair per axis required")
        if self.align not in ("center", "left"):
            raise ValueError(f"unknown alignment {self.align!r}")


def grid_1d(n: int, lo: float = -1.0, hi: float = 1.0) -> GridSpec:
    return GridSpec(extents=(n,), bounds=((lo, hi),), align="left")


def grid_image(h: int, w: int) -> GridSpec:
    return GridSpec(extents=(h, w), bounds=((0.0, 1.0), (0.0, 1.0)), align="center")


def make_grid(spec: GridSpec) -> np.ndarray:
    """Row-major (q, C) coordinate matrix for the lattice."""
    axes = []
    for extent, (lo, hi) in zip(spec.extents, spec.bounds):
        spacing = (hi - lo) / extent
        idx = np.arange(extent, dtype=np.float64)
        if spec.align == "center":
            axes.append(lo + (idx + 0.5) * spacing)
        else:
            axes.append(lo + idx * spacing)
    if len(axes) == 1:
        return axes[0][:, None]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------------------
# variational coordinates


def default_constants(h: int, w: int):
    """(alpha, v_dev, sigma) for a training resolution of h x w."""
    if h < 1 or w < 1:
        raise ValueError("extents must be positive")
    m = max(h, w)
    return 3.0 / (20.0 * m), 1.0 / (2.0 * m), 1.0


@dataclass
class VariationalSampler:
    """Gaussian coordinate perturbation, hard-clamped to +-v_dev.

    clamp_target selects which quantity the +-v_dev constraint applies to:
    'alpha_v' clamps the total shift alpha*V (default), 'v' clamps the raw
    draw V before scaling.
    """

    alpha: float
    sigma: float
    v_dev: float
    mode: str = "variational"  # fixed | variational
    clamp_target: str = "alpha_v"  # alpha_v | v

    def __post_init__(self):
        if self.v_dev <= 0 or self.alpha < 0:
            raise ValueError(f"need v_dev > 0 and alpha >= 0, got {self.v_dev}, {self.alpha}")
        if self.mode not in ("fixed", "variational"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.clamp_target not in ("alpha_v", "v"):
            raise ValueError(f"unknown clamp target {self.clamp_target!r}")

    def sample(self, grid: np.ndarray, prng: Prng) -> np.ndarray:
        if self.mode == "fixed":
            return grid  # idempotent, no allocation
        draws = prng.normal(grid.size).reshape(grid.shape) * self.sigma
        if self.clamp_target == "alpha_v":
            shift = np.clip(self.alpha * draws, -self.v_dev, self.v_dev)
        else:
            shift = self.alpha * np.clip(draws, -self.v_dev, self.v_dev)
        return grid + shift


def sampler_for_image(h: int, w: int, mode: str = "variational", clamp_target: str = "alpha_v") -> VariationalSampler:
    alpha, v_dev, sigma = default_constants(h, w)
    return VariationalSampler(alpha=alpha, sigma=sigma, v_dev=v_dev, mode=mode, clamp_target=clamp_target)


def sample_1d_shift(n: int, prng: Prng) -> np.ndarray:
    """Unclamped Gaussian shifts with scale 1/(5n) for an n-point 1D grid."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return prng.normal(n) / (5.0 * n)
